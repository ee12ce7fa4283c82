#ifndef FCAM_CHAIN_HPP
#define FCAM_CHAIN_HPP

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "fcam/model.hpp"
#include "fcam/rng.hpp"
#include "fcam/sampler.hpp"
#include "fcam/state_space.hpp"

namespace fcam {

struct McmcConfig {
  int iters = 10000;
  int burnin = 7000;
  int thin = 2;
  SamplerOptions sampler;

  /// Throws ValidationError unless iters > burnin >= 0 and thin >= 1.
  void validate() const;
  /// Number of draws kept: post-burn-in iterations, one every `thin`.
  std::size_t retained() const noexcept;
  bool keeps(int iteration) const noexcept;
};

struct IterationDiagnostics {
  int iteration = 0;
  int K = 0, Kplus = 0, L = 0, Lplus = 0;
  double gamma_accept = 0.0;  // running acceptance rate
  double alpha_accept = 0.0;
  double beta_accept = 0.0;
  double slab_accept = 0.0;
};

struct ChainDiagnostics {
  std::vector<IterationDiagnostics> rows;
  std::size_t filter_clamps = 0;
  std::size_t K_truncation_hits = 0;
  std::size_t L_truncation_hits = 0;
  double gamma_step = 0.0;
  std::vector<std::string> warnings;
};

/// Data-driven starting point: baseline at the median of y, one zero atom
/// plus a few positive atoms at quantiles of the large innovations, every
/// condition in its own distributional component.
ChainState initial_state(const Trace& trace, const HyperParams& hyper);

/// One fCAM chain. Each step runs, in order: FFBS for c, baseline, variances,
/// gamma MH, p, then the nested telescoping block (weights, S, M, atoms, K, L,
/// alpha, beta).
class FcamSampler {
 public:
  FcamSampler(Trace trace, HyperParams hyper, SamplerOptions options, std::uint64_t seed);
  FcamSampler(Trace trace, HyperParams hyper, SamplerOptions options, ChainState initial, std::uint64_t seed);

  void step(bool adapt);

  const ChainState& state() const noexcept { return state_; }
  const Trace& trace() const noexcept { return trace_; }
  const IterationDiagnostics& last() const noexcept { return last_; }
  const ChainDiagnostics& diagnostics() const noexcept { return diag_; }
  Rng& rng() noexcept { return rng_; }

  /// Replaces the observed series (same length); used by joint-distribution tests.
  void set_observations(std::vector<double> y);

 private:
  void nested_block(std::span<const double> c);
  void resize_components(int K, int L);

  Trace trace_;
  HyperParams hyper_;
  SamplerOptions options_;
  CountPrior K_prior_;
  CountPrior L_prior_;
  ChainState state_;
  Rng rng_;
  GammaSampler gamma_sampler_;
  std::size_t iteration_ = 0;
  std::size_t alpha_proposals_ = 0, alpha_accepts_ = 0;
  std::size_t beta_proposals_ = 0, beta_accepts_ = 0;
  std::size_t slab_proposals_ = 0, slab_accepts_ = 0;
  IterationDiagnostics last_;
  ChainDiagnostics diag_;
};

struct ChainResult {
  DrawStore draws;
  ChainDiagnostics diagnostics;
  ChainState final_state;
};

using ProgressFn = std::function<void(const IterationDiagnostics&)>;

/// Runs a full chain. Errors from any step are rethrown with the iteration index.
ChainResult run_chain(const Trace& trace, const HyperParams& hyper, const McmcConfig& config,
                      std::uint64_t seed, const ProgressFn& progress = {});

/// Draws every latent quantity from the prior for the frame layout of `layout`
/// (only `g`, `J` and the length are used).
ChainState sample_prior_state(const Trace& layout, const HyperParams& hyper, const CountPrior& K_prior,
                              const CountPrior& L_prior, Rng& rng);

/// y_t = b + c_t + e_t, e_t ~ N(0, sigma2).
std::vector<double> sample_observations(const ChainState& state, Rng& rng);

}  // namespace fcam

#endif  // FCAM_CHAIN_HPP
