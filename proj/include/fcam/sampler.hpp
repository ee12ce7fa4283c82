#ifndef FCAM_SAMPLER_HPP
#define FCAM_SAMPLER_HPP

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "fcam/model.hpp"
#include "fcam/rng.hpp"
#include "fcam/slab.hpp"

namespace fcam {

/// Likelihood used for allocations and atoms.
enum class AllocationLikelihood {
  collapsed,  ///< N(y_t; b + gamma c_{t-1} + A, sigma2 + tau2)
  state,      ///< N(c_t; gamma c_{t-1} + A, tau2), conditioning on the sampled path
};

/// Counting rule behind the Beta update of the slab probability p.
enum class SpikeProbUpdate {
  time_points,  ///< Beta(h1p + T - n0, h2p + n0), n0 = #{t : A_t = 0}
  atoms,        ///< Beta(h1p + #{l : A*_l > 0}, h2p + #{l : A*_l = 0})
};

enum class SlabSampler {
  random_walk,  ///< reflected random-walk MH started at the Newton mode
  inverse_cdf,  ///< exact inversion of the quadrature CDF
};

struct SamplerOptions {
  AllocationLikelihood likelihood = AllocationLikelihood::collapsed;
  SpikeProbUpdate p_update = SpikeProbUpdate::time_points;
  SlabSampler slab = SlabSampler::random_walk;
  int slab_mh_steps = 10;
  double concentration_step = 0.5;
  /// Replace every likelihood term p(y | .) by a constant (prior recovery checks).
  bool prior_only = false;
  /// Worker threads for the per-frame allocation draws.
  unsigned threads = 1;
};

/// Occupation counts of the two nested partitions.
struct PartitionCounts {
  std::vector<int> Jk;               // K
  std::vector<std::vector<int>> Nlk;  // Nlk[k][l], K x L
  std::vector<int> Nl;               // L
  std::size_t n0 = 0;                // frames with a zero amplitude

  static PartitionCounts compute(const Trace& trace, const ChainState& state);
};

/// Number of stored 0/positive atoms among A*_1..A*_L.
struct AtomCounts {
  int zero = 0;
  int positive = 0;
};
AtomCounts count_atoms(std::span<const double> astar);

/// Prior on a component count n >= 1, tabulated up to its truncation point.
class CountPrior {
 public:
  /// Translated BNB: P(n) = BNB(n - 1), truncated where the tail drops below `tail`.
  static CountPrior bnb(const BnbParams& prm, double tail = 1e-12);
  /// Explicit log-pmf table; entry i is log P(n = i + 1).
  static CountPrior table(std::vector<double> log_pmf);

  double log_pmf(int n) const { return log_pmf_.at(static_cast<std::size_t>(n - 1)); }
  int max_count() const noexcept { return static_cast<int>(log_pmf_.size()); }

 private:
  std::vector<double> log_pmf_;
};

/// pi ~ Dirichlet(alpha / K + J_k), drawn in log space.
std::vector<double> sample_distributional_weights(const PartitionCounts& counts, int K, double alpha,
                                                  Rng& rng);

/// Column k of omega ~ Dirichlet(beta / L + N_{l,k}).
std::vector<std::vector<double>> sample_observational_weights(const PartitionCounts& counts, int L, int K,
                                                              double beta, Rng& rng);

/// Allocation residuals: the likelihood of atom A at frame t is N(r[t]; A, s2).
struct AtomResiduals {
  std::vector<double> r;
  double s2 = 1.0;
  bool flat = false;  ///< likelihood replaced by a constant
};

AtomResiduals atom_residuals(const Trace& trace, std::span<const double> c, const ChainState& state,
                             AllocationLikelihood kind, bool prior_only = false);

/// Per-frame atom densities, scaled by their row maximum:
/// dens(t, l) = exp(log N(r_t; A*_l, s2) - rowmax_t).
class LikelihoodTable {
 public:
  LikelihoodTable(const AtomResiduals& res, std::span<const double> astar);

  std::size_t frames() const noexcept { return rowmax_.size(); }
  std::size_t atoms() const noexcept { return L_; }
  double scaled(std::size_t t, std::size_t l) const noexcept { return dens_[t * L_ + l]; }
  double rowmax(std::size_t t) const noexcept { return rowmax_[t]; }

  /// Unscaled log N(r_t; A*_l, s2) (constant 0 for a flat likelihood).
  double log_density(std::size_t t, std::size_t l) const noexcept;

  /// log sum_l omega_l N(r_t; A*_l, s2); falls back to log space when the
  /// scaled sum underflows.
  double log_mixture(std::size_t t, std::span<const double> omega) const noexcept;

 private:
  std::size_t L_;
  std::vector<double> r_;
  std::vector<double> astar_;
  double s2_ = 1.0;
  bool flat_ = false;
  std::vector<double> dens_;
  std::vector<double> rowmax_;
};

/// Normalized log P(S_j = k | .) for k = 0..K-1 (M integrated out).
std::vector<double> distributional_allocation_logprobs(const Trace& trace, const LikelihoodTable& lik,
                                                       const ChainState& state, int j);

/// Normalized log P(M_t = l | S, .) for l = 0..L-1.
std::vector<double> observational_allocation_logprobs(const Trace& trace, const LikelihoodTable& lik,
                                                      const ChainState& state, std::size_t t);

/// Relabels distributional components: non-empty first, ordered by smallest member.
/// Permutes pi and the columns of omega; recomputes Kplus.
void relabel_distributional(ChainState& state);

/// Relabels observational components: non-empty first, ordered by smallest member.
/// Permutes astar and the rows of every omega column; recomputes Lplus.
void relabel_observational(ChainState& state);

/// Draws S from its conditional, then relabels. Throws NumericalError when every
/// candidate has zero probability.
void update_distributional_allocations(const Trace& trace, const LikelihoodTable& lik, ChainState& state,
                                       Rng& rng, unsigned threads = 1);

/// Draws M given S, then relabels.
void update_observational_allocations(const Trace& trace, const LikelihoodTable& lik, ChainState& state,
                                      Rng& rng, unsigned threads = 1);

/// Slab-versus-zero indicator and amplitude for every non-empty atom; empty
/// atoms (index >= Lplus) are redrawn from the spike-and-slab base measure.
struct AtomUpdateStats {
  std::size_t slab_proposals = 0;
  std::size_t slab_accepts = 0;
};
AtomUpdateStats update_atoms(const AtomResiduals& res, ChainState& state, const HyperParams& hyper,
                             const SamplerOptions& options, Rng& rng);

/// Draw from G0 = (1 - p) delta_0 + p Ga(hA1, hA2).
double draw_base_measure(double p, double hA1, double hA2, Rng& rng);

/// log p(K | partition, alpha) up to a constant for K = Kplus .. prior.max_count();
/// entry i corresponds to K = Kplus + i.
std::vector<double> K_log_conditional(std::span<const int> Jk, int Kplus, double alpha, const CountPrior& prior);
int sample_K(std::span<const int> Jk, int Kplus, double alpha, const CountPrior& prior, Rng& rng);

/// log p(L | partition, beta) up to a constant for L = Lplus .. prior.max_count().
std::vector<double> L_log_conditional(const std::vector<std::vector<int>>& Nlk, int Lplus, int Kplus,
                                      double beta, const CountPrior& prior);
int sample_L(const std::vector<std::vector<int>>& Nlk, int Lplus, int Kplus, double beta,
             const CountPrior& prior, Rng& rng);

/// log Dirichlet-multinomial partition factor for a concentration shared by
/// `count` components: sum over groups of
/// lgamma(c) - lgamma(n + c) + sum_l [lgamma(n_l + c/count) - lgamma(c/count)].
double concentration_log_factor(double concentration, int count, const std::vector<std::vector<int>>& groups);

/// MH log acceptance ratio for a log-scale random-walk move of the concentration.
double concentration_log_accept_ratio(double current, double proposal, int count,
                                      const std::vector<std::vector<int>>& groups, double a, double b);

/// One log-scale random-walk MH step targeting Ga(a, b) x partition factor.
double update_concentration(double current, const std::vector<std::vector<int>>& groups, int count,
                            double a, double b, Rng& rng, double step = 0.5, bool* accepted = nullptr);

struct BetaParams {
  double a = 1.0;
  double b = 1.0;
};
BetaParams p_posterior(std::size_t T, std::size_t n0, const HyperParams& hyper);
BetaParams p_posterior_atoms(std::span<const double> astar, const HyperParams& hyper);
double update_p(std::size_t T, std::size_t n0, const HyperParams& hyper, Rng& rng);

}  // namespace fcam

#endif  // FCAM_SAMPLER_HPP
