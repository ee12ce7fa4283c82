#ifndef FCAM_STATE_SPACE_HPP
#define FCAM_STATE_SPACE_HPP

#include <cmath>
#include <cstddef>
#include <span>
#include <utility>
#include <vector>

#include "fcam/model.hpp"
#include "fcam/rng.hpp"

namespace fcam {

/// Kalman filter moments. Index 0 is time 0 (a_0 = m_0 = 0, R_0 = C_0 = var(c_0));
/// indices 1..T hold the predictive (a, R) and filtered (m, C) moments.
struct FilterCache {
  std::vector<double> a;
  std::vector<double> R;
  std::vector<double> m;
  std::vector<double> C;
  std::size_t clamp_events = 0;

  std::size_t T() const noexcept { return m.empty() ? 0 : m.size() - 1; }
  double m0() const { return m.front(); }
  double C0() const { return C.front(); }
};

/// Variances below this are clamped before inversion.
inline constexpr double kVarianceFloor = 1e-300;

/// Forward filter for c_t = gamma c_{t-1} + A_t + w_t, y_t = b + c_t + e_t.
/// `A` has one entry per frame (A[t-1] is A_t). Throws NumericalError on a
/// non-finite intermediate.
FilterCache kalman_forward(std::span<const double> y, std::span<const double> A, double b,
                           double gamma, double sigma2, double tau2, double C0);

inline FilterCache kalman_forward(const Trace& trace, const ChainState& state,
                                  std::span<const double> A, double C0) {
  return kalman_forward(trace.y, A, state.b, state.gamma, state.sigma2, state.tau2, C0);
}

/// Backward sampling of c_0..c_T given a filter cache built under the same gamma.
std::vector<double> ffbs_sample(const FilterCache& cache, double gamma, Rng& rng);

struct NormalParams {
  double mean = 0.0;
  double var = 1.0;
};

/// Conjugate normal posterior for the baseline given the sampled calcium path.
NormalParams baseline_posterior(std::span<const double> y, std::span<const double> c,
                                double sigma2, double b0, double B0);

double update_baseline(const Trace& trace, std::span<const double> c, const ChainState& state,
                       const HyperParams& hyper, Rng& rng);

/// Shape/rate of a gamma law on a precision.
struct GammaParams {
  double shape = 1.0;
  double rate = 1.0;
};

GammaParams sigma2_precision_posterior(std::span<const double> y, std::span<const double> c,
                                       double b, const HyperParams& hyper);
GammaParams tau2_precision_posterior(std::span<const double> c, std::span<const double> A,
                                     double gamma, const HyperParams& hyper);

/// Draws (sigma2, tau2) from their full conditionals.
std::pair<double, double> update_variances(const Trace& trace, std::span<const double> c,
                                           std::span<const double> A, const ChainState& state,
                                           const HyperParams& hyper, Rng& rng);

/// Sufficient statistics of the AR(1) transition for the gamma update:
/// x_t = c_{t-1}, z_t = c_t - A_t, t = 1..T.
struct ArStats {
  double sxx = 0.0;
  double sxz = 0.0;
  double szz = 0.0;

  static ArStats from_path(std::span<const double> c, std::span<const double> A);
};

/// log Beta(gamma; h1, h2) + sum_t log N(c_t; gamma c_{t-1} + A_t, tau2), up to a constant.
double gamma_log_target(double gamma, const ArStats& stats, double tau2, double h1, double h2);

/// Metropolis-Hastings log acceptance ratio for a move gamma -> proposal under the
/// logit-scale Gaussian random walk (includes the change-of-variable term).
double gamma_log_accept_ratio(double gamma, double proposal, const ArStats& stats, double tau2,
                              double h1, double h2);

/// Logit random-walk MH for gamma with Robbins-Monro step tuning during burn-in.
class GammaSampler {
 public:
  explicit GammaSampler(double log_step = std::log(0.1)) : log_step_(log_step) {}

  /// One MH step; when `adapt` is true the step size moves toward 30% acceptance.
  double update(std::span<const double> c, std::span<const double> A, const ChainState& state,
                const HyperParams& hyper, Rng& rng, bool adapt);

  double step() const noexcept { return std::exp(log_step_); }
  double acceptance_rate() const noexcept {
    return proposals_ == 0 ? 0.0 : static_cast<double>(accepts_) / static_cast<double>(proposals_);
  }
  void reset_counters() noexcept { proposals_ = accepts_ = 0; }

 private:
  double log_step_;
  std::size_t proposals_ = 0;
  std::size_t accepts_ = 0;
  std::size_t adapt_iter_ = 0;
};

/// Single fixed-step MH update of gamma.
double update_gamma_mh(std::span<const double> c, std::span<const double> A,
                       const ChainState& state, const HyperParams& hyper, Rng& rng,
                       double step = 0.1);

}  // namespace fcam

#endif  // FCAM_STATE_SPACE_HPP
