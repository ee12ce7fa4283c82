#ifndef FCAM_SLAB_HPP
#define FCAM_SLAB_HPP

#include <cstddef>
#include <span>

#include "fcam/rng.hpp"

namespace fcam {

/// Sufficient statistics of the residuals r_i = y_i - mu_i assigned to one atom.
/// Accumulated with Welford updates; sum of squares about A is m2 + n (mean - A)^2.
struct SlabStats {
  std::size_t n = 0;
  double mean = 0.0;
  double m2 = 0.0;
  double max = 0.0;

  void add(double r) noexcept {
    max = n == 0 ? r : (r > max ? r : max);
    ++n;
    const double d = r - mean;
    mean += d / static_cast<double>(n);
    m2 += d * (r - mean);
  }
  double sum() const noexcept { return mean * static_cast<double>(n); }
  static SlabStats from(std::span<const double> residuals) noexcept {
    SlabStats s;
    for (double r : residuals) s.add(r);
    return s;
  }
};

/// sum_i log N(r_i; A, s2).
double residual_loglik(const SlabStats& stats, double A, double s2) noexcept;

/// log Ga(A; shape, rate) + sum_i log N(r_i; A, s2), for A > 0.
double slab_log_density(double A, const SlabStats& stats, double s2, double shape, double rate) noexcept;

/// log of the integral over A > 0 of Ga(A; hA1, hA2) prod_i N(r_i; A, s2).
///
/// Composite Gauss-Legendre on [0, A_hi], A_hi = max(0.9999 gamma quantile,
/// max r_i + 8 sqrt(s2)), with panels split around the posterior mode so the
/// peak is resolved for large n. Starts at 128 nodes per panel and doubles until
/// the relative change is below 1e-8; throws NumericalError after 4 doublings.
double slab_log_marginal(const SlabStats& stats, double s2, double hA1, double hA2);

inline double slab_log_marginal(std::span<const double> residuals, double s2, double hA1, double hA2) {
  return slab_log_marginal(SlabStats::from(residuals), s2, hA1, hA2);
}

/// Mode of the slab conditional on (0, inf) by safeguarded Newton iteration.
/// Falls back to max(mean residual, 1e-3) if the search goes non-finite.
double slab_mode(const SlabStats& stats, double s2, double hA1, double hA2);

/// Log-odds of the slab versus the point mass at zero for one atom.
double slab_log_odds(const SlabStats& stats, double s2, double p, double hA1, double hA2);

/// Reflected random-walk MH for the slab conditional; `steps` moves from `start`.
/// Returns the final state, always >= kMinAmplitude.
class SlabWalker {
 public:
  SlabWalker(const SlabStats& stats, double s2, double hA1, double hA2);

  double run(double start, int steps, Rng& rng);
  double proposal_sd() const noexcept { return proposal_sd_; }
  std::size_t proposals() const noexcept { return proposals_; }
  std::size_t accepts() const noexcept { return accepts_; }

 private:
  SlabStats stats_;
  double s2_, shape_, rate_;
  double mode_;
  double proposal_sd_;
  std::size_t proposals_ = 0;
  std::size_t accepts_ = 0;
};

/// Positive amplitudes are never smaller than this.
inline constexpr double kMinAmplitude = 1e-12;

/// Draw from the slab conditional: `steps` reflected MH moves started at the mode.
double sample_slab_amplitude(const SlabStats& stats, double s2, double hA1, double hA2, int steps,
                             Rng& rng);

/// Exact draw from the slab conditional by inverting its quadrature CDF.
double sample_slab_amplitude_exact(const SlabStats& stats, double s2, double hA1, double hA2, Rng& rng);

}  // namespace fcam

#endif  // FCAM_SLAB_HPP
