#include "fcam/slab.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numbers>
#include <vector>

#include <boost/math/special_functions/gamma.hpp>

#include "fcam/model.hpp"

namespace fcam {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

struct GaussLegendre {
  std::vector<double> x;  // nodes on [-1, 1]
  std::vector<double> logw;
};

GaussLegendre make_gauss_legendre(int n) {
  GaussLegendre gl;
  gl.x.resize(static_cast<std::size_t>(n));
  gl.logw.resize(static_cast<std::size_t>(n));
  const int half = (n + 1) / 2;
  for (int i = 0; i < half; ++i) {
    double z = std::cos(std::numbers::pi * (i + 0.75) / (n + 0.5));
    double dp = 0.0;
    for (int iter = 0; iter < 100; ++iter) {
      double p0 = 1.0, p1 = 0.0;
      for (int j = 1; j <= n; ++j) {
        const double p2 = p1;
        p1 = p0;
        p0 = ((2.0 * j - 1.0) * z * p1 - (j - 1.0) * p2) / j;
      }
      dp = n * (z * p0 - p1) / (z * z - 1.0);
      const double dz = p0 / dp;
      z -= dz;
      if (std::abs(dz) < 1e-15) break;
    }
    const double w = 2.0 / ((1.0 - z * z) * dp * dp);
    gl.x[static_cast<std::size_t>(i)] = -z;
    gl.x[static_cast<std::size_t>(n - 1 - i)] = z;
    gl.logw[static_cast<std::size_t>(i)] = std::log(w);
    gl.logw[static_cast<std::size_t>(n - 1 - i)] = std::log(w);
  }
  return gl;
}

constexpr int kBaseNodes = 128;
constexpr int kMaxDoublings = 4;

const GaussLegendre& gauss_legendre(int level) {
  static const std::array<GaussLegendre, kMaxDoublings + 1> rules = [] {
    std::array<GaussLegendre, kMaxDoublings + 1> r;
    for (int i = 0; i <= kMaxDoublings; ++i) r[static_cast<std::size_t>(i)] = make_gauss_legendre(kBaseNodes << i);
    return r;
  }();
  return rules[static_cast<std::size_t>(level)];
}

const GaussLegendre& gauss_legendre_8() {
  static const GaussLegendre rule = make_gauss_legendre(8);
  return rule;
}

double gamma_log_pdf(double A, double shape, double rate) noexcept {
  return shape * std::log(rate) - std::lgamma(shape) + (shape - 1.0) * std::log(A) - rate * A;
}

double log_post_d1(double A, const SlabStats& s, double s2, double shape, double rate) {
  return (shape - 1.0) / A - rate - static_cast<double>(s.n) * (A - s.mean) / s2;
}

double log_post_d2(double A, const SlabStats& s, double s2, double shape) {
  return -(shape - 1.0) / (A * A) - static_cast<double>(s.n) / s2;
}

/// Integration panels on [0, A_hi] and the tools to integrate the slab integrand over them.
struct SlabIntegrand {
  const SlabStats& stats;
  double s2, shape, rate;
  std::vector<double> breaks;

  SlabIntegrand(const SlabStats& st, double s2_, double shape_, double rate_)
      : stats(st), s2(s2_), shape(shape_), rate(rate_) {
    const double q = boost::math::gamma_p_inv(shape, 0.9999) / rate;
    double hi = std::max(q, stats.max + 8.0 * std::sqrt(s2));
    const double mode = slab_mode(stats, s2, shape, rate);
    const double curv = -log_post_d2(std::max(mode, kMinAmplitude), stats, s2, shape);
    const double sd = curv > 0.0 ? 1.0 / std::sqrt(curv) : std::sqrt(shape) / rate;
    hi = std::max(hi, mode + 10.0 * sd);
    breaks.push_back(0.0);
    const double lo_peak = mode - 10.0 * sd;
    const double hi_peak = mode + 10.0 * sd;
    if (lo_peak > 0.0) breaks.push_back(lo_peak);
    if (hi_peak < hi && hi_peak > breaks.back()) breaks.push_back(hi_peak);
    breaks.push_back(hi);
  }

  double log_f(double A) const { return slab_log_density(A, stats, s2, shape, rate); }

  /// log of the integral over [a, b] with rule `gl`; the first panel at 0 uses
  /// A = b u^(1/shape) when shape < 1 to remove the endpoint singularity.
  double log_panel(double a, double b, const GaussLegendre& gl) const {
    std::vector<double> terms(gl.x.size());
    const double half = 0.5 * (b - a);
    const bool singular = a == 0.0 && shape < 1.0;
    for (std::size_t i = 0; i < gl.x.size(); ++i) {
      const double v = a + half * (gl.x[i] + 1.0);
      if (singular) {
        const double u = v / b;  // in (0, 1)
        const double A = b * std::pow(u, 1.0 / shape);
        // dA = (b / shape) u^(1/shape - 1) du and du = dv / b
        const double log_jac = -std::log(shape) + (1.0 / shape - 1.0) * std::log(u);
        terms[i] = gl.logw[i] + std::log(half) + log_f(A) + log_jac;
      } else {
        terms[i] = gl.logw[i] + std::log(half) + log_f(v);
      }
    }
    return log_sum_exp(terms);
  }

  double log_integral(const GaussLegendre& gl) const {
    std::vector<double> parts;
    for (std::size_t i = 0; i + 1 < breaks.size(); ++i) parts.push_back(log_panel(breaks[i], breaks[i + 1], gl));
    return log_sum_exp(parts);
  }
};

}  // namespace

double residual_loglik(const SlabStats& s, double A, double s2) noexcept {
  const double n = static_cast<double>(s.n);
  const double d = s.mean - A;
  return -0.5 * n * std::log(2.0 * std::numbers::pi * s2) - 0.5 * (s.m2 + n * d * d) / s2;
}

double slab_log_density(double A, const SlabStats& stats, double s2, double shape, double rate) noexcept {
  if (!(A > 0.0)) return kNegInf;
  return gamma_log_pdf(A, shape, rate) + residual_loglik(stats, A, s2);
}

double slab_mode(const SlabStats& stats, double s2, double hA1, double hA2) {
  if (hA1 <= 1.0 && log_post_d1(kMinAmplitude, stats, s2, hA1, hA2) <= 0.0) return kMinAmplitude;
  if (hA1 < 1.0) {
    // Density is unbounded at 0; the interior stationary point (if any) is not the global mode.
    return kMinAmplitude;
  }
  const double fallback = std::max(stats.n > 0 ? stats.mean : (hA1 - 1.0) / hA2, 1e-3);
  double lo = 0.0;
  double hi = fallback;
  for (int i = 0; i < 200 && log_post_d1(hi, stats, s2, hA1, hA2) > 0.0; ++i) hi *= 2.0;
  if (!std::isfinite(hi) || log_post_d1(hi, stats, s2, hA1, hA2) > 0.0) return fallback;

  double x = std::clamp(fallback, 0.5 * hi, hi);
  for (int iter = 0; iter < 200; ++iter) {
    const double d1 = log_post_d1(x, stats, s2, hA1, hA2);
    if (!std::isfinite(d1)) return fallback;
    if (d1 > 0.0) lo = x; else hi = x;
    const double d2 = log_post_d2(x, stats, s2, hA1);
    double next = x - d1 / d2;
    if (!(next > lo && next < hi) || !std::isfinite(next)) next = 0.5 * (lo + hi);
    if (std::abs(next - x) <= 1e-14 * std::max(1.0, x)) return std::max(next, kMinAmplitude);
    x = next;
  }
  return std::isfinite(x) ? std::max(x, kMinAmplitude) : fallback;
}

double slab_log_marginal(const SlabStats& stats, double s2, double hA1, double hA2) {
  if (stats.n == 0) return 0.0;
  const SlabIntegrand f(stats, s2, hA1, hA2);
  double prev = f.log_integral(gauss_legendre(0));
  for (int level = 1; level <= kMaxDoublings; ++level) {
    const double cur = f.log_integral(gauss_legendre(level));
    if (std::abs(cur - prev) < 1e-8) return cur;
    prev = cur;
  }
  throw NumericalError("slab_log_marginal: quadrature did not converge");
}

double slab_log_odds(const SlabStats& stats, double s2, double p, double hA1, double hA2) {
  return std::log(p) + slab_log_marginal(stats, s2, hA1, hA2) - std::log1p(-p) -
         residual_loglik(stats, 0.0, s2);
}

SlabWalker::SlabWalker(const SlabStats& stats, double s2, double hA1, double hA2)
    : stats_(stats), s2_(s2), shape_(hA1), rate_(hA2), mode_(slab_mode(stats, s2, hA1, hA2)) {
  const double curv = -log_post_d2(mode_, stats_, s2_, shape_);
  const double floor = static_cast<double>(stats_.n) / s2_ + rate_ * rate_ / std::max(shape_, 1.0);
  proposal_sd_ = 2.4 / std::sqrt(std::max(curv, floor));
}

double SlabWalker::run(double start, int steps, Rng& rng) {
  double A = std::max(start, kMinAmplitude);
  double logf = slab_log_density(A, stats_, s2_, shape_, rate_);
  for (int i = 0; i < steps; ++i) {
    ++proposals_;
    const double prop = std::abs(A + proposal_sd_ * normal(rng, 0.0, 1.0));
    const double u = uniform01(rng);
    if (prop < kMinAmplitude) continue;
    const double logf_prop = slab_log_density(prop, stats_, s2_, shape_, rate_);
    if (std::log(u) < logf_prop - logf) {
      A = prop;
      logf = logf_prop;
      ++accepts_;
    }
  }
  return A;
}

double sample_slab_amplitude(const SlabStats& stats, double s2, double hA1, double hA2, int steps,
                             Rng& rng) {
  SlabWalker walker(stats, s2, hA1, hA2);
  return walker.run(slab_mode(stats, s2, hA1, hA2), steps, rng);
}

double sample_slab_amplitude_exact(const SlabStats& stats, double s2, double hA1, double hA2, Rng& rng) {
  if (stats.n == 0) {
    return std::max(gamma_rate(rng, hA1, hA2), kMinAmplitude);
  }
  // Cumulative mass over a fine partition of every panel (8-point rule per cell),
  // then inversion inside the selected cell by bisection on the same rule.
  const SlabIntegrand f(stats, s2, hA1, hA2);
  const GaussLegendre& gl8 = gauss_legendre_8();
  constexpr int kCells = 256;
  std::vector<double> edges;
  for (std::size_t p = 0; p + 1 < f.breaks.size(); ++p) {
    const double a = f.breaks[p], b = f.breaks[p + 1];
    for (int i = 0; i < kCells; ++i) edges.push_back(a + (b - a) * i / kCells);
  }
  edges.push_back(f.breaks.back());
  const std::size_t ncell = edges.size() - 1;
  std::vector<double> logmass(ncell);
  for (std::size_t i = 0; i < ncell; ++i) logmass[i] = f.log_panel(edges[i], edges[i + 1], gl8);
  const double logZ = log_sum_exp(logmass);

  const double u = uniform01(rng);
  double acc = 0.0;
  std::size_t cell = ncell - 1;
  for (std::size_t i = 0; i < ncell; ++i) {
    const double m = std::exp(logmass[i] - logZ);
    if (acc + m >= u) {
      cell = i;
      break;
    }
    acc += m;
  }
  const double target = std::max(u - acc, 0.0);
  double lo = edges[cell], hi = edges[cell + 1];
  for (int iter = 0; iter < 60; ++iter) {
    const double mid = 0.5 * (lo + hi);
    const double mass = mid > edges[cell] ? std::exp(f.log_panel(edges[cell], mid, gl8) - logZ) : 0.0;
    if (mass < target) lo = mid; else hi = mid;
  }
  return std::max(0.5 * (lo + hi), kMinAmplitude);
}

}  // namespace fcam
