#include "fcam/state_space.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace fcam {

FilterCache kalman_forward(std::span<const double> y, std::span<const double> A, double b,
                           double gamma, double sigma2, double tau2, double C0) {
  const std::size_t T = y.size();
  if (A.size() != T) throw std::invalid_argument("kalman_forward: A must have one entry per frame");

  FilterCache f;
  f.a.assign(T + 1, 0.0);
  f.R.assign(T + 1, 0.0);
  f.m.assign(T + 1, 0.0);
  f.C.assign(T + 1, 0.0);
  f.R[0] = C0;
  f.C[0] = C0;

  const double g2 = gamma * gamma;
  for (std::size_t t = 1; t <= T; ++t) {
    const double a = gamma * f.m[t - 1] + A[t - 1];
    double R = g2 * f.C[t - 1] + tau2;
    if (R < kVarianceFloor) {
      R = kVarianceFloor;
      ++f.clamp_events;
    }
    const bool unobserved = std::isinf(sigma2);
    const double Q = R + sigma2;
    const double gain = unobserved ? 0.0 : R / Q;
    const double m = a + gain * (y[t - 1] - b - a);
    // R - R^2 / (R + sigma2), written without cancellation
    double C = unobserved ? R : R * sigma2 / Q;
    if (C < kVarianceFloor) {
      C = kVarianceFloor;
      ++f.clamp_events;
    }
    if (!std::isfinite(m) || !std::isfinite(C)) {
      std::ostringstream os;
      os << "kalman_forward: non-finite filter moment at t=" << t;
      throw NumericalError(os.str());
    }
    f.a[t] = a;
    f.R[t] = R;
    f.m[t] = m;
    f.C[t] = C;
  }
  return f;
}

std::vector<double> ffbs_sample(const FilterCache& cache, double gamma, Rng& rng) {
  const std::size_t T = cache.T();
  std::vector<double> c(T + 1);
  std::normal_distribution<double> z(0.0, 1.0);
  c[T] = cache.m[T] + std::sqrt(cache.C[T]) * z(rng);
  for (std::size_t t = T; t-- > 0;) {
    const double Ct = cache.C[t];
    const double Rn = cache.R[t + 1];
    const double h = cache.m[t] + gamma * Ct / Rn * (c[t + 1] - cache.a[t + 1]);
    double H = Ct - gamma * gamma * Ct * Ct / Rn;
    if (H <= 0.0) {
      if (H < -1e-10 * Ct) {
        std::ostringstream os;
        os << "ffbs_sample: negative backward variance at t=" << t
           << " (cache built under a different state?)";
        throw NumericalError(os.str());
      }
      H = kVarianceFloor;
    }
    c[t] = h + std::sqrt(H) * z(rng);
  }
  return c;
}

NormalParams baseline_posterior(std::span<const double> y, std::span<const double> c,
                                double sigma2, double b0, double B0) {
  const std::size_t T = y.size();
  double resid = 0.0;
  for (std::size_t t = 1; t <= T; ++t) resid += y[t - 1] - c[t];
  const double precision = 1.0 / B0 + static_cast<double>(T) / sigma2;
  return {(b0 / B0 + resid / sigma2) / precision, 1.0 / precision};
}

double update_baseline(const Trace& trace, std::span<const double> c, const ChainState& state,
                       const HyperParams& hyper, Rng& rng) {
  const NormalParams post = baseline_posterior(trace.y, c, state.sigma2, hyper.b0, hyper.B0);
  return normal(rng, post.mean, std::sqrt(post.var));
}

GammaParams sigma2_precision_posterior(std::span<const double> y, std::span<const double> c,
                                       double b, const HyperParams& hyper) {
  const std::size_t T = y.size();
  double ss = 0.0;
  for (std::size_t t = 1; t <= T; ++t) {
    const double e = y[t - 1] - c[t] - b;
    ss += e * e;
  }
  return {hyper.h1sigma + 0.5 * static_cast<double>(T), hyper.h2sigma + 0.5 * ss};
}

GammaParams tau2_precision_posterior(std::span<const double> c, std::span<const double> A,
                                     double gamma, const HyperParams& hyper) {
  const std::size_t T = A.size();
  double ss = 0.0;
  for (std::size_t t = 1; t <= T; ++t) {
    const double w = c[t] - gamma * c[t - 1] - A[t - 1];
    ss += w * w;
  }
  return {hyper.h1tau + 0.5 * static_cast<double>(T), hyper.h2tau + 0.5 * ss};
}

std::pair<double, double> update_variances(const Trace& trace, std::span<const double> c,
                                           std::span<const double> A, const ChainState& state,
                                           const HyperParams& hyper, Rng& rng) {
  const GammaParams ps = sigma2_precision_posterior(trace.y, c, state.b, hyper);
  const double sigma2 = 1.0 / gamma_rate(rng, ps.shape, ps.rate);
  const GammaParams pt = tau2_precision_posterior(c, A, state.gamma, hyper);
  const double tau2 = 1.0 / gamma_rate(rng, pt.shape, pt.rate);
  return {sigma2, tau2};
}

ArStats ArStats::from_path(std::span<const double> c, std::span<const double> A) {
  ArStats s;
  for (std::size_t t = 1; t <= A.size(); ++t) {
    const double x = c[t - 1];
    const double z = c[t] - A[t - 1];
    s.sxx += x * x;
    s.sxz += x * z;
    s.szz += z * z;
  }
  return s;
}

double gamma_log_target(double gamma, const ArStats& s, double tau2, double h1, double h2) {
  if (!(gamma > 0.0 && gamma < 1.0)) return -std::numeric_limits<double>::infinity();
  const double ss = s.szz - 2.0 * gamma * s.sxz + gamma * gamma * s.sxx;
  return (h1 - 1.0) * std::log(gamma) + (h2 - 1.0) * std::log1p(-gamma) - 0.5 * ss / tau2;
}

double gamma_log_accept_ratio(double gamma, double proposal, const ArStats& stats, double tau2,
                              double h1, double h2) {
  const double jac = (std::log(proposal) - std::log(gamma)) + (std::log1p(-proposal) - std::log1p(-gamma));
  return gamma_log_target(proposal, stats, tau2, h1, h2) - gamma_log_target(gamma, stats, tau2, h1, h2) + jac;
}

namespace {

double logit(double x) { return std::log(x) - std::log1p(-x); }
double inv_logit(double z) { return z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z)); }

double gamma_mh_step(double gamma, const ArStats& stats, double tau2, const HyperParams& hyper,
                     double step, Rng& rng, double& accept_prob) {
  double proposal = inv_logit(logit(gamma) + step * normal(rng, 0.0, 1.0));
  // Keep the proposal strictly inside (0,1) in floating point.
  proposal = std::clamp(proposal, 1e-12, 1.0 - 1e-12);
  const double log_ratio = gamma_log_accept_ratio(gamma, proposal, stats, tau2, hyper.h1gamma, hyper.h2gamma);
  accept_prob = log_ratio >= 0.0 ? 1.0 : std::exp(log_ratio);
  return std::log(uniform01(rng)) < log_ratio ? proposal : gamma;
}

}  // namespace

double GammaSampler::update(std::span<const double> c, std::span<const double> A,
                            const ChainState& state, const HyperParams& hyper, Rng& rng, bool adapt) {
  const ArStats stats = ArStats::from_path(c, A);
  double accept_prob = 0.0;
  const double next = gamma_mh_step(state.gamma, stats, state.tau2, hyper, step(), rng, accept_prob);
  ++proposals_;
  if (next != state.gamma) ++accepts_;
  if (adapt) {
    ++adapt_iter_;
    log_step_ += (accept_prob - 0.3) / std::pow(static_cast<double>(adapt_iter_), 0.6);
    log_step_ = std::clamp(log_step_, std::log(1e-4), std::log(10.0));
  }
  return next;
}

double update_gamma_mh(std::span<const double> c, std::span<const double> A,
                       const ChainState& state, const HyperParams& hyper, Rng& rng, double step) {
  const ArStats stats = ArStats::from_path(c, A);
  double accept_prob = 0.0;
  return gamma_mh_step(state.gamma, stats, state.tau2, hyper, step, rng, accept_prob);
}

}  // namespace fcam
