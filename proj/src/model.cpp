#include "fcam/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <sstream>
#include <unordered_map>

namespace fcam {

namespace {

void require_positive(double v, const char* name) {
  if (!(v > 0.0) || !std::isfinite(v)) {
    throw ValidationError(std::string("hyperparameter ") + name + " must be positive and finite");
  }
}

}  // namespace

std::vector<std::string> HyperParams::validate() const {
  require_positive(B0, "B0");
  require_positive(C0, "C0");
  require_positive(h1sigma, "h1sigma");
  require_positive(h2sigma, "h2sigma");
  require_positive(h1tau, "h1tau");
  require_positive(h2tau, "h2tau");
  require_positive(h1gamma, "h1gamma");
  require_positive(h2gamma, "h2gamma");
  require_positive(h1p, "h1p");
  require_positive(h2p, "h2p");
  require_positive(hA1, "hA1");
  require_positive(hA2, "hA2");
  require_positive(bnb_K.r, "bnb_K.r");
  require_positive(bnb_K.a, "bnb_K.a");
  require_positive(bnb_K.b, "bnb_K.b");
  require_positive(bnb_L.r, "bnb_L.r");
  require_positive(bnb_L.a, "bnb_L.a");
  require_positive(bnb_L.b, "bnb_L.b");
  require_positive(a_alpha, "a_alpha");
  require_positive(b_alpha, "b_alpha");
  require_positive(a_beta, "a_beta");
  require_positive(b_beta, "b_beta");
  if (!std::isfinite(b0)) throw ValidationError("hyperparameter b0 must be finite");

  std::vector<std::string> warnings;
  if (!(h1p < h2p)) {
    warnings.emplace_back("h1p >= h2p: the prior on p does not favour sparse spike detections");
  }
  return warnings;
}

std::vector<double> ChainState::amplitudes() const {
  std::vector<double> A(M.size());
  for (std::size_t t = 0; t < M.size(); ++t) A[t] = astar[static_cast<std::size_t>(M[t])];
  return A;
}

void check_invariants(const ChainState& s, const Trace& trace) {
  auto fail = [](const std::string& what) { throw std::logic_error("ChainState invariant: " + what); };
  const std::size_t T = trace.size();
  if (s.c.size() != T + 1) fail("c must have T+1 entries");
  if (s.M.size() != T) fail("M must have T entries");
  if (s.S.size() != static_cast<std::size_t>(trace.J)) fail("S must have J entries");
  if (!(s.sigma2 > 0.0) || !(s.tau2 > 0.0)) fail("variances must be positive");
  if (!(s.gamma > 0.0 && s.gamma < 1.0)) fail("gamma outside (0,1)");
  if (!(s.p > 0.0 && s.p < 1.0)) fail("p outside (0,1)");
  if (!(s.alpha > 0.0) || !(s.beta > 0.0)) fail("concentrations must be positive");
  if (s.K < 1 || s.L < 1 || s.Kplus < 1 || s.Lplus < 1) fail("counts must be positive");
  if (s.Kplus > s.K || s.Lplus > s.L) fail("non-empty count exceeds component count");
  if (s.pi.size() != static_cast<std::size_t>(s.K)) fail("pi has wrong length");
  if (s.omega.size() != static_cast<std::size_t>(s.K)) fail("omega has wrong column count");
  if (s.astar.size() != static_cast<std::size_t>(s.L)) fail("astar has wrong length");

  const double pisum = std::accumulate(s.pi.begin(), s.pi.end(), 0.0);
  if (std::abs(pisum - 1.0) > 1e-10) fail("pi does not sum to 1");
  for (const auto& col : s.omega) {
    if (col.size() != static_cast<std::size_t>(s.L)) fail("omega column has wrong length");
    const double sum = std::accumulate(col.begin(), col.end(), 0.0);
    if (std::abs(sum - 1.0) > 1e-10) fail("omega column does not sum to 1");
  }
  for (double a : s.astar) {
    if (!(a == 0.0 || a >= 1e-12) || !std::isfinite(a)) fail("astar entries must be 0 or >= 1e-12");
  }

  // Non-empty components come first, ordered by smallest member index.
  std::vector<int> first_k(static_cast<std::size_t>(s.K), -1);
  for (std::size_t j = 0; j < s.S.size(); ++j) {
    const int k = s.S[j];
    if (k < 0 || k >= s.K) fail("S label out of range");
    if (first_k[static_cast<std::size_t>(k)] < 0) first_k[static_cast<std::size_t>(k)] = static_cast<int>(j);
  }
  for (int k = 0; k < s.K; ++k) {
    const bool filled = first_k[static_cast<std::size_t>(k)] >= 0;
    if (filled != (k < s.Kplus)) fail("distributional components not relabeled");
    if (k > 0 && k < s.Kplus && first_k[static_cast<std::size_t>(k)] < first_k[static_cast<std::size_t>(k - 1)]) {
      fail("distributional relabeling order");
    }
  }
  std::vector<std::int64_t> first_l(static_cast<std::size_t>(s.L), -1);
  for (std::size_t t = 0; t < s.M.size(); ++t) {
    const int l = s.M[t];
    if (l < 0 || l >= s.L) fail("M label out of range");
    if (first_l[static_cast<std::size_t>(l)] < 0) first_l[static_cast<std::size_t>(l)] = static_cast<std::int64_t>(t);
  }
  for (int l = 0; l < s.L; ++l) {
    const bool filled = first_l[static_cast<std::size_t>(l)] >= 0;
    if (filled != (l < s.Lplus)) fail("observational components not relabeled");
    if (l > 0 && l < s.Lplus && first_l[static_cast<std::size_t>(l)] < first_l[static_cast<std::size_t>(l - 1)]) {
      fail("observational relabeling order");
    }
  }
}

void DrawStore::append(const ChainState& state) {
  ScalarDraw sc{state.b, state.sigma2, state.tau2, state.gamma, state.p,
                state.K, state.Kplus, state.L, state.Lplus, state.alpha, state.beta};
  std::vector<Label> S(state.S.begin(), state.S.end());
  std::vector<Label> M(state.M.begin(), state.M.end());
  append(sc, state.astar, std::move(S), std::move(M));
}

void DrawStore::append(const ScalarDraw& scalars, std::vector<double> astar,
                       std::vector<Label> S, std::vector<Label> M) {
  if (S.size() != J_ || M.size() != T_) {
    throw std::invalid_argument("DrawStore::append: allocation vector length mismatch");
  }
  if (astar.size() != static_cast<std::size_t>(scalars.L)) {
    throw std::invalid_argument("DrawStore::append: atom vector length differs from L");
  }
  for (Label l : M) {
    if (l >= astar.size()) throw std::invalid_argument("DrawStore::append: M label out of range");
  }
  scalars_.push_back(scalars);
  astar_.push_back(std::move(astar));
  S_.push_back(std::move(S));
  M_.push_back(std::move(M));
}

Trace validate_trace(std::vector<RawRow> rows, double frame_rate_hz) {
  if (rows.empty()) throw ValidationError("empty input");
  if (rows.size() < 2) throw ValidationError("at least 2 rows are required");
  if (!(frame_rate_hz > 0.0) || !std::isfinite(frame_rate_hz)) {
    throw ValidationError("frame rate must be positive");
  }
  std::stable_sort(rows.begin(), rows.end(),
                   [](const RawRow& a, const RawRow& b) { return a.time < b.time; });

  Trace trace;
  trace.frame_rate_hz = frame_rate_hz;
  trace.y.reserve(rows.size());
  trace.g.reserve(rows.size());
  trace.time.reserve(rows.size());
  std::unordered_map<std::string, int> ids;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const RawRow& r = rows[i];
    if (!std::isfinite(r.y)) {
      std::ostringstream os;
      os << "non-finite fluorescence at t=" << r.time;
      throw ValidationError(os.str());
    }
    if (i > 0 && r.time == rows[i - 1].time) {
      std::ostringstream os;
      os << "duplicate time index " << r.time;
      throw ValidationError(os.str());
    }
    auto [it, inserted] = ids.try_emplace(r.condition, static_cast<int>(trace.labels.size()));
    if (inserted) trace.labels.push_back(r.condition);
    trace.y.push_back(r.y);
    trace.g.push_back(it->second);
    trace.time.push_back(r.time);
  }
  trace.J = static_cast<int>(trace.labels.size());
  if (trace.J > kMaxComponents) throw ValidationError("too many distinct conditions");
  return trace;
}

std::vector<RawRow> to_rows(const Trace& trace) {
  std::vector<RawRow> rows(trace.size());
  for (std::size_t t = 0; t < trace.size(); ++t) {
    rows[t].time = trace.time.empty() ? static_cast<std::int64_t>(t + 1) : trace.time[t];
    rows[t].y = trace.y[t];
    rows[t].condition = trace.labels.empty() ? std::to_string(trace.g[t] + 1)
                                             : trace.labels[static_cast<std::size_t>(trace.g[t])];
  }
  return rows;
}

double log_beta_fn(double a, double b) noexcept {
  return std::lgamma(a) + std::lgamma(b) - std::lgamma(a + b);
}

double bnb_log_pmf(long k, double r, double a, double b) {
  if (!(r > 0.0) || !(a > 0.0) || !(b > 0.0)) {
    throw std::invalid_argument("bnb_log_pmf: r, a, b must be positive");
  }
  if (k < 0) throw std::invalid_argument("bnb_log_pmf: k must be non-negative");
  const double kd = static_cast<double>(k);
  return std::lgamma(r + kd) - std::lgamma(kd + 1.0) - std::lgamma(r) +
         log_beta_fn(a + r, b + kd) - log_beta_fn(a, b);
}

int bnb_truncation(const BnbParams& prm, double tail) {
  // Accumulate in long double so 1 - cdf stays meaningful near 1e-12.
  long double cdf = 0.0L;
  for (long k = 0; k < kMaxComponents; ++k) {
    cdf += std::exp(static_cast<long double>(bnb_log_pmf(k, prm)));
    if (1.0L - cdf < static_cast<long double>(tail)) {
      return static_cast<int>(k + 1);
    }
  }
  return kMaxComponents;
}

double normal_logpdf(double x, double mean, double var) noexcept {
  const double d = x - mean;
  return -0.5 * (std::log(2.0 * std::numbers::pi * var) + d * d / var);
}

double collapsed_loglik(double y, double c_prev, double A, double b, double gamma,
                        double sigma2, double tau2) {
  return normal_logpdf(y, b + gamma * c_prev + A, sigma2 + tau2);
}

double log_sum_exp(std::span<const double> v) noexcept {
  double m = -std::numeric_limits<double>::infinity();
  for (double x : v) m = std::max(m, x);
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (double x : v) s += std::exp(x - m);
  return m + std::log(s);
}

}  // namespace fcam
