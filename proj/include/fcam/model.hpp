#ifndef FCAM_MODEL_HPP
#define FCAM_MODEL_HPP

#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace fcam {

/// Bad user input or configuration (CLI exit code 2).
class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Numerical breakdown inside the sampler (CLI exit code 1).
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Component labels are stored compactly in draws; counts never exceed this.
inline constexpr int kMaxComponents = 65535;

struct RawRow {
  std::int64_t time = 0;
  double y = 0.0;
  std::string condition;
};

/// Observed fluorescence series with per-frame condition labels.
///
/// Conditions are stored 0-based internally (`g[t] in [0, J)`), numbered in
/// order of first appearance; `labels[j]` keeps the original token.
struct Trace {
  std::vector<double> y;
  std::vector<int> g;
  std::vector<std::int64_t> time;
  std::vector<std::string> labels;
  int J = 0;
  double frame_rate_hz = 30.0;

  std::size_t size() const noexcept { return y.size(); }
  double duration_seconds() const noexcept {
    return static_cast<double>(y.size()) / frame_rate_hz;
  }
};

/// Beta-negative-binomial parameters for the prior on (count - 1).
struct BnbParams {
  double r = 1.0;
  double a = 4.0;
  double b = 3.0;
};

struct HyperParams {
  double b0 = 0.0;
  double B0 = 1.0;
  double C0 = 1.0;
  double h1sigma = 1.0, h2sigma = 1.0;
  double h1tau = 1.0, h2tau = 1.0;
  double h1gamma = 1.0, h2gamma = 1.0;
  double h1p = 1.0, h2p = 9.0;
  double hA1 = 8.0, hA2 = 8.0;
  BnbParams bnb_K;
  BnbParams bnb_L;
  double a_alpha = 1.0, b_alpha = 1.0;
  double a_beta = 1.0, b_beta = 1.0;

  /// Throws ValidationError on a non-positive variance, shape or rate.
  /// Returns soft warnings (e.g. a prior on p that does not favour sparsity).
  std::vector<std::string> validate() const;
};

/// Complete MCMC state. Component indices are 0-based.
struct ChainState {
  std::vector<double> c;  // c_0 .. c_T
  double b = 0.0;
  double sigma2 = 1.0;
  double tau2 = 1.0;
  double gamma = 0.5;
  double p = 0.1;
  int K = 1, L = 1;
  int Kplus = 1, Lplus = 1;
  std::vector<double> pi;                  // K
  std::vector<std::vector<double>> omega;  // omega[k][l], K columns of length L
  std::vector<double> astar;               // L
  std::vector<int> S;                      // J
  std::vector<int> M;                      // T
  double alpha = 1.0;
  double beta = 1.0;

  /// A_t = Astar[M_t] for every frame.
  std::vector<double> amplitudes() const;
};

/// Throws std::logic_error naming the first violated ChainState invariant.
void check_invariants(const ChainState& state, const Trace& trace);

/// Scalar part of one stored posterior draw.
struct ScalarDraw {
  double b = 0.0, sigma2 = 0.0, tau2 = 0.0, gamma = 0.0, p = 0.0;
  std::int32_t K = 0, Kplus = 0, L = 0, Lplus = 0;
  double alpha = 0.0, beta = 0.0;

  bool operator==(const ScalarDraw&) const = default;
};

/// Append-only store of posterior draws.
class DrawStore {
 public:
  using Label = std::uint16_t;

  DrawStore() = default;
  DrawStore(std::size_t T, std::size_t J) : T_(T), J_(J) {}

  void append(const ChainState& state);
  void append(const ScalarDraw& scalars, std::vector<double> astar,
              std::vector<Label> S, std::vector<Label> M);

  std::size_t size() const noexcept { return scalars_.size(); }
  bool empty() const noexcept { return scalars_.empty(); }
  std::size_t T() const noexcept { return T_; }
  std::size_t J() const noexcept { return J_; }

  const ScalarDraw& scalars(std::size_t d) const { return scalars_.at(d); }
  const std::vector<double>& astar(std::size_t d) const { return astar_.at(d); }
  const std::vector<Label>& S(std::size_t d) const { return S_.at(d); }
  const std::vector<Label>& M(std::size_t d) const { return M_.at(d); }
  double amplitude(std::size_t d, std::size_t t) const { return astar_[d][M_[d][t]]; }

  bool operator==(const DrawStore&) const = default;

 private:
  std::size_t T_ = 0;
  std::size_t J_ = 0;
  std::vector<ScalarDraw> scalars_;
  std::vector<std::vector<double>> astar_;
  std::vector<std::vector<Label>> S_;
  std::vector<std::vector<Label>> M_;
};

/// Builds a Trace from raw rows: sorts by time, relabels conditions in order
/// of first appearance, rejects empty/short input, non-finite y, duplicate times.
Trace validate_trace(std::vector<RawRow> rows, double frame_rate_hz = 30.0);

/// Inverse of validate_trace (original condition tokens restored).
std::vector<RawRow> to_rows(const Trace& trace);

/// log P(X = k) for X ~ BNB(r, a, b).
double bnb_log_pmf(long k, double r, double a, double b);
inline double bnb_log_pmf(long k, const BnbParams& prm) {
  return bnb_log_pmf(k, prm.r, prm.a, prm.b);
}

/// Largest count n (n >= 1) such that the translated prior P(count = n) is kept:
/// the first n with P(X >= n) < tail, capped at kMaxComponents.
int bnb_truncation(const BnbParams& prm, double tail = 1e-12);

/// Log density of y_t with c_t integrated out:
/// N(y; b + gamma * c_prev + A, sigma2 + tau2).
double collapsed_loglik(double y, double c_prev, double A, double b, double gamma,
                        double sigma2, double tau2);

double normal_logpdf(double x, double mean, double var) noexcept;

/// log(sum(exp(v))); -inf for empty input or all -inf.
double log_sum_exp(std::span<const double> v) noexcept;

double log_beta_fn(double a, double b) noexcept;

}  // namespace fcam

#endif  // FCAM_MODEL_HPP
