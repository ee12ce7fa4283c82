#include <doctest.h>

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include <cmath>
#include <limits>
#include <numbers>
#include <random>

#include "fcam/chain.hpp"
#include "fcam/model.hpp"

using namespace fcam;

namespace {

std::vector<RawRow> rows_of(std::vector<std::int64_t> t, std::vector<double> y, std::vector<std::string> c) {
  std::vector<RawRow> rows;
  for (std::size_t i = 0; i < t.size(); ++i) rows.push_back({t[i], y[i], c[i]});
  return rows;
}

}  // namespace

TEST_CASE("validate_trace relabels conditions by first appearance") {
  const Trace tr = validate_trace(rows_of({1, 2, 3}, {0.1, 0.2, 0.3}, {"A", "A", "B"}));
  CHECK(tr.J == 2);
  CHECK(tr.g == std::vector<int>{0, 0, 1});
  CHECK(tr.labels == std::vector<std::string>{"A", "B"});

  const Trace tr2 = validate_trace(rows_of({1, 2, 3, 4}, {0, 0, 0, 0}, {"z", "a", "z", "q"}));
  CHECK(tr2.g == std::vector<int>{0, 1, 0, 2});
}

TEST_CASE("validate_trace rejects bad input") {
  CHECK_THROWS_WITH_AS(validate_trace(rows_of({1, 2}, {std::nan(""), 1.0}, {"A", "A"})),
                       doctest::Contains("non-finite fluorescence"), ValidationError);
  CHECK_THROWS_AS(validate_trace(rows_of({1, 2}, {INFINITY, 1.0}, {"A", "A"})), ValidationError);
  CHECK_THROWS_AS(validate_trace({}), ValidationError);
  CHECK_THROWS_AS(validate_trace(rows_of({1}, {0.0}, {"A"})), ValidationError);
  CHECK_THROWS_WITH_AS(validate_trace(rows_of({1, 1}, {0.0, 0.0}, {"A", "A"})), doctest::Contains("duplicate"),
                       ValidationError);
}

TEST_CASE("validate_trace at the recording scale") {
  std::vector<RawRow> rows(113865);
  for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = {static_cast<std::int64_t>(i + 1), 0.0, "c"};
  const Trace tr = validate_trace(std::move(rows), 30.0);
  CHECK(tr.size() == 113865);
  CHECK(tr.duration_seconds() / 60.0 == doctest::Approx(63.2).epsilon(0.001));
}

TEST_CASE("validate_trace is idempotent up to label mapping") {
  std::mt19937_64 rng(3);
  std::vector<RawRow> rows;
  const char* names[] = {"x", "y", "w"};
  for (int i = 0; i < 50; ++i) rows.push_back({100 - i, std::normal_distribution<double>()(rng), names[rng() % 3]});
  const Trace once = validate_trace(rows);
  const Trace twice = validate_trace(to_rows(once));
  CHECK(once.y == twice.y);
  CHECK(once.g == twice.g);
  CHECK(once.time == twice.time);
  CHECK(once.labels == twice.labels);
}

TEST_CASE("bnb_log_pmf at k = 0 by hand") {
  // B(5,3)/B(4,3) = 4/7
  CHECK(bnb_log_pmf(0, 1.0, 4.0, 3.0) == doctest::Approx(std::log(4.0 / 7.0)).epsilon(1e-14));
}

TEST_CASE("bnb_log_pmf sums to one") {
  for (auto prm : {BnbParams{1, 4, 3}, BnbParams{2.5, 6, 1.5}, BnbParams{0.7, 3, 8}}) {
    long double s = 0.0L;
    for (long k = 0; k <= 10000; ++k) s += std::exp(static_cast<long double>(bnb_log_pmf(k, prm)));
    if (prm.a >= 4) {
      CHECK(static_cast<double>(s) == doctest::Approx(1.0).epsilon(1e-8));
    }
    // truncated version: whatever the parameters, the kept mass is within the tail bound
    long double kept = 0.0L;
    const int n = bnb_truncation(prm, 1e-12);
    for (long k = 0; k < n; ++k) kept += std::exp(static_cast<long double>(bnb_log_pmf(k, prm)));
    if (n < kMaxComponents) CHECK(static_cast<double>(1.0L - kept) < 1e-12);
  }
}

TEST_CASE("bnb_log_pmf matches the beta mixture of negative binomials") {
  using boost::math::quadrature::gauss_kronrod;
  for (long k : {1L, 2L, 7L, 30L}) {
    for (auto prm : {BnbParams{1, 4, 3}, BnbParams{3, 2.5, 5}}) {
      auto integrand = [&](double pi) {
        const double nb = std::exp(std::lgamma(prm.r + k) - std::lgamma(k + 1.0) - std::lgamma(prm.r) +
                                   prm.r * std::log(pi) + k * std::log1p(-pi));
        const double beta = std::exp((prm.a - 1) * std::log(pi) + (prm.b - 1) * std::log1p(-pi) -
                                     (std::lgamma(prm.a) + std::lgamma(prm.b) - std::lgamma(prm.a + prm.b)));
        return nb * beta;
      };
      const double P = gauss_kronrod<double, 61>::integrate(integrand, 0.0, 1.0, 15, 1e-14);
      CHECK(bnb_log_pmf(k, prm) == doctest::Approx(std::log(P)).epsilon(1e-9));
    }
  }
}

TEST_CASE("bnb_truncation for the default prior") {
  const int n = bnb_truncation(BnbParams{}, 1e-12);
  CHECK(n > 1000);
  CHECK(n < kMaxComponents);
}

TEST_CASE("collapsed_loglik examples") {
  CHECK(collapsed_loglik(0, 0, 0, 0, 0.5, 0.4, 0.6) == doctest::Approx(-0.5 * std::log(2 * std::numbers::pi)));
  const double expect = -0.5 * std::log(2 * std::numbers::pi * 0.3) - 0.5 * 0.09 / 0.3;
  CHECK(collapsed_loglik(1.2, 1, 1, 0, 0.5, 0.1, 0.2) == doctest::Approx(expect).epsilon(1e-14));
}

TEST_CASE("collapsed_loglik is shift invariant in (y, b)") {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> n01;
  for (int i = 0; i < 100; ++i) {
    const double y = n01(rng), c = n01(rng), A = std::abs(n01(rng)), b = n01(rng), d = 10 * n01(rng);
    CHECK(collapsed_loglik(y + d, c, A, b + d, 0.7, 0.3, 0.2) ==
          doctest::Approx(collapsed_loglik(y, c, A, b, 0.7, 0.3, 0.2)).epsilon(1e-10));
  }
}

TEST_CASE("collapsed_loglik is maximized at A = max(0, y - b - gamma c_prev)") {
  std::mt19937_64 rng(2);
  std::normal_distribution<double> n01;
  for (int i = 0; i < 50; ++i) {
    const double y = n01(rng), c = n01(rng), b = n01(rng), g = 0.6;
    const double best = std::max(0.0, y - b - g * c);
    const double at = collapsed_loglik(y, c, best, b, g, 0.2, 0.1);
    for (double A = 0.0; A < 4.0; A += 0.01) CHECK(collapsed_loglik(y, c, A, b, g, 0.2, 0.1) <= at + 1e-15);
  }
}

TEST_CASE("log_sum_exp handles extremes") {
  const std::vector<double> v{-1000.0, -1000.0};
  CHECK(log_sum_exp(v) == doctest::Approx(-1000.0 + std::log(2.0)));
  CHECK(std::isinf(log_sum_exp(std::vector<double>{})));
  const std::vector<double> w{-INFINITY, -INFINITY};
  CHECK(log_sum_exp(w) == -INFINITY);
}

TEST_CASE("HyperParams validation") {
  HyperParams h;
  CHECK(h.validate().empty());
  h.h1p = 9;
  h.h2p = 1;
  CHECK(h.validate().size() == 1);
  h = HyperParams{};
  h.hA1 = 0;
  CHECK_THROWS_AS(h.validate(), ValidationError);
  h = HyperParams{};
  h.B0 = -1;
  CHECK_THROWS_AS(h.validate(), ValidationError);
  h = HyperParams{};
  h.bnb_L.a = std::nan("");
  CHECK_THROWS_AS(h.validate(), ValidationError);
}

TEST_CASE("check_invariants flags inconsistent states") {
  Trace tr;
  tr.J = 1;
  tr.y = {0.0, 0.0};
  tr.g = {0, 0};
  ChainState s = initial_state(tr, HyperParams{});
  CHECK_NOTHROW(check_invariants(s, tr));
  ChainState bad = s;
  bad.pi[0] += 0.5;
  CHECK_THROWS_AS(check_invariants(bad, tr), std::logic_error);
  bad = s;
  bad.astar[0] = 1e-20;
  CHECK_THROWS_AS(check_invariants(bad, tr), std::logic_error);
  bad = s;
  bad.M[0] = bad.L;
  CHECK_THROWS_AS(check_invariants(bad, tr), std::logic_error);
}

TEST_CASE("DrawStore stores and returns amplitudes") {
  DrawStore ds(3, 1);
  ScalarDraw sc;
  sc.K = sc.Kplus = 1;
  sc.L = sc.Lplus = 2;
  ds.append(sc, {0.0, 1.5}, {0}, {0, 1, 1});
  CHECK(ds.size() == 1);
  CHECK(ds.amplitude(0, 0) == 0.0);
  CHECK(ds.amplitude(0, 2) == 1.5);
  CHECK_THROWS(ds.append(sc, {0.0}, {0}, {0, 1, 1}));
  CHECK_THROWS(ds.append(sc, {0.0, 1.0}, {0}, {0, 1}));
}
