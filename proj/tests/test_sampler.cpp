#include <doctest.h>

#include <cmath>
#include <numeric>

#include "fcam/chain.hpp"
#include "fcam/sampler.hpp"
#include "fcam/slab.hpp"
#include "support/oracles.hpp"

using namespace fcam;
namespace ft = fcam::testing;

namespace {

Trace layout(int T, int J) {
  Trace tr;
  tr.J = J;
  for (int t = 0; t < T; ++t) {
    tr.g.push_back(t * J / T);
    tr.time.push_back(t + 1);
    tr.y.push_back(0.0);
  }
  for (int j = 0; j < J; ++j) tr.labels.push_back(std::to_string(j + 1));
  return tr;
}

double slab_mc(const std::vector<double>& r, double s2, double h1, double h2, int n, Rng& rng) {
  std::gamma_distribution<double> g(h1, 1.0 / h2);
  double acc = 0.0;
  for (int i = 0; i < n; ++i) {
    const double a = g(rng);
    double l = 0.0;
    for (double x : r) l += -0.5 * (x - a) * (x - a) / s2;
    acc += std::exp(l);
  }
  return acc / n * std::pow(2.0 * std::numbers::pi * s2, -0.5 * static_cast<double>(r.size()));
}

}  // namespace

TEST_CASE("distributional weights") {
  Rng rng(1);
  PartitionCounts pc;
  pc.Jk = {5};
  CHECK(sample_distributional_weights(pc, 1, 1.0, rng) == std::vector<double>{1.0});
  pc.Jk = {3, 0};
  const int n = 50000;
  double m = 0.0;
  for (int i = 0; i < n; ++i) {
    const auto pi = sample_distributional_weights(pc, 2, 2.0, rng);
    CHECK(pi[0] + pi[1] == doctest::Approx(1.0).epsilon(1e-12));
    m += pi[0];
  }
  // Beta(4, 1): sd = sqrt(4 / (25 * 6))
  CHECK(std::abs(m / n - 0.8) < 4 * std::sqrt(4.0 / 150.0 / n));
}

TEST_CASE("observational weights") {
  Rng rng(2);
  PartitionCounts pc;
  pc.Nlk = {{4, 0}, {0, 0}};
  const int n = 50000;
  double m0 = 0.0, m1 = 0.0;
  for (int i = 0; i < n; ++i) {
    const auto om = sample_observational_weights(pc, 2, 2, 2.0, rng);
    CHECK(om[0][0] + om[0][1] == doctest::Approx(1.0).epsilon(1e-12));
    m0 += om[0][0];
    m1 += om[1][0];
  }
  CHECK(std::abs(m0 / n - 5.0 / 6.0) < 4 * std::sqrt(5.0 / 252.0 / n));
  CHECK(std::abs(m1 / n - 0.5) < 4 * std::sqrt(1.0 / 12.0 / n));
}

TEST_CASE("tiny concentrations keep weights on the simplex") {
  Rng rng(3);
  PartitionCounts pc;
  pc.Jk = {0, 0, 0};
  for (int i = 0; i < 1000; ++i) {
    const auto pi = sample_distributional_weights(pc, 3, 1e-6, rng);
    double s = 0.0;
    for (double w : pi) {
      CHECK(w >= 0.0);
      s += w;
    }
    CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("allocation conditionals match enumeration") {
  Rng rng(4);
  for (int rep = 0; rep < 40; ++rep) {
    auto [tr, s] = ft::random_small_state(rng);
    for (auto kind : {AllocationLikelihood::collapsed, AllocationLikelihood::state}) {
      const AtomResiduals res = atom_residuals(tr, s.c, s, kind);
      const LikelihoodTable lik(res, s.astar);
      for (int j = 0; j < tr.J; ++j) {
        CHECK(ft::max_abs_diff(distributional_allocation_logprobs(tr, lik, s, j),
                               ft::oracle_S_logprobs(tr, s, j, kind)) < 1e-8);
      }
      for (std::size_t t = 0; t < tr.size(); ++t) {
        CHECK(ft::max_abs_diff(observational_allocation_logprobs(tr, lik, s, t),
                               ft::oracle_M_logprobs(tr, s, t, kind)) < 1e-8);
      }
    }
  }
}

TEST_CASE("allocation draws follow their conditionals") {
  Rng rng(5);
  auto [tr, s] = ft::random_small_state(rng);
  while (s.K < 2 || s.L < 2) std::tie(tr, s) = ft::random_small_state(rng);
  const AtomResiduals res = atom_residuals(tr, s.c, s, AllocationLikelihood::collapsed);
  const LikelihoodTable lik(res, s.astar);
  // Frame 0's M conditional, estimated from repeated draws with labels fixed by the original state.
  const auto lp = observational_allocation_logprobs(tr, lik, s, 0);
  const int n = 40000;
  std::vector<int> hits(static_cast<std::size_t>(s.L), 0);
  for (int i = 0; i < n; ++i) {
    ChainState w = s;
    update_observational_allocations(tr, lik, w, rng);
    // undo the relabeling to recover the original atom index via the atom value and weights
    const double a = w.astar[static_cast<std::size_t>(w.M[0])];
    for (int l = 0; l < s.L; ++l) {
      if (s.astar[static_cast<std::size_t>(l)] == a) {
        ++hits[static_cast<std::size_t>(l)];
        break;
      }
    }
  }
  std::vector<double> merged(static_cast<std::size_t>(s.L), 0.0);
  for (int l = 0; l < s.L; ++l) {
    int first = l;
    for (int m = 0; m < l; ++m) {
      if (s.astar[static_cast<std::size_t>(m)] == s.astar[static_cast<std::size_t>(l)]) {
        first = m;
        break;
      }
    }
    merged[static_cast<std::size_t>(first)] += std::exp(lp[static_cast<std::size_t>(l)]);
  }
  for (int l = 0; l < s.L; ++l) {
    const double p = merged[static_cast<std::size_t>(l)];
    CHECK(std::abs(hits[static_cast<std::size_t>(l)] / static_cast<double>(n) - p) <
          4 * std::sqrt(p * (1 - p) / n) + 1e-12);
  }
}

TEST_CASE("allocation special cases") {
  Trace tr = layout(4, 2);
  tr.y = {0.1, 0.2, 10.0, 0.0};
  ChainState s;
  s.c.assign(5, 0.0);
  s.b = 0.0;
  s.gamma = 0.5;
  s.sigma2 = 0.005;
  s.tau2 = 0.005;
  s.K = 1;
  s.L = 2;
  s.pi = {1.0};
  s.omega = {{0.5, 0.5}};
  s.astar = {0.0, 10.0};
  s.S = {0, 0};
  s.M = {0, 0, 0, 0};
  relabel_observational(s);
  const LikelihoodTable lik(atom_residuals(tr, s.c, s, AllocationLikelihood::collapsed), s.astar);
  const auto lp = observational_allocation_logprobs(tr, lik, s, 2);
  const int ten = s.astar[0] == 10.0 ? 0 : 1;
  CHECK(std::exp(lp[static_cast<std::size_t>(ten)]) > 1.0 - 1e-12);

  Rng rng(6);
  update_distributional_allocations(tr, lik, s, rng);
  CHECK(s.S == std::vector<int>{0, 0});

  ChainState one = s;
  one.L = 1;
  one.astar = {0.0};
  one.omega = {{1.0}};
  const LikelihoodTable lik1(atom_residuals(tr, one.c, one, AllocationLikelihood::collapsed), one.astar);
  update_observational_allocations(tr, lik1, one, rng);
  CHECK(one.M == std::vector<int>(4, 0));

  // identical omega columns and equal pi: every condition is a coin flip
  ChainState two = s;
  two.K = 2;
  two.pi = {0.5, 0.5};
  two.omega = {{0.3, 0.7}, {0.3, 0.7}};
  const LikelihoodTable lik2(atom_residuals(tr, two.c, two, AllocationLikelihood::collapsed), two.astar);
  for (int j = 0; j < 2; ++j) {
    const auto p = distributional_allocation_logprobs(tr, lik2, two, j);
    CHECK(std::exp(p[0]) == doctest::Approx(0.5).epsilon(1e-12));
  }
}

TEST_CASE("permuting empty components leaves allocation probabilities unchanged") {
  Rng rng(7);
  for (int rep = 0; rep < 30; ++rep) {
    auto [tr, s] = ft::random_small_state(rng);
    // add two empty distributional and observational components
    for (int extra = 0; extra < 2; ++extra) {
      s.pi.push_back(0.05 + 0.1 * extra);
      ++s.K;
      for (auto& col : s.omega) col.push_back(0.02 + 0.05 * extra);
      s.omega.push_back(s.omega.front());
      s.astar.push_back(extra == 0 ? 0.0 : 1.7);
      ++s.L;
    }
    auto renorm = [](std::vector<double>& v) {
      const double z = std::accumulate(v.begin(), v.end(), 0.0);
      for (double& x : v) x /= z;
    };
    renorm(s.pi);
    for (auto& col : s.omega) renorm(col);
    ChainState p = s;
    std::swap(p.pi[static_cast<std::size_t>(s.K - 1)], p.pi[static_cast<std::size_t>(s.K - 2)]);
    std::swap(p.omega[static_cast<std::size_t>(s.K - 1)], p.omega[static_cast<std::size_t>(s.K - 2)]);
    std::swap(p.astar[static_cast<std::size_t>(s.L - 1)], p.astar[static_cast<std::size_t>(s.L - 2)]);
    for (auto& col : p.omega) std::swap(col[static_cast<std::size_t>(s.L - 1)], col[static_cast<std::size_t>(s.L - 2)]);
    const LikelihoodTable ls(atom_residuals(tr, s.c, s, AllocationLikelihood::collapsed), s.astar);
    const LikelihoodTable lp(atom_residuals(tr, p.c, p, AllocationLikelihood::collapsed), p.astar);
    for (int j = 0; j < tr.J; ++j) {
      auto a = distributional_allocation_logprobs(tr, ls, s, j);
      auto b = distributional_allocation_logprobs(tr, lp, p, j);
      std::swap(b[static_cast<std::size_t>(s.K - 1)], b[static_cast<std::size_t>(s.K - 2)]);
      CHECK(ft::max_abs_diff(a, b) < 1e-12);
    }
    for (std::size_t t = 0; t < tr.size(); ++t) {
      auto a = observational_allocation_logprobs(tr, ls, s, t);
      auto b = observational_allocation_logprobs(tr, lp, p, t);
      std::swap(b[static_cast<std::size_t>(s.L - 1)], b[static_cast<std::size_t>(s.L - 2)]);
      CHECK(ft::max_abs_diff(a, b) < 1e-12);
    }
  }
}

TEST_CASE("relabeling orders non-empty components by first member") {
  ChainState s;
  s.K = 3;
  s.pi = {0.2, 0.3, 0.5};
  s.omega = {{0.1, 0.9}, {0.4, 0.6}, {0.7, 0.3}};
  s.S = {2, 2, 0};
  s.L = 2;
  s.astar = {0.0, 1.0};
  s.M = {1, 0, 1};
  relabel_distributional(s);
  CHECK(s.S == std::vector<int>{0, 0, 1});
  CHECK(s.Kplus == 2);
  CHECK(s.pi == std::vector<double>{0.5, 0.2, 0.3});
  CHECK(s.omega[0] == std::vector<double>{0.7, 0.3});
  relabel_observational(s);
  CHECK(s.M == std::vector<int>{0, 1, 0});
  CHECK(s.astar == std::vector<double>{1.0, 0.0});
  CHECK(s.omega[0] == std::vector<double>{0.3, 0.7});
  CHECK(s.Lplus == 2);
}

TEST_CASE("slab marginal") {
  CHECK(slab_log_marginal(std::vector<double>{}, 0.1, 8, 8) == 0.0);
  Rng rng(8);
  const double mc = slab_mc({1.0}, 0.09, 8, 8, 2000000, rng);
  CHECK(std::exp(slab_log_marginal(std::vector<double>{1.0}, 0.09, 8, 8)) == doctest::Approx(mc).epsilon(0.01));
  // concentrated likelihood with many observations stays finite and near the Laplace value
  std::vector<double> r(2000, 1.3);
  const double lm = slab_log_marginal(r, 0.05, 8, 8);
  CHECK(std::isfinite(lm));
  // small shape uses the substituted first panel
  const double small = std::exp(slab_log_marginal(std::vector<double>{0.05}, 0.2, 0.5, 1.0));
  CHECK(small == doctest::Approx(slab_mc({0.05}, 0.2, 0.5, 1.0, 2000000, rng)).epsilon(0.01));
}

TEST_CASE("atom indicator limits") {
  SlabStats zero;
  for (int i = 0; i < 20; ++i) zero.add(0.0);
  const double lo = slab_log_odds(zero, 0.01, 0.1, 8, 8);
  CHECK(1.0 / (1.0 + std::exp(lo)) > 0.99);
  SlabStats any;
  any.add(0.2);
  CHECK(slab_log_odds(any, 0.1, 1 - 1e-15, 8, 8) > 20.0);
}

TEST_CASE("update_atoms keeps the zero/positive dichotomy") {
  Rng rng(9);
  ChainState s;
  s.L = 4;
  s.Lplus = 3;
  s.astar = {0.0, 0.5, 2.0, 1.0};
  s.M = {0, 0, 1, 2, 2, 0};
  s.p = 0.3;
  AtomResiduals res;
  res.r = {0.01, -0.02, 0.6, 2.1, 1.9, 0.0};
  res.s2 = 0.05;
  HyperParams h;
  for (auto slab : {SlabSampler::random_walk, SlabSampler::inverse_cdf}) {
    SamplerOptions o;
    o.slab = slab;
    for (int i = 0; i < 500; ++i) {
      update_atoms(res, s, h, o, rng);
      for (double a : s.astar) CHECK((a == 0.0 || a >= kMinAmplitude));
    }
  }
}

TEST_CASE("slab samplers target the slab conditional") {
  SlabStats st;
  for (double r : {0.8, 1.1, 0.9}) st.add(r);
  const double s2 = 0.2, h1 = 8, h2 = 8;
  // quadrature mean of the slab conditional
  double num = 0.0, den = 0.0;
  for (double a = 1e-4; a < 5.0; a += 1e-4) {
    const double w = std::exp(slab_log_density(a, st, s2, h1, h2));
    num += a * w;
    den += w;
  }
  const double mean = num / den;
  Rng rng(10);
  const int n = 40000;
  double m_rw = 0.0, m_ex = 0.0, cur = slab_mode(st, s2, h1, h2);
  SlabWalker walker(st, s2, h1, h2);
  for (int i = 0; i < n; ++i) {
    cur = walker.run(cur, 10, rng);
    m_rw += cur;
    m_ex += sample_slab_amplitude_exact(st, s2, h1, h2, rng);
  }
  CHECK(m_rw / n == doctest::Approx(mean).epsilon(0.02));
  CHECK(m_ex / n == doctest::Approx(mean).epsilon(0.01));
}

TEST_CASE("K conditional examples") {
  const CountPrior uniform12 = CountPrior::table({std::log(0.5), std::log(0.5)});
  const std::vector<int> Jk{1};
  auto lw = K_log_conditional(Jk, 1, 1.0, uniform12);
  lw = ft::oracle_normalize(lw);
  CHECK(std::exp(lw[0]) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(std::exp(lw[1]) == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("L conditional example") {
  // weights 1 * Gamma(3)/Gamma(1) and 2 * Gamma(2.5)/Gamma(0.5)
  const CountPrior uniform12 = CountPrior::table({std::log(0.5), std::log(0.5)});
  const std::vector<std::vector<int>> N{{2}};
  const auto lw = ft::oracle_normalize(L_log_conditional(N, 1, 1, 1.0, uniform12));
  const double w1 = std::tgamma(3.0) / std::tgamma(1.0);
  const double w2 = 2.0 * std::tgamma(2.5) / std::tgamma(0.5);
  CHECK(std::exp(lw[0]) == doctest::Approx(w1 / (w1 + w2)).epsilon(1e-12));
  CHECK(std::exp(lw[0]) == doctest::Approx(4.0 / 7.0).epsilon(1e-12));
  Trace tr = layout(2, 1);
  const auto oracle = ft::oracle_L_logprobs(tr, {0}, {0, 0}, 1, 1.0, {std::log(0.5), std::log(0.5)});
  CHECK(ft::max_abs_diff(lw, oracle) < 1e-12);
}

TEST_CASE("K and L conditionals match enumeration") {
  Rng rng(11);
  for (int rep = 0; rep < 60; ++rep) {
    auto [tr, s] = ft::random_small_state(rng);
    const auto prior = ft::random_log_prior(rng, 3);
    const CountPrior cp = CountPrior::table(prior);
    const PartitionCounts pc = PartitionCounts::compute(tr, s);
    const auto kl = ft::oracle_normalize(K_log_conditional(pc.Jk, s.Kplus, s.alpha, cp));
    CHECK(ft::max_abs_diff(kl, ft::oracle_K_logprobs(s.S, s.Kplus, s.alpha, prior)) < 1e-8);
    const auto ll = ft::oracle_normalize(L_log_conditional(pc.Nlk, s.Lplus, s.Kplus, s.beta, cp));
    CHECK(ft::max_abs_diff(ll, ft::oracle_L_logprobs(tr, s.S, s.M, s.Lplus, s.beta, prior)) < 1e-8);
  }
}

TEST_CASE("sample_K frequencies follow the conditional") {
  Rng rng(12);
  const CountPrior cp = CountPrior::bnb(BnbParams{});
  const std::vector<int> Jk{3, 1};
  const auto lw = ft::oracle_normalize(K_log_conditional(Jk, 2, 1.0, cp));
  const int n = 100000;
  std::vector<int> hits(4, 0);
  for (int i = 0; i < n; ++i) {
    const int K = sample_K(Jk, 2, 1.0, cp, rng);
    CHECK(K >= 2);
    if (K - 2 < 4) ++hits[static_cast<std::size_t>(K - 2)];
  }
  for (int i = 0; i < 4; ++i) {
    const double p = std::exp(lw[static_cast<std::size_t>(i)]);
    CHECK(std::abs(hits[static_cast<std::size_t>(i)] / static_cast<double>(n) - p) < 4 * std::sqrt(p * (1 - p) / n));
  }
}

TEST_CASE("concentration updates") {
  Rng rng(13);
  bool acc = false;
  const std::vector<std::vector<int>> groups{{3, 1}};
  CHECK(concentration_log_accept_ratio(0.7, 0.7, 4, groups, 1, 1) == 0.0);
  // with no data the chain recovers the Ga(a, b) prior
  const std::vector<std::vector<int>> none;
  double c = 1.0, sum = 0.0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    c = update_concentration(c, none, 3, 2.0, 1.0, rng, 0.8, &acc);
    sum += c;
  }
  CHECK(sum / n == doctest::Approx(2.0).epsilon(0.05));
}

TEST_CASE("p updates") {
  HyperParams h;
  const BetaParams bp = p_posterior(100, 95, h);
  CHECK(bp.a == 6.0);
  CHECK(bp.b == 104.0);
  const BetaParams all0 = p_posterior(100, 100, h);
  CHECK(all0.a == h.h1p);
  CHECK(all0.b == h.h2p + 100);
  CHECK(all0.a / (all0.a + all0.b) < h.h1p / (h.h1p + h.h2p));
  const std::vector<double> astar{0.0, 1.2, 0.0, 0.4};
  const BetaParams at = p_posterior_atoms(astar, h);
  CHECK(at.a == h.h1p + 2);
  CHECK(at.b == h.h2p + 2);
  Rng rng(14);
  double m = 0.0;
  for (int i = 0; i < 50000; ++i) m += update_p(100, 95, h, rng);
  CHECK(m / 50000 == doctest::Approx(6.0 / 110.0).epsilon(0.02));
}

TEST_CASE("McmcConfig") {
  McmcConfig cfg;
  CHECK(cfg.retained() == 1500);
  int kept = 0;
  for (int i = 0; i < cfg.iters; ++i) kept += cfg.keeps(i);
  CHECK(kept == 1500);
  cfg.burnin = cfg.iters;
  CHECK_THROWS_WITH_AS(cfg.validate(), doctest::Contains("no draws retained"), ValidationError);
}

TEST_CASE("run_chain stores draws, is deterministic and keeps invariants") {
  Rng data(15);
  Trace tr = layout(300, 3);
  {
    double c = 0.0;
    for (std::size_t t = 0; t < tr.size(); ++t) {
      c = 0.5 * c + (uniform01(data) < 0.03 ? 1.5 : 0.0) + normal(data, 0, 0.1);
      tr.y[t] = c + normal(data, 0, 0.2);
    }
  }
  McmcConfig cfg;
  cfg.iters = 200;
  cfg.burnin = 100;
  cfg.thin = 2;
  int steps = 0;
  const ChainResult a = run_chain(tr, HyperParams{}, cfg, 42, [&](const IterationDiagnostics&) { ++steps; });
  CHECK(a.draws.size() == 50);
  CHECK(steps == 200);
  const ChainResult b = run_chain(tr, HyperParams{}, cfg, 42);
  CHECK(a.draws == b.draws);
  const ChainResult c = run_chain(tr, HyperParams{}, cfg, 43);
  CHECK_FALSE(a.draws == c.draws);

  FcamSampler s(tr, HyperParams{}, SamplerOptions{}, 5);
  for (int i = 0; i < 100; ++i) {
    s.step(i < 50);
    CHECK_NOTHROW(check_invariants(s.state(), tr));
  }
}

TEST_CASE("threaded allocations do not change the chain") {
  Rng data(16);
  Trace tr = layout(400, 2);
  for (double& y : tr.y) y = uniform01(data) < 0.05 ? 1.0 : normal(data, 0, 0.3);
  McmcConfig cfg;
  cfg.iters = 60;
  cfg.burnin = 30;
  cfg.thin = 1;
  const ChainResult one = run_chain(tr, HyperParams{}, cfg, 9);
  cfg.sampler.threads = 3;
  const ChainResult three = run_chain(tr, HyperParams{}, cfg, 9);
  CHECK(one.draws == three.draws);
}

namespace {

struct PriorMoments {
  double mean = 0.0, mcse = 0.0;
};

PriorMoments batch_mean(const std::vector<double>& v, int batches = 50) {
  const std::size_t per = v.size() / static_cast<std::size_t>(batches);
  std::vector<double> bm(static_cast<std::size_t>(batches), 0.0);
  for (std::size_t i = 0; i < per * batches; ++i) bm[i / per] += v[i] / static_cast<double>(per);
  PriorMoments m;
  for (double x : bm) m.mean += x / batches;
  double var = 0.0;
  for (double x : bm) var += (x - m.mean) * (x - m.mean);
  m.mcse = std::sqrt(var / (batches - 1) / batches);
  return m;
}

void prior_recovery(const SamplerOptions& options) {
  HyperParams h;
  h.h1p = 2.0;
  h.h2p = 5.0;
  h.h1gamma = 2.0;
  h.h2gamma = 3.0;
  Trace tr = layout(20, 2);
  SamplerOptions o = options;
  o.prior_only = true;
  FcamSampler s(tr, h, o, 77);
  std::vector<double> p, g, K;
  for (int i = 0; i < 40000; ++i) {
    s.step(false);
    p.push_back(s.state().p);
    g.push_back(s.state().gamma);
    K.push_back(s.state().K);
  }
  const PriorMoments mp = batch_mean(p), mg = batch_mean(g), mK = batch_mean(K);
  // translated BNB(1, 4, 3): E[K] = 1 + r b / (a - 1)
  const double EK = 1.0 + 1.0 * 3.0 / 3.0;
  INFO("p mean " << mp.mean << " +- " << mp.mcse << ", gamma " << mg.mean << " +- " << mg.mcse << ", K " << mK.mean
                 << " +- " << mK.mcse);
  CHECK(std::abs(mp.mean - 2.0 / 7.0) < 3 * mp.mcse);
  CHECK(std::abs(mg.mean - 0.4) < 3 * mg.mcse);
  CHECK(std::abs(mK.mean - EK) < 3 * mK.mcse);
}

}  // namespace

TEST_CASE("prior recovery with an empty likelihood") {
  prior_recovery(SamplerOptions{});
}

TEST_CASE("prior recovery with the atom-count p rule") {
  SamplerOptions o;
  o.p_update = SpikeProbUpdate::atoms;
  prior_recovery(o);
}
