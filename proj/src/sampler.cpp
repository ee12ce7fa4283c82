#include "fcam/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <thread>

namespace fcam {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

/// Index drawn from unnormalized log weights using the uniform `u`.
std::size_t sample_log_categorical(std::span<const double> logw, double u) {
  const double lse = log_sum_exp(logw);
  if (!std::isfinite(lse)) throw NumericalError("all candidate log-probabilities are -inf");
  double acc = 0.0;
  for (std::size_t i = 0; i < logw.size(); ++i) {
    acc += std::exp(logw[i] - lse);
    if (u <= acc) return i;
  }
  // Rounding left u above the final cumulative sum: take the last finite entry.
  for (std::size_t i = logw.size(); i-- > 0;) {
    if (std::isfinite(logw[i])) return i;
  }
  return logw.size() - 1;
}

std::vector<double> dirichlet_log_space(std::span<const double> shapes, Rng& rng) {
  std::vector<double> lg(shapes.size());
  for (std::size_t i = 0; i < shapes.size(); ++i) lg[i] = log_gamma_draw(rng, shapes[i]);
  const double lse = log_sum_exp(lg);
  std::vector<double> w(shapes.size());
  for (std::size_t i = 0; i < shapes.size(); ++i) w[i] = std::exp(lg[i] - lse);
  return w;
}

template <typename Fn>
void parallel_for(std::size_t n, unsigned threads, Fn&& fn) {
  threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(std::max<std::size_t>(n / 4096, 1))));
  if (threads == 1) {
    fn(std::size_t{0}, n, 0u);
    return;
  }
  std::vector<std::thread> pool;
  const std::size_t chunk = (n + threads - 1) / threads;
  for (unsigned w = 0; w < threads; ++w) {
    const std::size_t lo = std::min(n, w * chunk), hi = std::min(n, lo + chunk);
    pool.emplace_back([&fn, lo, hi, w] { fn(lo, hi, w); });
  }
  for (auto& th : pool) th.join();
}

std::vector<int> first_occurrence_order(std::span<const int> labels, int count, int& filled) {
  std::vector<int> order;
  std::vector<char> seen(static_cast<std::size_t>(count), 0);
  for (int v : labels) {
    if (!seen[static_cast<std::size_t>(v)]) {
      seen[static_cast<std::size_t>(v)] = 1;
      order.push_back(v);
    }
  }
  filled = static_cast<int>(order.size());
  for (int v = 0; v < count; ++v) {
    if (!seen[static_cast<std::size_t>(v)]) order.push_back(v);
  }
  return order;  // order[new] = old
}

}  // namespace

PartitionCounts PartitionCounts::compute(const Trace& trace, const ChainState& state) {
  PartitionCounts pc;
  pc.Jk.assign(static_cast<std::size_t>(state.K), 0);
  pc.Nlk.assign(static_cast<std::size_t>(state.K), std::vector<int>(static_cast<std::size_t>(state.L), 0));
  pc.Nl.assign(static_cast<std::size_t>(state.L), 0);
  for (int k : state.S) ++pc.Jk[static_cast<std::size_t>(k)];
  for (std::size_t t = 0; t < trace.size(); ++t) {
    const auto k = static_cast<std::size_t>(state.S[static_cast<std::size_t>(trace.g[t])]);
    const auto l = static_cast<std::size_t>(state.M[t]);
    ++pc.Nlk[k][l];
    ++pc.Nl[l];
    if (state.astar[l] == 0.0) ++pc.n0;
  }
  return pc;
}

AtomCounts count_atoms(std::span<const double> astar) {
  AtomCounts ac;
  for (double a : astar) (a == 0.0 ? ac.zero : ac.positive) += 1;
  return ac;
}

CountPrior CountPrior::bnb(const BnbParams& prm, double tail) {
  const int n = bnb_truncation(prm, tail);
  std::vector<double> lp(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) lp[static_cast<std::size_t>(i)] = bnb_log_pmf(i, prm);
  return table(std::move(lp));
}

CountPrior CountPrior::table(std::vector<double> log_pmf) {
  if (log_pmf.empty()) throw std::invalid_argument("CountPrior: empty table");
  CountPrior p;
  p.log_pmf_ = std::move(log_pmf);
  return p;
}

std::vector<double> sample_distributional_weights(const PartitionCounts& counts, int K, double alpha, Rng& rng) {
  std::vector<double> shapes(static_cast<std::size_t>(K));
  for (int k = 0; k < K; ++k) {
    const double Jk = k < static_cast<int>(counts.Jk.size()) ? counts.Jk[static_cast<std::size_t>(k)] : 0.0;
    shapes[static_cast<std::size_t>(k)] = alpha / K + Jk;
  }
  return dirichlet_log_space(shapes, rng);
}

std::vector<std::vector<double>> sample_observational_weights(const PartitionCounts& counts, int L, int K,
                                                              double beta, Rng& rng) {
  std::vector<std::vector<double>> omega(static_cast<std::size_t>(K));
  std::vector<double> shapes(static_cast<std::size_t>(L));
  for (int k = 0; k < K; ++k) {
    for (int l = 0; l < L; ++l) {
      double n = 0.0;
      if (k < static_cast<int>(counts.Nlk.size()) && l < static_cast<int>(counts.Nlk[static_cast<std::size_t>(k)].size())) {
        n = counts.Nlk[static_cast<std::size_t>(k)][static_cast<std::size_t>(l)];
      }
      shapes[static_cast<std::size_t>(l)] = beta / L + n;
    }
    omega[static_cast<std::size_t>(k)] = dirichlet_log_space(shapes, rng);
  }
  return omega;
}

AtomResiduals atom_residuals(const Trace& trace, std::span<const double> c, const ChainState& state,
                             AllocationLikelihood kind, bool prior_only) {
  AtomResiduals res;
  const std::size_t T = trace.size();
  res.r.resize(T);
  if (kind == AllocationLikelihood::collapsed) {
    res.s2 = state.sigma2 + state.tau2;
    res.flat = prior_only;
    for (std::size_t t = 1; t <= T; ++t) res.r[t - 1] = trace.y[t - 1] - state.b - state.gamma * c[t - 1];
  } else {
    res.s2 = state.tau2;
    for (std::size_t t = 1; t <= T; ++t) res.r[t - 1] = c[t] - state.gamma * c[t - 1];
  }
  return res;
}

LikelihoodTable::LikelihoodTable(const AtomResiduals& res, std::span<const double> astar)
    : L_(astar.size()),
      r_(res.r),
      astar_(astar.begin(), astar.end()),
      s2_(res.s2),
      flat_(res.flat),
      dens_(res.r.size() * astar.size(), 1.0),
      rowmax_(res.r.size(), 0.0) {
  if (res.flat) return;
  const double norm = -0.5 * std::log(2.0 * std::numbers::pi * res.s2);
  const double inv2s2 = 0.5 / res.s2;
  for (std::size_t t = 0; t < rowmax_.size(); ++t) {
    double* row = dens_.data() + t * L_;
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t l = 0; l < L_; ++l) {
      const double d = res.r[t] - astar[l];
      row[l] = d * d;
      best = std::min(best, row[l]);
    }
    for (std::size_t l = 0; l < L_; ++l) row[l] = std::exp(-(row[l] - best) * inv2s2);
    rowmax_[t] = norm - best * inv2s2;
  }
}

double LikelihoodTable::log_mixture(std::size_t t, std::span<const double> omega) const noexcept {
  const double* row = dens_.data() + t * L_;
  double s = 0.0;
  for (std::size_t l = 0; l < L_; ++l) s += omega[l] * row[l];
  if (s > 0.0) return rowmax_[t] + std::log(s);
  double m = -std::numeric_limits<double>::infinity();
  for (std::size_t l = 0; l < L_; ++l) {
    if (omega[l] > 0.0) m = std::max(m, std::log(omega[l]) + log_density(t, l));
  }
  if (!std::isfinite(m)) return m;
  double acc = 0.0;
  for (std::size_t l = 0; l < L_; ++l) {
    if (omega[l] > 0.0) acc += std::exp(std::log(omega[l]) + log_density(t, l) - m);
  }
  return m + std::log(acc);
}

double LikelihoodTable::log_density(std::size_t t, std::size_t l) const noexcept {
  if (flat_) return 0.0;
  return normal_logpdf(r_[t], astar_[l], s2_);
}

std::vector<double> distributional_allocation_logprobs(const Trace& trace, const LikelihoodTable& lik,
                                                       const ChainState& state, int j) {
  std::vector<double> score(static_cast<std::size_t>(state.K));
  for (int k = 0; k < state.K; ++k) score[static_cast<std::size_t>(k)] = std::log(state.pi[static_cast<std::size_t>(k)]);
  for (std::size_t t = 0; t < trace.size(); ++t) {
    if (trace.g[t] != j) continue;
    for (int k = 0; k < state.K; ++k) {
      score[static_cast<std::size_t>(k)] += lik.log_mixture(t, state.omega[static_cast<std::size_t>(k)]);
    }
  }
  const double lse = log_sum_exp(score);
  for (double& s : score) s -= lse;
  return score;
}

std::vector<double> observational_allocation_logprobs(const Trace& trace, const LikelihoodTable& lik,
                                                      const ChainState& state, std::size_t t) {
  const auto& col = state.omega[static_cast<std::size_t>(state.S[static_cast<std::size_t>(trace.g[t])])];
  std::vector<double> lp(static_cast<std::size_t>(state.L));
  for (std::size_t l = 0; l < lp.size(); ++l) lp[l] = std::log(col[l]) + lik.log_density(t, l);
  const double lse = log_sum_exp(lp);
  for (double& v : lp) v -= lse;
  return lp;
}

void relabel_distributional(ChainState& s) {
  int filled = 0;
  const std::vector<int> order = first_occurrence_order(s.S, s.K, filled);
  std::vector<int> new_of_old(order.size());
  std::vector<double> pi(order.size());
  std::vector<std::vector<double>> omega(order.size());
  for (std::size_t nw = 0; nw < order.size(); ++nw) {
    const auto old = static_cast<std::size_t>(order[nw]);
    new_of_old[old] = static_cast<int>(nw);
    pi[nw] = s.pi[old];
    omega[nw] = std::move(s.omega[old]);
  }
  for (int& k : s.S) k = new_of_old[static_cast<std::size_t>(k)];
  s.pi = std::move(pi);
  s.omega = std::move(omega);
  s.Kplus = filled;
}

void relabel_observational(ChainState& s) {
  int filled = 0;
  const std::vector<int> order = first_occurrence_order(s.M, s.L, filled);
  std::vector<int> new_of_old(order.size());
  std::vector<double> astar(order.size());
  for (std::size_t nw = 0; nw < order.size(); ++nw) {
    const auto old = static_cast<std::size_t>(order[nw]);
    new_of_old[old] = static_cast<int>(nw);
    astar[nw] = s.astar[old];
  }
  for (auto& col : s.omega) {
    std::vector<double> permuted(order.size());
    for (std::size_t nw = 0; nw < order.size(); ++nw) permuted[nw] = col[static_cast<std::size_t>(order[nw])];
    col = std::move(permuted);
  }
  for (int& l : s.M) l = new_of_old[static_cast<std::size_t>(l)];
  s.astar = std::move(astar);
  s.Lplus = filled;
}

void update_distributional_allocations(const Trace& trace, const LikelihoodTable& lik, ChainState& state,
                                       Rng& rng, unsigned threads) {
  const auto J = static_cast<std::size_t>(trace.J);
  const auto K = static_cast<std::size_t>(state.K);
  const CounterStream stream(rng());

  unsigned workers = std::max(1u, threads);
  std::vector<std::vector<double>> partial(workers, std::vector<double>(J * K, 0.0));
  parallel_for(trace.size(), workers, [&](std::size_t lo, std::size_t hi, unsigned w) {
    auto& acc = partial[w];
    for (std::size_t t = lo; t < hi; ++t) {
      const auto j = static_cast<std::size_t>(trace.g[t]);
      for (std::size_t k = 0; k < K; ++k) acc[j * K + k] += lik.log_mixture(t, state.omega[k]);
    }
  });
  std::vector<double> score(J * K, 0.0);
  for (const auto& p : partial) {
    for (std::size_t i = 0; i < score.size(); ++i) score[i] += p[i];
  }

  std::vector<double> row(K);
  for (std::size_t j = 0; j < J; ++j) {
    for (std::size_t k = 0; k < K; ++k) row[k] = std::log(state.pi[k]) + score[j * K + k];
    state.S[j] = static_cast<int>(sample_log_categorical(row, stream.uniform(j)));
  }
  relabel_distributional(state);
}

void update_observational_allocations(const Trace& trace, const LikelihoodTable& lik, ChainState& state,
                                      Rng& rng, unsigned threads) {
  const auto L = static_cast<std::size_t>(state.L);
  const CounterStream stream(rng());
  bool failed = false;
  parallel_for(trace.size(), threads, [&](std::size_t lo, std::size_t hi, unsigned) {
    std::vector<double> cum(L);
    for (std::size_t t = lo; t < hi; ++t) {
      const auto& col = state.omega[static_cast<std::size_t>(state.S[static_cast<std::size_t>(trace.g[t])])];
      double acc = 0.0;
      for (std::size_t l = 0; l < L; ++l) {
        acc += col[l] * lik.scaled(t, l);
        cum[l] = acc;
      }
      if (!(acc > 0.0)) {
        // Scaled weights underflowed; redo this frame in log space.
        std::vector<double> lp(L);
        for (std::size_t l = 0; l < L; ++l) lp[l] = std::log(col[l]) + lik.log_density(t, l);
        const double lse = log_sum_exp(lp);
        if (!std::isfinite(lse)) {
          failed = true;
          continue;
        }
        acc = 0.0;
        for (std::size_t l = 0; l < L; ++l) {
          acc += std::exp(lp[l] - lse);
          cum[l] = acc;
        }
      }
      const double target = stream.uniform(t) * acc;
      // upper_bound never lands on a zero-weight slot since target < acc
      auto it = std::upper_bound(cum.begin(), cum.end(), target);
      const std::size_t l = it == cum.end() ? L - 1 : static_cast<std::size_t>(it - cum.begin());
      state.M[t] = static_cast<int>(l);
    }
  });
  if (failed) throw NumericalError("observational allocation: all candidate probabilities are zero");
  relabel_observational(state);
}

double draw_base_measure(double p, double hA1, double hA2, Rng& rng) {
  if (uniform01(rng) >= p) return 0.0;
  return std::max(gamma_rate(rng, hA1, hA2), kMinAmplitude);
}

AtomUpdateStats update_atoms(const AtomResiduals& res, ChainState& state, const HyperParams& hyper,
                             const SamplerOptions& options, Rng& rng) {
  AtomUpdateStats out;
  const auto Lplus = static_cast<std::size_t>(state.Lplus);
  std::vector<SlabStats> stats(Lplus);
  for (std::size_t t = 0; t < state.M.size(); ++t) {
    const auto l = static_cast<std::size_t>(state.M[t]);
    if (l < Lplus) stats[l].add(res.r[t]);
  }
  for (std::size_t l = 0; l < Lplus; ++l) {
    if (res.flat) {
      state.astar[l] = draw_base_measure(state.p, hyper.hA1, hyper.hA2, rng);
      continue;
    }
    const double log_odds = slab_log_odds(stats[l], res.s2, state.p, hyper.hA1, hyper.hA2);
    const double p_slab = log_odds >= 0.0 ? 1.0 / (1.0 + std::exp(-log_odds))
                                          : std::exp(log_odds) / (1.0 + std::exp(log_odds));
    if (uniform01(rng) >= p_slab) {
      state.astar[l] = 0.0;
      continue;
    }
    if (options.slab == SlabSampler::inverse_cdf) {
      state.astar[l] = sample_slab_amplitude_exact(stats[l], res.s2, hyper.hA1, hyper.hA2, rng);
    } else {
      SlabWalker walker(stats[l], res.s2, hyper.hA1, hyper.hA2);
      state.astar[l] = walker.run(slab_mode(stats[l], res.s2, hyper.hA1, hyper.hA2), options.slab_mh_steps, rng);
      out.slab_proposals += walker.proposals();
      out.slab_accepts += walker.accepts();
    }
  }
  for (std::size_t l = Lplus; l < state.astar.size(); ++l) {
    state.astar[l] = draw_base_measure(state.p, hyper.hA1, hyper.hA2, rng);
  }
  return out;
}

std::vector<double> K_log_conditional(std::span<const int> Jk, int Kplus, double alpha, const CountPrior& prior) {
  const int Kmax = std::max(prior.max_count(), Kplus);
  std::vector<double> lw(static_cast<std::size_t>(Kmax - Kplus + 1));
  for (int K = Kplus; K <= Kmax; ++K) {
    double v = K <= prior.max_count() ? prior.log_pmf(K) : kNegInf;
    if (K > prior.max_count() && K == Kplus) v = 0.0;
    const double a = alpha / K;
    v += std::lgamma(K + 1.0) - std::lgamma(K - Kplus + 1.0);
    for (int k = 0; k < Kplus; ++k) v += std::lgamma(Jk[static_cast<std::size_t>(k)] + a) - std::lgamma(a);
    lw[static_cast<std::size_t>(K - Kplus)] = v;
  }
  return lw;
}

int sample_K(std::span<const int> Jk, int Kplus, double alpha, const CountPrior& prior, Rng& rng) {
  const auto lw = K_log_conditional(Jk, Kplus, alpha, prior);
  return Kplus + static_cast<int>(sample_log_categorical(lw, uniform01(rng)));
}

std::vector<double> L_log_conditional(const std::vector<std::vector<int>>& Nlk, int Lplus, int Kplus,
                                      double beta, const CountPrior& prior) {
  const int Lmax = std::max(prior.max_count(), Lplus);
  std::vector<int> cells;
  for (int k = 0; k < Kplus; ++k) {
    const auto& col = Nlk[static_cast<std::size_t>(k)];
    for (int l = 0; l < Lplus && l < static_cast<int>(col.size()); ++l) {
      if (col[static_cast<std::size_t>(l)] > 0) cells.push_back(col[static_cast<std::size_t>(l)]);
    }
  }
  std::vector<double> lw(static_cast<std::size_t>(Lmax - Lplus + 1));
  for (int L = Lplus; L <= Lmax; ++L) {
    double v = L <= prior.max_count() ? prior.log_pmf(L) : kNegInf;
    if (L > prior.max_count() && L == Lplus) v = 0.0;
    const double b = beta / L;
    const double lgb = std::lgamma(b);
    v += std::lgamma(L + 1.0) - std::lgamma(L - Lplus + 1.0);
    for (int n : cells) v += std::lgamma(n + b) - lgb;
    lw[static_cast<std::size_t>(L - Lplus)] = v;
  }
  return lw;
}

int sample_L(const std::vector<std::vector<int>>& Nlk, int Lplus, int Kplus, double beta,
             const CountPrior& prior, Rng& rng) {
  const auto lw = L_log_conditional(Nlk, Lplus, Kplus, beta, prior);
  return Lplus + static_cast<int>(sample_log_categorical(lw, uniform01(rng)));
}

double concentration_log_factor(double c, int count, const std::vector<std::vector<int>>& groups) {
  const double per = c / count;
  const double lg_per = std::lgamma(per);
  const double lg_c = std::lgamma(c);
  double v = 0.0;
  for (const auto& g : groups) {
    long n = 0;
    for (int x : g) {
      if (x <= 0) continue;
      n += x;
      v += std::lgamma(x + per) - lg_per;
    }
    if (n > 0) v += lg_c - std::lgamma(static_cast<double>(n) + c);
  }
  return v;
}

double concentration_log_accept_ratio(double current, double proposal, int count,
                                      const std::vector<std::vector<int>>& groups, double a, double b) {
  // Target on the log scale: Ga(c; a, b) * c (Jacobian) * partition factor.
  auto log_target = [&](double c) {
    return a * std::log(c) - b * c + concentration_log_factor(c, count, groups);
  };
  return log_target(proposal) - log_target(current);
}

double update_concentration(double current, const std::vector<std::vector<int>>& groups, int count,
                            double a, double b, Rng& rng, double step, bool* accepted) {
  const double proposal = current * std::exp(step * normal(rng, 0.0, 1.0));
  const double lr = concentration_log_accept_ratio(current, proposal, count, groups, a, b);
  const bool ok = proposal > 0.0 && std::isfinite(proposal) && std::log(uniform01(rng)) < lr;
  if (accepted) *accepted = ok;
  return ok ? proposal : current;
}

BetaParams p_posterior(std::size_t T, std::size_t n0, const HyperParams& hyper) {
  return {hyper.h1p + static_cast<double>(T - n0), hyper.h2p + static_cast<double>(n0)};
}

BetaParams p_posterior_atoms(std::span<const double> astar, const HyperParams& hyper) {
  const AtomCounts ac = count_atoms(astar);
  return {hyper.h1p + ac.positive, hyper.h2p + ac.zero};
}

double update_p(std::size_t T, std::size_t n0, const HyperParams& hyper, Rng& rng) {
  const BetaParams bp = p_posterior(T, n0, hyper);
  return beta_draw(rng, bp.a, bp.b);
}

}  // namespace fcam
