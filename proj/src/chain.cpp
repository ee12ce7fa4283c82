#include "fcam/chain.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace fcam {

void McmcConfig::validate() const {
  if (burnin < 0) throw ValidationError("burnin must be >= 0");
  if (thin < 1) throw ValidationError("thin must be >= 1");
  if (iters < burnin) throw ValidationError("iters must be >= burnin");
  if (iters == burnin) throw ValidationError("no draws retained (iters == burnin)");
  if (sampler.slab_mh_steps < 1) throw ValidationError("slab_mh_steps must be >= 1");
  if (!(sampler.concentration_step > 0.0)) throw ValidationError("concentration_step must be positive");
}

std::size_t McmcConfig::retained() const noexcept {
  if (iters <= burnin || thin < 1) return 0;
  return static_cast<std::size_t>((iters - burnin) / thin);
}

bool McmcConfig::keeps(int iteration) const noexcept {
  return iteration >= burnin && (iteration - burnin + 1) % thin == 0;
}

namespace {

double quantile_of(std::vector<double> v, double q) {
  if (v.empty()) return 0.0;
  const auto idx = static_cast<std::size_t>(std::clamp(q, 0.0, 1.0) * static_cast<double>(v.size() - 1));
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(idx), v.end());
  return v[idx];
}

int sample_count(const CountPrior& prior, Rng& rng) {
  std::vector<double> lp(static_cast<std::size_t>(prior.max_count()));
  for (int n = 1; n <= prior.max_count(); ++n) lp[static_cast<std::size_t>(n - 1)] = prior.log_pmf(n);
  const double lse = log_sum_exp(lp);
  const double u = uniform01(rng);
  double acc = 0.0;
  for (std::size_t i = 0; i < lp.size(); ++i) {
    acc += std::exp(lp[i] - lse);
    if (u <= acc) return static_cast<int>(i + 1);
  }
  return prior.max_count();
}

std::vector<double> symmetric_dirichlet(int n, double shape, Rng& rng) {
  std::vector<double> lg(static_cast<std::size_t>(n));
  for (auto& v : lg) v = log_gamma_draw(rng, shape);
  const double lse = log_sum_exp(lg);
  for (auto& v : lg) v = std::exp(v - lse);
  return lg;
}

int draw_index(std::span<const double> w, Rng& rng) {
  const double u = uniform01(rng);
  double acc = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    acc += w[i];
    if (u < acc) return static_cast<int>(i);
  }
  for (std::size_t i = w.size(); i-- > 0;) {
    if (w[i] > 0.0) return static_cast<int>(i);
  }
  return static_cast<int>(w.size()) - 1;
}

double clamp_open_unit(double x) { return std::clamp(x, 1e-300, 1.0 - 1e-16); }

}  // namespace

ChainState initial_state(const Trace& trace, const HyperParams& hyper) {
  const std::size_t T = trace.size();
  ChainState s;
  s.b = quantile_of(trace.y, 0.5);
  s.gamma = 0.5;
  std::vector<double> r(T);
  for (std::size_t t = 0; t < T; ++t) {
    const double prev = t == 0 ? 0.0 : trace.y[t - 1] - s.b;
    r[t] = trace.y[t] - s.b - s.gamma * prev;
  }
  const double med = quantile_of(r, 0.5);
  std::vector<double> dev(T);
  for (std::size_t t = 0; t < T; ++t) dev[t] = std::abs(r[t] - med);
  const double mad = 1.4826 * quantile_of(dev, 0.5);
  const double v = std::max(mad * mad, 1e-6);
  s.sigma2 = 0.5 * v;
  s.tau2 = 0.5 * v;
  s.p = hyper.h1p / (hyper.h1p + hyper.h2p);

  s.c.assign(T + 1, 0.0);
  for (std::size_t t = 1; t <= T; ++t) s.c[t] = trace.y[t - 1] - s.b;

  const double cut = 3.0 * std::sqrt(v);
  std::vector<double> big;
  for (double x : r) {
    if (x > cut) big.push_back(x);
  }
  s.astar = {0.0};
  if (big.empty()) {
    s.astar.push_back(hyper.hA1 / hyper.hA2);
  } else {
    for (double q : {0.2, 0.4, 0.6, 0.8}) s.astar.push_back(std::max(quantile_of(big, q), kMinAmplitude));
  }
  s.L = static_cast<int>(s.astar.size());
  s.M.assign(T, 0);
  for (std::size_t t = 0; t < T; ++t) {
    if (r[t] <= cut) continue;
    int best = 1;
    for (int l = 2; l < s.L; ++l) {
      if (std::abs(r[t] - s.astar[static_cast<std::size_t>(l)]) < std::abs(r[t] - s.astar[static_cast<std::size_t>(best)])) best = l;
    }
    s.M[t] = best;
  }

  s.K = trace.J;
  s.S.resize(static_cast<std::size_t>(trace.J));
  for (int j = 0; j < trace.J; ++j) s.S[static_cast<std::size_t>(j)] = j;
  s.pi.assign(static_cast<std::size_t>(s.K), 1.0 / s.K);
  s.omega.assign(static_cast<std::size_t>(s.K), std::vector<double>(static_cast<std::size_t>(s.L), 1.0 / s.L));
  s.alpha = 1.0;
  s.beta = 1.0;
  relabel_distributional(s);
  relabel_observational(s);
  return s;
}

FcamSampler::FcamSampler(Trace trace, HyperParams hyper, SamplerOptions options, std::uint64_t seed)
    : FcamSampler(trace, hyper, options, initial_state(trace, hyper), seed) {}

FcamSampler::FcamSampler(Trace trace, HyperParams hyper, SamplerOptions options, ChainState initial,
                         std::uint64_t seed)
    : trace_(std::move(trace)),
      hyper_(hyper),
      options_(options),
      K_prior_(CountPrior::bnb(hyper.bnb_K)),
      L_prior_(CountPrior::bnb(hyper.bnb_L)),
      state_(std::move(initial)),
      rng_(seed) {
  for (auto& w : hyper_.validate()) diag_.warnings.push_back(std::move(w));
}

void FcamSampler::set_observations(std::vector<double> y) {
  if (y.size() != trace_.size()) throw std::invalid_argument("set_observations: length mismatch");
  trace_.y = std::move(y);
}

void FcamSampler::step(bool adapt) {
  const std::size_t T = trace_.size();
  ChainState& s = state_;

  // (1) calcium path
  const std::vector<double> A = s.amplitudes();
  const double obs_var = options_.prior_only ? std::numeric_limits<double>::infinity() : s.sigma2;
  const FilterCache cache = kalman_forward(trace_.y, A, s.b, s.gamma, obs_var, s.tau2, hyper_.C0);
  diag_.filter_clamps += cache.clamp_events;
  s.c = ffbs_sample(cache, s.gamma, rng_);

  // (2) baseline, (3) variances
  if (options_.prior_only) {
    s.b = normal(rng_, hyper_.b0, std::sqrt(hyper_.B0));
    s.sigma2 = 1.0 / gamma_rate(rng_, hyper_.h1sigma, hyper_.h2sigma);
    const GammaParams pt = tau2_precision_posterior(s.c, A, s.gamma, hyper_);
    s.tau2 = 1.0 / gamma_rate(rng_, pt.shape, pt.rate);
  } else {
    s.b = update_baseline(trace_, s.c, s, hyper_, rng_);
    std::tie(s.sigma2, s.tau2) = update_variances(trace_, s.c, A, s, hyper_, rng_);
  }

  // (4) autoregressive coefficient
  s.gamma = gamma_sampler_.update(s.c, A, s, hyper_, rng_, adapt);

  // (5) slab probability
  BetaParams bp;
  if (options_.p_update == SpikeProbUpdate::time_points) {
    std::size_t n0 = 0;
    for (double a : A) n0 += a == 0.0 ? 1 : 0;
    bp = p_posterior(T, n0, hyper_);
  } else {
    bp = p_posterior_atoms(s.astar, hyper_);
  }
  s.p = clamp_open_unit(beta_draw(rng_, bp.a, bp.b));

  // (6) nested telescoping block
  nested_block(s.c);

  ++iteration_;
  last_.iteration = static_cast<int>(iteration_);
  last_.K = s.K;
  last_.Kplus = s.Kplus;
  last_.L = s.L;
  last_.Lplus = s.Lplus;
  last_.gamma_accept = gamma_sampler_.acceptance_rate();
  auto rate = [](std::size_t a, std::size_t n) { return n == 0 ? 0.0 : static_cast<double>(a) / static_cast<double>(n); };
  last_.alpha_accept = rate(alpha_accepts_, alpha_proposals_);
  last_.beta_accept = rate(beta_accepts_, beta_proposals_);
  last_.slab_accept = rate(slab_accepts_, slab_proposals_);
  diag_.gamma_step = gamma_sampler_.step();
}

void FcamSampler::nested_block(std::span<const double> c) {
  ChainState& s = state_;
  const HyperParams& h = hyper_;

  // weights
  PartitionCounts counts = PartitionCounts::compute(trace_, s);
  s.pi = sample_distributional_weights(counts, s.K, s.alpha, rng_);
  s.omega = sample_observational_weights(counts, s.L, s.K, s.beta, rng_);

  // allocations
  const AtomResiduals res = atom_residuals(trace_, c, s, options_.likelihood, options_.prior_only);
  {
    const LikelihoodTable lik(res, s.astar);
    update_distributional_allocations(trace_, lik, s, rng_, options_.threads);
    update_observational_allocations(trace_, lik, s, rng_, options_.threads);
  }
  counts = PartitionCounts::compute(trace_, s);

  // atoms
  const AtomUpdateStats as = update_atoms(res, s, h, options_, rng_);
  slab_proposals_ += as.slab_proposals;
  slab_accepts_ += as.slab_accepts;

  // component counts
  const int K = sample_K(counts.Jk, s.Kplus, s.alpha, K_prior_, rng_);
  const int L = sample_L(counts.Nlk, s.Lplus, s.Kplus, s.beta, L_prior_, rng_);
  if (K == K_prior_.max_count()) {
    ++diag_.K_truncation_hits;
    if (diag_.K_truncation_hits == 1) diag_.warnings.emplace_back("K reached its truncation bound");
  }
  if (L == L_prior_.max_count()) {
    ++diag_.L_truncation_hits;
    if (diag_.L_truncation_hits == 1) diag_.warnings.emplace_back("L reached its truncation bound");
  }
  resize_components(K, L);

  // concentrations
  const std::vector<std::vector<int>> alpha_groups{
      std::vector<int>(counts.Jk.begin(), counts.Jk.begin() + s.Kplus)};
  std::vector<std::vector<int>> beta_groups;
  for (int k = 0; k < s.Kplus; ++k) {
    const auto& col = counts.Nlk[static_cast<std::size_t>(k)];
    beta_groups.emplace_back(col.begin(), col.begin() + s.Lplus);
  }
  bool ok = false;
  s.alpha = update_concentration(s.alpha, alpha_groups, s.K, h.a_alpha, h.b_alpha, rng_,
                                 options_.concentration_step, &ok);
  ++alpha_proposals_;
  alpha_accepts_ += ok ? 1 : 0;
  s.beta = update_concentration(s.beta, beta_groups, s.L, h.a_beta, h.b_beta, rng_,
                                options_.concentration_step, &ok);
  ++beta_proposals_;
  beta_accepts_ += ok ? 1 : 0;

  // Weights are redrawn from their conditionals so the state is dimensionally
  // consistent with the new K and L.
  counts = PartitionCounts::compute(trace_, s);
  s.pi = sample_distributional_weights(counts, s.K, s.alpha, rng_);
  s.omega = sample_observational_weights(counts, s.L, s.K, s.beta, rng_);
}

void FcamSampler::resize_components(int K, int L) {
  ChainState& s = state_;
  // Empty components sit after the non-empty ones, so shrinking drops only empties.
  s.K = K;
  s.pi.resize(static_cast<std::size_t>(K), 0.0);
  s.omega.resize(static_cast<std::size_t>(K));
  const int oldL = s.L;
  s.L = L;
  s.astar.resize(static_cast<std::size_t>(L), 0.0);
  for (int l = oldL; l < L; ++l) {
    s.astar[static_cast<std::size_t>(l)] = draw_base_measure(s.p, hyper_.hA1, hyper_.hA2, rng_);
  }
  for (auto& col : s.omega) col.resize(static_cast<std::size_t>(L), 0.0);
}

ChainResult run_chain(const Trace& trace, const HyperParams& hyper, const McmcConfig& config,
                      std::uint64_t seed, const ProgressFn& progress) {
  config.validate();
  hyper.validate();
  FcamSampler sampler(trace, hyper, config.sampler, seed);
  ChainResult out;
  out.draws = DrawStore(trace.size(), static_cast<std::size_t>(trace.J));
  out.diagnostics.rows.reserve(static_cast<std::size_t>(config.iters));
  for (int it = 0; it < config.iters; ++it) {
    try {
      sampler.step(it < config.burnin);
    } catch (const std::exception& e) {
      std::ostringstream os;
      os << "iteration " << it << ": " << e.what();
      throw NumericalError(os.str());
    }
    if (config.keeps(it)) out.draws.append(sampler.state());
    out.diagnostics.rows.push_back(sampler.last());
    if (progress) progress(sampler.last());
  }
  const ChainDiagnostics& d = sampler.diagnostics();
  out.diagnostics.filter_clamps = d.filter_clamps;
  out.diagnostics.K_truncation_hits = d.K_truncation_hits;
  out.diagnostics.L_truncation_hits = d.L_truncation_hits;
  out.diagnostics.gamma_step = d.gamma_step;
  out.diagnostics.warnings = d.warnings;
  if (d.filter_clamps > 0) out.diagnostics.warnings.emplace_back("filter variances were clamped");
  out.final_state = sampler.state();
  return out;
}

ChainState sample_prior_state(const Trace& layout, const HyperParams& h, const CountPrior& K_prior,
                              const CountPrior& L_prior, Rng& rng) {
  const std::size_t T = layout.size();
  ChainState s;
  s.K = sample_count(K_prior, rng);
  s.alpha = gamma_rate(rng, h.a_alpha, h.b_alpha);
  s.pi = symmetric_dirichlet(s.K, s.alpha / s.K, rng);
  s.S.resize(static_cast<std::size_t>(layout.J));
  for (auto& k : s.S) k = draw_index(s.pi, rng);

  s.L = sample_count(L_prior, rng);
  s.beta = gamma_rate(rng, h.a_beta, h.b_beta);
  s.omega.resize(static_cast<std::size_t>(s.K));
  for (auto& col : s.omega) col = symmetric_dirichlet(s.L, s.beta / s.L, rng);

  s.p = clamp_open_unit(beta_draw(rng, h.h1p, h.h2p));
  s.astar.resize(static_cast<std::size_t>(s.L));
  for (auto& a : s.astar) a = draw_base_measure(s.p, h.hA1, h.hA2, rng);
  s.M.resize(T);
  for (std::size_t t = 0; t < T; ++t) {
    s.M[t] = draw_index(s.omega[static_cast<std::size_t>(s.S[static_cast<std::size_t>(layout.g[t])])], rng);
  }

  s.b = normal(rng, h.b0, std::sqrt(h.B0));
  s.sigma2 = 1.0 / gamma_rate(rng, h.h1sigma, h.h2sigma);
  s.tau2 = 1.0 / gamma_rate(rng, h.h1tau, h.h2tau);
  s.gamma = std::clamp(beta_draw(rng, h.h1gamma, h.h2gamma), 1e-12, 1.0 - 1e-12);
  s.c.resize(T + 1);
  s.c[0] = normal(rng, 0.0, std::sqrt(h.C0));
  for (std::size_t t = 1; t <= T; ++t) {
    s.c[t] = s.gamma * s.c[t - 1] + s.astar[static_cast<std::size_t>(s.M[t - 1])] + normal(rng, 0.0, std::sqrt(s.tau2));
  }
  relabel_distributional(s);
  relabel_observational(s);
  return s;
}

std::vector<double> sample_observations(const ChainState& state, Rng& rng) {
  std::vector<double> y(state.c.size() - 1);
  const double sd = std::sqrt(state.sigma2);
  for (std::size_t t = 1; t < state.c.size(); ++t) y[t - 1] = state.b + state.c[t] + normal(rng, 0.0, sd);
  return y;
}

}  // namespace fcam
