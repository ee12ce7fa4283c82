#include "fcam/simgen.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <map>
#include <mutex>
#include <sstream>
#include <thread>

namespace fcam {

void ScenarioSpec::validate() const {
  if (J < 1) throw ValidationError("scenario: J must be >= 1");
  if (K < 1) throw ValidationError("scenario: K must be >= 1");
  if (static_cast<int>(cluster_of_condition.size()) != J)
    throw ValidationError("scenario: cluster_of_condition needs J entries");
  if (static_cast<int>(amplitude_sets.size()) != K) throw ValidationError("scenario: amplitude_sets needs K sets");
  for (int k : cluster_of_condition) {
    if (k < 0 || k >= K) throw ValidationError("scenario: cluster index out of range");
  }
  for (const auto& set : amplitude_sets) {
    if (set.empty()) throw ValidationError("scenario: empty amplitude set");
    for (double a : set) {
      if (!(a > 0.0) || !std::isfinite(a)) throw ValidationError("scenario: amplitudes must be positive");
    }
  }
  if (!spike_prob_per_condition.empty()) {
    if (static_cast<int>(spike_prob_per_condition.size()) != J)
      throw ValidationError("scenario: spike_prob_per_condition needs J entries");
    for (double p : spike_prob_per_condition) {
      if (!(p >= 0.0 && p < 1.0)) throw ValidationError("scenario: spike probabilities must lie in [0, 1)");
    }
  }
  if (!(burst_prob >= 0.0 && burst_prob < 1.0)) throw ValidationError("scenario: burst_prob must lie in [0, 1)");
  if (burst_window < 0) throw ValidationError("scenario: burst_window must be >= 0");
  if (T_per_condition < 1) throw ValidationError("scenario: T_per_condition must be >= 1");
  if (J * static_cast<long>(T_per_condition) < 2) throw ValidationError("scenario: at least 2 frames are required");
  if (!(sigma2 >= 0.0) || !(tau2 >= 0.0)) throw ValidationError("scenario: variances must be >= 0");
  if (!(gamma >= 0.0 && gamma < 1.0)) throw ValidationError("scenario: gamma must lie in [0, 1)");
  if (!(frame_rate_hz > 0.0)) throw ValidationError("scenario: frame_rate_hz must be positive");
}

ScenarioSpec builtin_scenario(int id) {
  ScenarioSpec s;
  switch (id) {
    case 1:
      s.J = 6;
      s.K = 4;
      s.cluster_of_condition = {0, 0, 1, 1, 2, 3};
      s.amplitude_sets = {{0.35, 0.89, 1.15, 1.80, 2.20}, {0.65, 0.89, 1.40, 1.80}, {0.35, 0.65, 1.15}, {0.35, 0.89, 1.60}};
      break;
    case 2:
      s.J = 4;
      s.K = 3;
      s.cluster_of_condition = {0, 0, 1, 2};
      s.amplitude_sets = {{0.3, 0.5, 0.7, 0.9, 1.1, 1.5}, {0.3, 0.9, 1.5, 1.8}, {0.5, 0.9, 1.5}};
      break;
    case 3:
      s.J = 5;
      s.K = 3;
      s.cluster_of_condition = {0, 0, 1, 1, 2};
      s.amplitude_sets = {{0.3, 0.5, 0.7, 0.9, 1.1}, {0.3, 0.9, 1.1, 1.3}, {0.7, 0.9, 1.3}};
      break;
    default: {
      std::ostringstream os;
      os << "unknown scenario " << id;
      throw ValidationError(os.str());
    }
  }
  return s;
}

Simulation generate(const ScenarioSpec& spec, std::uint64_t seed) {
  spec.validate();
  Rng rng(seed);
  const auto Tc = static_cast<std::size_t>(spec.T_per_condition);
  const std::size_t T = Tc * static_cast<std::size_t>(spec.J);

  Simulation sim;
  Trace& tr = sim.trace;
  GroundTruth& gt = sim.truth;
  tr.J = spec.J;
  tr.frame_rate_hz = spec.frame_rate_hz;
  tr.g.resize(T);
  tr.time.resize(T);
  for (int j = 0; j < spec.J; ++j) tr.labels.push_back(std::to_string(j + 1));

  gt.spike_prob = spec.spike_prob_per_condition;
  if (gt.spike_prob.empty()) {
    for (int j = 0; j < spec.J; ++j) gt.spike_prob.push_back(0.005 + 0.015 * uniform01(rng));
  }
  gt.A_true.assign(T, 0.0);
  gt.spike_true.assign(T, false);

  for (int j = 0; j < spec.J; ++j) {
    const std::size_t lo = static_cast<std::size_t>(j) * Tc;
    const auto& set = spec.amplitude_sets[static_cast<std::size_t>(spec.cluster_of_condition[static_cast<std::size_t>(j)])];
    std::vector<bool> primary(Tc, false);
    for (std::size_t i = 0; i < Tc; ++i) primary[i] = uniform01(rng) < gt.spike_prob[static_cast<std::size_t>(j)];
    std::vector<bool> spike = primary;
    for (std::size_t i = 0; i < Tc; ++i) {
      if (!primary[i]) continue;
      for (int w = 1; w <= spec.burst_window && i + static_cast<std::size_t>(w) < Tc; ++w) {
        if (uniform01(rng) < spec.burst_prob) spike[i + static_cast<std::size_t>(w)] = true;
      }
    }
    for (std::size_t i = 0; i < Tc; ++i) {
      const std::size_t t = lo + i;
      tr.g[t] = j;
      tr.time[t] = static_cast<std::int64_t>(t + 1);
      if (!spike[i]) continue;
      const auto pick = std::min(set.size() - 1, static_cast<std::size_t>(uniform01(rng) * static_cast<double>(set.size())));
      gt.A_true[t] = set[pick];
      gt.spike_true[t] = true;
    }
  }

  gt.c_true.assign(T + 1, 0.0);
  gt.state_noise.resize(T);
  gt.obs_noise.resize(T);
  tr.y.resize(T);
  const double sw = std::sqrt(spec.tau2), se = std::sqrt(spec.sigma2);
  for (std::size_t t = 1; t <= T; ++t) {
    gt.state_noise[t - 1] = normal(rng, 0.0, 1.0) * sw;
    gt.obs_noise[t - 1] = normal(rng, 0.0, 1.0) * se;
    gt.c_true[t] = spec.gamma * gt.c_true[t - 1] + gt.A_true[t - 1] + gt.state_noise[t - 1];
    tr.y[t - 1] = spec.b + gt.c_true[t] + gt.obs_noise[t - 1];
  }

  std::map<double, int> amp_label;
  for (double a : gt.A_true) {
    if (a > 0.0) amp_label.emplace(a, 0);
  }
  int next = 2;
  for (auto& [a, l] : amp_label) l = next++;
  gt.obs_labels.resize(T);
  for (std::size_t t = 0; t < T; ++t) gt.obs_labels[t] = gt.spike_true[t] ? amp_label[gt.A_true[t]] : 1;
  gt.obs_labels = canonical_partition(gt.obs_labels);
  std::vector<int> dist(spec.cluster_of_condition.begin(), spec.cluster_of_condition.end());
  gt.dist_labels = canonical_partition(dist);
  return sim;
}

ReplicateMetrics score_fit(const PartitionSummary& summary, const GroundTruth& truth) {
  ReplicateMetrics m;
  m.misclassification = misclassification_rate(truth.spike_true, summary.spike_calls);
  m.obs_ari = adjusted_rand_index(truth.obs_labels, summary.obs_partition);
  m.dist_ari = adjusted_rand_index(truth.dist_labels, summary.dist_partition);
  return m;
}

std::vector<ReplicateMetrics> replicate_study(const ScenarioSpec& spec, int n_reps, const StudyConfig& config,
                                              std::uint64_t seed) {
  if (n_reps < 1) throw ValidationError("replicate_study: n_reps must be >= 1");
  spec.validate();
  config.mcmc.validate();
  std::vector<ReplicateMetrics> rows(static_cast<std::size_t>(n_reps));
  std::atomic<int> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;

  auto worker = [&] {
    for (int r = next++; r < n_reps; r = next++) {
      try {
        const std::uint64_t data_seed = derive_seed(seed, static_cast<std::uint64_t>(r));
        const Simulation sim = generate(spec, data_seed);
        const ChainResult fit = run_chain(sim.trace, config.hyper, config.mcmc,
                                          derive_seed(seed + 1, static_cast<std::uint64_t>(r)));
        const PartitionSummary summary = summarize(fit.draws, sim.trace, config.summary);
        ReplicateMetrics m = score_fit(summary, sim.truth);
        m.replicate = r;
        m.seed = data_seed;
        rows[static_cast<std::size_t>(r)] = m;
      } catch (const std::exception& e) {
        std::lock_guard<std::mutex> lock(failure_mutex);
        if (!failure) {
          std::ostringstream os;
          os << "replicate " << r << ": " << e.what();
          failure = std::make_exception_ptr(std::runtime_error(os.str()));
        }
        return;
      }
    }
  };

  const unsigned workers = std::max(1u, std::min(config.workers, static_cast<unsigned>(n_reps)));
  if (workers == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (unsigned w = 0; w < workers; ++w) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  if (failure) std::rethrow_exception(failure);
  return rows;
}

}  // namespace fcam
