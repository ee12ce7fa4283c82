#ifndef FCAM_SIMGEN_HPP
#define FCAM_SIMGEN_HPP

#include <cstddef>
#include <cstdint>
#include <vector>

#include "fcam/chain.hpp"
#include "fcam/model.hpp"
#include "fcam/summaries.hpp"

namespace fcam {

struct ScenarioSpec {
  int J = 0;
  int K = 0;
  std::vector<int> cluster_of_condition;              // J entries in [0, K)
  std::vector<std::vector<double>> amplitude_sets;    // K sets
  std::vector<double> spike_prob_per_condition;       // empty: drawn per condition in [0.005, 0.02]
  double burst_prob = 0.4;
  int burst_window = 5;
  int T_per_condition = 2000;
  double sigma2 = 0.05;
  double tau2 = 0.01;
  double b = 0.0;
  double gamma = 0.5;
  double frame_rate_hz = 30.0;

  /// Throws ValidationError on an inconsistent spec.
  void validate() const;
};

ScenarioSpec builtin_scenario(int id);

struct GroundTruth {
  std::vector<double> A_true;
  std::vector<bool> spike_true;
  /// 1 for frames without a spike, then one label per distinct amplitude value.
  Partition obs_labels;
  /// Distributional cluster of each condition, 1-based.
  Partition dist_labels;
  std::vector<double> spike_prob;  // per condition, as used
  std::vector<double> c_true;      // length T + 1, c_true[0] = 0
  std::vector<double> state_noise;
  std::vector<double> obs_noise;
};

struct Simulation {
  Trace trace;
  GroundTruth truth;
};

Simulation generate(const ScenarioSpec& spec, std::uint64_t seed);

struct ReplicateMetrics {
  int replicate = 0;
  std::uint64_t seed = 0;
  double misclassification = 0.0;
  double obs_ari = 0.0;
  double dist_ari = 0.0;
};

struct StudyConfig {
  McmcConfig mcmc;
  HyperParams hyper;
  SummaryOptions summary;
  /// Replicates run concurrently on this many workers.
  unsigned workers = 1;
};

/// Generate, fit and score `n_reps` data sets; replicate r uses seed derive_seed(seed, r)
/// for the data and derive_seed(seed + 1, r) for the chain.
std::vector<ReplicateMetrics> replicate_study(const ScenarioSpec& spec, int n_reps, const StudyConfig& config,
                                              std::uint64_t seed);

ReplicateMetrics score_fit(const PartitionSummary& summary, const GroundTruth& truth);

}  // namespace fcam

#endif  // FCAM_SIMGEN_HPP
