#ifndef FCAM_SUMMARIES_HPP
#define FCAM_SUMMARIES_HPP

#include <cstddef>
#include <map>
#include <span>
#include <vector>

#include "fcam/model.hpp"

namespace fcam {

/// Cluster labels, one per item. Canonical partitions number clusters 1, 2, ...
/// in order of first appearance.
using Partition = std::vector<int>;

Partition canonical_partition(std::span<const int> labels);
int cluster_count(std::span<const int> labels);

enum class PartitionKind { observational, distributional };

struct SpikeDetection {
  std::vector<double> prob;
  std::vector<bool> calls;
};

/// prob[t] = share of draws with a positive amplitude at t; calls use a strict `>`.
SpikeDetection detect_spikes(const DrawStore& draws, double threshold = 0.6);

/// Dense symmetric co-clustering matrix.
class SimilarityMatrix {
 public:
  SimilarityMatrix() = default;
  explicit SimilarityMatrix(std::size_t n) : n_(n), v_(n * n, 0.0) {}

  std::size_t size() const noexcept { return n_; }
  double operator()(std::size_t i, std::size_t j) const noexcept { return v_[i * n_ + j]; }
  double& operator()(std::size_t i, std::size_t j) noexcept { return v_[i * n_ + j]; }

 private:
  std::size_t n_ = 0;
  std::vector<double> v_;
};

/// Share of draws in which two items carry the same label. `items` selects the
/// frames (observational) or conditions (distributional); empty means all.
SimilarityMatrix posterior_similarity(const DrawStore& draws, PartitionKind which,
                                      std::span<const std::size_t> items = {}, unsigned threads = 1);

/// Builds the matrix from explicit label vectors (one per draw).
SimilarityMatrix posterior_similarity(const std::vector<Partition>& draws);

/// Distinct sampled partitions restricted to `items` (canonical labels), most
/// frequent first, ties in lexicographic order; at most `max_candidates`.
std::vector<Partition> sampled_partitions(const DrawStore& draws, PartitionKind which,
                                          std::span<const std::size_t> items = {},
                                          std::size_t max_candidates = 100);

/// Lower bound on the posterior expected variation of information (base 2):
/// (1/N) sum_i [log n_{c_i} + log sum_j psm_ij - 2 log sum_{j in c_i} psm_ij].
double vi_lower_bound(const SimilarityMatrix& psm, std::span<const int> partition);

/// One sweep of best single-item moves (existing cluster or a new singleton).
/// `objective_trace`, if given, receives the objective after every item.
Partition greedy_vi_sweep(const SimilarityMatrix& psm, Partition start,
                          std::vector<double>* objective_trace = nullptr);

/// Candidate (or its greedy refinement) with the smallest VI bound; ties go to
/// fewer clusters, then the lexicographically smallest canonical labels.
Partition minvi_partition(const SimilarityMatrix& psm, const std::vector<Partition>& candidates,
                          bool refine = true);

double adjusted_rand_index(std::span<const int> p1, std::span<const int> p2);

double misclassification_rate(const std::vector<bool>& truth, const std::vector<bool>& called);

struct Interval {
  double mean = 0.0;
  double lower = 0.0;
  double upper = 0.0;
};

/// Mean and equal-tailed 95% interval from order statistics at ranks
/// ceil(0.025 D) and floor(0.975 D) (1-based, clamped to [1, D]).
Interval posterior_interval(std::vector<double> values);

/// Spikes per second in condition j (0-based), per draw, summarized over draws.
Interval firing_rate(const DrawStore& draws, const Trace& trace, int j);

/// For every cluster of `labels` over `items`: per-draw mean amplitude of its
/// members, averaged over draws.
std::map<int, double> cluster_amplitudes(const DrawStore& draws, std::span<const std::size_t> items,
                                         std::span<const int> labels);

struct SummaryOptions {
  double threshold = 0.6;
  std::size_t max_candidates = 100;
  unsigned threads = 1;
};

struct PartitionSummary {
  std::vector<bool> spike_calls;
  std::vector<double> spike_prob;
  /// Over all frames: label 1 holds every non-called frame (when any exist),
  /// the called frames follow the minVI partition of their amplitude labels.
  Partition obs_partition;
  Partition dist_partition;
  std::map<int, double> cluster_amplitudes;
  std::vector<Interval> firing_rate;  // per condition
  Interval b, gamma, sigma2, tau2, p;
};

PartitionSummary summarize(const DrawStore& draws, const Trace& trace, const SummaryOptions& options = {});

/// Concatenates stores with matching T and J; throws ValidationError otherwise.
DrawStore merge_draws(const std::vector<DrawStore>& stores);

}  // namespace fcam

#endif  // FCAM_SUMMARIES_HPP
