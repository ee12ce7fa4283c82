#include "fcam/summaries.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <thread>
#include <unordered_map>

namespace fcam {

namespace {

std::vector<std::size_t> all_items(std::size_t n) {
  std::vector<std::size_t> v(n);
  std::iota(v.begin(), v.end(), std::size_t{0});
  return v;
}

const std::vector<DrawStore::Label>& labels_of(const DrawStore& d, std::size_t i, PartitionKind which) {
  return which == PartitionKind::observational ? d.M(i) : d.S(i);
}

std::size_t item_count(const DrawStore& d, PartitionKind which) {
  return which == PartitionKind::observational ? d.T() : d.J();
}

double choose2(double n) { return 0.5 * n * (n - 1.0); }

bool tie_better(const Partition& a, const Partition& b) {
  const int ka = cluster_count(a), kb = cluster_count(b);
  if (ka != kb) return ka < kb;
  return a < b;
}

}  // namespace

Partition canonical_partition(std::span<const int> labels) {
  Partition out(labels.size());
  std::unordered_map<int, int> map;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    auto [it, inserted] = map.try_emplace(labels[i], static_cast<int>(map.size()) + 1);
    out[i] = it->second;
  }
  return out;
}

int cluster_count(std::span<const int> labels) {
  std::vector<int> v(labels.begin(), labels.end());
  std::sort(v.begin(), v.end());
  return static_cast<int>(std::unique(v.begin(), v.end()) - v.begin());
}

SpikeDetection detect_spikes(const DrawStore& draws, double threshold) {
  if (draws.empty()) throw ValidationError("detect_spikes: empty draw store");
  if (!(threshold > 0.0 && threshold < 1.0)) throw ValidationError("threshold must lie in (0, 1)");
  const std::size_t T = draws.T();
  SpikeDetection out;
  out.prob.assign(T, 0.0);
  for (std::size_t d = 0; d < draws.size(); ++d) {
    for (std::size_t t = 0; t < T; ++t) out.prob[t] += draws.amplitude(d, t) > 0.0 ? 1.0 : 0.0;
  }
  out.calls.resize(T);
  for (std::size_t t = 0; t < T; ++t) {
    out.prob[t] /= static_cast<double>(draws.size());
    out.calls[t] = out.prob[t] > threshold;
  }
  return out;
}

SimilarityMatrix posterior_similarity(const DrawStore& draws, PartitionKind which,
                                      std::span<const std::size_t> items, unsigned threads) {
  if (draws.empty()) throw ValidationError("posterior_similarity: empty draw store");
  std::vector<std::size_t> owned;
  if (items.empty()) {
    owned = all_items(item_count(draws, which));
    items = owned;
  }
  const std::size_t n = items.size();
  const std::size_t D = draws.size();
  SimilarityMatrix psm(n);
  if (n == 0) return psm;

  // Members of every label, per draw, in item order.
  std::vector<std::vector<std::vector<std::size_t>>> buckets(D);
  std::vector<std::vector<int>> label(D, std::vector<int>(n));
  for (std::size_t d = 0; d < D; ++d) {
    const auto& lab = labels_of(draws, d, which);
    std::unordered_map<int, int> slot;
    for (std::size_t i = 0; i < n; ++i) {
      auto [it, ins] = slot.try_emplace(lab.at(items[i]), static_cast<int>(slot.size()));
      if (ins) buckets[d].emplace_back();
      buckets[d][static_cast<std::size_t>(it->second)].push_back(i);
      label[d][i] = it->second;
    }
  }

  const unsigned nthreads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(n)));
  auto work = [&](std::size_t lo, std::size_t hi) {
    for (std::size_t i = lo; i < hi; ++i) {
      for (std::size_t d = 0; d < D; ++d) {
        for (std::size_t j : buckets[d][static_cast<std::size_t>(label[d][i])]) psm(i, j) += 1.0;
      }
      for (std::size_t j = 0; j < n; ++j) psm(i, j) /= static_cast<double>(D);
    }
  };
  if (nthreads == 1) {
    work(0, n);
  } else {
    std::vector<std::thread> pool;
    const std::size_t chunk = (n + nthreads - 1) / nthreads;
    for (unsigned w = 0; w < nthreads; ++w) {
      const std::size_t lo = w * chunk, hi = std::min(n, lo + chunk);
      if (lo < hi) pool.emplace_back(work, lo, hi);
    }
    for (auto& th : pool) th.join();
  }
  return psm;
}

SimilarityMatrix posterior_similarity(const std::vector<Partition>& draws) {
  if (draws.empty()) throw ValidationError("posterior_similarity: no draws");
  const std::size_t n = draws.front().size();
  SimilarityMatrix psm(n);
  for (const auto& p : draws) {
    if (p.size() != n) throw ValidationError("posterior_similarity: partitions differ in length");
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) psm(i, j) += p[i] == p[j] ? 1.0 : 0.0;
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) psm(i, j) /= static_cast<double>(draws.size());
  }
  return psm;
}

std::vector<Partition> sampled_partitions(const DrawStore& draws, PartitionKind which,
                                          std::span<const std::size_t> items, std::size_t max_candidates) {
  std::vector<std::size_t> owned;
  if (items.empty()) {
    owned = all_items(item_count(draws, which));
    items = owned;
  }
  std::map<Partition, std::size_t> freq;
  std::vector<int> raw(items.size());
  for (std::size_t d = 0; d < draws.size(); ++d) {
    const auto& lab = labels_of(draws, d, which);
    for (std::size_t i = 0; i < items.size(); ++i) raw[i] = lab.at(items[i]);
    ++freq[canonical_partition(raw)];
  }
  std::vector<std::pair<std::size_t, const Partition*>> order;
  for (const auto& [p, n] : freq) order.emplace_back(n, &p);
  std::stable_sort(order.begin(), order.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
  std::vector<Partition> out;
  for (std::size_t i = 0; i < order.size() && i < max_candidates; ++i) out.push_back(*order[i].second);
  return out;
}

double vi_lower_bound(const SimilarityMatrix& psm, std::span<const int> partition) {
  const std::size_t n = psm.size();
  if (partition.size() != n) throw ValidationError("vi_lower_bound: partition length does not match the matrix");
  if (n == 0) return 0.0;
  std::unordered_map<int, double> size;
  for (int c : partition) size[c] += 1.0;
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double row = 0.0, within = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      row += psm(i, j);
      if (partition[j] == partition[i]) within += psm(i, j);
    }
    total += std::log2(size[partition[i]]) + std::log2(row) - 2.0 * std::log2(within);
  }
  return total / static_cast<double>(n);
}

Partition greedy_vi_sweep(const SimilarityMatrix& psm, Partition start, std::vector<double>* objective_trace) {
  const std::size_t n = psm.size();
  if (start.size() != n) throw ValidationError("greedy_vi_sweep: partition length does not match the matrix");
  if (n == 0) return start;
  Partition part = canonical_partition(start);

  // Cluster slots (0-based); within[c][j] = sum over members k of c of psm(j, k).
  std::vector<std::vector<std::size_t>> members;
  std::vector<int> slot(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto c = static_cast<std::size_t>(part[i] - 1);
    if (members.size() <= c) members.resize(c + 1);
    members[c].push_back(i);
    slot[i] = static_cast<int>(c);
  }
  std::vector<std::vector<double>> within(members.size(), std::vector<double>(n, 0.0));
  for (std::size_t c = 0; c < members.size(); ++c) {
    for (std::size_t j = 0; j < n; ++j) {
      for (std::size_t k : members[c]) within[c][j] += psm(j, k);
    }
  }
  double row_term = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double row = 0.0;
    for (std::size_t j = 0; j < n; ++j) row += psm(i, j);
    row_term += std::log2(row);
  }
  auto term = [](double size, double w) { return std::log2(size) - 2.0 * std::log2(w); };
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto c = static_cast<std::size_t>(slot[i]);
    sum += term(static_cast<double>(members[c].size()), within[c][i]);
  }

  for (std::size_t i = 0; i < n; ++i) {
    const auto a = static_cast<std::size_t>(slot[i]);
    const double na = static_cast<double>(members[a].size());
    // Removing i from a.
    double delta_a = -term(na, within[a][i]);
    for (std::size_t j : members[a]) {
      if (j == i) continue;
      delta_a += term(na - 1.0, within[a][j] - psm(j, i)) - term(na, within[a][j]);
    }
    double best_delta = 0.0;
    std::size_t best = a;
    bool to_new = false;
    for (std::size_t b = 0; b < members.size(); ++b) {
      if (b == a || members[b].empty()) continue;
      const double nb = static_cast<double>(members[b].size());
      double delta = delta_a + term(nb + 1.0, within[b][i] + psm(i, i));
      for (std::size_t j : members[b]) delta += term(nb + 1.0, within[b][j] + psm(j, i)) - term(nb, within[b][j]);
      if (delta < best_delta - 1e-12) {
        best_delta = delta;
        best = b;
        to_new = false;
      }
    }
    if (members[a].size() > 1) {
      const double delta = delta_a + term(1.0, psm(i, i));
      if (delta < best_delta - 1e-12) {
        best_delta = delta;
        to_new = true;
      }
    }
    if (to_new) {
      std::size_t fresh = members.size();
      for (std::size_t c = 0; c < members.size(); ++c) {
        if (members[c].empty()) {
          fresh = c;
          break;
        }
      }
      if (fresh == members.size()) {
        members.emplace_back();
        within.emplace_back(n, 0.0);
      }
      best = fresh;
    }
    if (best != a) {
      auto& ma = members[a];
      ma.erase(std::find(ma.begin(), ma.end(), i));
      auto& mb = members[best];
      mb.insert(std::upper_bound(mb.begin(), mb.end(), i), i);
      for (std::size_t j = 0; j < n; ++j) {
        within[a][j] -= psm(j, i);
        within[best][j] += psm(j, i);
      }
      slot[i] = static_cast<int>(best);
      sum += best_delta;
    }
    if (objective_trace) objective_trace->push_back((sum + row_term) / static_cast<double>(n));
  }
  return canonical_partition(slot);
}

Partition minvi_partition(const SimilarityMatrix& psm, const std::vector<Partition>& candidates, bool refine) {
  if (candidates.empty()) throw ValidationError("minvi_partition: empty candidate set");
  Partition best;
  double best_value = std::numeric_limits<double>::infinity();
  bool have = false;
  auto consider = [&](Partition p) {
    const double v = vi_lower_bound(psm, p);
    const double tol = 1e-12 * std::max(1.0, std::abs(v));
    if (!have || v < best_value - tol || (std::abs(v - best_value) <= tol && tie_better(p, best))) {
      best_value = v;
      best = std::move(p);
      have = true;
    }
  };
  for (const auto& c : candidates) {
    if (c.size() != psm.size()) throw ValidationError("minvi_partition: candidate length does not match the matrix");
    consider(canonical_partition(c));
    if (refine) consider(greedy_vi_sweep(psm, c));
  }
  return best;
}

double adjusted_rand_index(std::span<const int> p1, std::span<const int> p2) {
  if (p1.size() != p2.size()) {
    std::ostringstream os;
    os << "adjusted_rand_index: length mismatch (" << p1.size() << " vs " << p2.size() << ")";
    throw ValidationError(os.str());
  }
  const Partition a = canonical_partition(p1), b = canonical_partition(p2);
  std::unordered_map<std::uint64_t, double> table;
  std::unordered_map<int, double> ra, rb;
  for (std::size_t i = 0; i < a.size(); ++i) {
    table[(static_cast<std::uint64_t>(a[i]) << 32) | static_cast<std::uint32_t>(b[i])] += 1.0;
    ra[a[i]] += 1.0;
    rb[b[i]] += 1.0;
  }
  double index = 0.0, sa = 0.0, sb = 0.0;
  for (const auto& [k, v] : table) index += choose2(v);
  for (const auto& [k, v] : ra) sa += choose2(v);
  for (const auto& [k, v] : rb) sb += choose2(v);
  const double total = choose2(static_cast<double>(a.size()));
  const double expected = total > 0.0 ? sa * sb / total : 0.0;
  const double max_index = 0.5 * (sa + sb);
  if (max_index - expected == 0.0) return 1.0;
  return (index - expected) / (max_index - expected);
}

double misclassification_rate(const std::vector<bool>& truth, const std::vector<bool>& called) {
  if (truth.size() != called.size()) {
    std::ostringstream os;
    os << "misclassification_rate: length mismatch (" << truth.size() << " vs " << called.size() << ")";
    throw ValidationError(os.str());
  }
  if (truth.empty()) return 0.0;
  std::size_t wrong = 0;
  for (std::size_t t = 0; t < truth.size(); ++t) wrong += truth[t] != called[t] ? 1 : 0;
  return static_cast<double>(wrong) / static_cast<double>(truth.size());
}

Interval posterior_interval(std::vector<double> values) {
  if (values.empty()) throw ValidationError("posterior_interval: no values");
  const std::size_t D = values.size();
  Interval out;
  out.mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(D);
  std::sort(values.begin(), values.end());
  auto rank = [D](double r) {
    return std::clamp<std::size_t>(static_cast<std::size_t>(r), 1, D) - 1;
  };
  out.lower = values[rank(std::ceil(0.025 * static_cast<double>(D)))];
  out.upper = values[rank(std::floor(0.975 * static_cast<double>(D)))];
  return out;
}

Interval firing_rate(const DrawStore& draws, const Trace& trace, int j) {
  if (trace.size() != draws.T()) throw ValidationError("firing_rate: trace and draws differ in length");
  std::vector<std::size_t> frames;
  for (std::size_t t = 0; t < trace.size(); ++t) {
    if (trace.g[t] == j) frames.push_back(t);
  }
  if (frames.empty()) throw ValidationError("firing_rate: condition not present");
  std::vector<double> rates(draws.size());
  for (std::size_t d = 0; d < draws.size(); ++d) {
    std::size_t n = 0;
    for (std::size_t t : frames) n += draws.amplitude(d, t) > 0.0 ? 1 : 0;
    rates[d] = static_cast<double>(n) * trace.frame_rate_hz / static_cast<double>(frames.size());
  }
  return posterior_interval(std::move(rates));
}

std::map<int, double> cluster_amplitudes(const DrawStore& draws, std::span<const std::size_t> items,
                                         std::span<const int> labels) {
  if (items.size() != labels.size()) throw ValidationError("cluster_amplitudes: items and labels differ in length");
  if (draws.empty()) throw ValidationError("cluster_amplitudes: empty draw store");
  std::map<int, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < items.size(); ++i) groups[labels[i]].push_back(items[i]);
  std::map<int, double> out;
  for (const auto& [label, frames] : groups) {
    if (frames.empty()) throw ValidationError("cluster_amplitudes: empty cluster");
    double acc = 0.0;
    for (std::size_t d = 0; d < draws.size(); ++d) {
      double s = 0.0;
      for (std::size_t t : frames) s += draws.amplitude(d, t);
      acc += s / static_cast<double>(frames.size());
    }
    out[label] = acc / static_cast<double>(draws.size());
  }
  return out;
}

PartitionSummary summarize(const DrawStore& draws, const Trace& trace, const SummaryOptions& options) {
  if (draws.empty()) throw ValidationError("summarize: empty draw store");
  if (draws.T() != trace.size()) throw ValidationError("summarize: trace and draws differ in length");
  PartitionSummary out;
  SpikeDetection det = detect_spikes(draws, options.threshold);
  out.spike_prob = std::move(det.prob);
  out.spike_calls = std::move(det.calls);

  std::vector<std::size_t> called;
  for (std::size_t t = 0; t < trace.size(); ++t) {
    if (out.spike_calls[t]) called.push_back(t);
  }
  const bool has_quiet = called.size() < trace.size();
  const int offset = has_quiet ? 1 : 0;
  out.obs_partition.assign(trace.size(), 1);
  if (!called.empty()) {
    const SimilarityMatrix psm = posterior_similarity(draws, PartitionKind::observational, called, options.threads);
    const Partition p = minvi_partition(
        psm, sampled_partitions(draws, PartitionKind::observational, called, options.max_candidates));
    std::vector<int> labels(p.size());
    for (std::size_t i = 0; i < p.size(); ++i) {
      labels[i] = p[i] + offset;
      out.obs_partition[called[i]] = labels[i];
    }
    out.cluster_amplitudes = cluster_amplitudes(draws, called, labels);
  }

  const SimilarityMatrix dpsm = posterior_similarity(draws, PartitionKind::distributional);
  out.dist_partition = minvi_partition(dpsm, sampled_partitions(draws, PartitionKind::distributional, {},
                                                                 options.max_candidates));

  for (int j = 0; j < trace.J; ++j) out.firing_rate.push_back(firing_rate(draws, trace, j));

  std::vector<double> b, g, s2, t2, p;
  for (std::size_t d = 0; d < draws.size(); ++d) {
    const ScalarDraw& s = draws.scalars(d);
    b.push_back(s.b);
    g.push_back(s.gamma);
    s2.push_back(s.sigma2);
    t2.push_back(s.tau2);
    p.push_back(s.p);
  }
  out.b = posterior_interval(std::move(b));
  out.gamma = posterior_interval(std::move(g));
  out.sigma2 = posterior_interval(std::move(s2));
  out.tau2 = posterior_interval(std::move(t2));
  out.p = posterior_interval(std::move(p));
  return out;
}

DrawStore merge_draws(const std::vector<DrawStore>& stores) {
  if (stores.empty()) throw ValidationError("no draws found");
  DrawStore out(stores.front().T(), stores.front().J());
  for (const auto& s : stores) {
    if (s.T() != out.T() || s.J() != out.J()) {
      std::ostringstream os;
      os << "draw files disagree on dimensions (T=" << out.T() << ", J=" << out.J() << " vs T=" << s.T()
         << ", J=" << s.J() << ")";
      throw ValidationError(os.str());
    }
    for (std::size_t d = 0; d < s.size(); ++d) out.append(s.scalars(d), s.astar(d), s.S(d), s.M(d));
  }
  return out;
}

}  // namespace fcam
