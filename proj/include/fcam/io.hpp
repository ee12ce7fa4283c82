#ifndef FCAM_IO_HPP
#define FCAM_IO_HPP

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "fcam/chain.hpp"
#include "fcam/model.hpp"
#include "fcam/simgen.hpp"
#include "fcam/summaries.hpp"

namespace fcam {

/// Everything a run needs besides the data.
struct RunConfig {
  int iters = 10000;
  int burnin = 7000;
  int thin = 2;
  std::uint64_t seed = 1;
  double threshold = 0.6;
  int chains = 1;
  double frame_rate_hz = 30.0;
  HyperParams hyper;
  SamplerOptions sampler;

  void validate() const;
  McmcConfig mcmc() const;
};

/// Applies `key = value` lines (with `#` comments) on top of `base`.
/// Unknown keys and malformed values raise ValidationError with the line number.
RunConfig parse_config(std::istream& in, RunConfig base = {});
RunConfig load_config(const std::filesystem::path& path, RunConfig base = {});
/// Sets a single key; used for config lines and command-line overrides.
void set_config_value(RunConfig& config, const std::string& key, const std::string& value);

/// Scenario file in the config syntax. Keys: J, K, cluster_of_condition
/// (1-based, comma separated), amplitude_sets (sets separated by `;`, values
/// by `,`), spike_prob, burst_prob, burst_window, T_per_condition, sigma2,
/// tau2, b, gamma, frame_rate_hz; `base` = a builtin id to start from.
ScenarioSpec parse_scenario(std::istream& in);

/// Reads `t,y,condition` rows (header required, LF or CRLF).
std::vector<RawRow> read_trace_rows(std::istream& in);
Trace read_trace_csv(const std::filesystem::path& path, double frame_rate_hz = 30.0);
void write_trace_csv(std::ostream& out, const Trace& trace);

/// t, condition, A_true, spike_true, obs_label, dist_label.
void write_truth_csv(std::ostream& out, const Trace& trace, const GroundTruth& truth);

struct TruthTable {
  std::vector<std::int64_t> time;
  std::vector<std::string> condition;
  std::vector<double> A_true;
  std::vector<bool> spike_true;
  Partition obs_labels;
  Partition dist_labels;  // per frame
};
TruthTable read_truth_csv(std::istream& in);

/// Binary draw file: magic, T, J, D, then per draw the fixed-width scalars,
/// the atom vector and LEB128-encoded S and M.
void write_draws(std::ostream& out, const DrawStore& draws);
DrawStore read_draws(std::istream& in);
void save_draws(const std::filesystem::path& path, const DrawStore& draws);
DrawStore load_draws(const std::filesystem::path& path);

/// iteration, chain, K, Kplus, L, Lplus and running acceptance rates.
void write_diagnostics_csv(std::ostream& out, const std::vector<ChainDiagnostics>& chains);

/// JSON summary document.
std::string summary_json(const PartitionSummary& summary, const Trace& trace, const SummaryOptions& options,
                         std::size_t draws);

/// t, y, spike_prob, amplitude_label.
void write_plotdata_csv(std::ostream& out, const PartitionSummary& summary, const Trace& trace);

struct SummaryDocument {
  std::vector<std::int64_t> time;
  std::vector<bool> spike_calls;
  Partition obs_partition;
  std::vector<std::string> conditions;
  Partition dist_partition;
};
SummaryDocument parse_summary_json(std::istream& in);

struct Metrics {
  double misclassification = 0.0;
  double obs_ari = 0.0;
  double dist_ari = 0.0;
};
/// Throws ValidationError with both lengths on a frame-count mismatch.
Metrics evaluate(const SummaryDocument& summary, const TruthTable& truth);

}  // namespace fcam

#endif  // FCAM_IO_HPP
