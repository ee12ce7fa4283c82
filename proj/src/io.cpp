#include "fcam/io.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <functional>
#include <iomanip>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>

#include <json.hpp>

namespace fcam {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char ch = line[i];
    if (quoted) {
      if (ch == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (ch == '"') {
        quoted = false;
      } else {
        cur += ch;
      }
    } else if (ch == '"') {
      quoted = true;
    } else if (ch == ',') {
      out.push_back(trim(cur));
      cur.clear();
    } else {
      cur += ch;
    }
  }
  out.push_back(trim(cur));
  return out;
}

bool getline_any(std::istream& in, std::string& line) {
  if (!std::getline(in, line)) return false;
  if (!line.empty() && line.back() == '\r') line.pop_back();
  return true;
}

std::string at_line(std::size_t line) { return "line " + std::to_string(line) + ": "; }

double parse_double(const std::string& s, const std::string& what) {
  double v = 0.0;
  const char* b = s.data();
  const char* e = b + s.size();
  if (!s.empty() && *b == '+') ++b;
  auto [p, ec] = std::from_chars(b, e, v);
  if (ec != std::errc() || p != e) {
    // from_chars rejects "nan"/"inf" spellings on some libraries; strtod accepts them.
    char* end = nullptr;
    v = std::strtod(s.c_str(), &end);
    if (s.empty() || end != s.c_str() + s.size()) throw ValidationError(what + ": not a number '" + s + "'");
  }
  return v;
}

std::int64_t parse_int(const std::string& s, const std::string& what) {
  std::int64_t v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size() || s.empty())
    throw ValidationError(what + ": not an integer '" + s + "'");
  return v;
}

bool parse_bool(const std::string& s, const std::string& what) {
  if (s == "1" || s == "true" || s == "TRUE" || s == "True") return true;
  if (s == "0" || s == "false" || s == "FALSE" || s == "False") return false;
  throw ValidationError(what + ": not a boolean '" + s + "'");
}

/// Column positions for the named header fields.
std::vector<std::size_t> locate_columns(const std::vector<std::string>& header,
                                        const std::vector<std::string>& names) {
  std::vector<std::size_t> idx;
  for (const auto& n : names) {
    const auto it = std::find(header.begin(), header.end(), n);
    if (it == header.end()) throw ValidationError("missing column '" + n + "'");
    idx.push_back(static_cast<std::size_t>(it - header.begin()));
  }
  return idx;
}

template <class T>
void put(std::ostream& out, T v) {
  static_assert(std::endian::native == std::endian::little, "draw files are little-endian");
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <class T>
T get(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!in) throw ValidationError("draw file is truncated");
  return v;
}

void put_varint(std::ostream& out, std::uint32_t v) {
  do {
    std::uint8_t byte = v & 0x7f;
    v >>= 7;
    if (v) byte |= 0x80;
    out.put(static_cast<char>(byte));
  } while (v);
}

std::uint32_t get_varint(std::istream& in) {
  std::uint32_t v = 0;
  for (int shift = 0; shift < 35; shift += 7) {
    const int c = in.get();
    if (c == EOF) throw ValidationError("draw file is truncated");
    v |= static_cast<std::uint32_t>(c & 0x7f) << shift;
    if (!(c & 0x80)) return v;
  }
  throw ValidationError("draw file: malformed varint");
}

constexpr std::array<char, 8> kMagic{'F', 'C', 'A', 'M', 'D', 'R', 'W', '1'};

nlohmann::json interval_json(const Interval& iv) {
  return {{"mean", iv.mean}, {"lower", iv.lower}, {"upper", iv.upper}};
}

}  // namespace

void RunConfig::validate() const {
  mcmc().validate();
  if (!(threshold > 0.0 && threshold < 1.0)) throw ValidationError("threshold must lie in (0, 1)");
  if (chains < 1) throw ValidationError("chains must be >= 1");
  if (!(frame_rate_hz > 0.0)) throw ValidationError("frame_rate_hz must be positive");
  hyper.validate();
}

McmcConfig RunConfig::mcmc() const {
  McmcConfig m;
  m.iters = iters;
  m.burnin = burnin;
  m.thin = thin;
  m.sampler = sampler;
  return m;
}

void set_config_value(RunConfig& c, const std::string& key, const std::string& value) {
  auto num = [&] { return parse_double(value, key); };
  auto integer = [&] { return parse_int(value, key); };
  auto bnb = [&](BnbParams& p) {
    const auto parts = split_csv(value);
    if (parts.size() != 3) throw ValidationError(key + ": expected r,a,b");
    p.r = parse_double(parts[0], key);
    p.a = parse_double(parts[1], key);
    p.b = parse_double(parts[2], key);
  };
  static const std::map<std::string, double HyperParams::*> real_fields{
      {"b0", &HyperParams::b0},           {"B0", &HyperParams::B0},           {"C0", &HyperParams::C0},
      {"h1sigma", &HyperParams::h1sigma}, {"h2sigma", &HyperParams::h2sigma}, {"h1tau", &HyperParams::h1tau},
      {"h2tau", &HyperParams::h2tau},     {"h1gamma", &HyperParams::h1gamma}, {"h2gamma", &HyperParams::h2gamma},
      {"h1p", &HyperParams::h1p},         {"h2p", &HyperParams::h2p},         {"hA1", &HyperParams::hA1},
      {"hA2", &HyperParams::hA2},         {"a_alpha", &HyperParams::a_alpha}, {"b_alpha", &HyperParams::b_alpha},
      {"a_beta", &HyperParams::a_beta},   {"b_beta", &HyperParams::b_beta},
  };
  if (auto it = real_fields.find(key); it != real_fields.end()) {
    c.hyper.*(it->second) = num();
  } else if (key == "bnb_K") {
    bnb(c.hyper.bnb_K);
  } else if (key == "bnb_L") {
    bnb(c.hyper.bnb_L);
  } else if (key == "iters") {
    c.iters = static_cast<int>(integer());
  } else if (key == "burnin") {
    c.burnin = static_cast<int>(integer());
  } else if (key == "thin") {
    c.thin = static_cast<int>(integer());
  } else if (key == "seed") {
    const std::int64_t s = integer();
    if (s < 0) throw ValidationError("seed must be >= 0");
    c.seed = static_cast<std::uint64_t>(s);
  } else if (key == "threshold") {
    c.threshold = num();
  } else if (key == "chains") {
    c.chains = static_cast<int>(integer());
  } else if (key == "frame_rate_hz") {
    c.frame_rate_hz = num();
  } else if (key == "likelihood") {
    if (value == "collapsed") c.sampler.likelihood = AllocationLikelihood::collapsed;
    else if (value == "state") c.sampler.likelihood = AllocationLikelihood::state;
    else throw ValidationError("likelihood must be 'collapsed' or 'state'");
  } else if (key == "p_update") {
    if (value == "time_points") c.sampler.p_update = SpikeProbUpdate::time_points;
    else if (value == "atoms") c.sampler.p_update = SpikeProbUpdate::atoms;
    else throw ValidationError("p_update must be 'time_points' or 'atoms'");
  } else if (key == "slab") {
    if (value == "random_walk") c.sampler.slab = SlabSampler::random_walk;
    else if (value == "inverse_cdf") c.sampler.slab = SlabSampler::inverse_cdf;
    else throw ValidationError("slab must be 'random_walk' or 'inverse_cdf'");
  } else if (key == "slab_mh_steps") {
    c.sampler.slab_mh_steps = static_cast<int>(integer());
  } else if (key == "concentration_step") {
    c.sampler.concentration_step = num();
  } else if (key == "prior_only") {
    c.sampler.prior_only = parse_bool(value, key);
  } else {
    throw ValidationError("unknown config key '" + key + "'");
  }
}

RunConfig parse_config(std::istream& in, RunConfig base) {
  std::string line;
  std::size_t n = 0;
  while (getline_any(in, line)) {
    ++n;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const std::string body = trim(line);
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos) throw ValidationError(at_line(n) + "expected 'key = value'");
    const std::string key = trim(body.substr(0, eq));
    const std::string value = trim(body.substr(eq + 1));
    if (key.empty() || value.empty()) throw ValidationError(at_line(n) + "expected 'key = value'");
    try {
      set_config_value(base, key, value);
    } catch (const ValidationError& e) {
      throw ValidationError(at_line(n) + e.what());
    }
  }
  return base;
}

RunConfig load_config(const std::filesystem::path& path, RunConfig base) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open config " + path.string());
  return parse_config(in, std::move(base));
}

ScenarioSpec parse_scenario(std::istream& in) {
  ScenarioSpec spec;
  std::string line;
  std::size_t n = 0;
  auto reals = [](const std::string& v, const std::string& key) {
    std::vector<double> out;
    for (const auto& part : split_csv(v)) out.push_back(parse_double(part, key));
    return out;
  };
  while (getline_any(in, line)) {
    ++n;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const std::string body = trim(line);
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos) throw ValidationError(at_line(n) + "expected 'key = value'");
    const std::string key = trim(body.substr(0, eq));
    const std::string value = trim(body.substr(eq + 1));
    try {
      if (key == "base") {
        spec = builtin_scenario(static_cast<int>(parse_int(value, key)));
      } else if (key == "J") {
        spec.J = static_cast<int>(parse_int(value, key));
      } else if (key == "K") {
        spec.K = static_cast<int>(parse_int(value, key));
      } else if (key == "cluster_of_condition") {
        spec.cluster_of_condition.clear();
        for (const auto& part : split_csv(value)) spec.cluster_of_condition.push_back(static_cast<int>(parse_int(part, key)) - 1);
      } else if (key == "amplitude_sets") {
        spec.amplitude_sets.clear();
        std::stringstream ss(value);
        std::string set;
        while (std::getline(ss, set, ';')) spec.amplitude_sets.push_back(reals(trim(set), key));
      } else if (key == "spike_prob") {
        spec.spike_prob_per_condition = reals(value, key);
      } else if (key == "burst_prob") {
        spec.burst_prob = parse_double(value, key);
      } else if (key == "burst_window") {
        spec.burst_window = static_cast<int>(parse_int(value, key));
      } else if (key == "T_per_condition") {
        spec.T_per_condition = static_cast<int>(parse_int(value, key));
      } else if (key == "sigma2") {
        spec.sigma2 = parse_double(value, key);
      } else if (key == "tau2") {
        spec.tau2 = parse_double(value, key);
      } else if (key == "b") {
        spec.b = parse_double(value, key);
      } else if (key == "gamma") {
        spec.gamma = parse_double(value, key);
      } else if (key == "frame_rate_hz") {
        spec.frame_rate_hz = parse_double(value, key);
      } else {
        throw ValidationError("unknown scenario key '" + key + "'");
      }
    } catch (const ValidationError& e) {
      throw ValidationError(at_line(n) + e.what());
    }
  }
  spec.validate();
  return spec;
}

std::vector<RawRow> read_trace_rows(std::istream& in) {
  std::string line;
  if (!getline_any(in, line) || trim(line).empty()) throw ValidationError("empty input");
  const auto header = split_csv(line);
  const auto col = locate_columns(header, {"t", "y", "condition"});
  std::vector<RawRow> rows;
  std::size_t n = 1;
  while (getline_any(in, line)) {
    ++n;
    if (trim(line).empty()) continue;
    const auto f = split_csv(line);
    if (f.size() != header.size()) {
      throw ValidationError(at_line(n) + "expected " + std::to_string(header.size()) + " fields, got " +
                            std::to_string(f.size()));
    }
    RawRow r;
    try {
      r.time = parse_int(f[col[0]], "t");
      r.y = parse_double(f[col[1]], "y");
    } catch (const ValidationError& e) {
      throw ValidationError(at_line(n) + e.what());
    }
    r.condition = f[col[2]];
    if (r.condition.empty()) throw ValidationError(at_line(n) + "empty condition");
    rows.push_back(std::move(r));
  }
  return rows;
}

Trace read_trace_csv(const std::filesystem::path& path, double frame_rate_hz) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open " + path.string());
  return validate_trace(read_trace_rows(in), frame_rate_hz);
}

void write_trace_csv(std::ostream& out, const Trace& trace) {
  out << "t,y,condition\n" << std::setprecision(17);
  for (std::size_t t = 0; t < trace.size(); ++t) {
    out << trace.time[t] << ',' << trace.y[t] << ',' << trace.labels[static_cast<std::size_t>(trace.g[t])] << '\n';
  }
}

void write_truth_csv(std::ostream& out, const Trace& trace, const GroundTruth& truth) {
  out << "t,condition,A_true,spike_true,obs_label,dist_label\n" << std::setprecision(17);
  for (std::size_t t = 0; t < trace.size(); ++t) {
    const auto j = static_cast<std::size_t>(trace.g[t]);
    out << trace.time[t] << ',' << trace.labels[j] << ',' << truth.A_true[t] << ',' << (truth.spike_true[t] ? 1 : 0)
        << ',' << truth.obs_labels[t] << ',' << truth.dist_labels[j] << '\n';
  }
}

TruthTable read_truth_csv(std::istream& in) {
  std::string line;
  if (!getline_any(in, line) || trim(line).empty()) throw ValidationError("empty truth file");
  const auto header = split_csv(line);
  const auto col = locate_columns(header, {"t", "condition", "A_true", "spike_true", "obs_label", "dist_label"});
  TruthTable tt;
  std::size_t n = 1;
  while (getline_any(in, line)) {
    ++n;
    if (trim(line).empty()) continue;
    const auto f = split_csv(line);
    if (f.size() != header.size()) {
      throw ValidationError(at_line(n) + "expected " + std::to_string(header.size()) + " fields, got " +
                            std::to_string(f.size()));
    }
    try {
      tt.time.push_back(parse_int(f[col[0]], "t"));
      tt.condition.push_back(f[col[1]]);
      tt.A_true.push_back(parse_double(f[col[2]], "A_true"));
      tt.spike_true.push_back(parse_bool(f[col[3]], "spike_true"));
      tt.obs_labels.push_back(static_cast<int>(parse_int(f[col[4]], "obs_label")));
      tt.dist_labels.push_back(static_cast<int>(parse_int(f[col[5]], "dist_label")));
    } catch (const ValidationError& e) {
      throw ValidationError(at_line(n) + e.what());
    }
  }
  return tt;
}

void write_draws(std::ostream& out, const DrawStore& draws) {
  out.write(kMagic.data(), kMagic.size());
  put<std::uint64_t>(out, draws.T());
  put<std::uint64_t>(out, draws.J());
  put<std::uint64_t>(out, draws.size());
  for (std::size_t d = 0; d < draws.size(); ++d) {
    const ScalarDraw& s = draws.scalars(d);
    for (double v : {s.b, s.sigma2, s.tau2, s.gamma, s.p}) put(out, v);
    for (std::int32_t v : {s.K, s.Kplus, s.L, s.Lplus}) put(out, v);
    put(out, s.alpha);
    put(out, s.beta);
    const auto& a = draws.astar(d);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(a.size()));
    for (double v : a) put(out, v);
    for (auto v : draws.S(d)) put_varint(out, v);
    for (auto v : draws.M(d)) put_varint(out, v);
  }
  if (!out) throw std::runtime_error("failed writing draw file");
}

DrawStore read_draws(std::istream& in) {
  std::array<char, 8> magic{};
  in.read(magic.data(), magic.size());
  if (!in || magic != kMagic) throw ValidationError("not an fcam draw file");
  const auto T = get<std::uint64_t>(in);
  const auto J = get<std::uint64_t>(in);
  const auto D = get<std::uint64_t>(in);
  DrawStore store(T, J);
  for (std::uint64_t d = 0; d < D; ++d) {
    ScalarDraw s;
    s.b = get<double>(in);
    s.sigma2 = get<double>(in);
    s.tau2 = get<double>(in);
    s.gamma = get<double>(in);
    s.p = get<double>(in);
    s.K = get<std::int32_t>(in);
    s.Kplus = get<std::int32_t>(in);
    s.L = get<std::int32_t>(in);
    s.Lplus = get<std::int32_t>(in);
    s.alpha = get<double>(in);
    s.beta = get<double>(in);
    const auto nL = get<std::uint32_t>(in);
    if (nL > static_cast<std::uint32_t>(kMaxComponents)) throw ValidationError("draw file: atom count out of range");
    std::vector<double> a(nL);
    for (auto& v : a) v = get<double>(in);
    std::vector<DrawStore::Label> S(J), M(T);
    for (auto& v : S) v = static_cast<DrawStore::Label>(get_varint(in));
    for (auto& v : M) v = static_cast<DrawStore::Label>(get_varint(in));
    store.append(s, std::move(a), std::move(S), std::move(M));
  }
  return store;
}

void save_draws(const std::filesystem::path& path, const DrawStore& draws) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  write_draws(out, draws);
}

DrawStore load_draws(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open " + path.string());
  try {
    return read_draws(in);
  } catch (const std::exception& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
}

void write_diagnostics_csv(std::ostream& out, const std::vector<ChainDiagnostics>& chains) {
  out << "iteration,chain,K,Kplus,L,Lplus,gamma_accept,alpha_accept,beta_accept,slab_accept\n";
  out << std::setprecision(6);
  for (std::size_t c = 0; c < chains.size(); ++c) {
    for (const auto& r : chains[c].rows) {
      out << r.iteration << ',' << c + 1 << ',' << r.K << ',' << r.Kplus << ',' << r.L << ',' << r.Lplus << ','
          << r.gamma_accept << ',' << r.alpha_accept << ',' << r.beta_accept << ',' << r.slab_accept << '\n';
    }
  }
}

std::string summary_json(const PartitionSummary& s, const Trace& trace, const SummaryOptions& options,
                         std::size_t draws) {
  using nlohmann::json;
  json doc;
  doc["T"] = trace.size();
  doc["J"] = trace.J;
  doc["draws"] = draws;
  doc["threshold"] = options.threshold;
  doc["frame_rate_hz"] = trace.frame_rate_hz;
  json spikes = json::array();
  for (std::size_t t = 0; t < trace.size(); ++t) {
    if (s.spike_calls[t]) spikes.push_back({{"t", trace.time[t]}, {"prob", s.spike_prob[t]}});
  }
  doc["spikes"] = std::move(spikes);
  doc["time"] = trace.time;
  doc["spike_prob"] = s.spike_prob;
  std::vector<int> calls(s.spike_calls.begin(), s.spike_calls.end());
  doc["spike_calls"] = calls;
  doc["obs_partition"] = s.obs_partition;
  doc["conditions"] = trace.labels;
  doc["dist_partition"] = s.dist_partition;
  json amps = json::object();
  for (const auto& [label, a] : s.cluster_amplitudes) amps[std::to_string(label)] = a;
  doc["cluster_amplitudes"] = std::move(amps);
  json rates = json::object();
  for (std::size_t j = 0; j < s.firing_rate.size(); ++j) rates[trace.labels[j]] = interval_json(s.firing_rate[j]);
  doc["firing_rates"] = std::move(rates);
  doc["parameters"] = {{"b", interval_json(s.b)},
                       {"gamma", interval_json(s.gamma)},
                       {"sigma2", interval_json(s.sigma2)},
                       {"tau2", interval_json(s.tau2)},
                       {"p", interval_json(s.p)}};
  return doc.dump(2);
}

void write_plotdata_csv(std::ostream& out, const PartitionSummary& s, const Trace& trace) {
  out << "t,y,spike_prob,amplitude_label\n" << std::setprecision(17);
  for (std::size_t t = 0; t < trace.size(); ++t) {
    out << trace.time[t] << ',' << trace.y[t] << ',' << s.spike_prob[t] << ',' << s.obs_partition[t] << '\n';
  }
}

SummaryDocument parse_summary_json(std::istream& in) {
  nlohmann::json doc;
  try {
    in >> doc;
    SummaryDocument s;
    s.time = doc.at("time").get<std::vector<std::int64_t>>();
    for (int c : doc.at("spike_calls").get<std::vector<int>>()) s.spike_calls.push_back(c != 0);
    s.obs_partition = doc.at("obs_partition").get<Partition>();
    s.conditions = doc.at("conditions").get<std::vector<std::string>>();
    s.dist_partition = doc.at("dist_partition").get<Partition>();
    if (s.spike_calls.size() != s.time.size() || s.obs_partition.size() != s.time.size())
      throw ValidationError("summary: per-frame arrays differ in length");
    if (s.dist_partition.size() != s.conditions.size())
      throw ValidationError("summary: dist_partition and conditions differ in length");
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("summary: ") + e.what());
  }
}

Metrics evaluate(const SummaryDocument& s, const TruthTable& truth) {
  if (s.time.size() != truth.time.size()) {
    std::ostringstream os;
    os << "length mismatch: summary has T=" << s.time.size() << ", truth has T=" << truth.time.size();
    throw ValidationError(os.str());
  }
  Metrics m;
  m.misclassification = misclassification_rate(truth.spike_true, s.spike_calls);
  m.obs_ari = adjusted_rand_index(truth.obs_labels, s.obs_partition);
  std::map<std::string, int> truth_dist;
  for (std::size_t t = 0; t < truth.condition.size(); ++t) {
    auto [it, ins] = truth_dist.emplace(truth.condition[t], truth.dist_labels[t]);
    if (!ins && it->second != truth.dist_labels[t])
      throw ValidationError("truth: dist_label varies within condition " + truth.condition[t]);
  }
  Partition td;
  for (const auto& c : s.conditions) {
    const auto it = truth_dist.find(c);
    if (it == truth_dist.end()) throw ValidationError("truth: condition " + c + " not found");
    td.push_back(it->second);
  }
  m.dist_ari = adjusted_rand_index(td, s.dist_partition);
  return m;
}

}  // namespace fcam
