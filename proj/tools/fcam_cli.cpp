// fcam: simulate, fit, summarize and evaluate calcium traces with the finite common atom model.

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <thread>

#include <CLI11.hpp>

#include "fcam/io.hpp"

namespace fs = std::filesystem;
using namespace fcam;

namespace {

unsigned worker_cap() {
  unsigned n = std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("FCAM_THREADS")) {
    const long v = std::strtol(env, nullptr, 10);
    if (v >= 1) n = static_cast<unsigned>(v);
  }
  return n;
}

std::ofstream open_out(const fs::path& path, bool binary = false) {
  std::ofstream out(path, binary ? std::ios::binary | std::ios::trunc : std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  return out;
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw std::runtime_error("cannot create output directory " + dir.string());
}

struct SimulateArgs {
  int scenario = 1;
  std::string spec;
  std::uint64_t seed = 1;
  int T_per_condition = 0;
  std::string out = ".";
};

void run_simulate(const SimulateArgs& a) {
  ScenarioSpec spec;
  if (!a.spec.empty()) {
    std::ifstream in(a.spec);
    if (!in) throw ValidationError("cannot open scenario file " + a.spec);
    spec = parse_scenario(in);
  } else {
    spec = builtin_scenario(a.scenario);
  }
  if (a.T_per_condition > 0) spec.T_per_condition = a.T_per_condition;
  const Simulation sim = generate(spec, a.seed);
  ensure_dir(a.out);
  {
    auto out = open_out(fs::path(a.out) / "trace.csv");
    write_trace_csv(out, sim.trace);
  }
  {
    auto out = open_out(fs::path(a.out) / "truth.csv");
    write_truth_csv(out, sim.trace, sim.truth);
  }
  std::size_t spikes = 0;
  for (bool s : sim.truth.spike_true) spikes += s ? 1 : 0;
  std::cout << "T=" << sim.trace.size() << " J=" << sim.trace.J << " spikes=" << spikes << '\n';
}

struct FitArgs {
  std::string input;
  std::string config;
  std::string out = ".";
  std::vector<std::string> set;
  int chains = 0;
  std::uint64_t seed = 0;
  bool seed_given = false;
  int iters = -1, burnin = -1, thin = -1;
  double frame_rate = 0.0;
};

RunConfig resolve_config(const FitArgs& a) {
  RunConfig cfg = a.config.empty() ? RunConfig{} : load_config(a.config);
  for (const auto& kv : a.set) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ValidationError("--set expects key=value, got '" + kv + "'");
    set_config_value(cfg, kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (a.chains > 0) cfg.chains = a.chains;
  if (a.seed_given) cfg.seed = a.seed;
  if (a.iters >= 0) cfg.iters = a.iters;
  if (a.burnin >= 0) cfg.burnin = a.burnin;
  if (a.thin >= 0) cfg.thin = a.thin;
  if (a.frame_rate > 0.0) cfg.frame_rate_hz = a.frame_rate;
  cfg.validate();
  return cfg;
}

void run_fit(const FitArgs& a) {
  const RunConfig cfg = resolve_config(a);
  const Trace trace = read_trace_csv(a.input, cfg.frame_rate_hz);
  ensure_dir(a.out);
  for (const auto& w : cfg.hyper.validate()) std::cerr << "warning: " << w << '\n';

  const unsigned cap = worker_cap();
  const auto chains = static_cast<std::size_t>(cfg.chains);
  const unsigned workers = std::min<unsigned>(cap, static_cast<unsigned>(chains));
  McmcConfig mcmc = cfg.mcmc();
  mcmc.sampler.threads = std::max(1u, cap / workers);

  std::vector<ChainDiagnostics> diags(chains);
  std::vector<std::exception_ptr> errors(chains);
  std::mutex io_mutex;
  auto run_one = [&](std::size_t c) {
    try {
      ChainResult r = run_chain(trace, cfg.hyper, mcmc, derive_seed(cfg.seed, c));
      save_draws(fs::path(a.out) / ("chain_" + std::to_string(c + 1) + ".fcd"), r.draws);
      std::lock_guard<std::mutex> lock(io_mutex);
      for (const auto& w : r.diagnostics.warnings) std::cerr << "chain " << c + 1 << ": warning: " << w << '\n';
      std::cout << "chain " << c + 1 << ": " << r.draws.size() << " draws\n";
      diags[c] = std::move(r.diagnostics);
    } catch (...) {
      errors[c] = std::current_exception();
    }
  };
  std::vector<std::thread> pool;
  std::size_t next = 0;
  std::mutex next_mutex;
  for (unsigned w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (;;) {
        std::size_t c;
        {
          std::lock_guard<std::mutex> lock(next_mutex);
          if (next >= chains) return;
          c = next++;
        }
        run_one(c);
      }
    });
  }
  for (auto& th : pool) th.join();
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  auto out = open_out(fs::path(a.out) / "diagnostics.csv");
  write_diagnostics_csv(out, diags);
}

struct SummarizeArgs {
  std::vector<std::string> draws;
  std::string trace;
  std::string out = ".";
  double threshold = 0.6;
  double frame_rate = 30.0;
  std::size_t max_candidates = 100;
};

std::vector<fs::path> draw_files(const std::vector<std::string>& inputs) {
  std::vector<fs::path> files;
  for (const auto& in : inputs) {
    const fs::path p(in);
    if (fs::is_directory(p)) {
      std::vector<fs::path> found;
      for (const auto& e : fs::directory_iterator(p)) {
        if (e.is_regular_file() && e.path().extension() == ".fcd") found.push_back(e.path());
      }
      std::sort(found.begin(), found.end());
      files.insert(files.end(), found.begin(), found.end());
    } else if (fs::exists(p)) {
      files.push_back(p);
    } else {
      throw ValidationError("no such draw file or directory: " + in);
    }
  }
  if (files.empty()) throw ValidationError("no draws found");
  return files;
}

void run_summarize(const SummarizeArgs& a) {
  const auto files = draw_files(a.draws);
  std::vector<DrawStore> stores(files.size());
  std::vector<std::exception_ptr> errors(files.size());
  {
    std::vector<std::thread> pool;
    const unsigned workers = std::min<unsigned>(worker_cap(), static_cast<unsigned>(files.size()));
    for (unsigned w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        for (std::size_t i = w; i < files.size(); i += workers) {
          try {
            stores[i] = load_draws(files[i]);
          } catch (...) {
            errors[i] = std::current_exception();
          }
        }
      });
    }
    for (auto& th : pool) th.join();
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  const DrawStore draws = merge_draws(stores);
  if (draws.empty()) throw ValidationError("no draws found");
  const Trace trace = read_trace_csv(a.trace, a.frame_rate);
  if (trace.size() != draws.T()) {
    throw ValidationError("trace has T=" + std::to_string(trace.size()) + " but draws have T=" +
                          std::to_string(draws.T()));
  }
  SummaryOptions opt;
  opt.threshold = a.threshold;
  opt.max_candidates = a.max_candidates;
  opt.threads = worker_cap();
  const PartitionSummary s = summarize(draws, trace, opt);
  ensure_dir(a.out);
  {
    auto out = open_out(fs::path(a.out) / "summary.json");
    out << summary_json(s, trace, opt, draws.size()) << '\n';
  }
  {
    auto out = open_out(fs::path(a.out) / "plotdata.csv");
    write_plotdata_csv(out, s, trace);
  }
  std::size_t calls = 0;
  for (bool c : s.spike_calls) calls += c ? 1 : 0;
  std::cout << "draws=" << draws.size() << " spikes=" << calls << '\n';
}

struct EvaluateArgs {
  std::string summary;
  std::string truth;
  std::string out;
};

void run_evaluate(const EvaluateArgs& a) {
  std::ifstream sin(a.summary);
  if (!sin) throw ValidationError("cannot open " + a.summary);
  std::ifstream tin(a.truth);
  if (!tin) throw ValidationError("cannot open " + a.truth);
  const Metrics m = evaluate(parse_summary_json(sin), read_truth_csv(tin));
  std::ostringstream os;
  os << "misclassification," << m.misclassification << "\nobs_ari," << m.obs_ari << "\ndist_ari," << m.dist_ari
     << '\n';
  std::cout << os.str();
  if (!a.out.empty()) {
    auto out = open_out(a.out);
    out << "metric,value\n" << os.str();
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Finite common atom model for calcium-imaging spike deconvolution"};
  app.require_subcommand(1);

  SimulateArgs sim;
  auto* simulate = app.add_subcommand("simulate", "Generate a synthetic trace and its ground truth");
  simulate->add_option("--scenario", sim.scenario, "Builtin scenario id (1, 2 or 3)");
  simulate->add_option("--spec", sim.spec, "Scenario file (key = value)");
  simulate->add_option("--seed", sim.seed, "Random seed");
  simulate->add_option("--T-per-condition", sim.T_per_condition, "Frames per condition");
  simulate->add_option("--out", sim.out, "Output directory");

  FitArgs fit;
  auto* fitc = app.add_subcommand("fit", "Run the MCMC sampler on a trace");
  fitc->add_option("--input,-i", fit.input, "Trace CSV (t,y,condition)")->required();
  fitc->add_option("--config,-c", fit.config, "Config file (key = value)");
  fitc->add_option("--set", fit.set, "Config override key=value (repeatable)");
  fitc->add_option("--out,-o", fit.out, "Output directory");
  fitc->add_option("--chains", fit.chains, "Number of independent chains");
  auto* seed_opt = fitc->add_option("--seed", fit.seed, "Random seed");
  fitc->add_option("--iters", fit.iters, "Total iterations");
  fitc->add_option("--burnin", fit.burnin, "Burn-in iterations");
  fitc->add_option("--thin", fit.thin, "Keep one draw every `thin` iterations");
  fitc->add_option("--frame-rate", fit.frame_rate, "Frame rate in Hz");

  SummarizeArgs sum;
  auto* sumc = app.add_subcommand("summarize", "Summarize posterior draws");
  sumc->add_option("--draws,-d", sum.draws, "Draw files or directories")->required();
  sumc->add_option("--trace,-t", sum.trace, "Trace CSV the draws were fitted on")->required();
  sumc->add_option("--out,-o", sum.out, "Output directory");
  sumc->add_option("--threshold", sum.threshold, "Spike-call threshold on the posterior probability");
  sumc->add_option("--frame-rate", sum.frame_rate, "Frame rate in Hz");
  sumc->add_option("--max-candidates", sum.max_candidates, "Sampled partitions considered for the minVI estimate");

  EvaluateArgs ev;
  auto* evc = app.add_subcommand("evaluate", "Score a summary against ground truth");
  evc->add_option("--summary,-s", ev.summary, "summary.json from summarize")->required();
  evc->add_option("--truth", ev.truth, "truth.csv from simulate")->required();
  evc->add_option("--out,-o", ev.out, "Metrics CSV");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (*simulate) run_simulate(sim);
    if (*fitc) {
      fit.seed_given = seed_opt->count() > 0;
      run_fit(fit);
    }
    if (*sumc) run_summarize(sum);
    if (*evc) run_evaluate(ev);
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
