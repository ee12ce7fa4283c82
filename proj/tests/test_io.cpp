#include <doctest.h>

#include <sstream>

#include "fcam/chain.hpp"
#include "fcam/io.hpp"

using namespace fcam;

TEST_CASE("trace CSV accepts LF and CRLF") {
  std::istringstream lf("t,y,condition\n1,0.5,A\n2,0.25,B\n3,-1,A\n");
  std::istringstream crlf("t,y,condition\r\n1,0.5,A\r\n2,0.25,B\r\n3,-1,A\r\n");
  const auto a = read_trace_rows(lf);
  const auto b = read_trace_rows(crlf);
  REQUIRE(a.size() == 3);
  REQUIRE(b.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(a[i].time == b[i].time);
    CHECK(a[i].y == b[i].y);
    CHECK(a[i].condition == b[i].condition);
  }
  CHECK(b[1].condition == "B");
  std::istringstream reordered("condition,y,t\nA,0.5,1\nB,0.25,2\n");
  CHECK(read_trace_rows(reordered)[1].time == 2);
}

TEST_CASE("trace CSV errors") {
  std::istringstream ragged("t,y,condition\n1,0.5,A\n2,0.25\n");
  CHECK_THROWS_WITH_AS(read_trace_rows(ragged), doctest::Contains("line 3"), ValidationError);
  std::istringstream missing("t,y\n1,0.5\n2,0.25\n");
  CHECK_THROWS_WITH_AS(read_trace_rows(missing), doctest::Contains("condition"), ValidationError);
  std::istringstream bad("t,y,condition\n1,abc,A\n");
  CHECK_THROWS_AS(read_trace_rows(bad), ValidationError);
  std::istringstream empty("");
  CHECK_THROWS_AS(read_trace_rows(empty), ValidationError);
}

TEST_CASE("trace CSV round trip") {
  ScenarioSpec s = builtin_scenario(3);
  s.T_per_condition = 40;
  const Simulation sim = generate(s, 9);
  std::stringstream buf;
  write_trace_csv(buf, sim.trace);
  const Trace back = validate_trace(read_trace_rows(buf));
  CHECK(back.y == sim.trace.y);
  CHECK(back.g == sim.trace.g);
  CHECK(back.labels == sim.trace.labels);
}

TEST_CASE("config parsing") {
  std::istringstream in(
      "# comment\n"
      "iters = 500\n"
      "burnin=100   # trailing\n"
      "hA1 = 3\n"
      "bnb_K = 2, 5, 4\n"
      "likelihood = state\n"
      "prior_only = true\n");
  const RunConfig c = parse_config(in);
  CHECK(c.iters == 500);
  CHECK(c.burnin == 100);
  CHECK(c.thin == 2);
  CHECK(c.hyper.hA1 == 3.0);
  CHECK(c.hyper.hA2 == 8.0);
  CHECK(c.hyper.bnb_K.r == 2.0);
  CHECK(c.hyper.bnb_K.b == 4.0);
  CHECK(c.sampler.likelihood == AllocationLikelihood::state);
  CHECK(c.sampler.prior_only);
  CHECK_NOTHROW(c.validate());

  const RunConfig d;
  CHECK(d.iters == 10000);
  CHECK(d.burnin == 7000);
  CHECK(d.mcmc().retained() == 1500);
  CHECK(d.hyper.h2p == 9.0);

  std::istringstream unknown("iters = 10\nfoo = 1\n");
  CHECK_THROWS_WITH_AS(parse_config(unknown), doctest::Contains("line 2"), ValidationError);
  std::istringstream notnum("hA1 = x\n");
  CHECK_THROWS_AS(parse_config(notnum), ValidationError);
  RunConfig e;
  e.threshold = 1.5;
  CHECK_THROWS_AS(e.validate(), ValidationError);
  e = RunConfig{};
  e.burnin = e.iters;
  CHECK_THROWS_WITH_AS(e.validate(), doctest::Contains("no draws retained"), ValidationError);
}

TEST_CASE("scenario files") {
  std::istringstream in(
      "base = 2\n"
      "T_per_condition = 50\n"
      "cluster_of_condition = 1,1,2,2\n"
      "K = 2\n"
      "amplitude_sets = 0.5, 1.0; 2.0\n");
  const ScenarioSpec s = parse_scenario(in);
  CHECK(s.J == 4);
  CHECK(s.K == 2);
  CHECK(s.cluster_of_condition == std::vector<int>{0, 0, 1, 1});
  CHECK(s.amplitude_sets[1] == std::vector<double>{2.0});
  CHECK(s.T_per_condition == 50);
  CHECK_NOTHROW(s.validate());
}

TEST_CASE("draw files round trip exactly") {
  ScenarioSpec s = builtin_scenario(1);
  s.T_per_condition = 60;
  const Simulation sim = generate(s, 2);
  McmcConfig cfg;
  cfg.iters = 40;
  cfg.burnin = 10;
  cfg.thin = 3;
  const ChainResult r = run_chain(sim.trace, HyperParams{}, cfg, 3);
  std::stringstream buf;
  write_draws(buf, r.draws);
  const DrawStore back = read_draws(buf);
  CHECK(back == r.draws);

  std::string bytes;
  {
    std::stringstream b2;
    write_draws(b2, r.draws);
    bytes = b2.str();
  }
  std::istringstream trunc(bytes.substr(0, bytes.size() - 3));
  CHECK_THROWS_AS(read_draws(trunc), ValidationError);
  std::istringstream junk("not a draw file at all");
  CHECK_THROWS_AS(read_draws(junk), ValidationError);
}

namespace {

std::pair<SummaryDocument, TruthTable> perfect(const Simulation& sim) {
  PartitionSummary ps;
  ps.spike_calls = sim.truth.spike_true;
  for (bool b : ps.spike_calls) ps.spike_prob.push_back(b ? 1.0 : 0.0);
  ps.obs_partition = sim.truth.obs_labels;
  ps.dist_partition = sim.truth.dist_labels;
  ps.firing_rate.resize(static_cast<std::size_t>(sim.trace.J));
  std::istringstream js(summary_json(ps, sim.trace, SummaryOptions{}, 1));
  std::stringstream tcsv;
  write_truth_csv(tcsv, sim.trace, sim.truth);
  return {parse_summary_json(js), read_truth_csv(tcsv)};
}

}  // namespace

TEST_CASE("evaluate: perfect recovery, permutation invariance and mismatch") {
  ScenarioSpec s = builtin_scenario(1);
  s.T_per_condition = 200;
  const Simulation sim = generate(s, 4);
  auto [doc, truth] = perfect(sim);
  const Metrics m = evaluate(doc, truth);
  CHECK(m.misclassification == 0.0);
  CHECK(m.obs_ari == 1.0);
  CHECK(m.dist_ari == 1.0);

  SummaryDocument other = doc;
  for (std::size_t t = 0; t < other.obs_partition.size(); ++t) other.obs_partition[t] = t % 7 == 0 ? 1 : 2;
  const double base = evaluate(other, truth).obs_ari;
  TruthTable shuffled = truth;
  for (int& l : shuffled.obs_labels) l = 100 - l;
  for (int& l : shuffled.dist_labels) l = 50 + 3 * l;
  CHECK(evaluate(other, shuffled).obs_ari == base);
  CHECK(evaluate(doc, shuffled).dist_ari == 1.0);

  SummaryDocument shorter = doc;
  shorter.time.pop_back();
  shorter.spike_calls.pop_back();
  shorter.obs_partition.pop_back();
  const std::string n1 = std::to_string(shorter.time.size()), n2 = std::to_string(truth.time.size());
  try {
    evaluate(shorter, truth);
    FAIL("expected a length mismatch");
  } catch (const ValidationError& e) {
    const std::string what = e.what();
    CHECK(what.find(n1) != std::string::npos);
    CHECK(what.find(n2) != std::string::npos);
  }
}
