#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "fcam/chain.hpp"
#include "fcam/io.hpp"
#include "fcam/simgen.hpp"
#include "fcam/slab.hpp"
#include "fcam/state_space.hpp"
#include "fcam/summaries.hpp"

namespace py = pybind11;
using namespace fcam;

namespace {

template <typename T>
py::array_t<T> to_array(const std::vector<T>& v) {
  return py::array_t<T>(static_cast<py::ssize_t>(v.size()), v.data());
}

py::array_t<bool> to_bool_array(const std::vector<bool>& v) {
  py::array_t<bool> out(static_cast<py::ssize_t>(v.size()));
  auto m = out.mutable_unchecked<1>();
  for (std::size_t i = 0; i < v.size(); ++i) m(static_cast<py::ssize_t>(i)) = v[i];
  return out;
}

Trace make_trace(const std::vector<double>& y, const std::vector<std::string>& condition,
                 std::optional<std::vector<std::int64_t>> time, double frame_rate_hz) {
  if (condition.size() != y.size()) throw ValidationError("y and condition differ in length");
  if (time && time->size() != y.size()) throw ValidationError("y and time differ in length");
  std::vector<RawRow> rows(y.size());
  for (std::size_t t = 0; t < y.size(); ++t) {
    rows[t] = {time ? (*time)[t] : static_cast<std::int64_t>(t + 1), y[t], condition[t]};
  }
  return validate_trace(std::move(rows), frame_rate_hz);
}

RunConfig make_config(const py::dict& options) {
  RunConfig cfg;
  for (const auto& [k, v] : options) {
    std::string value;
    if (py::isinstance<py::bool_>(v)) {
      value = v.cast<bool>() ? "true" : "false";
    } else {
      value = py::str(v).cast<std::string>();
    }
    set_config_value(cfg, k.cast<std::string>(), value);
  }
  return cfg;
}

py::dict interval(const Interval& iv) {
  py::dict d;
  d["mean"] = iv.mean;
  d["lower"] = iv.lower;
  d["upper"] = iv.upper;
  return d;
}

}  // namespace

PYBIND11_MODULE(_fcam, m) {
  m.doc() = "Finite common atom model for calcium imaging spike inference";

  py::register_exception<ValidationError>(m, "ValidationError", PyExc_ValueError);
  py::register_exception<NumericalError>(m, "NumericalError", PyExc_RuntimeError);

  py::class_<Trace>(m, "Trace")
      .def(py::init(&make_trace), py::arg("y"), py::arg("condition"), py::arg("time") = py::none(),
           py::arg("frame_rate_hz") = 30.0)
      .def_property_readonly("y", [](const Trace& t) { return to_array(t.y); })
      .def_property_readonly("g", [](const Trace& t) { return to_array(t.g); })
      .def_property_readonly("time", [](const Trace& t) { return to_array(t.time); })
      .def_readonly("labels", &Trace::labels)
      .def_readonly("J", &Trace::J)
      .def_readonly("frame_rate_hz", &Trace::frame_rate_hz)
      .def("__len__", &Trace::size)
      .def("duration_seconds", &Trace::duration_seconds);

  py::class_<DrawStore>(m, "Draws")
      .def("__len__", &DrawStore::size)
      .def_property_readonly("T", &DrawStore::T)
      .def_property_readonly("J", &DrawStore::J)
      .def("amplitudes", [](const DrawStore& d) {
        py::array_t<double> out({static_cast<py::ssize_t>(d.size()), static_cast<py::ssize_t>(d.T())});
        auto a = out.mutable_unchecked<2>();
        for (std::size_t i = 0; i < d.size(); ++i) {
          for (std::size_t t = 0; t < d.T(); ++t) a(static_cast<py::ssize_t>(i), static_cast<py::ssize_t>(t)) = d.amplitude(i, t);
        }
        return out;
      }, "Per-draw amplitude of every frame, shape (D, T)")
      .def("scalar", [](const DrawStore& d, const std::string& name) {
        std::vector<double> v(d.size());
        for (std::size_t i = 0; i < d.size(); ++i) {
          const ScalarDraw& s = d.scalars(i);
          if (name == "b") v[i] = s.b;
          else if (name == "sigma2") v[i] = s.sigma2;
          else if (name == "tau2") v[i] = s.tau2;
          else if (name == "gamma") v[i] = s.gamma;
          else if (name == "p") v[i] = s.p;
          else if (name == "K") v[i] = s.K;
          else if (name == "Kplus") v[i] = s.Kplus;
          else if (name == "L") v[i] = s.L;
          else if (name == "Lplus") v[i] = s.Lplus;
          else if (name == "alpha") v[i] = s.alpha;
          else if (name == "beta") v[i] = s.beta;
          else throw ValidationError("unknown scalar '" + name + "'");
        }
        return to_array(v);
      }, py::arg("name"))
      .def("save", [](const DrawStore& d, const std::string& path) { save_draws(path, d); })
      .def_static("load", [](const std::string& path) { return load_draws(path); })
      .def("__eq__", [](const DrawStore& a, const DrawStore& b) { return a == b; });

  m.def("simulate", [](int scenario, std::uint64_t seed, std::optional<int> T_per_condition) {
    ScenarioSpec spec = builtin_scenario(scenario);
    if (T_per_condition) spec.T_per_condition = *T_per_condition;
    Simulation sim = generate(spec, seed);
    py::dict out;
    out["trace"] = sim.trace;
    out["A_true"] = to_array(sim.truth.A_true);
    out["spike_true"] = to_bool_array(sim.truth.spike_true);
    out["obs_labels"] = to_array(sim.truth.obs_labels);
    out["dist_labels"] = to_array(sim.truth.dist_labels);
    out["spike_prob"] = to_array(sim.truth.spike_prob);
    return out;
  }, py::arg("scenario"), py::arg("seed") = 1, py::arg("T_per_condition") = py::none(),
     "Generate a builtin scenario; returns the trace and its ground truth.");

  m.def("fit", [](const Trace& trace, int iters, int burnin, int thin, std::uint64_t seed, const py::dict& options) {
    RunConfig cfg = make_config(options);
    cfg.iters = iters;
    cfg.burnin = burnin;
    cfg.thin = thin;
    cfg.validate();
    py::gil_scoped_release release;
    return run_chain(trace, cfg.hyper, cfg.mcmc(), seed).draws;
  }, py::arg("trace"), py::arg("iters") = 10000, py::arg("burnin") = 7000, py::arg("thin") = 2, py::arg("seed") = 1,
     py::arg("options") = py::dict(),
     "Run one chain. `options` takes the config-file keys (hA1, likelihood, ...).");

  m.def("summarize", [](const DrawStore& draws, const Trace& trace, double threshold) {
    SummaryOptions o;
    o.threshold = threshold;
    const PartitionSummary s = summarize(draws, trace, o);
    py::dict out;
    out["spike_prob"] = to_array(s.spike_prob);
    out["spike_calls"] = to_bool_array(s.spike_calls);
    out["obs_partition"] = to_array(s.obs_partition);
    out["dist_partition"] = to_array(s.dist_partition);
    out["cluster_amplitudes"] = s.cluster_amplitudes;
    py::dict rates;
    for (std::size_t j = 0; j < s.firing_rate.size(); ++j) rates[py::str(trace.labels[j])] = interval(s.firing_rate[j]);
    out["firing_rates"] = rates;
    py::dict params;
    params["b"] = interval(s.b);
    params["gamma"] = interval(s.gamma);
    params["sigma2"] = interval(s.sigma2);
    params["tau2"] = interval(s.tau2);
    params["p"] = interval(s.p);
    out["parameters"] = params;
    return out;
  }, py::arg("draws"), py::arg("trace"), py::arg("threshold") = 0.6);

  m.def("adjusted_rand_index", [](const std::vector<int>& a, const std::vector<int>& b) {
    return adjusted_rand_index(a, b);
  });
  m.def("misclassification_rate", &misclassification_rate);
  m.def("bnb_log_pmf", py::overload_cast<long, double, double, double>(&bnb_log_pmf), py::arg("k"),
        py::arg("r") = 1.0, py::arg("a") = 4.0, py::arg("b") = 3.0);
  m.def("slab_log_marginal", [](const std::vector<double>& r, double s2, double hA1, double hA2) {
    return slab_log_marginal(r, s2, hA1, hA2);
  }, py::arg("residuals"), py::arg("s2"), py::arg("hA1") = 8.0, py::arg("hA2") = 8.0);
  m.def("kalman_forward", [](const std::vector<double>& y, const std::vector<double>& A, double b, double gamma,
                             double sigma2, double tau2, double C0) {
    const FilterCache f = kalman_forward(y, A, b, gamma, sigma2, tau2, C0);
    py::dict out;
    out["a"] = to_array(f.a);
    out["R"] = to_array(f.R);
    out["m"] = to_array(f.m);
    out["C"] = to_array(f.C);
    return out;
  }, py::arg("y"), py::arg("A"), py::arg("b"), py::arg("gamma"), py::arg("sigma2"), py::arg("tau2"),
     py::arg("C0") = 1.0);
}
