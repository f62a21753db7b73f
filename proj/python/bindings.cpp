#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "csched/error.hpp"
#include "csched/harness.hpp"

namespace py = pybind11;
using namespace csched;

namespace {

std::vector<Action> to_actions(const std::vector<unsigned>& masks) {
  std::vector<Action> out;
  out.reserve(masks.size());
  for (unsigned m : masks) out.push_back(Action{m});
  return out;
}

std::vector<unsigned> to_masks(const JointAction& a) {
  std::vector<unsigned> out;
  out.reserve(a.size());
  for (const auto& x : a) out.push_back(x.mask);
  return out;
}

py::dict report_dict(const EvalReport& r) {
  py::dict d;
  d["scheduler"] = r.scheduler;
  d["mean_delay"] = r.mean_delay;
  d["stddev_delay"] = r.stddev_delay;
  d["throughput"] = r.throughput;
  d["label"] = to_string(r.label);
  py::list eps;
  for (const auto& e : r.episodes) {
    py::dict x;
    x["mean_delay"] = e.mean_delay;
    x["throughput"] = e.throughput;
    x["departures"] = e.departures;
    x["final_queue"] = e.final_queue;
    x["label"] = to_string(e.label);
    eps.append(x);
  }
  d["episodes"] = eps;
  d["link_delays"] = r.link_delays;
  std::vector<std::string> labels;
  for (auto l : r.link_labels) labels.push_back(to_string(l));
  d["link_labels"] = labels;
  return d;
}

}  // namespace

PYBIND11_MODULE(_csched, m) {
  m.doc() = "Conflict-graph packet scheduling core";
  m.attr("__version__") = code_version();

  auto base = py::register_exception<Error>(m, "Error");
  py::register_exception<ArgumentError>(m, "ArgumentError", base.ptr());
  py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
  py::register_exception<ProtocolError>(m, "ProtocolError", base.ptr());
  py::register_exception<CapabilityError>(m, "CapabilityError", base.ptr());
  py::register_exception<TrainingError>(m, "TrainingError", base.ptr());
  py::register_exception<InsufficientDataError>(m, "InsufficientDataError", base.ptr());
  py::register_exception<ParseError>(m, "ParseError", base.ptr());

  py::class_<ConflictGraph>(m, "ConflictGraph")
      .def(py::init<int, std::vector<Edge>>(), py::arg("num_links"), py::arg("edges"))
      .def_property_readonly("num_links", &ConflictGraph::num_links)
      .def_property_readonly("edges", &ConflictGraph::edges)
      .def("neighbors", &ConflictGraph::neighbors)
      .def("degree", &ConflictGraph::degree)
      .def("max_degree", &ConflictGraph::max_degree)
      .def("__eq__", [](const ConflictGraph& a, const ConflictGraph& b) { return a == b; });

  m.def("closed_neighborhood", &closed_neighborhood, py::arg("graph"), py::arg("n"));
  m.def("is_independent_set", [](const ConflictGraph& g, const std::vector<int>& vs) { return is_independent_set(g, vs); });
  m.def("max_weight_independent_set",
        [](const ConflictGraph& g, const std::vector<double>& w, int cap) { return max_weight_independent_set(g, w, cap); },
        py::arg("graph"), py::arg("weights"), py::arg("cap") = kDefaultMisCap);
  m.def("generate_random", &generate_random, py::arg("n"), py::arg("d_min") = 2, py::arg("d_max") = 4,
        py::arg("seed") = 0);
  m.def("load_grid24", py::overload_cast<>(&load_grid24));
  m.def("write_edge_list", &write_edge_list);
  m.def("read_edge_list", &read_edge_list);

  py::class_<TrafficProfile>(m, "TrafficProfile")
      .def_readonly("lambdas", &TrafficProfile::lambdas)
      .def_readonly("load_factor", &TrafficProfile::load_factor)
      .def("effective_rate", &TrafficProfile::effective_rate);
  m.def("uniform_profile", &uniform_profile, py::arg("n"), py::arg("lam"));
  m.def("scale_load", &scale_load, py::arg("profile"), py::arg("rho"));
  m.def("grid24_profile", &grid24_profile, py::arg("graph"), py::arg("rho"), py::arg("mixture_weights") = py::none());

  py::class_<EnvConfig>(m, "EnvConfig")
      .def(py::init<>())
      .def_readwrite("num_subbands", &EnvConfig::num_subbands)
      .def_readwrite("queue_truncation_threshold", &EnvConfig::queue_truncation_threshold)
      .def_readwrite("obs_clip", &EnvConfig::obs_clip)
      .def_readwrite("obs_quantization_step", &EnvConfig::obs_quantization_step);

  py::class_<Environment>(m, "Environment")
      .def(py::init<ConflictGraph, EnvConfig, TrafficProfile, std::uint64_t>(), py::arg("graph"), py::arg("config"),
           py::arg("profile"), py::arg("seed"))
      .def("reset", py::overload_cast<std::uint64_t>(&Environment::reset), py::arg("seed"))
      .def("begin_slot", &Environment::begin_slot)
      .def("observe",
           [](const Environment& e, int n) {
             auto o = e.observe(n);
             std::vector<bool> valid(o.valid.begin(), o.valid.end());
             return py::make_tuple(o.values, valid);
           })
      .def("step",
           [](Environment& e, const std::vector<unsigned>& masks) {
             auto out = e.step(to_actions(masks));
             py::dict d;
             d["rewards"] = out.rewards;
             d["successes"] = out.successes;
             d["truncated"] = out.truncated;
             return d;
           })
      .def("queue_lengths", &Environment::queue_lengths)
      .def_property_readonly("slot", [](const Environment& e) { return e.state().slot; })
      .def_property_readonly("departures", [](const Environment& e) { return e.state().departures_total; })
      .def_property_readonly("arrivals", [](const Environment& e) { return e.state().arrivals_total; })
      .def("mean_delay", [](const Environment& e) { return delay_report(e.state()).mean_delay; });

  m.def(
      "baseline_decide",
      [](const std::string& kind, const Environment& env, std::uint64_t seed) {
        auto s = make_baseline(parse_scheduler_kind(kind));
        s->reset(env.num_links());
        Rng rng = make_rng(seed);
        return to_masks(s->decide(env, rng));
      },
      py::arg("kind"), py::arg("env"), py::arg("seed") = 0, "One decision of a stateless baseline for the open slot.");

  m.def("classify_stability",
        [](const std::vector<double>& s, double slope, double factor) { return to_string(classify_stability(s, slope, factor)); },
        py::arg("series"), py::arg("slope_threshold") = 0.01, py::arg("quartile_factor") = 10.0);

  m.def("compute_returns",
        [](const std::vector<double>& r, const std::vector<int>& ends, const std::vector<double>& boot, double gamma) {
          std::vector<char> e(ends.begin(), ends.end());
          return compute_returns(r, e, boot, gamma);
        });
  m.def("compute_gae", [](const std::vector<double>& r, const std::vector<double>& v, const std::vector<int>& ends,
                          const std::vector<double>& boot, double gamma, double lam) {
    std::vector<char> e(ends.begin(), ends.end());
    return compute_gae(r, v, e, boot, gamma, lam);
  });
  m.def("clip_fn", &clip_fn, py::arg("x"), py::arg("y"), py::arg("epsilon"));
  m.def("probability_ratio", [](double a, double b) { return probability_ratio(a, b); });

  m.def(
      "evaluate",
      [](const std::string& config_text, const std::vector<std::pair<std::string, std::string>>& overrides) {
        auto cfg = parse_run_config(config_text);
        for (const auto& [k, v] : overrides) apply_setting(cfg, k, v);
        auto sc = resolve_scenario(cfg);
        auto sched = make_scheduler(cfg);
        return report_dict(run_evaluation(sc.graph, sc.env, sc.profile, *sched, cfg.eval, cfg.eval_seed));
      },
      py::arg("config_text"), py::arg("overrides") = std::vector<std::pair<std::string, std::string>>{},
      "Resolve a run configuration and evaluate its scheduler.");
  m.def(
      "train",
      [](const std::string& config_text, const std::filesystem::path& run_dir) {
        auto cfg = parse_run_config(config_text);
        auto sc = resolve_scenario(cfg);
        auto res = run_training(cfg, sc, run_dir);
        return res.final_checkpoint;
      },
      py::arg("config_text"), py::arg("run_dir"), "Train and return the final checkpoint directory.");
}
