#include "csched/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <functional>
#include <iomanip>
#include <map>
#include <numeric>
#include <ostream>
#include <sstream>

#include "csched/error.hpp"

#ifdef __GLIBC__
#include <malloc.h>
#endif

#ifndef CSCHED_VERSION
#define CSCHED_VERSION "unknown"
#endif

namespace csched {

std::string code_version() { return CSCHED_VERSION; }

void tune_allocator() {
#ifdef __GLIBC__
  mallopt(M_MMAP_THRESHOLD, 32 * 1024 * 1024);
  mallopt(M_TRIM_THRESHOLD, 512 * 1024 * 1024);
#endif
}

std::string fmt6(double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6g", x);
  return buf;
}

namespace {

std::string exact(double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

long long to_int(const std::string& v) {
  char* end = nullptr;
  errno = 0;
  const long long x = std::strtoll(v.c_str(), &end, 10);
  if (v.empty() || *end != '\0' || errno != 0) throw ConfigError("expected an integer, got '" + v + "'");
  return x;
}

int to_int32(const std::string& v) {
  const long long x = to_int(v);
  if (x < INT32_MIN || x > INT32_MAX) throw ConfigError("integer out of range: " + v);
  return static_cast<int>(x);
}

std::uint64_t to_u64(const std::string& v) {
  char* end = nullptr;
  errno = 0;
  if (v.empty() || v[0] == '-') throw ConfigError("expected a nonnegative integer, got '" + v + "'");
  const unsigned long long x = std::strtoull(v.c_str(), &end, 10);
  if (*end != '\0' || errno != 0) throw ConfigError("expected a nonnegative integer, got '" + v + "'");
  return x;
}

double to_double(const std::string& v) {
  char* end = nullptr;
  const double x = std::strtod(v.c_str(), &end);
  if (v.empty() || *end != '\0') throw ConfigError("expected a number, got '" + v + "'");
  return x;
}

bool to_bool(const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError("expected true or false, got '" + v + "'");
}

std::vector<double> to_list(const std::string& v) {
  std::vector<double> out;
  if (trim(v).empty()) return out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(to_double(trim(item)));
  return out;
}

std::string from_list(const std::vector<double>& xs) {
  std::string out;
  for (std::size_t k = 0; k < xs.size(); ++k) out += (k ? "," : "") + exact(xs[k]);
  return out;
}

std::string from_bool(bool b) { return b ? "true" : "false"; }

struct KeyDef {
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

#define KEY_INT(name, field) \
  {name, {[](RunConfig& c, const std::string& v) { c.field = to_int32(v); }, [](const RunConfig& c) { return std::to_string(c.field); }}}
#define KEY_DBL(name, field) \
  {name, {[](RunConfig& c, const std::string& v) { c.field = to_double(v); }, [](const RunConfig& c) { return exact(c.field); }}}
#define KEY_BOOL(name, field) \
  {name, {[](RunConfig& c, const std::string& v) { c.field = to_bool(v); }, [](const RunConfig& c) { return from_bool(c.field); }}}
#define KEY_STR(name, field) \
  {name, {[](RunConfig& c, const std::string& v) { c.field = v; }, [](const RunConfig& c) { return c.field; }}}
#define KEY_U64(name, field) \
  {name, {[](RunConfig& c, const std::string& v) { c.field = to_u64(v); }, [](const RunConfig& c) { return std::to_string(c.field); }}}

const std::map<std::string, KeyDef>& key_table() {
  static const std::map<std::string, KeyDef> table = {
      KEY_STR("graph.kind", graph.kind),
      KEY_INT("graph.n", graph.n),
      KEY_INT("graph.d_min", graph.d_min),
      KEY_INT("graph.d_max", graph.d_max),
      KEY_U64("graph.seed", graph.seed),
      KEY_STR("graph.path", graph.path),
      KEY_DBL("graph.area_km", graph.area_km),
      {"graph.threshold_db",
       {[](RunConfig& c, const std::string& v) {
          if (v.empty()) c.graph.threshold_db.reset();
          else c.graph.threshold_db = to_double(v);
        },
        [](const RunConfig& c) { return c.graph.threshold_db ? exact(*c.graph.threshold_db) : std::string(); }}},

      KEY_STR("traffic.profile", traffic.profile),
      KEY_DBL("traffic.lambda", traffic.lambda),
      {"traffic.rho",
       {[](RunConfig& c, const std::string& v) {
          if (v.empty()) c.traffic.rho.reset();
          else c.traffic.rho = to_double(v);
        },
        [](const RunConfig& c) { return c.traffic.rho ? exact(*c.traffic.rho) : std::string(); }}},
      {"traffic.load",
       {[](RunConfig& c, const std::string& v) {
          if (v.empty()) {
            c.traffic.load.reset();
            return;
          }
          try {
            c.traffic.load = parse_load_level(v);
          } catch (const Error& e) {
            throw ConfigError(e.what());
          }
        },
        [](const RunConfig& c) { return c.traffic.load ? to_string(*c.traffic.load) : std::string(); }}},
      KEY_DBL("traffic.light", traffic.fractions.light),
      KEY_DBL("traffic.medium", traffic.fractions.medium),
      KEY_DBL("traffic.heavy", traffic.fractions.heavy),
      KEY_STR("traffic.path", traffic.path),
      {"traffic.mixture_weights",
       {[](RunConfig& c, const std::string& v) { c.traffic.mixture_weights = to_list(v); },
        [](const RunConfig& c) { return from_list(c.traffic.mixture_weights); }}},
      KEY_INT("traffic.capacity_slots", traffic.capacity_slots),
      KEY_INT("traffic.capacity_iterations", traffic.capacity_iterations),

      KEY_INT("env.num_subbands", env.num_subbands),
      KEY_INT("env.queue_truncation_threshold", env.queue_truncation_threshold),
      KEY_INT("env.obs_clip", env.obs_clip),
      KEY_INT("env.obs_quantization_step", env.obs_quantization_step),

      {"scheduler.kind",
       {[](RunConfig& c, const std::string& v) {
          try {
            c.scheduler = parse_scheduler_kind(v);
          } catch (const Error& e) {
            throw ConfigError(e.what());
          }
        },
        [](const RunConfig& c) { return to_string(c.scheduler); }}},
      KEY_INT("scheduler.qcsma_backoff_window", baseline.qcsma_backoff_window),
      KEY_DBL("scheduler.qcsma_weight_cap", baseline.qcsma_weight_cap),
      KEY_DBL("scheduler.random_p", baseline.random_p),
      KEY_INT("scheduler.mis_cap", baseline.mis_cap),
      KEY_STR("scheduler.checkpoint", checkpoint),

      KEY_DBL("train.gamma", train.gamma),
      KEY_DBL("train.gae_lambda", train.gae_lambda),
      KEY_DBL("train.clip_epsilon", train.clip_epsilon),
      KEY_DBL("train.entropy_coef", train.entropy_coef),
      KEY_INT("train.batch_size", train.batch_size),
      KEY_INT("train.epochs_per_update", train.epochs_per_update),
      KEY_INT("train.num_minibatches", train.num_minibatches),
      KEY_DBL("train.actor_lr", train.actor_lr),
      KEY_DBL("train.critic_lr", train.critic_lr),
      KEY_DBL("train.max_grad_norm", train.max_grad_norm),
      KEY_INT("train.bptt_chunk_length", train.bptt_chunk_length),
      KEY_INT("train.episode_length", train.episode_length),
      {"train.mode",
       {[](RunConfig& c, const std::string& v) {
          try {
            c.train.mode = parse_policy_mode(v);
          } catch (const Error& e) {
            throw ConfigError(e.what());
          }
        },
        [](const RunConfig& c) { return to_string(c.train.mode); }}},
      KEY_INT("train.dense_size", train.dense_size),
      KEY_INT("train.hidden_size", train.hidden_size),
      KEY_DBL("train.input_scale", train.input_scale),
      KEY_DBL("train.head_gain", train.head_gain),
      KEY_BOOL("train.normalize_advantages", train.normalize_advantages),
      KEY_BOOL("train.bootstrap_truncation", train.bootstrap_truncation),
      KEY_BOOL("train.bootstrap_time_limit", train.bootstrap_time_limit),
      KEY_BOOL("train.value_normalization", train.value_normalization),
      KEY_DBL("train.value_norm_beta", train.value_norm_beta),
      {"train.total_steps",
       {[](RunConfig& c, const std::string& v) { c.total_steps = to_int(v); },
        [](const RunConfig& c) { return std::to_string(c.total_steps); }}},
      KEY_INT("train.checkpoint_every", checkpoint_every),

      KEY_INT("eval.episodes", eval.episodes),
      KEY_INT("eval.episode_length", eval.episode_length),
      KEY_BOOL("eval.greedy", eval.greedy),
      KEY_DBL("eval.slope_threshold", eval.slope_threshold),
      KEY_DBL("eval.quartile_factor", eval.quartile_factor),

      KEY_U64("seed.master", master_seed),
      KEY_U64("seed.eval", eval_seed),
      KEY_STR("output.dir", output_dir),
      KEY_STR("mismatch.light", mismatch_checkpoints[0]),
      KEY_STR("mismatch.medium", mismatch_checkpoints[1]),
      KEY_STR("mismatch.heavy", mismatch_checkpoints[2]),
  };
  return table;
}

#undef KEY_INT
#undef KEY_DBL
#undef KEY_BOOL
#undef KEY_STR
#undef KEY_U64

void validate(const RunConfig& c) {
  auto require = [](bool ok, const std::string& what) {
    if (!ok) throw ConfigError(what);
  };
  try {
    c.env.validate();
  } catch (const ArgumentError& e) {
    throw ConfigError(std::string("env: ") + e.what());
  }
  c.train.validate();
  require(c.total_steps >= 0, "train.total_steps must be nonnegative");
  require(c.checkpoint_every >= 1, "train.checkpoint_every must be at least 1");
  require(c.eval.episodes >= 1, "eval.episodes must be at least 1");
  require(c.eval.episode_length >= 1, "eval.episode_length must be at least 1");
  require(c.eval.slope_threshold >= 0.0 && c.eval.quartile_factor > 0.0, "eval thresholds must be positive");
  require(c.traffic.lambda >= 0.0, "traffic.lambda must be nonnegative");
  require(!c.traffic.rho || *c.traffic.rho >= 0.0, "traffic.rho must be nonnegative");
  require(!(c.traffic.rho && c.traffic.load), "set traffic.rho or traffic.load, not both");
  const auto& f = c.traffic.fractions;
  require(f.light > 0.0 && f.medium > 0.0 && f.heavy > 0.0, "load fractions must be positive");
  require(c.traffic.capacity_slots >= 100 && c.traffic.capacity_iterations >= 1,
          "traffic.capacity_slots must be at least 100");
  require(c.baseline.qcsma_backoff_window >= 1 && c.baseline.mis_cap >= 1, "scheduler options out of range");
  require(c.baseline.random_p >= 0.0 && c.baseline.random_p <= 1.0, "scheduler.random_p must be in [0, 1]");
}

}  // namespace

std::vector<std::string> known_config_keys() {
  std::vector<std::string> out;
  for (const auto& [k, _] : key_table()) out.push_back(k);
  return out;
}

void apply_setting(RunConfig& config, const std::string& key, const std::string& value) {
  const auto& table = key_table();
  auto it = table.find(key);
  if (it == table.end()) throw ConfigError("unknown key '" + key + "'");
  it->second.set(config, value);
  config.entries.emplace_back(key, value);
}

RunConfig parse_run_config(const std::string& text) {
  RunConfig config;
  std::istringstream is(text);
  std::string line;
  std::size_t number = 0;
  while (std::getline(is, line)) {
    ++number;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("line " + std::to_string(number) + ": expected 'section.key = value'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    try {
      apply_setting(config, key, value);
    } catch (const ConfigError& e) {
      throw ConfigError("line " + std::to_string(number) + ": " + e.what());
    }
  }
  validate(config);
  return config;
}

RunConfig load_run_config(const std::filesystem::path& file) {
  std::ifstream is(file);
  if (!is) throw ConfigError("cannot read config " + file.string());
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_run_config(ss.str());
}

namespace {

std::string resolved_config_text(const RunConfig& config) {
  std::string out;
  for (const auto& [k, def] : key_table()) out += k + " = " + def.get(config) + "\n";
  return out;
}

std::string read_text(const std::filesystem::path& file) {
  std::ifstream is(file);
  if (!is) throw ConfigError("cannot read " + file.string());
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

}  // namespace

ConflictGraph build_graph(const GraphSpec& spec, std::optional<CellularLayout>* layout) {
  if (spec.kind == "random") return generate_random(spec.n, spec.d_min, spec.d_max, spec.seed);
  if (spec.kind == "grid24") return load_grid24();
  if (spec.kind == "file") {
    if (spec.path.empty()) throw ConfigError("graph.kind = file needs graph.path");
    try {
      return read_edge_list_file(spec.path);
    } catch (const Error& e) {
      throw ConfigError(spec.path + ": " + e.what());
    }
  }
  if (spec.kind == "cellular") {
    if (!spec.threshold_db) throw ConfigError("graph.kind = cellular needs graph.threshold_db");
    auto [g, l] = generate_cellular(spec.n, spec.area_km, *spec.threshold_db, spec.seed);
    if (layout) *layout = std::move(l);
    return g;
  }
  throw ConfigError("unknown graph.kind '" + spec.kind + "'");
}

namespace {

TrafficProfile base_profile(const TrafficSpec& spec, const ConflictGraph& g) {
  if (spec.profile == "uniform") return uniform_profile(g.num_links(), spec.lambda);
  if (spec.profile == "grid24") {
    std::optional<std::vector<double>> w;
    if (!spec.mixture_weights.empty()) w = spec.mixture_weights;
    return grid24_profile(g, 1.0, w);
  }
  if (spec.profile == "file") {
    if (spec.path.empty()) throw ConfigError("traffic.profile = file needs traffic.path");
    TrafficProfile p;
    try {
      p = read_profile_csv(read_text(spec.path));
    } catch (const ParseError& e) {
      throw ConfigError(spec.path + ": " + e.what());
    }
    if (p.num_links() != g.num_links()) throw ConfigError("traffic profile length does not match the graph");
    return p;
  }
  throw ConfigError("unknown traffic.profile '" + spec.profile + "'");
}

/// MaxWeight, or a greedy heaviest-first schedule per band when the graph is
/// too large for the exact solver.
JointAction capacity_schedule(const Environment& env, int mis_cap) {
  const auto& g = env.graph();
  const int s = env.config().num_subbands;
  if (g.num_links() <= mis_cap) return maxweight_decide(env.queue_lengths(), g, s, mis_cap);
  std::vector<int> residual = env.queue_lengths();
  JointAction out(g.num_links());
  std::vector<int> order(g.num_links());
  for (int band = 0; band < s; ++band) {
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return residual[a] > residual[b]; });
    std::vector<char> taken(g.num_links(), 0);
    for (int n : order) {
      if (residual[n] <= 0) break;
      bool free = true;
      for (int m : g.neighbors(n)) free = free && !taken[m];
      if (!free) continue;
      taken[n] = 1;
      out[n].mask |= 1U << band;
      --residual[n];
    }
  }
  return out;
}

bool stable_at(const ConflictGraph& g, const EnvConfig& env_cfg, const TrafficProfile& base, double rho, int slots,
               const EvalConfig& eval, std::uint64_t seed) {
  Environment env(g, env_cfg, scale_load(base, rho), seed);
  std::vector<double> series;
  series.reserve(slots);
  for (int t = 0; t < slots; ++t) {
    env.begin_slot();
    env.step(capacity_schedule(env, kDefaultMisCap));
    series.push_back(static_cast<double>(env.state().total_backlog()));
  }
  return classify_stability(series, eval.slope_threshold, eval.quartile_factor) == StabilityLabel::kGood;
}

}  // namespace

double capacity_proxy(const ConflictGraph& graph, const EnvConfig& env, const TrafficProfile& base,
                      const TrafficSpec& spec, const EvalConfig& eval, std::uint64_t seed) {
  double total = 0.0;
  for (double l : base.lambdas) total += l;
  if (!(total > 0.0)) throw ConfigError("named load levels need a base profile with nonzero rates");
  double lo = 0.0, hi = 1.0;
  int doublings = 0;
  while (stable_at(graph, env, base, hi, spec.capacity_slots, eval, seed)) {
    lo = hi;
    hi *= 2.0;
    if (++doublings > 30) throw CapabilityError("capacity bisection found no unstable load");
  }
  for (int k = 0; k < spec.capacity_iterations; ++k) {
    const double mid = 0.5 * (lo + hi);
    if (stable_at(graph, env, base, mid, spec.capacity_slots, eval, seed)) lo = mid;
    else hi = mid;
  }
  return lo;
}

namespace {

std::uint64_t capacity_seed(const RunConfig& c) { return derive_seed(c.master_seed, 7); }

}  // namespace

Scenario resolve_scenario(const RunConfig& config) {
  validate(config);
  Scenario s;
  s.graph = build_graph(config.graph, &s.layout);
  s.env = config.env;
  s.base = base_profile(config.traffic, s.graph);
  if (config.traffic.rho) {
    s.rho = *config.traffic.rho;
  } else if (config.traffic.load) {
    s.capacity = capacity_proxy(s.graph, s.env, s.base, config.traffic, config.eval, capacity_seed(config));
    s.rho = *s.capacity * config.traffic.fractions.at(*config.traffic.load);
  } else {
    s.rho = 1.0;
  }
  s.profile = scale_load(s.base, s.rho);
  return s;
}

TrafficProfile profile_for_load(Scenario& scenario, const RunConfig& config, LoadLevel level) {
  if (!scenario.capacity) {
    scenario.capacity =
        capacity_proxy(scenario.graph, scenario.env, scenario.base, config.traffic, config.eval, capacity_seed(config));
  }
  return scale_load(scenario.base, *scenario.capacity * config.traffic.fractions.at(level));
}

std::string to_string(StabilityLabel label) {
  switch (label) {
    case StabilityLabel::kGood:
      return "good";
    case StabilityLabel::kMixed:
      return "mixed";
    case StabilityLabel::kUnstable:
      return "unstable";
  }
  return "?";
}

StabilityLabel classify_stability(std::span<const double> series, double slope_threshold, double quartile_factor) {
  const std::size_t n = series.size();
  if (n < 100) throw InsufficientDataError("stability needs at least 100 points, got " + std::to_string(n));
  // least-squares slope over the last half
  const std::size_t start = n / 2;
  const double m = static_cast<double>(n - start);
  double sx = 0.0, sy = 0.0;
  for (std::size_t t = start; t < n; ++t) {
    sx += static_cast<double>(t);
    sy += series[t];
  }
  const double mx = sx / m, my = sy / m;
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t t = start; t < n; ++t) {
    const double dx = static_cast<double>(t) - mx;
    sxy += dx * (series[t] - my);
    sxx += dx * dx;
  }
  const double slope = sxy / sxx;

  std::vector<double> first(series.begin(), series.begin() + n / 4);
  std::sort(first.begin(), first.end());
  const std::size_t k = first.size();
  const double median = k % 2 ? first[k / 2] : 0.5 * (first[k / 2 - 1] + first[k / 2]);
  const double reference = std::max(median, 1.0);

  if (slope > slope_threshold || series[n - 1] > quartile_factor * reference) return StabilityLabel::kUnstable;
  return StabilityLabel::kGood;
}

StabilityLabel aggregate_labels(std::span<const StabilityLabel> labels) {
  bool any_good = false, any_unstable = false;
  for (auto l : labels) {
    if (l == StabilityLabel::kGood) any_good = true;
    else if (l == StabilityLabel::kUnstable) any_unstable = true;
    else return StabilityLabel::kMixed;
  }
  if (any_good && any_unstable) return StabilityLabel::kMixed;
  return any_unstable ? StabilityLabel::kUnstable : StabilityLabel::kGood;
}

EvalReport run_evaluation(const ConflictGraph& graph, const EnvConfig& env_cfg, const TrafficProfile& profile,
                          Scheduler& scheduler, const EvalConfig& eval, std::uint64_t seed) {
  const int n = graph.num_links();
  EvalReport report;
  report.scheduler = scheduler.name();
  std::vector<std::int64_t> link_dep(n, 0), link_delay(n, 0);
  std::vector<std::vector<StabilityLabel>> per_link(n);
  std::vector<StabilityLabel> episode_labels;

  for (int e = 0; e < eval.episodes; ++e) {
    Environment env(graph, env_cfg, profile, derive_seed(seed, static_cast<std::uint64_t>(e)));
    scheduler.reset(n);
    Rng rng = make_rng(seed, 1000000 + static_cast<std::uint64_t>(e));
    std::vector<double> total;
    std::vector<std::vector<double>> links(n);
    total.reserve(eval.episode_length);
    for (auto& l : links) l.reserve(eval.episode_length);
    for (int t = 0; t < eval.episode_length; ++t) {
      env.begin_slot();
      env.step(scheduler.decide(env, rng));
      const auto& st = env.state();
      total.push_back(static_cast<double>(st.total_backlog()));
      for (int k = 0; k < n; ++k) links[k].push_back(static_cast<double>(st.queue_length(k)));
    }
    const auto& st = env.state();
    const auto dr = delay_report(st);
    EpisodeResult r;
    r.mean_delay = dr.mean_delay;
    r.throughput = dr.throughput;
    r.departures = dr.departures;
    r.final_queue = st.total_backlog();
    if (eval.episode_length >= 100) {
      r.label = classify_stability(total, eval.slope_threshold, eval.quartile_factor);
      for (int k = 0; k < n; ++k) {
        per_link[k].push_back(classify_stability(links[k], eval.slope_threshold, eval.quartile_factor));
      }
    }
    for (int k = 0; k < n; ++k) {
      link_dep[k] += st.link_departures[k];
      link_delay[k] += st.link_delay_sum[k];
    }
    episode_labels.push_back(r.label);
    report.episodes.push_back(r);
  }

  std::vector<double> delays;
  double tput = 0.0;
  for (const auto& r : report.episodes) {
    if (r.mean_delay) delays.push_back(*r.mean_delay);
    tput += r.throughput;
  }
  report.throughput = tput / static_cast<double>(report.episodes.size());
  if (!delays.empty()) {
    const double mean = std::accumulate(delays.begin(), delays.end(), 0.0) / static_cast<double>(delays.size());
    double var = 0.0;
    for (double d : delays) var += (d - mean) * (d - mean);
    report.mean_delay = mean;
    report.stddev_delay = delays.size() > 1 ? std::sqrt(var / static_cast<double>(delays.size() - 1)) : 0.0;
  }
  for (int k = 0; k < n; ++k) {
    if (link_dep[k] > 0) report.link_delays.push_back(static_cast<double>(link_delay[k]) / static_cast<double>(link_dep[k]));
    else report.link_delays.push_back(std::nullopt);
    report.link_labels.push_back(per_link[k].empty() ? StabilityLabel::kGood : aggregate_labels(per_link[k]));
  }
  report.label = aggregate_labels(episode_labels);
  return report;
}

namespace {

std::string opt6(const std::optional<double>& x) { return x ? fmt6(*x) : std::string(); }

}  // namespace

void write_eval_episodes_csv(std::ostream& os, const EvalReport& report) {
  os << "episode,mean_delay,throughput,departures,final_queue,label\n";
  for (std::size_t e = 0; e < report.episodes.size(); ++e) {
    const auto& r = report.episodes[e];
    os << e << ',' << opt6(r.mean_delay) << ',' << fmt6(r.throughput) << ',' << r.departures << ',' << r.final_queue
       << ',' << to_string(r.label) << '\n';
  }
}

void write_eval_links_csv(std::ostream& os, const EvalReport& report) {
  os << "link,mean_delay,label\n";
  for (std::size_t k = 0; k < report.link_delays.size(); ++k) {
    os << k << ',' << opt6(report.link_delays[k]) << ',' << to_string(report.link_labels[k]) << '\n';
  }
}

void write_eval_summary_header(std::ostream& os) {
  os << "scheduler,episodes,mean_delay,stddev_delay,throughput,label\n";
}

void write_eval_summary_row(std::ostream& os, const EvalReport& report) {
  os << report.scheduler << ',' << report.episodes.size() << ',' << opt6(report.mean_delay) << ','
     << opt6(report.stddev_delay) << ',' << fmt6(report.throughput) << ',' << to_string(report.label) << '\n';
}

void write_train_stats_header(std::ostream& os) {
  os << "update_index,env_steps,mean_reward,mean_episode_delay,actor_loss,critic_loss,entropy,clip_fraction,"
        "mean_ratio,truncation_count\n";
}

void write_train_stats_row(std::ostream& os, const TrainStatsRow& row) {
  os << row.update_index << ',' << row.env_steps << ',' << fmt6(row.mean_reward) << ','
     << opt6(row.mean_episode_delay) << ',' << fmt6(row.stats.actor_loss) << ',' << fmt6(row.stats.critic_loss) << ','
     << fmt6(row.stats.entropy) << ',' << fmt6(row.stats.clip_fraction) << ',' << fmt6(row.stats.mean_ratio) << ','
     << row.truncation_count << '\n';
}

namespace {

std::string iso_now() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream os(path);
  if (!os) throw Error("cannot write " + path.string());
  os << text;
}

}  // namespace

TrainingResult run_training(const RunConfig& config, const Scenario& scenario, const std::filesystem::path& run_dir,
                            std::ostream* progress) {
  validate(config);
  tune_allocator();
  namespace fs = std::filesystem;
  const auto t0 = std::chrono::steady_clock::now();
  fs::create_directories(run_dir / "checkpoints");
  write_file(run_dir / "config.cfg", resolved_config_text(config));
  {
    std::ostringstream meta;
    meta << "start_time = " << iso_now() << "\n"
         << "code_version = " << code_version() << "\n"
         << "seed.master = " << config.master_seed << "\n"
         << "seed.eval = " << config.eval_seed << "\n"
         << "num_links = " << scenario.graph.num_links() << "\n"
         << "max_degree = " << scenario.graph.max_degree() << "\n"
         << "rho = " << exact(scenario.rho) << "\n"
         << "capacity_proxy = " << (scenario.capacity ? exact(*scenario.capacity) : std::string("none")) << "\n"
         << "normalize_advantages = " << from_bool(config.train.normalize_advantages) << "\n"
         << "bootstrap_truncation = " << from_bool(config.train.bootstrap_truncation) << "\n"
         << "bootstrap_time_limit = " << from_bool(config.train.bootstrap_time_limit) << "\n"
         << "value_normalization = " << from_bool(config.train.value_normalization) << "\n";
    if (config.traffic.profile == "grid24") {
      meta << "traffic_mixture = stand-in weights, not the reference arrival vector\n";
      meta << "uncovered_links = " << scenario.base.uncovered.size() << "\n";
    }
    meta << "\n# config as given\n";
    for (const auto& [k, v] : config.entries) meta << k << " = " << v << "\n";
    write_file(run_dir / "metadata.txt", meta.str());
  }
  write_file(run_dir / "graph.el", write_edge_list(scenario.graph));

  Environment env(scenario.graph, scenario.env, scenario.profile, derive_seed(config.master_seed, 11));
  RolloutCollector collector(env, config.train, derive_seed(config.master_seed, 12));
  PolicySet policy(config.train.mode, scenario.graph.num_links(), policy_spec_for(env, config.train));
  policy.initialize(derive_seed(config.master_seed, 13), config.train.head_gain);
  Rng rng = make_rng(config.master_seed, 14);

  std::ofstream stats(run_dir / "train_stats.csv");
  if (!stats) throw Error("cannot write train_stats.csv");
  write_train_stats_header(stats);

  TrainingResult result{policy, {}, run_dir / "checkpoints" / "final", 0.0};
  const std::int64_t updates = config.total_steps / config.train.batch_size;
  for (std::int64_t u = 1; u <= updates; ++u) {
    RolloutBuffer buffer = collector.collect(result.policy, config.train.batch_size);
    const auto& rs = collector.last_stats();
    TrainStatsRow row;
    row.update_index = static_cast<int>(u);
    row.env_steps = collector.total_steps();
    row.mean_reward = rs.mean_reward;
    row.mean_episode_delay = rs.mean_delay();
    row.truncation_count = rs.truncations;
    row.stats = update(result.policy, buffer, config.train, rng);
    write_train_stats_row(stats, row);
    stats.flush();
    result.rows.push_back(row);
    if (u % config.checkpoint_every == 0) {
      save_policy(result.policy, run_dir / "checkpoints" / ("update_" + std::to_string(u)));
    }
    if (progress) {
      *progress << "update " << u << "/" << updates << " steps " << row.env_steps << " reward "
                << fmt6(row.mean_reward) << " delay " << opt6(row.mean_episode_delay) << " entropy "
                << fmt6(row.stats.entropy) << "\n";
    }
  }
  save_policy(result.policy, result.final_checkpoint);
  result.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::ofstream(run_dir / "metadata.txt", std::ios::app) << "elapsed_seconds = " << fmt6(result.seconds) << "\n";
  return result;
}

std::unique_ptr<Scheduler> make_scheduler(const RunConfig& config) {
  if (config.scheduler == SchedulerKind::kMarl) {
    if (config.checkpoint.empty()) throw ConfigError("scheduler.kind = marl needs scheduler.checkpoint");
    return std::make_unique<MarlScheduler>(load_policy(config.checkpoint), config.eval.greedy);
  }
  return make_baseline(config.scheduler, config.baseline);
}

std::array<std::array<StabilityLabel, 3>, 3> run_mismatch_grid(const RunConfig& config, Scenario& scenario,
                                                                const std::array<std::string, 3>& checkpoints) {
  std::array<PolicySet, 3> policies = {load_policy(checkpoints[0]), load_policy(checkpoints[1]),
                                       load_policy(checkpoints[2])};
  const std::array<LoadLevel, 3> levels = {LoadLevel::kLight, LoadLevel::kMedium, LoadLevel::kHeavy};
  std::array<std::array<StabilityLabel, 3>, 3> grid{};
  for (int row = 0; row < 3; ++row) {
    for (int col = 0; col < 3; ++col) {
      MarlScheduler sched(policies[row], config.eval.greedy);
      auto report = run_evaluation(scenario.graph, scenario.env, profile_for_load(scenario, config, levels[col]),
                                   sched, config.eval, config.eval_seed);
      grid[row][col] = report.label;
    }
  }
  return grid;
}

void write_mismatch_csv(std::ostream& os, const std::array<std::array<StabilityLabel, 3>, 3>& grid) {
  os << "trained,light,medium,heavy\n";
  const char* names[3] = {"light", "medium", "heavy"};
  for (int row = 0; row < 3; ++row) {
    os << names[row] << ',' << to_string(grid[row][0]) << ',' << to_string(grid[row][1]) << ','
       << to_string(grid[row][2]) << '\n';
  }
}

}  // namespace csched
