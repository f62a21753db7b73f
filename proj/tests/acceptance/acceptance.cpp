// End-to-end acceptance checks. Prints one line per criterion and exits
// nonzero if any fails.
//
//   acceptance [--work DIR] [--only 1,2,...] [--reuse]
//
// --reuse skips a training run whose directory already holds a final
// checkpoint and an identical config.cfg.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "csched/env.hpp"
#include "csched/error.hpp"
#include "csched/graph.hpp"
#include "csched/harness.hpp"
#include "csched/mappo.hpp"
#include "csched/nn.hpp"
#include "csched/schedulers.hpp"
#include "csched/traffic.hpp"
#include "oracles.hpp"

using namespace csched;
namespace fs = std::filesystem;
using csched::testing::brute_force_mis;
using csched::testing::random_gnp;
using csched::testing::set_weight;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string num(double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.4g", x);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

fs::path g_work;
fs::path g_configs;
bool g_reuse = false;

std::string read_file(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

// ---------------------------------------------------------------- 1

// Independent recomputation of one slot: a packet goes out on band h iff the
// link attempts h and no conflicting link attempts h, capped by the packets
// present after arrivals.
struct SlotOracle {
  std::vector<int> successes;
  std::vector<int> queues;
  std::vector<double> rewards;
};

SlotOracle oracle_slot(const ConflictGraph& g, int bands, const std::vector<int>& q, const std::vector<int>& k,
                       const JointAction& a) {
  const int n = g.num_links();
  std::vector<std::vector<char>> adj(n, std::vector<char>(n, 0));
  for (const auto& [i, j] : g.edges()) adj[i][j] = adj[j][i] = 1;
  SlotOracle o;
  o.successes.assign(n, 0);
  o.queues.assign(n, 0);
  for (int i = 0; i < n; ++i) {
    int clear = 0;
    for (int h = 0; h < bands; ++h) {
      if (!((a[i].mask >> h) & 1U)) continue;
      bool alone = true;
      for (int j = 0; j < n; ++j) {
        if (adj[i][j] && ((a[j].mask >> h) & 1U)) alone = false;
      }
      clear += alone ? 1 : 0;
    }
    o.successes[i] = std::min(clear, q[i] + k[i]);
    o.queues[i] = q[i] + k[i] - o.successes[i];
  }
  o.rewards.assign(n, 0.0);
  for (int i = 0; i < n; ++i) {
    double r = -o.queues[i];
    for (int j = 0; j < n; ++j) {
      if (adj[i][j]) r -= o.queues[j];
    }
    o.rewards[i] = r;
  }
  return o;
}

Outcome criterion_env_oracle() {
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng = make_rng(101);
  int steps = 0, mismatches = 0;
  while (steps < 10000) {
    const int n = 2 + static_cast<int>(uniform_index(rng, 19));
    ConflictGraph g = (steps / 50) % 2 == 0 ? random_gnp(n, 0.1 + 0.5 * uniform01(rng), rng)
                                           : generate_random(std::max(n, 6), 2, 4, rng());
    EnvConfig cfg;
    cfg.num_subbands = 1 + static_cast<int>(uniform_index(rng, 3));
    const int links = g.num_links();
    TrafficProfile p = uniform_profile(links, 2.0 * uniform01(rng));
    EnvState s = reset(g, cfg, p);
    for (int t = 0; t < 50; ++t, ++steps) {
      // random backlog before the slot
      if (t % 10 == 0) {
        for (int i = 0; i < links; ++i) {
          const int q = static_cast<int>(uniform_index(rng, 8));
          s.arrivals_total -= static_cast<std::int64_t>(s.queues[i].size());
          s.queues[i].assign(q, s.slot);
          s.arrivals_total += q;
        }
      }
      std::vector<int> before(links);
      for (int i = 0; i < links; ++i) before[i] = s.queue_length(i);
      const auto k = begin_slot(s, p, rng);
      JointAction a(links);
      for (auto& x : a) x.mask = static_cast<std::uint32_t>(uniform_index(rng, 1U << cfg.num_subbands));
      const auto out = step(s, g, cfg, a);
      const auto want = oracle_slot(g, cfg.num_subbands, before, k, a);
      bool ok = out.successes == want.successes && out.rewards == want.rewards;
      for (int i = 0; i < links; ++i) ok = ok && s.queue_length(i) == want.queues[i];
      if (!ok) ++mismatches;
    }
  }
  const double secs = seconds_since(t0);
  return {mismatches == 0 && secs < 10.0,
          std::to_string(steps) + " steps, " + std::to_string(mismatches) + " mismatches"};
}

// ---------------------------------------------------------------- 2

Outcome criterion_conservation() {
  std::vector<std::pair<std::string, ConflictGraph>> graphs = {{"random20", generate_random(20, 2, 4, 1)},
                                                               {"grid24", load_grid24()}};
  std::int64_t slots = 0, violations = 0;
  for (const auto& [name, g] : graphs) {
    for (int bands : {1, 3}) {
      EnvConfig cfg;
      cfg.num_subbands = bands;
      std::vector<std::unique_ptr<Scheduler>> scheds;
      scheds.push_back(make_baseline(SchedulerKind::kLlq));
      scheds.push_back(make_baseline(SchedulerKind::kMaxWeight));
      scheds.push_back(make_baseline(SchedulerKind::kRandom));
      if (bands == 1) scheds.push_back(make_baseline(SchedulerKind::kQcsma));
      {
        TrainConfig tc;
        tc.dense_size = 8;
        tc.hidden_size = 8;
        Environment probe(g, cfg, uniform_profile(g.num_links(), 0.1), 0);
        PolicySet ps(PolicyMode::kShared, g.num_links(), policy_spec_for(probe, tc));
        ps.initialize(5, 1.0);
        scheds.push_back(std::make_unique<MarlScheduler>(ps, false));
      }
      for (auto& sched : scheds) {
        for (int ep = 0; ep < 3; ++ep) {
          Environment env(g, cfg, uniform_profile(g.num_links(), 0.05 * bands * (ep + 1)), derive_seed(77, ep));
          sched->reset(g.num_links());
          Rng rng = make_rng(78, ep);
          for (int t = 0; t < 2000; ++t) {
            env.begin_slot();
            const auto& st0 = env.state();
            if (st0.arrivals_total != st0.departures_total + st0.total_backlog()) ++violations;
            env.step(sched->decide(env, rng));
            const auto& st = env.state();
            std::int64_t backlog = 0;
            for (int i = 0; i < g.num_links(); ++i) backlog += st.queue_length(i);
            if (st.arrivals_total != st.departures_total + backlog) ++violations;
            ++slots;
          }
        }
      }
    }
  }
  return {violations == 0, std::to_string(slots) + " slots, " + std::to_string(violations) + " violations"};
}

// ---------------------------------------------------------------- 3

bool band_independent(const ConflictGraph& g, const JointAction& a, int band) {
  std::vector<int> on;
  for (int i = 0; i < g.num_links(); ++i) {
    if ((a[i].mask >> band) & 1U) on.push_back(i);
  }
  for (std::size_t x = 0; x < on.size(); ++x) {
    for (std::size_t y = x + 1; y < on.size(); ++y) {
      for (const auto& [i, j] : g.edges()) {
        if ((i == on[x] && j == on[y]) || (i == on[y] && j == on[x])) return false;
      }
    }
  }
  return true;
}

Outcome criterion_independent_sets() {
  const auto g = load_grid24();
  const int n = g.num_links();
  int bad_qcsma = 0, bad_mw = 0, llq_collisions = 0;
  {
    Environment env(g, EnvConfig{}, uniform_profile(n, 0.15), 31);
    QcsmaState st = QcsmaState::initial(n);
    Rng rng = make_rng(32);
    for (int t = 0; t < 10000; ++t) {
      env.begin_slot();
      auto a = qcsma_decide(st, env.queue_lengths(), g, 1, rng);
      if (!band_independent(g, a, 0)) ++bad_qcsma;
      env.step(a);
    }
  }
  for (int bands : {1, 3}) {
    EnvConfig cfg;
    cfg.num_subbands = bands;
    Environment env(g, cfg, uniform_profile(n, 0.15 * bands), 33);
    for (int t = 0; t < 10000; ++t) {
      env.begin_slot();
      auto a = maxweight_decide(env.queue_lengths(), g, bands);
      for (int h = 0; h < bands; ++h) {
        if (!band_independent(g, a, h)) ++bad_mw;
      }
      env.step(a);
    }
  }
  {
    // distinct backlogs each slot, so no coin flips are involved
    Rng rng = make_rng(34);
    for (int t = 0; t < 10000; ++t) {
      std::vector<int> q(n);
      std::iota(q.begin(), q.end(), 1);
      for (int i = n - 1; i > 0; --i) std::swap(q[i], q[uniform_index(rng, i + 1)]);
      const int bands = 1 + t % 3;
      auto a = llq_decide(q, g, bands, rng);
      for (int h = 0; h < bands; ++h) {
        if (!band_independent(g, a, h)) ++llq_collisions;
      }
    }
  }
  return {bad_qcsma == 0 && bad_mw == 0 && llq_collisions == 0,
          "qcsma " + std::to_string(bad_qcsma) + ", maxweight " + std::to_string(bad_mw) + " dependent schedules; llq " +
              std::to_string(llq_collisions) + " collisions"};
}

// ---------------------------------------------------------------- 4

Outcome criterion_mis_oracle() {
  Rng rng = make_rng(41);
  int mismatches = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const int n = 1 + static_cast<int>(uniform_index(rng, 16));
    auto g = random_gnp(n, 0.1 + 0.6 * uniform01(rng), rng);
    std::vector<double> w(n);
    for (auto& x : w) x = trial % 4 == 0 ? static_cast<double>(1 + uniform_index(rng, 4)) : 0.01 + uniform01(rng);
    const auto got = max_weight_independent_set(g, w);
    const auto want = brute_force_mis(g, w);
    if (got != want || set_weight(got, w) != set_weight(want, w)) ++mismatches;
  }
  return {mismatches == 0, "200 graphs, " + std::to_string(mismatches) + " mismatches"};
}

// ---------------------------------------------------------------- 5

double rel_error(const std::vector<double>& analytic, const std::vector<double>& numeric) {
  double diff = 0.0, norm = 0.0;
  for (std::size_t k = 0; k < analytic.size(); ++k) {
    diff += (analytic[k] - numeric[k]) * (analytic[k] - numeric[k]);
    norm += numeric[k] * numeric[k];
  }
  return std::sqrt(diff) / std::max(std::sqrt(norm), 1e-12);
}

std::vector<std::vector<double>> random_table(int rows, int cols, double lo, double hi, Rng& rng) {
  std::vector<std::vector<double>> out(rows, std::vector<double>(cols));
  for (auto& r : out) {
    for (auto& x : r) x = lo + (hi - lo) * uniform01(rng);
  }
  return out;
}

TrainConfig toy_config() {
  TrainConfig c;
  c.dense_size = 6;
  c.hidden_size = 5;
  c.bptt_chunk_length = 8;
  c.batch_size = 8;
  c.episode_length = 50;
  c.entropy_coef = 0.05;
  return c;
}

Environment toy_env(std::uint64_t seed, int bands) {
  auto g = generate_random(6, 2, 3, seed);
  EnvConfig ec;
  ec.num_subbands = bands;
  return Environment(g, ec, uniform_profile(6, 0.6), seed);
}

Outcome criterion_gradients() {
  const auto t0 = std::chrono::steady_clock::now();
  double worst = 0.0;
  const double h = 1e-5;
  for (int trial = 0; trial < 3; ++trial) {
    for (int bands : {1, 2}) {
      auto c = toy_config();
      auto env = toy_env(50 + trial, bands);
      PolicySet p(c.mode, env.num_links(), policy_spec_for(env, c));
      p.initialize(60 + trial, 1.0);
      RolloutCollector col(env, c, 70 + trial);
      col.collect(p, 8);
      auto buf = col.collect(p, 8);
      Rng rng = make_rng(80, trial);
      for (auto& a : buf.agents) {
        for (auto& lp : a.log_probs) lp += 0.6 * (uniform01(rng) - 0.5);
        for (auto& v : a.raw_values) v += 0.2 * (uniform01(rng) - 0.5);
      }
      const auto adv = random_table(6, 8, -1.0, 1.0, rng);
      const auto targets = random_table(6, 8, -1.0, 1.0, rng);
      std::vector<int> all(6);
      std::iota(all.begin(), all.end(), 0);
      const auto chunks = make_chunks(buf, all);
      auto& m = p.member(0);

      m.actor_params.zero_grad();
      actor_objective(m.actor, m.actor_params, buf, chunks, adv, c, true);
      std::vector<double> analytic(m.actor_params.size()), numeric(m.actor_params.size());
      for (std::size_t k = 0; k < analytic.size(); ++k) analytic[k] = -m.actor_params.grads[k];
      for (std::size_t k = 0; k < numeric.size(); ++k) {
        const double saved = m.actor_params.values[k];
        m.actor_params.values[k] = saved + h;
        const double up = actor_objective(m.actor, m.actor_params, buf, chunks, adv, c, false).objective;
        m.actor_params.values[k] = saved - h;
        const double down = actor_objective(m.actor, m.actor_params, buf, chunks, adv, c, false).objective;
        m.actor_params.values[k] = saved;
        numeric[k] = (up - down) / (2 * h);
      }
      worst = std::max(worst, rel_error(analytic, numeric));

      m.critic_params.zero_grad();
      critic_objective(m.critic, m.critic_params, buf, chunks, targets, c, true);
      std::vector<double> cnum(m.critic_params.size());
      for (std::size_t k = 0; k < cnum.size(); ++k) {
        const double saved = m.critic_params.values[k];
        m.critic_params.values[k] = saved + h;
        const double up = critic_objective(m.critic, m.critic_params, buf, chunks, targets, c, false);
        m.critic_params.values[k] = saved - h;
        const double down = critic_objective(m.critic, m.critic_params, buf, chunks, targets, c, false);
        m.critic_params.values[k] = saved;
        cnum[k] = (up - down) / (2 * h);
      }
      worst = std::max(worst, rel_error({m.critic_params.grads.begin(), m.critic_params.grads.end()}, cnum));
    }
  }
  const double secs = seconds_since(t0);
  return {worst < 1e-4 && secs < 30.0, "worst relative error " + num(worst)};
}

// ---------------------------------------------------------------- 6

// Discounted reward-to-go restarting after each end flag.
std::vector<double> oracle_returns(const std::vector<double>& r, const std::vector<char>& ends, double gamma) {
  std::vector<double> g(r.size());
  for (std::size_t t = 0; t < r.size(); ++t) {
    double acc = 0.0, disc = 1.0;
    for (std::size_t u = t; u < r.size(); ++u) {
      acc += disc * r[u];
      disc *= gamma;
      if (ends[u]) break;
    }
    g[t] = acc;
  }
  return g;
}

Outcome criterion_ppo_identities() {
  bool ok = true;
  std::ostringstream why;
  double worst_surrogate = 0.0, worst_ratio = 0.0;
  for (int bands : {1, 2}) {
    auto c = toy_config();
    c.batch_size = 40;
    auto env = toy_env(90, bands);
    PolicySet p(c.mode, env.num_links(), policy_spec_for(env, c));
    p.initialize(91, 1.0);
    RolloutCollector col(env, c, 92);
    col.collect(p, 16);
    auto buf = col.collect(p, 40);
    Rng rng = make_rng(93);
    const auto adv = random_table(6, 40, -1.0, 1.0, rng);
    std::vector<int> all(6);
    std::iota(all.begin(), all.end(), 0);
    const auto chunks = make_chunks(buf, all);
    auto& m = p.member(0);
    const auto terms = actor_objective(m.actor, m.actor_params, buf, chunks, adv, c, false);
    double mean_adv = 0.0;
    for (const auto& row : adv) mean_adv += std::accumulate(row.begin(), row.end(), 0.0);
    mean_adv /= 240.0;
    worst_surrogate = std::max(worst_surrogate, std::abs(terms.surrogate - mean_adv));
    worst_ratio = std::max({worst_ratio, std::abs(terms.mean_ratio - 1.0), terms.max_abs_log_ratio});
  }
  if (worst_surrogate > 1e-12 || worst_ratio > 1e-12) {
    ok = false;
    why << "surrogate off by " << num(worst_surrogate) << ", ratio off by " << num(worst_ratio) << "; ";
  }
  if (clip_fn(0.5, 1.0, 0.2) != 0.8 || clip_fn(1.5, 1.0, 0.2) != 1.2) {
    ok = false;
    why << "clip spot values wrong; ";
  }
  Rng rng = make_rng(94);
  double worst_gae = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    const int len = 100;
    std::vector<double> r(len), zero(len, 0.0), boot(len, 0.0);
    std::vector<char> ends(len, 0);
    for (int t = 0; t < len; ++t) {
      r[t] = -10.0 * uniform01(rng);
      ends[t] = uniform01(rng) < 0.03 ? 1 : 0;
    }
    ends[len - 1] = 1;
    const double gamma = 0.9 + 0.099 * uniform01(rng);
    const auto a = compute_gae(r, zero, ends, boot, gamma, 1.0);
    const auto g = oracle_returns(r, ends, gamma);
    for (int t = 0; t < len; ++t) worst_gae = std::max(worst_gae, std::abs(a[t] - g[t]));
  }
  if (worst_gae > 1e-10) {
    ok = false;
    why << "GAE off by " << num(worst_gae) << "; ";
  }
  why << "ratio dev " << num(worst_ratio) << ", surrogate dev " << num(worst_surrogate) << ", GAE dev "
      << num(worst_gae);
  return {ok, why.str()};
}

// ---------------------------------------------------------------- 7

Outcome criterion_poisson() {
  bool ok = true;
  std::ostringstream why;
  Rng rng = make_rng(7);
  for (double lam : {0.2, 0.5, 1.0}) {
    const int samples = 1000000;
    double sum = 0.0, sum_sq = 0.0;
    for (int i = 0; i < samples; ++i) {
      const double k = sample_poisson(lam, rng);
      sum += k;
      sum_sq += k * k;
    }
    const double mean = sum / samples;
    const double var = (sum_sq - samples * mean * mean) / (samples - 1);
    const bool good = std::abs(mean - lam) <= 0.01 * lam && std::abs(var - lam) <= 0.01 * lam;
    ok = ok && good;
    why << (lam == 0.2 ? "" : "; ") << "lambda " << lam << ": mean " << num(mean) << " var " << num(var);
  }
  return {ok, why.str()};
}

// ---------------------------------------------------------------- 8-10

// Trains the config unless --reuse finds the same run already finished.
fs::path train_config(const std::string& name, const RunConfig& cfg, double* seconds) {
  // criteria 8 and 10 share the light run
  static std::map<std::string, fs::path> trained;
  if (auto it = trained.find(name); it != trained.end()) {
    if (seconds) *seconds = 0.0;
    return it->second;
  }
  const fs::path dir = g_work / name;
  auto scenario = resolve_scenario(cfg);
  const fs::path final_dir = dir / "checkpoints" / "final";
  if (g_reuse && fs::exists(final_dir) && fs::exists(dir / "config.cfg")) {
    // compare against a fresh rendering of the same config
    const fs::path probe = g_work / (name + ".probe");
    fs::remove_all(probe);
    RunConfig zero = cfg;
    zero.total_steps = 0;
    run_training(zero, scenario, probe);
    std::string text = read_file(probe / "config.cfg");
    const std::string zero_line = "train.total_steps = 0\n";
    if (auto at = text.find(zero_line); at != std::string::npos)
      text.replace(at, zero_line.size(), "train.total_steps = " + std::to_string(cfg.total_steps) + "\n");
    const bool same = text == read_file(dir / "config.cfg");
    fs::remove_all(probe);
    if (same) {
      std::cerr << "[" << name << "] reusing " << final_dir.string() << "\n";
      if (seconds) *seconds = 0.0;
      trained[name] = final_dir;
      return final_dir;
    }
  }
  fs::remove_all(dir);
  std::cerr << "[" << name << "] training " << cfg.total_steps << " steps\n";
  auto res = run_training(cfg, scenario, dir);
  if (seconds) *seconds = res.seconds;
  trained[name] = res.final_checkpoint;
  return res.final_checkpoint;
}

RunConfig config_file(const std::string& file) { return load_run_config(g_configs / file); }

EvalReport evaluate(const RunConfig& cfg, SchedulerKind kind, const fs::path& checkpoint = {}) {
  RunConfig c = cfg;
  c.scheduler = kind;
  c.checkpoint = checkpoint.string();
  auto scenario = resolve_scenario(c);
  auto sched = make_scheduler(c);
  return run_evaluation(scenario.graph, scenario.env, scenario.profile, *sched, c.eval, c.eval_seed);
}

std::string delay(const EvalReport& r) { return r.mean_delay ? num(*r.mean_delay) : std::string("none"); }

bool eval_settings_ok(const RunConfig& cfg) { return cfg.eval.episodes >= 10 && cfg.eval.episode_length == 5000; }

Outcome criterion_light_learning() {
  const auto cfg = config_file("light_shared.cfg");
  if (cfg.train.mode != PolicyMode::kShared || cfg.total_steps > 2000000 || !eval_settings_ok(cfg))
    return {false, "light_shared.cfg outside the allowed budget or evaluation settings"};
  double secs = 0.0;
  const auto ckpt = train_config("light", cfg, &secs);
  const auto marl = evaluate(cfg, SchedulerKind::kMarl, ckpt);
  const auto llq = evaluate(cfg, SchedulerKind::kLlq);
  const bool pass = marl.mean_delay && llq.mean_delay && *marl.mean_delay <= 0.9 * *llq.mean_delay;
  return {pass, "marl " + delay(marl) + " (" + to_string(marl.label) + ") vs llq " + delay(llq) + ", ratio " +
                    (marl.mean_delay && llq.mean_delay ? num(*marl.mean_delay / *llq.mean_delay) : "n/a") + ", " +
                    std::to_string(cfg.total_steps) + " steps" + (secs > 0 ? ", trained in " + num(secs) + " s" : "")};
}

Outcome criterion_multiband() {
  const auto cfg = config_file("multiband_shared.cfg");
  if (cfg.env.num_subbands != 3 || cfg.train.mode != PolicyMode::kShared || cfg.eval.episodes < 10)
    return {false, "multiband_shared.cfg is not a 3-band shared run with 10 episodes"};
  const auto ckpt = train_config("multiband", cfg, nullptr);
  const auto marl = evaluate(cfg, SchedulerKind::kMarl, ckpt);
  const auto llq = evaluate(cfg, SchedulerKind::kLlq);
  const bool pass = marl.mean_delay && llq.mean_delay && *marl.mean_delay < *llq.mean_delay;
  return {pass, "marl " + delay(marl) + " (" + to_string(marl.label) + ") vs llq " + delay(llq)};
}

Outcome criterion_mismatch() {
  const std::array<std::string, 3> names = {"light", "medium", "heavy"};
  const std::array<std::string, 3> files = {"light_shared.cfg", "medium.cfg", "heavy.cfg"};
  std::array<std::string, 3> ckpts;
  for (int i = 0; i < 3; ++i) {
    const auto cfg = config_file(files[i]);
    if (cfg.traffic.load != std::optional<LoadLevel>(parse_load_level(names[i])))
      return {false, files[i] + " does not train at " + names[i] + " load"};
    ckpts[i] = train_config(names[i], cfg, nullptr).string();
  }
  auto cfg = config_file("heavy.cfg");
  auto scenario = resolve_scenario(cfg);
  const auto grid = run_mismatch_grid(cfg, scenario, ckpts);
  std::ostringstream csv;
  write_mismatch_csv(csv, grid);
  std::ofstream(g_work / "mismatch.csv") << csv.str();
  const bool heavy_good = std::all_of(grid[2].begin(), grid[2].end(), [](auto l) { return l == StabilityLabel::kGood; });
  const bool light_unstable = grid[0][2] == StabilityLabel::kUnstable;
  std::string flat;
  for (int r = 0; r < 3; ++r) {
    flat += names[r] + "-trained [";
    for (int c = 0; c < 3; ++c) flat += to_string(grid[r][c]) + (c < 2 ? " " : "");
    flat += r < 2 ? "] " : "]";
  }
  return {heavy_good && light_unstable, flat};
}

// ---------------------------------------------------------------- 11

double per_agent_step_seconds(int links, std::uint64_t graph_seed) {
  auto cfg = config_file("light_shared.cfg");
  cfg.graph.n = links;
  cfg.graph.seed = graph_seed;
  cfg.traffic.load.reset();
  cfg.traffic.lambda = 0.07;
  cfg.traffic.rho = 1.0;
  cfg.total_steps = 5L * cfg.train.batch_size;
  cfg.checkpoint_every = 1000;
  auto scenario = resolve_scenario(cfg);
  const fs::path dir = g_work / ("timing_" + std::to_string(links));
  fs::remove_all(dir);
  // warm-up so allocator and caches are in the same state for both sizes
  RunConfig warm = cfg;
  warm.total_steps = cfg.train.batch_size;
  run_training(warm, scenario, dir);
  fs::remove_all(dir);
  const auto res = run_training(cfg, scenario, dir);
  return res.seconds / (static_cast<double>(cfg.total_steps) * links);
}

Outcome criterion_scalability() {
  const double small = per_agent_step_seconds(20, 1);
  const double large = per_agent_step_seconds(100, 1);
  const double ratio = large / small;
  return {ratio <= 2.0, "20 links " + num(small * 1e6) + " us, 100 links " + num(large * 1e6) +
                            " us per agent-step, ratio " + num(ratio)};
}

// ---------------------------------------------------------------- 12

// Child side: train, evaluate and write the metrics CSVs into `dir`. `skew`
// leaves that many odd-sized blocks on the heap first so the two children
// see different allocation addresses.
int repro_child(const fs::path& dir, int skew) {
  std::vector<std::vector<double>> ballast;
  for (int k = 0; k < skew; ++k) ballast.emplace_back(1 + 3 * k, 1.0);
  auto cfg = config_file("light_shared.cfg");
  cfg.total_steps = 40L * cfg.train.batch_size;
  cfg.checkpoint_every = 20;
  cfg.eval.episodes = 3;
  cfg.eval.episode_length = 1000;
  fs::remove_all(dir);
  auto scenario = resolve_scenario(cfg);
  auto res = run_training(cfg, scenario, dir);
  const auto report = evaluate(cfg, SchedulerKind::kMarl, res.final_checkpoint);
  std::ofstream e(dir / "eval_episodes.csv"), l(dir / "eval_links.csv"), sm(dir / "eval_summary.csv");
  write_eval_episodes_csv(e, report);
  write_eval_links_csv(l, report);
  write_eval_summary_header(sm);
  write_eval_summary_row(sm, report);
  return 0;
}

Outcome criterion_reproducibility(const std::string& self) {
  const std::array<const char*, 4> files = {"train_stats.csv", "eval_episodes.csv", "eval_links.csv",
                                            "eval_summary.csv"};
  std::array<fs::path, 2> dirs;
  for (int run = 0; run < 2; ++run) {
    dirs[run] = g_work / ("repro_" + std::to_string(run));
    const std::string cmd = "\"" + self + "\" --configs \"" + g_configs.string() + "\" --repro-run \"" +
                            dirs[run].string() + "\" --heap-skew " + std::to_string(run * 37);
    if (std::system(cmd.c_str()) != 0) return {false, "child run " + std::to_string(run) + " failed"};
  }
  std::string differing;
  for (const char* f : files) {
    const auto a = read_file(dirs[0] / f);
    if (a.empty() || a != read_file(dirs[1] / f)) differing += std::string(differing.empty() ? "" : ", ") + f;
  }
  if (!differing.empty()) return {false, "differ between processes: " + differing};
  return {true, "train_stats, eval_episodes, eval_links and eval_summary identical across two processes"};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance checks"};
  std::string work = "acceptance_work";
  std::string configs = CSCHED_ACCEPTANCE_CONFIG_DIR;
  std::vector<int> only;
  app.add_option("--work", work, "Scratch directory for training runs");
  app.add_option("--configs", configs, "Directory with the run configurations");
  app.add_option("--only", only, "Criteria to run")->delimiter(',');
  app.add_flag("--reuse", g_reuse, "Reuse finished training runs with identical configs");
  std::string repro_dir;
  int heap_skew = 0;
  app.add_option("--repro-run", repro_dir, "Internal: one side of the reproducibility check");
  app.add_option("--heap-skew", heap_skew, "Internal");
  CLI11_PARSE(app, argc, argv);
  g_work = fs::absolute(work);
  g_configs = configs;
  fs::create_directories(g_work);
  tune_allocator();
  if (!repro_dir.empty()) return repro_child(repro_dir, heap_skew);
  const std::string self = fs::canonical("/proc/self/exe").string();

  const std::vector<std::pair<int, std::function<Outcome()>>> criteria = {
      {1, criterion_env_oracle},        {2, criterion_conservation},     {3, criterion_independent_sets},
      {4, criterion_mis_oracle},        {5, criterion_gradients},        {6, criterion_ppo_identities},
      {7, criterion_poisson},           {8, criterion_light_learning},   {9, criterion_multiband},
      {10, criterion_mismatch},         {11, criterion_scalability},     {12, [&] { return criterion_reproducibility(self); }},
  };
  const std::set<int> chosen(only.begin(), only.end());
  int failed = 0;
  for (const auto& [id, run] : criteria) {
    if (!chosen.empty() && !chosen.count(id)) continue;
    Outcome o;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      o = run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    if (!o.pass) ++failed;
    std::cout << "criterion " << id << ": " << (o.pass ? "PASS" : "FAIL") << " (" << o.detail << "; "
              << num(seconds_since(t0)) << " s)" << std::endl;
  }
  return failed == 0 ? 0 : 1;
}
