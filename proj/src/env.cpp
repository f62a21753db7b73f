#include "csched/env.hpp"

#include <algorithm>
#include <bit>
#include <ostream>

#include "csched/error.hpp"

namespace csched {

void EnvConfig::validate() const {
  if (num_subbands < 1 || num_subbands > 16) throw ArgumentError("num_subbands must be in [1, 16]");
  if (queue_truncation_threshold < 1) throw ArgumentError("queue_truncation_threshold must be positive");
  if (obs_clip < 1) throw ArgumentError("obs_clip must be positive");
  if (obs_quantization_step < 1) throw ArgumentError("obs_quantization_step must be positive");
}

std::int64_t EnvState::total_backlog() const {
  std::int64_t total = 0;
  for (const auto& q : queues) total += static_cast<std::int64_t>(q.size());
  return total;
}

EnvState reset(const ConflictGraph& graph, const EnvConfig& config, const TrafficProfile& profile) {
  config.validate();
  if (profile.num_links() != graph.num_links()) {
    throw ArgumentError("traffic profile has " + std::to_string(profile.num_links()) + " links, graph has " +
                        std::to_string(graph.num_links()));
  }
  const auto n = static_cast<std::size_t>(graph.num_links());
  EnvState s;
  s.queues.resize(n);
  s.last_arrivals.assign(n, 0);
  s.link_departures.assign(n, 0);
  s.link_delay_sum.assign(n, 0);
  return s;
}

const std::vector<int>& begin_slot(EnvState& state, const TrafficProfile& profile, Rng& rng) {
  if (state.slot_open) throw ProtocolError("begin_slot called twice in slot " + std::to_string(state.slot + 1));
  if (profile.num_links() != state.num_links()) throw ArgumentError("profile/state size mismatch");
  const std::int64_t t = state.slot + 1;
  state.last_arrivals = sample_arrivals(profile, rng);
  for (int n = 0; n < state.num_links(); ++n) {
    const int k = state.last_arrivals[n];
    state.queues[n].insert(state.queues[n].end(), k, t);
    state.arrivals_total += k;
  }
  state.slot_open = true;
  return state.last_arrivals;
}

Observation observe(const EnvState& state, const ConflictGraph& graph, const EnvConfig& config, int n) {
  if (!state.slot_open) throw ProtocolError("observe before begin_slot");
  const auto hood = closed_neighborhood(graph, n);
  const auto width = static_cast<std::size_t>(graph.max_degree() + 1);
  Observation obs;
  obs.values.assign(width, 0);
  obs.valid.assign(width, 0);
  for (std::size_t k = 0; k < hood.size(); ++k) {
    const int backlog = state.queue_length(hood[k]);
    obs.values[k] = std::min(backlog, config.obs_clip) / config.obs_quantization_step;
    obs.valid[k] = 1;
  }
  return obs;
}

StepOutcome step(EnvState& state, const ConflictGraph& graph, const EnvConfig& config,
                 std::span<const Action> joint_action) {
  const int n_links = graph.num_links();
  const int bands = config.num_subbands;
  if (static_cast<int>(joint_action.size()) != n_links) {
    throw ArgumentError("joint action has " + std::to_string(joint_action.size()) + " entries, expected " +
                        std::to_string(n_links));
  }
  if (!state.slot_open) throw ProtocolError("step before begin_slot");
  for (const Action& a : joint_action) {
    if (a.mask >= (1U << bands)) throw ArgumentError("action mask exceeds 2^S");
  }

  const std::int64_t t = state.slot + 1;
  StepOutcome out;
  out.successes.assign(n_links, 0);
  out.collisions.assign(static_cast<std::size_t>(n_links) * bands, 0);
  for (int n = 0; n < n_links; ++n) {
    const std::uint32_t mine = joint_action[n].mask;
    if (mine == 0) continue;
    std::uint32_t contested = 0;
    for (int j : graph.neighbors(n)) contested |= joint_action[j].mask;
    const std::uint32_t won = mine & ~contested;
    for (int h = 0; h < bands; ++h) {
      if ((mine & contested) >> h & 1U) out.collisions[static_cast<std::size_t>(n) * bands + h] = 1;
    }
    const int wins = std::popcount(won);
    auto& fifo = state.queues[n];
    const int served = std::min(wins, static_cast<int>(fifo.size()));
    for (int k = 0; k < served; ++k) {
      const std::int64_t delay = t - fifo.front() + 1;
      fifo.pop_front();
      state.delay_sum += delay;
      state.link_delay_sum[n] += delay;
    }
    state.departures_total += served;
    state.link_departures[n] += served;
    out.successes[n] = served;
  }

  out.rewards.assign(n_links, 0.0);
  for (int n = 0; n < n_links; ++n) {
    double r = 0.0;
    r -= static_cast<double>(state.queues[n].size());
    for (int j : graph.neighbors(n)) r -= static_cast<double>(state.queues[j].size());
    out.rewards[n] = r;
    if (static_cast<int>(state.queues[n].size()) > config.queue_truncation_threshold) out.truncated = true;
  }
  state.slot = t;
  state.slot_open = false;
  return out;
}

DelayReport delay_report(const EnvState& state) {
  DelayReport r;
  r.departures = state.departures_total;
  if (state.departures_total > 0) {
    r.mean_delay = static_cast<double>(state.delay_sum) / static_cast<double>(state.departures_total);
  }
  if (state.slot > 0) r.throughput = static_cast<double>(state.departures_total) / static_cast<double>(state.slot);
  return r;
}

std::vector<std::optional<double>> link_mean_delays(const EnvState& state) {
  std::vector<std::optional<double>> out(state.link_departures.size());
  for (std::size_t n = 0; n < out.size(); ++n) {
    if (state.link_departures[n] > 0) {
      out[n] = static_cast<double>(state.link_delay_sum[n]) / static_cast<double>(state.link_departures[n]);
    }
  }
  return out;
}

void write_trajectory_header(std::ostream& os) { os << "slot,link,q,K,action_mask,successes,reward\n"; }

void write_trajectory_rows(std::ostream& os, const EnvState& state, std::span<const Action> joint_action,
                           const StepOutcome& outcome) {
  for (int n = 0; n < state.num_links(); ++n) {
    os << state.slot << ',' << n << ',' << state.queue_length(n) << ',' << state.last_arrivals[n] << ','
       << joint_action[n].mask << ',' << outcome.successes[n] << ',' << outcome.rewards[n] << '\n';
  }
}

Environment::Environment(ConflictGraph graph, EnvConfig config, TrafficProfile profile, std::uint64_t seed)
    : graph_(std::move(graph)), config_(config), profile_(std::move(profile)), rng_(make_rng(seed)) {
  state_ = csched::reset(graph_, config_, profile_);
}

void Environment::reset() { state_ = csched::reset(graph_, config_, profile_); }

void Environment::reset(std::uint64_t seed) {
  rng_ = make_rng(seed);
  reset();
}

const std::vector<int>& Environment::begin_slot() { return csched::begin_slot(state_, profile_, rng_); }

Observation Environment::observe(int n) const { return csched::observe(state_, graph_, config_, n); }

StepOutcome Environment::step(std::span<const Action> joint_action) {
  return csched::step(state_, graph_, config_, joint_action);
}

std::vector<int> Environment::queue_lengths() const {
  std::vector<int> q(graph_.num_links());
  for (int n = 0; n < graph_.num_links(); ++n) q[n] = state_.queue_length(n);
  return q;
}

}  // namespace csched
