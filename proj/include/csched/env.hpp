#pragma once

#include <cstdint>
#include <deque>
#include <iosfwd>
#include <optional>
#include <span>
#include <vector>

#include "csched/graph.hpp"
#include "csched/rng.hpp"
#include "csched/traffic.hpp"

namespace csched {

struct EnvConfig {
  int num_subbands = 1;
  int queue_truncation_threshold = 100;
  int obs_clip = 50;
  int obs_quantization_step = 1;

  /// Throws ArgumentError if any field is out of range.
  void validate() const;
  int num_actions() const { return 1 << num_subbands; }
  int obs_levels() const { return obs_clip / obs_quantization_step; }
};

/// Per-link transmission attempts over S sub-bands; bit h set means
/// "transmit on sub-band h".
struct Action {
  std::uint32_t mask = 0;

  bool uses(int band) const { return (mask >> band) & 1U; }
  bool operator==(const Action&) const = default;
};

using JointAction = std::vector<Action>;

struct EnvState {
  /// Number of completed slots. During slot t this equals t - 1.
  std::int64_t slot = 0;
  bool slot_open = false;
  /// Arrival slot of every queued packet, oldest first.
  std::vector<std::deque<std::int64_t>> queues;
  std::vector<int> last_arrivals;

  std::int64_t arrivals_total = 0;
  std::int64_t departures_total = 0;
  std::int64_t delay_sum = 0;
  std::vector<std::int64_t> link_departures;
  std::vector<std::int64_t> link_delay_sum;

  int num_links() const noexcept { return static_cast<int>(queues.size()); }
  int queue_length(int n) const { return static_cast<int>(queues.at(n).size()); }
  std::int64_t total_backlog() const;
};

struct Observation {
  std::vector<int> values;
  std::vector<char> valid;  ///< 1 for self/neighbor entries, 0 for padding
};

struct StepOutcome {
  std::vector<double> rewards;
  std::vector<int> successes;
  /// collisions[n * S + h]: link n attempted band h and a neighbor did too.
  std::vector<char> collisions;
  bool truncated = false;

  bool collided(int link, int band, int num_subbands) const {
    return collisions[static_cast<std::size_t>(link) * num_subbands + band] != 0;
  }
};

struct DelayReport {
  std::optional<double> mean_delay;
  double throughput = 0.0;
  std::int64_t departures = 0;
};

EnvState reset(const ConflictGraph& graph, const EnvConfig& config, const TrafficProfile& profile);

/// Draws this slot's arrivals and appends them to the FIFO tails.
const std::vector<int>& begin_slot(EnvState& state, const TrafficProfile& profile, Rng& rng);

/// Clipped, quantized backlog of the closed neighborhood, padded to
/// 1 + max_degree entries.
Observation observe(const EnvState& state, const ConflictGraph& graph, const EnvConfig& config, int n);

/// Resolves collisions, serves packets FIFO, updates queues and computes
/// neighborhood rewards on the end-of-slot queues. Closes the slot.
StepOutcome step(EnvState& state, const ConflictGraph& graph, const EnvConfig& config,
                 std::span<const Action> joint_action);

DelayReport delay_report(const EnvState& state);

/// Per-link mean delay; absent where the link sent nothing.
std::vector<std::optional<double>> link_mean_delays(const EnvState& state);

/// Appends rows "slot,link,q,K,action_mask,successes,reward" for the slot
/// just stepped.
void write_trajectory_header(std::ostream& os);
void write_trajectory_rows(std::ostream& os, const EnvState& state, std::span<const Action> joint_action,
                           const StepOutcome& outcome);

/// Bundles graph, configuration, traffic and random stream into a single
/// environment that follows the begin_slot -> observe -> step protocol.
class Environment {
 public:
  Environment(ConflictGraph graph, EnvConfig config, TrafficProfile profile, std::uint64_t seed);

  void reset();
  void reset(std::uint64_t seed);
  const std::vector<int>& begin_slot();
  Observation observe(int n) const;
  StepOutcome step(std::span<const Action> joint_action);

  const ConflictGraph& graph() const noexcept { return graph_; }
  const EnvConfig& config() const noexcept { return config_; }
  const TrafficProfile& profile() const noexcept { return profile_; }
  const EnvState& state() const noexcept { return state_; }
  int num_links() const noexcept { return graph_.num_links(); }
  std::vector<int> queue_lengths() const;
  Rng& rng() noexcept { return rng_; }

 private:
  ConflictGraph graph_;
  EnvConfig config_;
  TrafficProfile profile_;
  Rng rng_;
  EnvState state_;
};

}  // namespace csched
