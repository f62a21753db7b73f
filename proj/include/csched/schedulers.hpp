#pragma once

#include <memory>
#include <span>
#include <string>
#include <vector>

#include "csched/env.hpp"
#include "csched/graph.hpp"
#include "csched/rng.hpp"

namespace csched {

/// Local longest queue. A link with a nonzero queue that is at least as long
/// as every conflicting link's is a candidate; strict winners transmit, tied
/// candidates transmit with probability 1/2 each. Winners use sub-bands
/// 0..min(q, S)-1.
JointAction llq_decide(std::span<const int> queues, const ConflictGraph& graph, int num_subbands, Rng& rng);

struct QcsmaState {
  std::vector<char> prev_active;
  int backoff_window = 32;
  double weight_cap = 10.0;

  static QcsmaState initial(int num_links, int backoff_window = 32, double weight_cap = 10.0);
};

/// One Q-CSMA slot: randomized decision set from backoff contention, then
/// queue-weighted activation. Single sub-band only.
JointAction qcsma_decide(QcsmaState& state, std::span<const int> queues, const ConflictGraph& graph,
                         int num_subbands, Rng& rng);

/// Per band, the maximum-weight independent set on residual queues.
JointAction maxweight_decide(std::span<const int> queues, const ConflictGraph& graph, int num_subbands,
                             int solver_cap = kDefaultMisCap);

/// Every (link, band) bit set independently with probability p.
JointAction random_decide(int num_links, int num_subbands, double p, Rng& rng);

/// Common driver interface so evaluation treats baselines and learned
/// policies alike. `decide` is called after begin_slot.
class Scheduler {
 public:
  virtual ~Scheduler() = default;
  virtual std::string name() const = 0;
  /// Called at the start of every episode.
  virtual void reset(int /*num_links*/) {}
  virtual JointAction decide(const Environment& env, Rng& rng) = 0;
};

enum class SchedulerKind { kLlq, kQcsma, kMaxWeight, kRandom, kMarl };

SchedulerKind parse_scheduler_kind(const std::string& name);
std::string to_string(SchedulerKind kind);

struct BaselineOptions {
  int qcsma_backoff_window = 32;
  double qcsma_weight_cap = 10.0;
  double random_p = 0.5;
  int mis_cap = kDefaultMisCap;
};

/// Baseline by kind; kMarl is rejected (learned policies come from mappo).
std::unique_ptr<Scheduler> make_baseline(SchedulerKind kind, const BaselineOptions& options = {});

}  // namespace csched
