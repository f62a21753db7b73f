#include "csched/schedulers.hpp"

#include <algorithm>
#include <cmath>

#include "csched/error.hpp"

namespace csched {

namespace {

std::uint32_t low_bands(int count) { return count >= 32 ? ~0U : ((1U << count) - 1U); }

void check_queues(std::span<const int> queues, const ConflictGraph& graph) {
  if (static_cast<int>(queues.size()) != graph.num_links()) throw ArgumentError("queues length must equal N");
}

}  // namespace

JointAction llq_decide(std::span<const int> queues, const ConflictGraph& graph, int num_subbands, Rng& rng) {
  check_queues(queues, graph);
  JointAction out(queues.size());
  for (int n = 0; n < graph.num_links(); ++n) {
    const int q = queues[n];
    if (q <= 0) continue;
    bool dominant = true;
    bool tied = false;
    for (int j : graph.neighbors(n)) {
      if (queues[j] > q) {
        dominant = false;
        break;
      }
      if (queues[j] == q) tied = true;
    }
    if (!dominant) continue;
    // One coin per tied candidate, drawn in link order.
    if (tied && !bernoulli(rng, 0.5)) continue;
    out[n].mask = low_bands(std::min(q, num_subbands));
  }
  return out;
}

QcsmaState QcsmaState::initial(int num_links, int backoff_window, double weight_cap) {
  if (backoff_window < 1) throw ArgumentError("backoff window must be positive");
  if (!(weight_cap > 0.0)) throw ArgumentError("weight cap must be positive");
  QcsmaState s;
  s.prev_active.assign(num_links, 0);
  s.backoff_window = backoff_window;
  s.weight_cap = weight_cap;
  return s;
}

JointAction qcsma_decide(QcsmaState& state, std::span<const int> queues, const ConflictGraph& graph,
                         int num_subbands, Rng& rng) {
  if (num_subbands != 1) throw CapabilityError("Q-CSMA supports a single channel only");
  check_queues(queues, graph);
  const int n_links = graph.num_links();
  if (static_cast<int>(state.prev_active.size()) != n_links) throw ArgumentError("Q-CSMA state size mismatch");

  // Control phase.
  std::vector<std::uint64_t> backoff(n_links);
  for (auto& b : backoff) b = uniform_index(rng, static_cast<std::uint64_t>(state.backoff_window));
  std::vector<char> decision(n_links, 0);
  for (int n = 0; n < n_links; ++n) {
    bool wins = true;
    for (int j : graph.neighbors(n)) {
      if (backoff[j] <= backoff[n]) {
        wins = false;
        break;
      }
    }
    decision[n] = wins;
  }

  // Data phase.
  std::vector<char> active = state.prev_active;
  for (int n = 0; n < n_links; ++n) {
    if (decision[n]) {
      bool blocked = false;
      for (int j : graph.neighbors(n)) blocked = blocked || state.prev_active[j];
      if (blocked) {
        active[n] = 0;
      } else {
        const double w = std::min(std::log(static_cast<double>(queues[n]) + 1.0), state.weight_cap);
        const double p = std::exp(w) / (1.0 + std::exp(w));
        active[n] = bernoulli(rng, p);
      }
    }
    if (active[n] && queues[n] == 0) active[n] = 0;
  }

  state.prev_active = active;
  JointAction out(n_links);
  for (int n = 0; n < n_links; ++n) {
    if (active[n] && queues[n] > 0) out[n].mask = 1;
  }
  return out;
}

JointAction maxweight_decide(std::span<const int> queues, const ConflictGraph& graph, int num_subbands,
                             int solver_cap) {
  check_queues(queues, graph);
  std::vector<double> residual(queues.begin(), queues.end());
  for (double& r : residual) r = std::max(r, 0.0);
  JointAction out(queues.size());
  for (int h = 0; h < num_subbands; ++h) {
    auto set = max_weight_independent_set(graph, residual, solver_cap);
    if (set.empty()) break;
    for (int v : set) {
      out[v].mask |= 1U << h;
      residual[v] -= 1.0;
    }
  }
  return out;
}

JointAction random_decide(int num_links, int num_subbands, double p, Rng& rng) {
  if (!(p >= 0.0 && p <= 1.0)) throw ArgumentError("p must be in [0, 1]");
  JointAction out(num_links);
  for (auto& a : out) {
    for (int h = 0; h < num_subbands; ++h) {
      if (bernoulli(rng, p)) a.mask |= 1U << h;
    }
  }
  return out;
}

SchedulerKind parse_scheduler_kind(const std::string& name) {
  if (name == "llq") return SchedulerKind::kLlq;
  if (name == "qcsma") return SchedulerKind::kQcsma;
  if (name == "maxweight") return SchedulerKind::kMaxWeight;
  if (name == "random") return SchedulerKind::kRandom;
  if (name == "marl") return SchedulerKind::kMarl;
  throw ArgumentError("unknown scheduler '" + name + "'");
}

std::string to_string(SchedulerKind kind) {
  switch (kind) {
    case SchedulerKind::kLlq:
      return "llq";
    case SchedulerKind::kQcsma:
      return "qcsma";
    case SchedulerKind::kMaxWeight:
      return "maxweight";
    case SchedulerKind::kRandom:
      return "random";
    case SchedulerKind::kMarl:
      return "marl";
  }
  return "llq";
}

namespace {

class LlqScheduler final : public Scheduler {
 public:
  std::string name() const override { return "llq"; }
  JointAction decide(const Environment& env, Rng& rng) override {
    return llq_decide(env.queue_lengths(), env.graph(), env.config().num_subbands, rng);
  }
};

class QcsmaScheduler final : public Scheduler {
 public:
  explicit QcsmaScheduler(const BaselineOptions& o) : window_(o.qcsma_backoff_window), cap_(o.qcsma_weight_cap) {}
  std::string name() const override { return "qcsma"; }
  void reset(int num_links) override { state_ = QcsmaState::initial(num_links, window_, cap_); }
  JointAction decide(const Environment& env, Rng& rng) override {
    if (static_cast<int>(state_.prev_active.size()) != env.num_links()) reset(env.num_links());
    return qcsma_decide(state_, env.queue_lengths(), env.graph(), env.config().num_subbands, rng);
  }

 private:
  int window_;
  double cap_;
  QcsmaState state_;
};

class MaxWeightScheduler final : public Scheduler {
 public:
  explicit MaxWeightScheduler(int cap) : cap_(cap) {}
  std::string name() const override { return "maxweight"; }
  JointAction decide(const Environment& env, Rng&) override {
    return maxweight_decide(env.queue_lengths(), env.graph(), env.config().num_subbands, cap_);
  }

 private:
  int cap_;
};

class RandomScheduler final : public Scheduler {
 public:
  explicit RandomScheduler(double p) : p_(p) {}
  std::string name() const override { return "random"; }
  JointAction decide(const Environment& env, Rng& rng) override {
    return random_decide(env.num_links(), env.config().num_subbands, p_, rng);
  }

 private:
  double p_;
};

}  // namespace

std::unique_ptr<Scheduler> make_baseline(SchedulerKind kind, const BaselineOptions& options) {
  switch (kind) {
    case SchedulerKind::kLlq:
      return std::make_unique<LlqScheduler>();
    case SchedulerKind::kQcsma:
      return std::make_unique<QcsmaScheduler>(options);
    case SchedulerKind::kMaxWeight:
      return std::make_unique<MaxWeightScheduler>(options.mis_cap);
    case SchedulerKind::kRandom:
      return std::make_unique<RandomScheduler>(options.random_p);
    case SchedulerKind::kMarl:
      break;
  }
  throw ArgumentError("learned policies are not baselines");
}

}  // namespace csched
