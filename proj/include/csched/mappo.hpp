#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "csched/env.hpp"
#include "csched/nn.hpp"
#include "csched/schedulers.hpp"

namespace csched {

enum class PolicyMode { kShared, kSeparate };

PolicyMode parse_policy_mode(const std::string& name);
std::string to_string(PolicyMode mode);

struct TrainConfig {
  double gamma = 0.99;
  double gae_lambda = 0.95;
  double clip_epsilon = 0.2;
  double entropy_coef = 0.01;
  /// Environment slots collected per update (B).
  int batch_size = 10000;
  int epochs_per_update = 4;
  int num_minibatches = 1;
  double actor_lr = 3e-4;
  double critic_lr = 1e-3;
  double max_grad_norm = 10.0;
  int bptt_chunk_length = 10;
  int episode_length = 1000;
  PolicyMode mode = PolicyMode::kShared;

  int dense_size = 64;
  int hidden_size = 64;
  /// Observation entries are multiplied by this before entering the network.
  double input_scale = 0.1;
  double head_gain = 0.01;

  bool normalize_advantages = true;
  bool bootstrap_truncation = true;
  bool bootstrap_time_limit = true;
  /// Critic regresses returns standardized by running statistics.
  bool value_normalization = true;
  double value_norm_beta = 0.95;

  void validate() const;
};

/// Network dimensions and input encoding shared by every member of a policy.
struct PolicySpec {
  int obs_width = 0;  ///< 1 + max_degree
  int num_subbands = 1;
  int dense = 64;
  int hidden = 64;
  double input_scale = 0.1;

  int input_width() const { return 2 * obs_width; }
  int num_actions() const { return 1 << num_subbands; }
  bool operator==(const PolicySpec&) const = default;
};

/// Exponential moving estimate of return mean and variance with debiasing.
/// Before the first update it is the identity map.
struct ValueNorm {
  double beta = 0.95;
  double mean = 0.0;
  double mean_sq = 0.0;
  double debias = 0.0;

  void update(std::span<const double> samples);
  double center() const;
  double scale() const;
  double normalize(double x) const { return (x - center()) / scale(); }
  double denormalize(double y) const { return y * scale() + center(); }
};

/// Actor and critic parameters for one agent, or for all agents when shared.
struct PolicyMember {
  nn::RecurrentNet actor;
  nn::RecurrentNet critic;
  nn::ParamStore actor_params;
  nn::ParamStore critic_params;
  ValueNorm value_norm;

  explicit PolicyMember(const PolicySpec& spec);
};

class PolicySet {
 public:
  PolicySet(PolicyMode mode, int num_agents, PolicySpec spec);

  void initialize(std::uint64_t seed, double head_gain);

  PolicyMode mode() const noexcept { return mode_; }
  int num_agents() const noexcept { return num_agents_; }
  const PolicySpec& spec() const noexcept { return spec_; }
  int member_index(int agent) const { return mode_ == PolicyMode::kShared ? 0 : agent; }
  PolicyMember& member(int k) { return members_.at(k); }
  const PolicyMember& member(int k) const { return members_.at(k); }
  int num_members() const noexcept { return static_cast<int>(members_.size()); }

 private:
  PolicyMode mode_;
  int num_agents_;
  PolicySpec spec_;
  std::vector<PolicyMember> members_;
};

PolicySpec policy_spec_for(const Environment& env, const TrainConfig& config);

/// Network input for agent n: scaled observation values then the validity
/// mask, written into column `col` of `out`.
void encode_observation(const Observation& obs, double input_scale, nn::Matrix& out, int col);
nn::Matrix encode_observations(const Environment& env, double input_scale);

/// One agent's time-indexed rollout data.
struct AgentTrajectory {
  nn::Matrix inputs;  ///< input_width x T
  std::vector<int> actions;
  std::vector<double> log_probs;
  std::vector<double> values;      ///< critic estimate in return units
  std::vector<double> raw_values;  ///< critic network output at collection time
  std::vector<double> rewards;
  /// Value of the next state where a segment ends, in return units.
  std::vector<double> bootstrap;
  nn::Matrix actor_h;   ///< hidden state entering each chunk (columns)
  nn::Matrix critic_h;
  std::vector<double> advantages;
  std::vector<double> returns;
};

/// Read access to rollout data by agent.
class TrajectorySource {
 public:
  virtual ~TrajectorySource() = default;
  virtual int num_agents() const = 0;
  virtual int steps() const = 0;
  virtual int chunk_length() const = 0;
  /// 1 where the recurrent state was reset before step t.
  virtual std::span<const char> episode_start() const = 0;
  virtual const AgentTrajectory& agent(int n) const = 0;
};

struct RolloutBuffer : TrajectorySource {
  int chunk = 1;
  std::vector<char> starts;
  /// 1 where returns and advantages stop accumulating after step t: episode
  /// ends and the last step of the buffer.
  std::vector<char> segment_end;
  std::vector<AgentTrajectory> agents;

  int num_agents() const override { return static_cast<int>(agents.size()); }
  int steps() const override { return static_cast<int>(starts.size()); }
  int chunk_length() const override { return chunk; }
  std::span<const char> episode_start() const override { return starts; }
  const AgentTrajectory& agent(int n) const override { return agents.at(n); }
};

/// Discounted reward-to-go within each segment; a segment ending at t adds
/// gamma * bootstrap[t]. The final step always ends a segment.
std::vector<double> compute_returns(std::span<const double> rewards, std::span<const char> segment_end,
                                    std::span<const double> bootstrap, double gamma);

/// Raw generalized advantage estimates.
std::vector<double> compute_gae(std::span<const double> rewards, std::span<const double> values,
                                std::span<const char> segment_end, std::span<const double> bootstrap, double gamma,
                                double lambda);

/// Fills advantages and returns for every agent.
void compute_targets(RolloutBuffer& buffer, const TrainConfig& config);

inline constexpr double kRatioLogCap = 30.0;

/// exp(new - old) with the exponent clamped to +-30; `guarded` reports a clamp.
double probability_ratio(double new_log_prob, double old_log_prob, bool* guarded = nullptr);

/// min(max(x, y - eps), y + eps)
inline double clip_fn(double x, double y, double epsilon) { return std::min(std::max(x, y - epsilon), y + epsilon); }

/// A recurrent training sequence: agent `agent`, steps [start, start + L).
struct Chunk {
  int agent = 0;
  int start = 0;
};

std::vector<Chunk> make_chunks(const TrajectorySource& source, std::span<const int> agents);

struct ActorTerms {
  double objective = 0.0;  ///< J: surrogate + entropy_coef * entropy
  double surrogate = 0.0;
  double entropy = 0.0;
  double mean_ratio = 0.0;
  double clip_fraction = 0.0;
  double max_abs_log_ratio = 0.0;
  int guard_hits = 0;
};

/// Evaluates the clipped actor objective on `chunks` and, if `with_grad`,
/// accumulates d(-J)/d(theta) into store.grads. `advantages` is indexed by
/// agent.
ActorTerms actor_objective(const nn::RecurrentNet& actor, nn::ParamStore& store, const TrajectorySource& source,
                           std::span<const Chunk> chunks, const std::vector<std::vector<double>>& advantages,
                           const TrainConfig& config, bool with_grad);

/// Value-clipped squared error on `chunks` and, if `with_grad`, its gradient.
/// `targets` is indexed by agent and must be in the critic's output units.
double critic_objective(const nn::RecurrentNet& critic, nn::ParamStore& store, const TrajectorySource& source,
                        std::span<const Chunk> chunks, const std::vector<std::vector<double>>& targets,
                        const TrainConfig& config, bool with_grad);

struct UpdateStats {
  double actor_loss = 0.0;
  double critic_loss = 0.0;
  double entropy = 0.0;
  double clip_fraction = 0.0;
  double mean_ratio = 0.0;
  int guard_hits = 0;
};

/// PPO epochs for one member over the listed agents' data. Restores the
/// member and throws TrainingError if a loss or gradient is not finite.
UpdateStats update_member(PolicyMember& member, const TrajectorySource& source, std::span<const int> agents,
                          const TrainConfig& config, Rng& rng);

/// compute_targets followed by update_member for every member.
UpdateStats update(PolicySet& policies, RolloutBuffer& buffer, const TrainConfig& config, Rng& rng);

struct RolloutStats {
  double mean_reward = 0.0;
  std::int64_t delay_sum = 0;
  std::int64_t departures = 0;
  int truncations = 0;
  int episodes_finished = 0;

  std::optional<double> mean_delay() const;
};

/// Runs the slot protocol with the current policies, keeping the
/// environment and recurrent states alive between calls.
class RolloutCollector {
 public:
  RolloutCollector(Environment env, const TrainConfig& config, std::uint64_t seed);

  /// `steps` must be a multiple of the chunk length.
  RolloutBuffer collect(const PolicySet& policies, int steps);

  const RolloutStats& last_stats() const noexcept { return stats_; }
  const Environment& env() const noexcept { return env_; }
  std::int64_t total_steps() const noexcept { return total_steps_; }

 private:
  void start_episode();
  void policy_step(const PolicySet& policies, nn::Matrix& logits, std::vector<double>& raw_values);

  Environment env_;
  TrainConfig config_;
  Rng rng_;
  std::uint64_t episode_seed_;
  std::int64_t episodes_started_ = 0;
  int episode_slot_ = 0;
  bool started_ = false;
  nn::Matrix pending_inputs_;
  nn::Matrix actor_h_;
  nn::Matrix critic_h_;
  RolloutStats stats_;
  std::int64_t total_steps_ = 0;
};

/// Checkpoint files: "policy.ckpt" for a shared policy, "agent_<n>.ckpt"
/// per agent otherwise.
void save_policy(const PolicySet& policies, const std::filesystem::path& dir);
PolicySet load_policy(const std::filesystem::path& dir);

/// Learned policy as a scheduler. Greedy picks the most likely action.
class MarlScheduler : public Scheduler {
 public:
  MarlScheduler(PolicySet policies, bool greedy);

  std::string name() const override { return "marl"; }
  void reset(int num_links) override;
  JointAction decide(const Environment& env, Rng& rng) override;

 private:
  PolicySet policies_;
  bool greedy_;
  nn::Matrix hidden_;
};

}  // namespace csched
