#include "csched/mappo.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

#include "csched/error.hpp"

namespace csched {

using nn::Matrix;

PolicyMode parse_policy_mode(const std::string& name) {
  if (name == "shared") return PolicyMode::kShared;
  if (name == "separate") return PolicyMode::kSeparate;
  throw ArgumentError("unknown policy mode '" + name + "' (expected shared or separate)");
}

std::string to_string(PolicyMode mode) { return mode == PolicyMode::kShared ? "shared" : "separate"; }

void TrainConfig::validate() const {
  auto require = [](bool ok, const char* what) {
    if (!ok) throw ConfigError(what);
  };
  require(gamma > 0.0 && gamma <= 1.0, "train.gamma must be in (0, 1]");
  require(gae_lambda >= 0.0 && gae_lambda <= 1.0, "train.gae_lambda must be in [0, 1]");
  require(clip_epsilon > 0.0, "train.clip_epsilon must be positive");
  require(entropy_coef >= 0.0, "train.entropy_coef must be nonnegative");
  require(bptt_chunk_length >= 1, "train.bptt_chunk_length must be at least 1");
  require(batch_size >= 1 && batch_size % bptt_chunk_length == 0,
          "train.batch_size must be a positive multiple of train.bptt_chunk_length");
  require(epochs_per_update >= 1, "train.epochs_per_update must be at least 1");
  require(num_minibatches >= 1, "train.num_minibatches must be at least 1");
  require(actor_lr >= 0.0 && critic_lr >= 0.0, "learning rates must be nonnegative");
  require(max_grad_norm >= 0.0, "train.max_grad_norm must be nonnegative");
  require(episode_length >= 1, "train.episode_length must be at least 1");
  require(dense_size >= 1 && hidden_size >= 1, "network sizes must be positive");
  require(input_scale > 0.0, "train.input_scale must be positive");
  require(head_gain >= 0.0, "train.head_gain must be nonnegative");
  require(value_norm_beta > 0.0 && value_norm_beta < 1.0, "train.value_norm_beta must be in (0, 1)");
}

void ValueNorm::update(std::span<const double> samples) {
  if (samples.empty()) return;
  double m = 0.0, m2 = 0.0;
  for (double x : samples) {
    m += x;
    m2 += x * x;
  }
  m /= static_cast<double>(samples.size());
  m2 /= static_cast<double>(samples.size());
  mean = beta * mean + (1.0 - beta) * m;
  mean_sq = beta * mean_sq + (1.0 - beta) * m2;
  debias = beta * debias + (1.0 - beta);
}

double ValueNorm::center() const { return debias > 0.0 ? mean / debias : 0.0; }

double ValueNorm::scale() const {
  if (debias <= 0.0) return 1.0;
  const double c = center();
  return std::sqrt(std::max(mean_sq / debias - c * c, 1e-2));
}

PolicyMember::PolicyMember(const PolicySpec& spec)
    : actor({spec.input_width(), spec.dense, spec.hidden, spec.num_actions()}),
      critic({spec.input_width(), spec.dense, spec.hidden, 1}),
      actor_params(actor.make_store()),
      critic_params(critic.make_store()) {}

PolicySet::PolicySet(PolicyMode mode, int num_agents, PolicySpec spec)
    : mode_(mode), num_agents_(num_agents), spec_(spec) {
  if (num_agents < 1) throw ArgumentError("policy needs at least one agent");
  if (spec.obs_width < 1 || spec.num_subbands < 1 || spec.num_subbands > 16) {
    throw ArgumentError("bad policy dimensions");
  }
  const int count = mode == PolicyMode::kShared ? 1 : num_agents;
  members_.reserve(count);
  for (int k = 0; k < count; ++k) members_.emplace_back(spec);
}

void PolicySet::initialize(std::uint64_t seed, double head_gain) {
  for (int k = 0; k < num_members(); ++k) {
    Rng rng = make_rng(seed, static_cast<std::uint64_t>(k));
    auto& m = members_[k];
    m.actor.initialize(m.actor_params, rng, head_gain);
    m.critic.initialize(m.critic_params, rng, 1.0);
  }
}

PolicySpec policy_spec_for(const Environment& env, const TrainConfig& config) {
  PolicySpec spec;
  spec.obs_width = 1 + env.graph().max_degree();
  spec.num_subbands = env.config().num_subbands;
  spec.dense = config.dense_size;
  spec.hidden = config.hidden_size;
  spec.input_scale = config.input_scale;
  return spec;
}

void encode_observation(const Observation& obs, double input_scale, Matrix& out, int col) {
  const auto w = static_cast<Eigen::Index>(obs.values.size());
  for (Eigen::Index k = 0; k < w; ++k) {
    out(k, col) = input_scale * obs.values[k];
    out(w + k, col) = obs.valid[k];
  }
}

Matrix encode_observations(const Environment& env, double input_scale) {
  const int n = env.num_links();
  Matrix out(2 * (1 + env.graph().max_degree()), n);
  for (int i = 0; i < n; ++i) encode_observation(env.observe(i), input_scale, out, i);
  return out;
}

namespace {

// Rows of outputs for every agent; `h` holds one hidden column per agent.
Matrix policy_forward(const PolicySet& policies, bool critic, const Matrix& inputs, Matrix& h) {
  if (policies.mode() == PolicyMode::kShared) {
    const auto& m = policies.member(0);
    return critic ? m.critic.step(m.critic_params, inputs, h) : m.actor.step(m.actor_params, inputs, h);
  }
  const int n = static_cast<int>(inputs.cols());
  Matrix out;
  for (int i = 0; i < n; ++i) {
    const auto& m = policies.member(i);
    Matrix hi = h.col(i);
    Matrix yi = critic ? m.critic.step(m.critic_params, inputs.col(i), hi) : m.actor.step(m.actor_params, inputs.col(i), hi);
    if (i == 0) out.resize(yi.rows(), n);
    out.col(i) = yi;
    h.col(i) = hi;
  }
  return out;
}

nn::CategoricalDist column_dist(const Matrix& logits, Eigen::Index c) {
  return nn::make_dist(std::span<const double>(logits.col(c).data(), static_cast<std::size_t>(logits.rows())));
}

}  // namespace

std::vector<double> compute_returns(std::span<const double> rewards, std::span<const char> segment_end,
                                    std::span<const double> bootstrap, double gamma) {
  const std::size_t t_len = rewards.size();
  if (segment_end.size() != t_len || bootstrap.size() != t_len) throw ArgumentError("sequence lengths differ");
  std::vector<double> out(t_len);
  double next = 0.0;
  for (std::size_t t = t_len; t-- > 0;) {
    if (segment_end[t] || t + 1 == t_len) next = bootstrap[t];
    next = rewards[t] + gamma * next;
    out[t] = next;
  }
  return out;
}

std::vector<double> compute_gae(std::span<const double> rewards, std::span<const double> values,
                                std::span<const char> segment_end, std::span<const double> bootstrap, double gamma,
                                double lambda) {
  const std::size_t t_len = rewards.size();
  if (values.size() != t_len || segment_end.size() != t_len || bootstrap.size() != t_len) {
    throw ArgumentError("sequence lengths differ");
  }
  std::vector<double> out(t_len);
  double carry = 0.0;
  for (std::size_t t = t_len; t-- > 0;) {
    const bool end = segment_end[t] != 0 || t + 1 == t_len;
    const double next_value = end ? bootstrap[t] : values[t + 1];
    const double delta = rewards[t] + gamma * next_value - values[t];
    carry = delta + gamma * lambda * (end ? 0.0 : carry);
    out[t] = carry;
  }
  return out;
}

void compute_targets(RolloutBuffer& buffer, const TrainConfig& config) {
  for (auto& a : buffer.agents) {
    a.returns = compute_returns(a.rewards, buffer.segment_end, a.bootstrap, config.gamma);
    a.advantages = compute_gae(a.rewards, a.values, buffer.segment_end, a.bootstrap, config.gamma, config.gae_lambda);
  }
}

double probability_ratio(double new_log_prob, double old_log_prob, bool* guarded) {
  double d = new_log_prob - old_log_prob;
  const bool hit = !(std::abs(d) <= kRatioLogCap);
  if (hit) d = std::isnan(d) ? d : std::clamp(d, -kRatioLogCap, kRatioLogCap);
  if (guarded) *guarded = hit;
  return std::exp(d);
}

std::vector<Chunk> make_chunks(const TrajectorySource& source, std::span<const int> agents) {
  const int l = source.chunk_length();
  if (source.steps() % l != 0) throw ArgumentError("rollout length is not a multiple of the chunk length");
  std::vector<Chunk> out;
  for (int n : agents) {
    for (int s = 0; s < source.steps(); s += l) out.push_back(Chunk{n, s});
  }
  return out;
}

namespace {

struct ChunkBatch {
  std::vector<Matrix> inputs;
  std::vector<Eigen::RowVectorXd> keep;
  Matrix h0;
};

ChunkBatch gather(const TrajectorySource& source, std::span<const Chunk> chunks, bool critic) {
  const int l = source.chunk_length();
  const auto c_count = static_cast<Eigen::Index>(chunks.size());
  const auto starts = source.episode_start();
  ChunkBatch b;
  for (std::size_t c = 0; c < chunks.size(); ++c) {
    const auto& tr = source.agent(chunks[c].agent);
    const Matrix& hs = critic ? tr.critic_h : tr.actor_h;
    if (c == 0) {
      b.inputs.assign(l, Matrix(tr.inputs.rows(), c_count));
      b.keep.assign(l, Eigen::RowVectorXd::Ones(c_count));
      b.h0.resize(hs.rows(), c_count);
    }
    const int s = chunks[c].start;
    b.h0.col(c) = hs.col(s / l);
    for (int k = 0; k < l; ++k) {
      b.inputs[k].col(c) = tr.inputs.col(s + k);
      if (k > 0 && starts[s + k]) b.keep[k](c) = 0.0;
    }
  }
  return b;
}

}  // namespace

ActorTerms actor_objective(const nn::RecurrentNet& actor, nn::ParamStore& store, const TrajectorySource& source,
                           std::span<const Chunk> chunks, const std::vector<std::vector<double>>& advantages,
                           const TrainConfig& config, bool with_grad) {
  if (chunks.empty()) throw ArgumentError("no chunks");
  const int l = source.chunk_length();
  auto batch = gather(source, chunks, false);
  auto cache = actor.forward(store, batch.inputs, batch.h0, batch.keep);
  const auto m = static_cast<double>(l) * static_cast<double>(chunks.size());
  const double eps = config.clip_epsilon;
  const double sigma = config.entropy_coef;

  ActorTerms terms;
  std::vector<Matrix> d_out(l);
  int clipped_count = 0;
  for (int k = 0; k < l; ++k) {
    const Matrix& logits = cache.outputs[k];
    d_out[k].setZero(logits.rows(), logits.cols());
    for (std::size_t c = 0; c < chunks.size(); ++c) {
      const auto& tr = source.agent(chunks[c].agent);
      const int t = chunks[c].start + k;
      const int a = tr.actions[t];
      const double adv = advantages.at(chunks[c].agent).at(t);
      auto dist = column_dist(logits, static_cast<Eigen::Index>(c));
      const double lp = nn::log_prob(dist, a);
      bool guarded = false;
      const double r = probability_ratio(lp, tr.log_probs[t], &guarded);
      const double unclipped = r * adv;
      const double clipped = clip_fn(r, 1.0, eps) * adv;
      const double surrogate = std::min(unclipped, clipped);
      const double h = nn::entropy(dist);
      if (!std::isfinite(surrogate) || !std::isfinite(h)) throw TrainingError("non-finite actor objective");
      terms.surrogate += surrogate;
      terms.entropy += h;
      terms.mean_ratio += r;
      terms.guard_hits += guarded;
      terms.max_abs_log_ratio = std::max(terms.max_abs_log_ratio, std::abs(lp - tr.log_probs[t]));
      clipped_count += std::abs(r - 1.0) > eps;
      if (!with_grad) continue;
      const double ds_dr = (unclipped <= clipped && !guarded) ? adv : 0.0;
      auto g = d_out[k].col(static_cast<Eigen::Index>(c));
      for (int j = 0; j < static_cast<int>(dist.probs.size()); ++j) {
        const double p = dist.probs[j];
        double dlp = 0.0;
        if (dist.probs[a] >= nn::kProbFloor) dlp = (j == a ? 1.0 : 0.0) - p;
        const double dh = p > 0.0 ? -p * (std::log(std::max(p, nn::kProbFloor)) + h) : 0.0;
        g(j) = -(ds_dr * r * dlp + sigma * dh) / m;
      }
    }
  }
  terms.surrogate /= m;
  terms.entropy /= m;
  terms.mean_ratio /= m;
  terms.clip_fraction = clipped_count / m;
  terms.objective = terms.surrogate + sigma * terms.entropy;
  if (with_grad) actor.backward(store, cache, d_out);
  return terms;
}

double critic_objective(const nn::RecurrentNet& critic, nn::ParamStore& store, const TrajectorySource& source,
                        std::span<const Chunk> chunks, const std::vector<std::vector<double>>& targets,
                        const TrainConfig& config, bool with_grad) {
  if (chunks.empty()) throw ArgumentError("no chunks");
  const int l = source.chunk_length();
  auto batch = gather(source, chunks, true);
  auto cache = critic.forward(store, batch.inputs, batch.h0, batch.keep);
  const auto m = static_cast<double>(l) * static_cast<double>(chunks.size());
  const double eps = config.clip_epsilon;

  double loss = 0.0;
  std::vector<Matrix> d_out(l);
  for (int k = 0; k < l; ++k) {
    d_out[k].setZero(1, static_cast<Eigen::Index>(chunks.size()));
    for (std::size_t c = 0; c < chunks.size(); ++c) {
      const auto& tr = source.agent(chunks[c].agent);
      const int t = chunks[c].start + k;
      const double v = cache.outputs[k](0, static_cast<Eigen::Index>(c));
      const double target = targets.at(chunks[c].agent).at(t);
      const double v_old = tr.raw_values[t];
      const double vc = clip_fn(v, v_old, eps);
      const double e1 = (v - target) * (v - target);
      const double e2 = (vc - target) * (vc - target);
      if (!std::isfinite(e1) || !std::isfinite(e2)) throw TrainingError("non-finite critic loss");
      loss += std::max(e1, e2);
      if (!with_grad) continue;
      double g = 0.0;
      if (e1 >= e2) {
        g = 2.0 * (v - target);
      } else if (std::abs(v - v_old) < eps) {
        g = 2.0 * (vc - target);
      }
      d_out[k](0, static_cast<Eigen::Index>(c)) = g / m;
    }
  }
  if (with_grad) critic.backward(store, cache, d_out);
  return loss / m;
}

UpdateStats update_member(PolicyMember& member, const TrajectorySource& source, std::span<const int> agents,
                          const TrainConfig& config, Rng& rng) {
  const PolicyMember snapshot = member;
  try {
    const int n_total = source.num_agents();
    std::vector<std::vector<double>> targets(n_total), adv(n_total);

    std::vector<double> all_returns;
    for (int n : agents) {
      const auto& r = source.agent(n).returns;
      all_returns.insert(all_returns.end(), r.begin(), r.end());
    }
    if (config.value_normalization) member.value_norm.update(all_returns);
    double adv_mean = 0.0, adv_sq = 0.0, count = 0.0;
    for (int n : agents) {
      const auto& tr = source.agent(n);
      targets[n] = tr.returns;
      if (config.value_normalization) {
        for (double& x : targets[n]) x = member.value_norm.normalize(x);
      }
      adv[n] = tr.advantages;
      for (double a : adv[n]) {
        adv_mean += a;
        adv_sq += a * a;
        count += 1.0;
      }
    }
    if (config.normalize_advantages && count > 0) {
      adv_mean /= count;
      const double sd = std::sqrt(std::max(adv_sq / count - adv_mean * adv_mean, 0.0));
      for (int n : agents) {
        for (double& a : adv[n]) a = (a - adv_mean) / (sd + 1e-8);
      }
    }

    auto chunks = make_chunks(source, agents);
    const int mb = std::min<int>(config.num_minibatches, static_cast<int>(chunks.size()));
    nn::AdamConfig actor_opt{config.actor_lr, 0.9, 0.999, 1e-8, config.max_grad_norm};
    nn::AdamConfig critic_opt{config.critic_lr, 0.9, 0.999, 1e-8, config.max_grad_norm};

    UpdateStats stats;
    int passes = 0;
    for (int epoch = 0; epoch < config.epochs_per_update; ++epoch) {
      for (std::size_t i = chunks.size(); i > 1; --i) {
        std::swap(chunks[i - 1], chunks[uniform_index(rng, i)]);
      }
      for (int b = 0; b < mb; ++b) {
        const std::size_t lo = chunks.size() * b / mb;
        const std::size_t hi = chunks.size() * (b + 1) / mb;
        std::span<const Chunk> part(chunks.data() + lo, hi - lo);

        member.actor_params.zero_grad();
        auto terms = actor_objective(member.actor, member.actor_params, source, part, adv, config, true);
        nn::adam_step(member.actor_params, actor_opt);

        member.critic_params.zero_grad();
        const double closs = critic_objective(member.critic, member.critic_params, source, part, targets, config, true);
        nn::adam_step(member.critic_params, critic_opt);

        stats.actor_loss += -terms.objective;
        stats.critic_loss += closs;
        stats.entropy += terms.entropy;
        stats.clip_fraction += terms.clip_fraction;
        stats.mean_ratio += terms.mean_ratio;
        stats.guard_hits += terms.guard_hits;
        ++passes;
      }
    }
    stats.actor_loss /= passes;
    stats.critic_loss /= passes;
    stats.entropy /= passes;
    stats.clip_fraction /= passes;
    stats.mean_ratio /= passes;
    return stats;
  } catch (const Error& e) {
    member = snapshot;
    throw TrainingError(std::string("update aborted: ") + e.what());
  }
}

UpdateStats update(PolicySet& policies, RolloutBuffer& buffer, const TrainConfig& config, Rng& rng) {
  if (buffer.num_agents() != policies.num_agents()) throw ArgumentError("buffer and policy agent counts differ");
  if (buffer.steps() == 0) throw ArgumentError("empty rollout buffer");
  compute_targets(buffer, config);
  UpdateStats total;
  const int members = policies.num_members();
  for (int k = 0; k < members; ++k) {
    std::vector<int> agents;
    if (policies.mode() == PolicyMode::kShared) {
      agents.resize(buffer.num_agents());
      std::iota(agents.begin(), agents.end(), 0);
    } else {
      agents = {k};
    }
    auto s = update_member(policies.member(k), buffer, agents, config, rng);
    total.actor_loss += s.actor_loss / members;
    total.critic_loss += s.critic_loss / members;
    total.entropy += s.entropy / members;
    total.clip_fraction += s.clip_fraction / members;
    total.mean_ratio += s.mean_ratio / members;
    total.guard_hits += s.guard_hits;
  }
  return total;
}

std::optional<double> RolloutStats::mean_delay() const {
  if (departures == 0) return std::nullopt;
  return static_cast<double>(delay_sum) / static_cast<double>(departures);
}

RolloutCollector::RolloutCollector(Environment env, const TrainConfig& config, std::uint64_t seed)
    : env_(std::move(env)), config_(config), rng_(make_rng(seed, 2)), episode_seed_(derive_seed(seed, 1)) {
  config_.validate();
}

void RolloutCollector::start_episode() {
  env_.reset(derive_seed(episode_seed_, static_cast<std::uint64_t>(episodes_started_++)));
  episode_slot_ = 0;
  actor_h_.setZero();
  critic_h_.setZero();
  env_.begin_slot();
}

RolloutBuffer RolloutCollector::collect(const PolicySet& policies, int steps) {
  const auto& spec = policies.spec();
  const int n = env_.num_links();
  const int l = config_.bptt_chunk_length;
  if (steps < 0 || steps % l != 0) throw ArgumentError("rollout steps must be a multiple of the chunk length");
  if (policies.num_agents() != n) throw ConfigError("policy agent count does not match the graph");
  if (spec.obs_width != 1 + env_.graph().max_degree() || spec.num_subbands != env_.config().num_subbands) {
    throw ConfigError("policy dimensions do not match the environment");
  }

  RolloutBuffer buf;
  buf.chunk = l;
  buf.starts.assign(steps, 0);
  buf.segment_end.assign(steps, 0);
  buf.agents.resize(n);
  for (auto& a : buf.agents) {
    a.inputs.resize(spec.input_width(), steps);
    a.actions.resize(steps);
    a.log_probs.resize(steps);
    a.values.resize(steps);
    a.raw_values.resize(steps);
    a.rewards.resize(steps);
    a.bootstrap.assign(steps, 0.0);
    a.actor_h.resize(spec.hidden, steps / l);
    a.critic_h.resize(spec.hidden, steps / l);
  }
  stats_ = RolloutStats{};
  if (steps == 0) return buf;

  bool fresh = false;
  if (!started_) {
    actor_h_.setZero(spec.hidden, n);
    critic_h_.setZero(spec.hidden, n);
    start_episode();
    started_ = true;
    fresh = true;
  }
  // A policy of a different width would leave stale shapes behind.
  if (actor_h_.rows() != spec.hidden) throw ConfigError("policy hidden size changed between rollouts");

  double reward_sum = 0.0;
  JointAction joint(n);
  for (int t = 0; t < steps; ++t) {
    if (t % l == 0) {
      for (int i = 0; i < n; ++i) {
        buf.agents[i].actor_h.col(t / l) = actor_h_.col(i);
        buf.agents[i].critic_h.col(t / l) = critic_h_.col(i);
      }
    }
    buf.starts[t] = fresh;
    fresh = false;

    Matrix inputs = encode_observations(env_, spec.input_scale);
    Matrix logits = policy_forward(policies, false, inputs, actor_h_);
    Matrix raw = policy_forward(policies, true, inputs, critic_h_);
    for (int i = 0; i < n; ++i) {
      auto& a = buf.agents[i];
      a.inputs.col(t) = inputs.col(i);
      auto dist = column_dist(logits, i);
      const int act = nn::sample(dist, rng_);
      a.actions[t] = act;
      a.log_probs[t] = nn::log_prob(dist, act);
      a.raw_values[t] = raw(0, i);
      a.values[t] = policies.member(policies.member_index(i)).value_norm.denormalize(raw(0, i));
      joint[i].mask = static_cast<std::uint32_t>(act);
    }

    const auto delay_before = env_.state().delay_sum;
    const auto dep_before = env_.state().departures_total;
    auto out = env_.step(joint);
    stats_.delay_sum += env_.state().delay_sum - delay_before;
    stats_.departures += env_.state().departures_total - dep_before;
    for (int i = 0; i < n; ++i) {
      buf.agents[i].rewards[t] = out.rewards[i];
      reward_sum += out.rewards[i];
    }
    ++episode_slot_;
    ++total_steps_;

    const bool time_up = episode_slot_ >= config_.episode_length;
    const bool end = out.truncated || time_up;
    env_.begin_slot();
    if (end || t == steps - 1) {
      buf.segment_end[t] = 1;
      bool use_bootstrap = true;
      if (out.truncated) {
        use_bootstrap = config_.bootstrap_truncation;
      } else if (time_up) {
        use_bootstrap = config_.bootstrap_time_limit;
      }
      if (use_bootstrap) {
        Matrix h = critic_h_;
        Matrix next = policy_forward(policies, true, encode_observations(env_, spec.input_scale), h);
        for (int i = 0; i < n; ++i) {
          buf.agents[i].bootstrap[t] = policies.member(policies.member_index(i)).value_norm.denormalize(next(0, i));
        }
      }
    }
    if (end) {
      stats_.truncations += out.truncated;
      ++stats_.episodes_finished;
      start_episode();
      fresh = true;
    }
  }
  // The next collection continues the open episode with its carried state.
  stats_.mean_reward = reward_sum / (static_cast<double>(steps) * n);
  return buf;
}

namespace {

constexpr const char* kCheckpointMagic = "CSCHED-CKPT v1";

std::filesystem::path member_file(const std::filesystem::path& dir, PolicyMode mode, int k) {
  if (mode == PolicyMode::kShared) return dir / "policy.ckpt";
  return dir / ("agent_" + std::to_string(k) + ".ckpt");
}

std::string describe(const PolicySet& p, int k) {
  const auto& s = p.spec();
  const auto& m = p.member(k);
  std::ostringstream os;
  char scale[40];
  std::snprintf(scale, sizeof scale, "%.17g", s.input_scale);
  os << "mode=" << to_string(p.mode()) << " member=" << k << " agents=" << p.num_agents()
     << " obs_width=" << s.obs_width << " num_subbands=" << s.num_subbands << " num_actions=" << s.num_actions()
     << " dense=" << s.dense << " hidden=" << s.hidden << " input_scale=" << scale
     << " actor=" << m.actor.layout().describe() << " critic=" << m.critic.layout().describe();
  return os.str();
}

std::map<std::string, std::string> parse_descriptor(const std::string& line) {
  std::map<std::string, std::string> kv;
  std::istringstream is(line);
  std::string tok;
  while (is >> tok) {
    const auto eq = tok.find('=');
    if (eq == std::string::npos) throw ConfigError("bad checkpoint descriptor token '" + tok + "'");
    kv[tok.substr(0, eq)] = tok.substr(eq + 1);
  }
  return kv;
}

const std::string& field(const std::map<std::string, std::string>& kv, const std::string& key) {
  auto it = kv.find(key);
  if (it == kv.end()) throw ConfigError("checkpoint descriptor lacks '" + key + "'");
  return it->second;
}

int int_field(const std::map<std::string, std::string>& kv, const std::string& key) {
  const auto& v = field(kv, key);
  try {
    std::size_t used = 0;
    const int x = std::stoi(v, &used);
    if (used != v.size()) throw ConfigError("");
    return x;
  } catch (const std::exception&) {
    throw ConfigError("checkpoint field " + key + " is not an integer");
  }
}

}  // namespace

void save_policy(const PolicySet& policies, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  for (int k = 0; k < policies.num_members(); ++k) {
    const auto path = member_file(dir, policies.mode(), k);
    const auto tmp = path.string() + ".tmp";
    {
      std::ofstream os(tmp);
      if (!os) throw Error("cannot write " + tmp);
      const auto& m = policies.member(k);
      os << kCheckpointMagic << '\n' << describe(policies, k) << '\n';
      nn::write_values(os, m.actor_params.values);
      nn::write_values(os, m.critic_params.values);
      const double norm[] = {m.value_norm.beta, m.value_norm.mean, m.value_norm.mean_sq, m.value_norm.debias};
      nn::write_values(os, norm);
      if (!os) throw Error("write failed for " + tmp);
    }
    std::filesystem::rename(tmp, path);
  }
}

PolicySet load_policy(const std::filesystem::path& dir) {
  auto read_header = [](std::ifstream& is, const std::filesystem::path& path) {
    std::string magic, desc;
    if (!std::getline(is, magic) || magic != kCheckpointMagic) {
      throw ConfigError("not a checkpoint: " + path.string());
    }
    if (!std::getline(is, desc)) throw ConfigError("truncated checkpoint: " + path.string());
    return parse_descriptor(desc);
  };

  PolicyMode mode = PolicyMode::kShared;
  auto first = dir / "policy.ckpt";
  if (!std::filesystem::exists(first)) {
    mode = PolicyMode::kSeparate;
    first = dir / "agent_0.ckpt";
  }
  std::ifstream head(first);
  if (!head) throw ConfigError("no checkpoint in " + dir.string());
  auto kv = read_header(head, first);
  if (parse_policy_mode(field(kv, "mode")) != mode) throw ConfigError("checkpoint mode does not match its file name");
  PolicySpec spec;
  spec.obs_width = int_field(kv, "obs_width");
  spec.num_subbands = int_field(kv, "num_subbands");
  spec.dense = int_field(kv, "dense");
  spec.hidden = int_field(kv, "hidden");
  spec.input_scale = std::strtod(field(kv, "input_scale").c_str(), nullptr);
  const int agents = int_field(kv, "agents");
  if (spec.obs_width < 1 || spec.num_subbands < 1 || spec.num_subbands > 16 || spec.dense < 1 || spec.hidden < 1 ||
      agents < 1 || !(spec.input_scale > 0.0) || int_field(kv, "num_actions") != spec.num_actions()) {
    throw ConfigError("inconsistent checkpoint dimensions in " + first.string());
  }
  PolicySet p(mode, agents, spec);
  for (int k = 0; k < p.num_members(); ++k) {
    const auto path = member_file(dir, mode, k);
    std::ifstream is(path);
    if (!is) throw ConfigError("missing checkpoint " + path.string());
    auto d = read_header(is, path);
    auto& m = p.member(k);
    if (int_field(d, "member") != k || field(d, "actor") != m.actor.layout().describe() ||
        field(d, "critic") != m.critic.layout().describe() || int_field(d, "agents") != agents ||
        int_field(d, "obs_width") != spec.obs_width || int_field(d, "num_subbands") != spec.num_subbands) {
      throw ConfigError("checkpoint layout mismatch in " + path.string());
    }
    const auto actor_values = nn::read_values(is, m.actor_params.size());
    m.actor_params.values.assign(actor_values.begin(), actor_values.end());
    const auto critic_values = nn::read_values(is, m.critic_params.size());
    m.critic_params.values.assign(critic_values.begin(), critic_values.end());
    auto norm = nn::read_values(is, 4);
    m.value_norm = ValueNorm{norm[0], norm[1], norm[2], norm[3]};
    ++m.actor_params.version;
    ++m.critic_params.version;
  }
  return p;
}

MarlScheduler::MarlScheduler(PolicySet policies, bool greedy) : policies_(std::move(policies)), greedy_(greedy) {}

void MarlScheduler::reset(int num_links) { hidden_.setZero(policies_.spec().hidden, num_links); }

JointAction MarlScheduler::decide(const Environment& env, Rng& rng) {
  const int n = env.num_links();
  const auto& spec = policies_.spec();
  if (spec.obs_width != 1 + env.graph().max_degree() || spec.num_subbands != env.config().num_subbands) {
    throw ConfigError("checkpoint dimensions do not match the graph or sub-band count");
  }
  if (policies_.mode() == PolicyMode::kSeparate && policies_.num_agents() != n) {
    throw ConfigError("separate-policy checkpoint has a different number of agents than the graph");
  }
  if (hidden_.cols() != n || hidden_.rows() != spec.hidden) reset(n);
  Matrix inputs = encode_observations(env, spec.input_scale);
  Matrix logits = policy_forward(policies_, false, inputs, hidden_);
  JointAction out(n);
  for (int i = 0; i < n; ++i) {
    auto dist = column_dist(logits, i);
    out[i].mask = static_cast<std::uint32_t>(greedy_ ? nn::mode(dist) : nn::sample(dist, rng));
  }
  return out;
}

}  // namespace csched
