#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "csched/env.hpp"
#include "csched/graph.hpp"
#include "csched/mappo.hpp"
#include "csched/schedulers.hpp"
#include "csched/traffic.hpp"

namespace csched {

/// Library version recorded in run metadata.
std::string code_version();

/// Keeps freed network buffers in the heap instead of returning them to the
/// OS, which otherwise costs a page fault per fresh matrix. Process-wide;
/// called by run_training. No-op off glibc.
void tune_allocator();

struct GraphSpec {
  std::string kind = "random";  ///< random | grid24 | cellular | file
  int n = 20;
  int d_min = 2;
  int d_max = 4;
  std::uint64_t seed = 1;
  std::string path;
  double area_km = 2.0;
  std::optional<double> threshold_db;
};

struct TrafficSpec {
  std::string profile = "uniform";  ///< uniform | grid24 | file
  /// Per-link base rate of the uniform profile.
  double lambda = 1.0;
  std::optional<double> rho;
  std::optional<LoadLevel> load;
  LoadFractions fractions;
  std::string path;
  std::vector<double> mixture_weights;
  /// Slots per stability probe of the capacity bisection.
  int capacity_slots = 4000;
  int capacity_iterations = 12;
};

struct EvalConfig {
  int episodes = 10;
  int episode_length = 5000;
  bool greedy = true;
  double slope_threshold = 0.01;
  double quartile_factor = 10.0;
};

struct RunConfig {
  GraphSpec graph;
  TrafficSpec traffic;
  EnvConfig env;
  SchedulerKind scheduler = SchedulerKind::kLlq;
  BaselineOptions baseline;
  std::string checkpoint;
  TrainConfig train;
  std::int64_t total_steps = 200000;
  int checkpoint_every = 10;
  EvalConfig eval;
  std::uint64_t master_seed = 1;
  std::uint64_t eval_seed = 2;
  std::string output_dir = "run";
  std::array<std::string, 3> mismatch_checkpoints;  ///< trained light, medium, heavy
  /// Entries in file order, exactly as written.
  std::vector<std::pair<std::string, std::string>> entries;
};

/// Parses `section.key = value` lines; '#' starts a comment. Unknown keys,
/// malformed lines and bad values are ConfigErrors naming the line.
RunConfig parse_run_config(const std::string& text);
RunConfig load_run_config(const std::filesystem::path& file);
/// Sets one key as if it appeared at the end of the file.
void apply_setting(RunConfig& config, const std::string& key, const std::string& value);
std::vector<std::string> known_config_keys();

/// Concrete objects a run needs.
struct Scenario {
  ConflictGraph graph;
  std::optional<CellularLayout> layout;
  EnvConfig env;
  TrafficProfile base;  ///< load factor 1
  TrafficProfile profile;
  std::optional<double> capacity;
  double rho = 1.0;
};

ConflictGraph build_graph(const GraphSpec& spec, std::optional<CellularLayout>* layout = nullptr);
Scenario resolve_scenario(const RunConfig& config);

/// Load factor at which the MaxWeight baseline stops being stable for the
/// given base profile, found by bisection. Graphs beyond the exact solver's
/// cap use a greedy max-weight schedule.
double capacity_proxy(const ConflictGraph& graph, const EnvConfig& env, const TrafficProfile& base,
                      const TrafficSpec& spec, const EvalConfig& eval, std::uint64_t seed);

TrafficProfile profile_for_load(Scenario& scenario, const RunConfig& config, LoadLevel level);

enum class StabilityLabel { kGood, kMixed, kUnstable };

std::string to_string(StabilityLabel label);

/// "unstable" iff the least-squares slope over the last half exceeds
/// `slope_threshold` or the final value exceeds `quartile_factor` times
/// max(1, median of the first quarter). Needs at least 100 points.
StabilityLabel classify_stability(std::span<const double> series, double slope_threshold, double quartile_factor);
StabilityLabel aggregate_labels(std::span<const StabilityLabel> labels);

struct EpisodeResult {
  std::optional<double> mean_delay;
  double throughput = 0.0;
  std::int64_t departures = 0;
  std::int64_t final_queue = 0;
  StabilityLabel label = StabilityLabel::kGood;
};

struct EvalReport {
  std::string scheduler;
  std::vector<EpisodeResult> episodes;
  std::optional<double> mean_delay;    ///< over episodes with departures
  std::optional<double> stddev_delay;
  double throughput = 0.0;
  std::vector<std::optional<double>> link_delays;  ///< packet-weighted over episodes
  std::vector<StabilityLabel> link_labels;
  StabilityLabel label = StabilityLabel::kGood;
};

/// Independent episodes with seeds derived from `seed`; no truncation.
EvalReport run_evaluation(const ConflictGraph& graph, const EnvConfig& env, const TrafficProfile& profile,
                          Scheduler& scheduler, const EvalConfig& eval, std::uint64_t seed);

void write_eval_episodes_csv(std::ostream& os, const EvalReport& report);
void write_eval_links_csv(std::ostream& os, const EvalReport& report);
void write_eval_summary_header(std::ostream& os);
void write_eval_summary_row(std::ostream& os, const EvalReport& report);

struct TrainStatsRow {
  int update_index = 0;
  std::int64_t env_steps = 0;
  double mean_reward = 0.0;
  std::optional<double> mean_episode_delay;
  UpdateStats stats;
  int truncation_count = 0;
};

void write_train_stats_header(std::ostream& os);
void write_train_stats_row(std::ostream& os, const TrainStatsRow& row);

struct TrainingResult {
  PolicySet policy;
  std::vector<TrainStatsRow> rows;
  std::filesystem::path final_checkpoint;
  double seconds = 0.0;
};

/// Trains until the step budget is spent, writing into `run_dir`: the config
/// text, metadata, train_stats.csv and checkpoints/{update_K,final}. A
/// non-finite update aborts with TrainingError; earlier checkpoints stay.
TrainingResult run_training(const RunConfig& config, const Scenario& scenario, const std::filesystem::path& run_dir,
                            std::ostream* progress = nullptr);

/// Baseline or checkpoint scheduler named by the config.
std::unique_ptr<Scheduler> make_scheduler(const RunConfig& config);

/// Evaluates each trained policy (rows: trained light, medium, heavy) under
/// each load (columns).
std::array<std::array<StabilityLabel, 3>, 3> run_mismatch_grid(const RunConfig& config, Scenario& scenario,
                                                                const std::array<std::string, 3>& checkpoints);
void write_mismatch_csv(std::ostream& os, const std::array<std::array<StabilityLabel, 3>, 3>& grid);

/// Decimal with 6 significant digits, as used in every CSV.
std::string fmt6(double x);

}  // namespace csched
