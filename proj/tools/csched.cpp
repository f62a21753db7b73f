#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "csched/error.hpp"
#include "csched/harness.hpp"

using namespace csched;
namespace fs = std::filesystem;

namespace {

struct Common {
  std::string config_path;
  std::vector<std::string> sets;
};

RunConfig load_config(const Common& c) {
  RunConfig cfg = c.config_path.empty() ? parse_run_config("") : load_run_config(c.config_path);
  for (const auto& s : c.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + s + "'");
    auto trim = [](std::string x) {
      x.erase(0, x.find_first_not_of(' '));
      x.erase(x.find_last_not_of(' ') + 1);
      return x;
    };
    apply_setting(cfg, trim(s.substr(0, eq)), trim(s.substr(eq + 1)));
  }
  // re-validate after overrides
  std::string text;
  for (const auto& [k, v] : cfg.entries) text += k + " = " + v + "\n";
  return parse_run_config(text);
}

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("--config", c.config_path, "Run configuration file");
  sub->add_option("--set", c.sets, "Override a key, e.g. --set train.total_steps=1000");
}

void describe(const Scenario& s) {
  std::cerr << "links " << s.graph.num_links() << ", rho " << fmt6(s.rho);
  if (s.capacity) std::cerr << ", capacity proxy " << fmt6(*s.capacity);
  std::cerr << "\n";
}

void write_report(const EvalReport& report, const std::string& out_dir) {
  write_eval_summary_header(std::cout);
  write_eval_summary_row(std::cout, report);
  if (out_dir.empty()) return;
  fs::create_directories(out_dir);
  std::ofstream summary(fs::path(out_dir) / "eval_summary.csv");
  write_eval_summary_header(summary);
  write_eval_summary_row(summary, report);
  std::ofstream episodes(fs::path(out_dir) / "eval_episodes.csv");
  write_eval_episodes_csv(episodes, report);
  std::ofstream links(fs::path(out_dir) / "eval_links.csv");
  write_eval_links_csv(links, report);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Packet scheduling on conflict graphs: baselines and a recurrent MAPPO learner"};
  app.require_subcommand(1);

  // generate-graph
  auto* gen = app.add_subcommand("generate-graph", "Write a conflict graph as an edge list");
  GraphSpec gs;
  std::string gen_out, layout_out;
  double threshold = 0.0;
  gen->add_option("--kind", gs.kind, "random | grid24 | cellular")->check(CLI::IsMember({"random", "grid24", "cellular"}));
  gen->add_option("--n", gs.n, "Number of links");
  gen->add_option("--d-min", gs.d_min, "Minimum degree (random)");
  gen->add_option("--d-max", gs.d_max, "Maximum degree (random)");
  gen->add_option("--seed", gs.seed, "Generator seed");
  gen->add_option("--area-km", gs.area_km, "Square side in km (cellular)");
  auto* thr = gen->add_option("--threshold-db", threshold, "Conflict path-loss threshold in dB (cellular)");
  gen->add_option("--out", gen_out, "Edge-list output file")->required();
  gen->add_option("--layout-out", layout_out, "Cellular layout CSV output file");

  // train
  auto* train = app.add_subcommand("train", "Train MAPPO policies");
  Common train_c;
  std::string train_out;
  bool quiet = false;
  add_common(train, train_c);
  train->add_option("--out", train_out, "Run directory (default: output.dir)");
  train->add_flag("--quiet", quiet, "No per-update progress");

  // evaluate
  auto* evaluate = app.add_subcommand("evaluate", "Evaluate a checkpoint or baseline");
  Common eval_c;
  std::string eval_ckpt, eval_out;
  int eval_episodes = 0;
  add_common(evaluate, eval_c);
  evaluate->add_option("--checkpoint", eval_ckpt, "Checkpoint directory (implies scheduler marl)");
  evaluate->add_option("--episodes", eval_episodes, "Evaluation episodes");
  evaluate->add_option("--out", eval_out, "Directory for the report CSVs");

  // bench
  auto* bench = app.add_subcommand("bench", "Evaluate a baseline on a graph file");
  Common bench_c;
  std::string bench_graph, bench_sched = "llq", bench_load, bench_out;
  int bench_episodes = 0;
  double bench_rho = -1.0;
  add_common(bench, bench_c);
  bench->add_option("--graph", bench_graph, "Edge-list file");
  bench->add_option("--scheduler", bench_sched, "llq | qcsma | maxweight | random");
  bench->add_option("--load", bench_load, "light | medium | heavy");
  bench->add_option("--rho", bench_rho, "Explicit load factor");
  bench->add_option("--episodes", bench_episodes, "Evaluation episodes");
  bench->add_option("--out", bench_out, "Directory for the report CSVs");

  // mismatch
  auto* mismatch = app.add_subcommand("mismatch", "Evaluate light/medium/heavy-trained policies under every load");
  Common mm_c;
  std::string mm_light, mm_medium, mm_heavy, mm_out;
  add_common(mismatch, mm_c);
  mismatch->add_option("--light", mm_light, "Checkpoint trained under light load");
  mismatch->add_option("--medium", mm_medium, "Checkpoint trained under medium load");
  mismatch->add_option("--heavy", mm_heavy, "Checkpoint trained under heavy load");
  mismatch->add_option("--out", mm_out, "CSV output file (default: stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  tune_allocator();
  try {
    if (*gen) {
      if (*thr) gs.threshold_db = threshold;
      std::optional<CellularLayout> layout;
      auto g = build_graph(gs, &layout);
      write_edge_list_file(g, gen_out);
      if (!layout_out.empty()) {
        if (!layout) throw ConfigError("--layout-out needs --kind cellular");
        std::ofstream(layout_out) << write_layout_csv(*layout);
      }
      std::cerr << "wrote " << g.num_links() << " links, " << g.edges().size() << " edges to " << gen_out << "\n";
    } else if (*train) {
      auto cfg = load_config(train_c);
      auto scenario = resolve_scenario(cfg);
      const fs::path dir = train_out.empty() ? fs::path(cfg.output_dir) : fs::path(train_out);
      auto result = run_training(cfg, scenario, dir, quiet ? nullptr : &std::cerr);
      std::cout << "final checkpoint: " << result.final_checkpoint.string() << "\n"
                << "seconds: " << fmt6(result.seconds) << "\n";
    } else if (*evaluate) {
      auto cfg = load_config(eval_c);
      if (!eval_ckpt.empty()) {
        cfg.scheduler = SchedulerKind::kMarl;
        cfg.checkpoint = eval_ckpt;
      }
      if (eval_episodes > 0) cfg.eval.episodes = eval_episodes;
      auto scenario = resolve_scenario(cfg);
      describe(scenario);
      auto sched = make_scheduler(cfg);
      auto report = run_evaluation(scenario.graph, scenario.env, scenario.profile, *sched, cfg.eval, cfg.eval_seed);
      write_report(report, eval_out);
    } else if (*bench) {
      auto cfg = load_config(bench_c);
      if (!bench_graph.empty()) {
        cfg.graph.kind = "file";
        cfg.graph.path = bench_graph;
      }
      cfg.scheduler = parse_scheduler_kind(bench_sched);
      if (cfg.scheduler == SchedulerKind::kMarl) throw ConfigError("bench runs baselines; use evaluate for checkpoints");
      if (!bench_load.empty()) {
        cfg.traffic.rho.reset();
        cfg.traffic.load = parse_load_level(bench_load);
      }
      if (bench_rho >= 0.0) {
        cfg.traffic.load.reset();
        cfg.traffic.rho = bench_rho;
      }
      if (bench_episodes > 0) cfg.eval.episodes = bench_episodes;
      auto scenario = resolve_scenario(cfg);
      describe(scenario);
      auto sched = make_scheduler(cfg);
      auto report = run_evaluation(scenario.graph, scenario.env, scenario.profile, *sched, cfg.eval, cfg.eval_seed);
      write_report(report, bench_out);
    } else if (*mismatch) {
      auto cfg = load_config(mm_c);
      std::array<std::string, 3> ckpts = cfg.mismatch_checkpoints;
      if (!mm_light.empty()) ckpts[0] = mm_light;
      if (!mm_medium.empty()) ckpts[1] = mm_medium;
      if (!mm_heavy.empty()) ckpts[2] = mm_heavy;
      for (const auto& c : ckpts) {
        if (c.empty()) throw ConfigError("mismatch needs light, medium and heavy checkpoints");
      }
      auto scenario = resolve_scenario(cfg);
      auto grid = run_mismatch_grid(cfg, scenario, ckpts);
      if (mm_out.empty()) {
        write_mismatch_csv(std::cout, grid);
      } else {
        std::ofstream os(mm_out);
        write_mismatch_csv(os, grid);
      }
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const ArgumentError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
