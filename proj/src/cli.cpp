#include "marla/cli.hpp"

#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>

#include "marla/config.hpp"
#include "marla/csv.hpp"
#include "marla/eval.hpp"
#include "marla/rollout.hpp"
#include "marla/trace.hpp"
#include "marla/training.hpp"

namespace marla {

namespace {

namespace fs = std::filesystem;

struct CommonFlags {
  std::string config_path;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;
  std::optional<int> workers;
  std::optional<std::string> out_dir;
  std::optional<std::string> mode;
};

RunConfig load_with_flags(const CommonFlags& flags) {
  std::vector<std::string> overrides = flags.sets;
  if (flags.seed) overrides.push_back("run.seed=" + std::to_string(*flags.seed));
  if (flags.workers) overrides.push_back("run.workers=" + std::to_string(*flags.workers));
  if (flags.out_dir) overrides.push_back("run.out_dir=" + *flags.out_dir);
  if (flags.mode) overrides.push_back("run.mode=" + *flags.mode);
  return load_run_config(flags.config_path, overrides);
}

void write_run_metadata(const RunConfig& cfg, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "marla_version = " << kVersion << "\n";
  out << "seed = " << cfg.run.seed << "\n";
  out << "# config snapshot\n";
  out << cfg.snapshot();
}

std::string checkpoint_name(int iteration) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "checkpoint_%06d.bin", iteration);
  return buf;
}

void save_training_checkpoint(const TrainingRun& run, const std::string& path) {
  Checkpoint ckpt;
  ckpt.actor = run.actor;
  ckpt.critic = run.critic;
  ckpt.actor_opt = run.actor_opt;
  ckpt.critic_opt = run.critic_opt;
  ckpt.kl_beta = run.kl_state.beta;
  save_checkpoint(path, ckpt);
}

// Architecture must match the config before any evaluation touches it.
void check_widths(const Network& actor, const Network& critic, const EnvConfig& env) {
  const int want_in = policy_input_size(env);
  const int want_out = policy_action_size(env);
  const int want_cin = critic_input_size(env);
  if (actor.input_size() != want_in || actor.output_size() != want_out ||
      critic.input_size() != want_cin || critic.output_size() != 1) {
    throw CheckpointMismatchError(
        "checkpoint does not match config: expected actor " + std::to_string(want_in) + "->" +
        std::to_string(want_out) + ", critic " + std::to_string(want_cin) +
        "->1; found actor " + std::to_string(actor.input_size()) + "->" +
        std::to_string(actor.output_size()) + ", critic " +
        std::to_string(critic.input_size()) + "->" + std::to_string(critic.output_size()));
  }
}

int cmd_train(const CommonFlags& flags) {
  const RunConfig cfg = load_with_flags(flags);
  if (cfg.run.mode == RunMode::Heuristic) {
    throw std::invalid_argument("run.mode heuristic has nothing to train; use eval or sweep");
  }
  fs::create_directories(cfg.run.out_dir);
  write_run_metadata(cfg, cfg.run.out_dir + "/run_meta.txt");

  TrainingRun run = initialize_training(cfg);

  std::ofstream stats(cfg.run.out_dir + "/stats.csv", std::ios::trunc);
  if (!stats) throw std::runtime_error("cannot write stats.csv in " + cfg.run.out_dir);
  stats << training_stats_header() << "\n";

  if (cfg.run.iterations == 0) {
    save_training_checkpoint(run, cfg.run.out_dir + "/checkpoint_final.bin");
    std::cout << "no iterations requested; wrote initial checkpoint\n";
    return 0;
  }

  run_training(run, cfg, cfg.run.iterations, [&](const TrainingStats& s) {
    stats << training_stats_row(s) << "\n";
    stats.flush();
    std::cout << "iter " << s.iteration << " risk " << s.mean_episode_risk << " err "
              << s.mean_error_rate << " size " << s.mean_sample_size << " kl " << s.mean_kl
              << " beta " << s.beta << "\n";
    if ((s.iteration + 1) % cfg.run.checkpoint_every == 0) {
      save_training_checkpoint(run, cfg.run.out_dir + "/" + checkpoint_name(s.iteration + 1));
    }
    return false;
  });

  save_training_checkpoint(run, cfg.run.out_dir + "/checkpoint_final.bin");
  return 0;
}

int cmd_eval(const CommonFlags& flags, const std::string& checkpoint_path, int episodes,
             bool greedy, const std::string& trace_path) {
  const RunConfig cfg = load_with_flags(flags);
  const int num_episodes = episodes > 0 ? episodes : cfg.eval.episodes;
  if (num_episodes < 1) throw std::invalid_argument("eval: episodes must be positive");

  PolicyFn policy;
  Checkpoint ckpt;
  if (cfg.run.mode == RunMode::Heuristic) {
    policy = make_heuristic_policy(cfg.heuristic.threshold);
  } else {
    if (checkpoint_path.empty()) {
      throw std::invalid_argument("eval: --checkpoint required unless run.mode = heuristic");
    }
    ckpt = load_checkpoint(checkpoint_path);
    check_widths(ckpt.actor, ckpt.critic, cfg.env);
    policy = make_network_policy(ckpt.actor);
  }

  const ActionMode mode = greedy ? ActionMode::Greedy : ActionMode::Stochastic;
  std::optional<TraceWriter> trace;
  if (!trace_path.empty()) {
    trace.emplace(trace_path, cfg.env.num_processes(), /*training_columns=*/false);
  }
  MetricsRecord record = evaluate(policy, cfg.env, num_episodes, cfg.run.seed, mode,
                                  cfg.run.workers, trace ? &*trace : nullptr);
  record.config_id = run_mode_name(cfg.run.mode) + "_m" +
                     std::to_string(cfg.env.num_processes()) + "_k" +
                     std::to_string(cfg.env.num_agents());

  std::cout << metrics_csv_header() << "\n" << metrics_csv_row(record) << "\n";
  std::cout << "episodes: " << record.num_episodes << "\n";
  std::cout << "error rate (avg over agents): " << record.error_rate << " +/- "
            << record.error_se << "\n";
  for (std::size_t a = 0; a < record.per_agent_error.size(); ++a) {
    std::cout << "  agent " << a << " error rate: " << record.per_agent_error[a] << "\n";
  }
  std::cout << "avg sample size: " << record.avg_sample_size << " +/- " << record.sample_se
            << "\n";
  std::cout << "bayes risk: " << record.bayes_risk << " +/- " << record.risk_se << "\n";
  return 0;
}

int cmd_sweep(const CommonFlags& flags, const std::string& spec_path) {
  const RunConfig cfg = load_with_flags(flags);
  const SweepSpec spec = load_sweep_spec(spec_path);
  fs::create_directories(cfg.run.out_dir);

  const std::vector<SweepPointResult> results = sweep(spec, cfg, cfg.run.out_dir);

  const std::string curve_path = cfg.run.out_dir + "/curve.csv";
  std::ofstream curve(curve_path, std::ios::trunc);
  if (!curve) throw std::runtime_error("cannot write " + curve_path);
  curve << curve_csv_header() << "\n";

  int failures = 0;
  const std::string config_id = run_mode_name(cfg.run.mode) + "_m" +
                                std::to_string(cfg.env.num_processes()) + "_k" +
                                std::to_string(cfg.env.num_agents());
  std::cout << "point,x_value,status\n";
  for (const SweepPointResult& point : results) {
    if (point.ok) {
      curve << curve_csv_row(config_id, spec.x_kind, spec.seed, point) << "\n";
      std::cout << "ok," << point.x_value << ",done\n";
    } else {
      ++failures;
      std::cout << "fail," << point.x_value << "," << point.error << "\n";
    }
  }
  std::cout << "curve written to " << curve_path << "\n";
  return failures > 0 ? 1 : 0;
}

// Reshapes a curve CSV into per-figure tables: error rate vs average sample
// size, and Bayes risk vs the sweep variable.
int cmd_plot_data(const std::string& curve_path, const std::string& out_dir) {
  std::ifstream in(curve_path);
  if (!in) throw std::invalid_argument("curve file '" + curve_path + "': cannot open");
  std::string line;
  if (!std::getline(in, line) || split_csv_line(line) != split_csv_line(curve_csv_header())) {
    throw std::invalid_argument(curve_path + " line 1: not a curve CSV header");
  }
  fs::create_directories(out_dir);
  std::ofstream err_fig(out_dir + "/fig_error_vs_delay.csv", std::ios::trunc);
  std::ofstream risk_fig(out_dir + "/fig_risk_vs_x.csv", std::ios::trunc);
  err_fig << "config_id,avg_sample_size,sample_se,error_rate,error_se\n";
  risk_fig << "config_id,x_kind,x_value,bayes_risk,risk_se\n";
  int line_number = 1;
  while (std::getline(in, line)) {
    ++line_number;
    if (line.empty()) continue;
    const std::vector<std::string> f = split_csv_line(line);
    if (f.size() != 12) {
      throw std::invalid_argument(curve_path + " line " + std::to_string(line_number) +
                                  ": expected 12 fields");
    }
    err_fig << f[0] << ',' << f[5] << ',' << f[6] << ',' << f[3] << ',' << f[4] << "\n";
    risk_fig << f[0] << ',' << f[1] << ',' << f[2] << ',' << f[7] << ',' << f[8] << "\n";
  }
  std::cout << "figure tables written to " << out_dir << "\n";
  return 0;
}

int cmd_replay(const std::string& trace_path, const std::string& out_dir) {
  int num_hypotheses = 0;
  const std::vector<TraceRow> rows = read_trace(trace_path, &num_hypotheses);
  fs::create_directories(out_dir);

  std::map<int, std::ofstream> beliefs;
  std::map<int, std::ofstream> actions;
  std::map<int, std::ofstream> observations;
  for (const TraceRow& row : rows) {
    if (!beliefs.count(row.agent)) {
      const std::string base = out_dir + "/replay_agent" + std::to_string(row.agent);
      auto& b = beliefs[row.agent];
      b.open(base + "_beliefs.csv", std::ios::trunc);
      b << "episode,step";
      for (int j = 0; j < num_hypotheses; ++j) b << ",belief_" << j;
      b << "\n";
      auto& a = actions[row.agent];
      a.open(base + "_actions.csv", std::ios::trunc);
      a << "episode,step,action_kind,global_process\n";
      auto& o = observations[row.agent];
      o.open(base + "_observations.csv", std::ios::trunc);
      o << "episode,step,observation\n";
    }
    auto& b = beliefs[row.agent];
    b << row.episode << ',' << row.step;
    for (double p : row.belief) b << ',' << format_double(p);
    b << "\n";
    auto& a = actions[row.agent];
    a << row.episode << ',' << row.step << ',' << (row.sampled ? "sample" : "stop") << ',';
    if (row.sampled) a << row.global_process;
    a << "\n";
    if (row.sampled) {
      observations[row.agent] << row.episode << ',' << row.step << ','
                              << format_double(row.observation) << "\n";
    }
  }
  std::cout << "replayed " << rows.size() << " rows for " << beliefs.size() << " agents into "
            << out_dir << "\n";
  return 0;
}

}  // namespace

int run_cli(const std::vector<std::string>& args) {
  CLI::App app{"decentralized active hypothesis testing lab"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);

  CommonFlags train_flags;
  CLI::App* train = app.add_subcommand("train", "train policies with PPO");
  train->add_option("--config", train_flags.config_path, "config file")->required();
  train->add_option("--set", train_flags.sets, "key=value override, repeatable");
  train->add_option("--seed", train_flags.seed, "override run.seed");
  train->add_option("--workers", train_flags.workers, "override run.workers");
  train->add_option("--out-dir", train_flags.out_dir, "override run.out_dir");
  train->add_option("--mode", train_flags.mode, "override run.mode");

  CommonFlags eval_flags;
  std::string eval_checkpoint;
  int eval_episodes = 0;
  bool eval_greedy = false;
  std::string eval_trace;
  CLI::App* eval_cmd = app.add_subcommand("eval", "evaluate a policy");
  eval_cmd->add_option("--config", eval_flags.config_path, "config file")->required();
  eval_cmd->add_option("--set", eval_flags.sets, "key=value override, repeatable");
  eval_cmd->add_option("--seed", eval_flags.seed, "override run.seed");
  eval_cmd->add_option("--workers", eval_flags.workers, "override run.workers");
  eval_cmd->add_option("--mode", eval_flags.mode, "override run.mode");
  eval_cmd->add_option("--checkpoint", eval_checkpoint, "checkpoint to evaluate");
  eval_cmd->add_option("--episodes", eval_episodes, "episodes (default eval.episodes)");
  eval_cmd->add_flag("--greedy", eval_greedy, "argmax actions instead of sampling");
  eval_cmd->add_option("--trace", eval_trace, "write an episode trace CSV");

  CommonFlags sweep_flags;
  std::string sweep_spec_path;
  CLI::App* sweep_cmd = app.add_subcommand("sweep", "train/evaluate across operating points");
  sweep_cmd->add_option("--config", sweep_flags.config_path, "base config file")->required();
  sweep_cmd->add_option("--spec", sweep_spec_path, "sweep spec file")->required();
  sweep_cmd->add_option("--set", sweep_flags.sets, "key=value override, repeatable");
  sweep_cmd->add_option("--seed", sweep_flags.seed, "override run.seed");
  sweep_cmd->add_option("--workers", sweep_flags.workers, "override run.workers");
  sweep_cmd->add_option("--out-dir", sweep_flags.out_dir, "override run.out_dir");
  sweep_cmd->add_option("--mode", sweep_flags.mode, "override run.mode");

  std::string replay_trace;
  std::string replay_out = "replay";
  CLI::App* replay_cmd = app.add_subcommand("replay", "reshape a trace CSV for plotting");
  replay_cmd->add_option("trace", replay_trace, "episode trace CSV")->required();
  replay_cmd->add_option("--out-dir", replay_out, "output directory");

  std::string plot_curve;
  std::string plot_out = "figures";
  CLI::App* plot_cmd =
      app.add_subcommand("plot-data", "emit per-figure CSVs from a curve CSV");
  plot_cmd->add_option("curve", plot_curve, "curve CSV from sweep")->required();
  plot_cmd->add_option("--out-dir", plot_out, "output directory");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (train->parsed()) return cmd_train(train_flags);
    if (eval_cmd->parsed()) {
      return cmd_eval(eval_flags, eval_checkpoint, eval_episodes, eval_greedy, eval_trace);
    }
    if (sweep_cmd->parsed()) return cmd_sweep(sweep_flags, sweep_spec_path);
    if (replay_cmd->parsed()) return cmd_replay(replay_trace, replay_out);
    if (plot_cmd->parsed()) return cmd_plot_data(plot_curve, plot_out);
  } catch (const CheckpointMismatchError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 2;
}

}  // namespace marla
