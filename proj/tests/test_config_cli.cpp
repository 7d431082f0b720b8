#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "marla/cli.hpp"
#include "marla/training.hpp"
#include "marla/config.hpp"
#include "marla/env.hpp"
#include "marla/trace.hpp"

using namespace marla;
namespace fs = std::filesystem;

namespace {

const char* kBaseConfig = R"(
# two independent agents over five processes
env.num_processes = 5
env.num_agents = 2
env.sampling_cost = 0.05
run.iterations = 2
)";

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::trunc | std::ios::binary);
  REQUIRE(out);
  out << content;
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::path("cli_test_tmp") / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string str(const std::string& child = "") const {
    return child.empty() ? path.string() : (path / child).string();
  }
};

}  // namespace

TEST_CASE("parse_run_config: defaults and dotted keys") {
  const RunConfig cfg = parse_run_config(kBaseConfig);
  CHECK(cfg.env.num_processes() == 5);
  CHECK(cfg.env.num_agents() == 2);
  CHECK(cfg.env.observation_model.normal_mean == 0.0);
  CHECK(cfg.env.observation_model.anomalous_mean == 1.0);
  CHECK(cfg.env.hypothesis_space.prior[0] == doctest::Approx(0.2));
  CHECK(cfg.env.terminal_cost_table == std::vector<double>{0.0, 1.0, 2.0});
  CHECK(cfg.env.message_repeat == kRepeatUntilEpisodeEnd);
  CHECK(cfg.env.agents[1].sampleable_processes.size() == 5);
  CHECK(cfg.ppo.clip_epsilon == 0.2);
  CHECK(cfg.network.hidden == std::vector<int>{64, 64});
  CHECK(cfg.run.mode == RunMode::Marla);
}

TEST_CASE("parse_run_config: agent ranges, prior, message_repeat") {
  const std::string text = R"(
env.num_processes = 10
env.num_agents = 2
env.agent.0.processes = 0-4
env.agent.1.processes = 5,6,7,8,9
env.prior = 0.1,0.1,0.1,0.1,0.1,0.1,0.1,0.1,0.1,0.1
env.message_repeat = 3
)";
  const RunConfig cfg = parse_run_config(text);
  CHECK(cfg.env.agents[0].sampleable_processes == std::vector<int>{0, 1, 2, 3, 4});
  CHECK(cfg.env.agents[1].sampleable_processes == std::vector<int>{5, 6, 7, 8, 9});
  CHECK(cfg.env.message_repeat == 3);
}

TEST_CASE("parse_run_config: overrides win and unknown keys are named") {
  const RunConfig cfg = parse_run_config(kBaseConfig, {"env.sampling_cost=0.2", "run.seed=7"});
  CHECK(cfg.env.sampling_cost == 0.2);
  CHECK(cfg.run.seed == 7);

  CHECK_THROWS_WITH_AS(parse_run_config(kBaseConfig, {"env.sampling_cots=0.2"}),
                       doctest::Contains("env.sampling_cots"), std::invalid_argument);
}

TEST_CASE("parse_run_config: violated invariants carry the key name") {
  CHECK_THROWS_WITH_AS(parse_run_config("env.num_agents = 2\n"),
                       doctest::Contains("env.num_processes"), std::invalid_argument);
  CHECK_THROWS_WITH_AS(
      parse_run_config("env.num_processes = 5\nenv.num_agents = 2\nenv.std_dev = 0\n"),
      doctest::Contains("std_dev"), std::invalid_argument);
  CHECK_THROWS_WITH_AS(
      parse_run_config(
          "env.num_processes = 5\nenv.num_agents = 2\nenv.prior = 0.5,0.5,0,0,0\n"),
      doctest::Contains("prior"), std::invalid_argument);
  CHECK_THROWS_WITH_AS(
      parse_run_config(
          "env.num_processes = 5\nenv.num_agents = 2\nenv.terminal_cost_table = 0,1\n"),
      doctest::Contains("terminal_cost_table"), std::invalid_argument);
  CHECK_THROWS_WITH_AS(
      parse_run_config("env.num_processes = 5\nenv.num_agents = 2\nrun.mode = single_agent\n"),
      doctest::Contains("single_agent"), std::invalid_argument);
  CHECK_THROWS_WITH_AS(
      parse_run_config("env.num_processes = 5\nenv.num_agents = 2\nrun.mode = no_comm\n"),
      doctest::Contains("no_comm"), std::invalid_argument);
  CHECK_THROWS_WITH_AS(
      parse_run_config("env.num_processes = 5\nenv.num_agents = 2\nrun.mode = heuristic\n"
                       "heuristic.threshold = 0.1\n"),
      doctest::Contains("heuristic.threshold"), std::invalid_argument);
}

TEST_CASE("snapshot round-trips through the parser") {
  const RunConfig cfg = parse_run_config(kBaseConfig, {"env.agent.0.processes=0-2",
                                                       "env.agent.1.processes=2,3,4",
                                                       "env.message_repeat=4"});
  const std::string snap = cfg.snapshot();
  const RunConfig again = parse_run_config(snap);
  CHECK(again.snapshot() == snap);
  CHECK(again.env.agents[0].sampleable_processes == std::vector<int>{0, 1, 2});
  CHECK(again.env.message_repeat == 4);
}

TEST_CASE("sweep spec parsing") {
  const SweepSpec spec = parse_sweep_spec(
      "sweep.x_kind = threshold\nsweep.values = 0.8,0.9,0.99\n"
      "sweep.episodes_per_point = 500\nsweep.seed = 3\n");
  CHECK(spec.x_kind == "threshold");
  CHECK(spec.values.size() == 3);
  CHECK(spec.episodes_per_point == 500);

  CHECK_THROWS_AS(parse_sweep_spec("sweep.x_kind = nonsense\nsweep.values = 1\n"),
                  std::invalid_argument);
  CHECK_THROWS_AS(parse_sweep_spec("sweep.x_kind = threshold\n"), std::invalid_argument);
}

TEST_CASE("training: the cost curriculum anneals collection costs") {
  // One iteration inside the warmup window collects at the 0.01 floor, so
  // per-episode risks are far below the same run with the curriculum off.
  RunConfig cfg = parse_run_config(
      "env.num_processes = 3\nenv.num_agents = 2\nenv.sampling_cost = 0.2\n"
      "network.hidden = 8,8\nppo.rollout_timesteps = 256\nppo.epochs = 1\n"
      "run.seed = 9\n");
  RunConfig no_warmup = cfg;
  no_warmup.ppo.cost_warmup_iterations = 0;

  TrainingRun warm = initialize_training(cfg);
  run_training(warm, cfg, 1);
  TrainingRun cold = initialize_training(no_warmup);
  run_training(cold, no_warmup, 1);

  // Identical policies and episode shapes; only the charged cost differs.
  CHECK(warm.history[0].mean_sample_size == cold.history[0].mean_sample_size);
  CHECK(warm.history[0].mean_episode_risk < 0.25 * cold.history[0].mean_episode_risk);
}

TEST_CASE("cli: train with zero iterations writes only the initial checkpoint") {
  TempDir dir("train_zero");
  write_file(dir.str("cfg.txt"),
             "env.num_processes = 3\nenv.num_agents = 1\nrun.iterations = 0\n"
             "network.hidden = 8,8\n");
  const int code = run_cli({"train", "--config", dir.str("cfg.txt"), "--out-dir", dir.str("out")});
  CHECK(code == 0);
  CHECK(fs::exists(dir.str("out/checkpoint_final.bin")));
  CHECK(fs::exists(dir.str("out/run_meta.txt")));
  CHECK(fs::exists(dir.str("out/stats.csv")));
}

TEST_CASE("cli: invalid config exits 2 naming the key") {
  TempDir dir("train_bad");
  write_file(dir.str("cfg.txt"), "env.num_processes = 5\n");  // missing num_agents
  CHECK(run_cli({"train", "--config", dir.str("cfg.txt")}) == 2);
  CHECK(run_cli({"eval", "--config", dir.str("missing.txt")}) == 2);
}

TEST_CASE("cli: short training runs are byte-identical for a fixed seed") {
  TempDir dir("train_deterministic");
  write_file(dir.str("cfg.txt"),
             "env.num_processes = 3\nenv.num_agents = 2\nrun.iterations = 2\n"
             "network.hidden = 8,8\nppo.rollout_timesteps = 96\nppo.epochs = 2\n"
             "ppo.minibatch_size = 48\nrun.seed = 5\n");
  REQUIRE(run_cli({"train", "--config", dir.str("cfg.txt"), "--out-dir", dir.str("a")}) == 0);
  REQUIRE(run_cli({"train", "--config", dir.str("cfg.txt"), "--out-dir", dir.str("b")}) == 0);
  CHECK(read_file(dir.str("a/stats.csv")) == read_file(dir.str("b/stats.csv")));
  CHECK(read_file(dir.str("a/checkpoint_final.bin")) == read_file(dir.str("b/checkpoint_final.bin")));
  // run_meta differs only in the out_dir it records.
  auto strip_out_dir = [](std::string text) {
    const std::size_t pos = text.find("run.out_dir");
    REQUIRE(pos != std::string::npos);
    const std::size_t end = text.find('\n', pos);
    return text.erase(pos, end - pos);
  };
  CHECK(strip_out_dir(read_file(dir.str("a/run_meta.txt"))) ==
        strip_out_dir(read_file(dir.str("b/run_meta.txt"))));

  // A different seed changes the stats.
  REQUIRE(run_cli({"train", "--config", dir.str("cfg.txt"), "--out-dir", dir.str("c"),
                   "--seed", "6"}) == 0);
  CHECK(read_file(dir.str("a/stats.csv")) != read_file(dir.str("c/stats.csv")));
}

TEST_CASE("cli: eval validation, heuristic mode, checkpoint mismatch") {
  TempDir dir("eval_paths");
  write_file(dir.str("cfg.txt"),
             "env.num_processes = 3\nenv.num_agents = 1\nnetwork.hidden = 8,8\n"
             "run.mode = heuristic\nheuristic.threshold = 0.9\neval.episodes = 50\n");

  // Heuristic mode needs no checkpoint.
  CHECK(run_cli({"eval", "--config", dir.str("cfg.txt")}) == 0);
  // episodes = 0 rejected.
  CHECK(run_cli({"eval", "--config", dir.str("cfg.txt"), "--set", "eval.episodes=0"}) == 2);

  // Train a tiny model on a different shape, then eval against this config.
  write_file(dir.str("other.txt"),
             "env.num_processes = 4\nenv.num_agents = 1\nrun.iterations = 1\n"
             "network.hidden = 8,8\nppo.rollout_timesteps = 32\nppo.epochs = 1\n");
  REQUIRE(run_cli({"train", "--config", dir.str("other.txt"), "--out-dir", dir.str("out")}) == 0);
  write_file(dir.str("plain.txt"),
             "env.num_processes = 3\nenv.num_agents = 1\nnetwork.hidden = 8,8\n"
             "eval.episodes = 20\n");
  CHECK(run_cli({"eval", "--config", dir.str("plain.txt"), "--checkpoint",
                 dir.str("out/checkpoint_final.bin")}) == 3);
  // Missing checkpoint in a trained mode.
  CHECK(run_cli({"eval", "--config", dir.str("plain.txt")}) == 2);
}

TEST_CASE("cli: eval determinism and trace re-derivation") {
  TempDir dir("eval_trace");
  write_file(dir.str("cfg.txt"),
             "env.num_processes = 3\nenv.num_agents = 2\nnetwork.hidden = 8,8\n"
             "run.mode = heuristic\nheuristic.threshold = 0.9\neval.episodes = 40\n");

  REQUIRE(run_cli({"eval", "--config", dir.str("cfg.txt"), "--trace", dir.str("trace.csv")}) ==
          0);
  REQUIRE(run_cli({"eval", "--config", dir.str("cfg.txt"), "--trace", dir.str("trace2.csv")}) ==
          0);
  CHECK(read_file(dir.str("trace.csv")) == read_file(dir.str("trace2.csv")));

  // Beliefs in the trace re-derive from the observations via Bayes updates.
  int m = 0;
  const std::vector<TraceRow> rows = read_trace(dir.str("trace.csv"), &m);
  REQUIRE(m == 3);
  REQUIRE(!rows.empty());
  ObservationModel model;  // defaults match the config
  std::map<std::pair<int, int>, Belief> beliefs;  // (episode, agent) -> current
  for (const TraceRow& row : rows) {
    auto key = std::make_pair(row.episode, row.agent);
    if (!beliefs.count(key)) {
      beliefs[key] = Belief{std::vector<double>(3, 1.0 / 3)};
    }
    if (row.sampled) {
      beliefs[key] = update_belief(beliefs[key], row.global_process, row.observation, model);
    }
    for (int j = 0; j < 3; ++j) {
      CHECK(std::abs(beliefs[key].probs[j] - row.belief[j]) <= 1e-9);
    }
  }
}

TEST_CASE("cli: replay emits per-agent tables and is idempotent") {
  TempDir dir("replay");
  write_file(dir.str("cfg.txt"),
             "env.num_processes = 3\nenv.num_agents = 2\nnetwork.hidden = 8,8\n"
             "run.mode = heuristic\nheuristic.threshold = 0.9\neval.episodes = 10\n");
  REQUIRE(run_cli({"eval", "--config", dir.str("cfg.txt"), "--trace", dir.str("trace.csv")}) ==
          0);

  CHECK(run_cli({"replay", dir.str("trace.csv"), "--out-dir", dir.str("r1")}) == 0);
  CHECK(fs::exists(dir.str("r1/replay_agent0_beliefs.csv")));
  CHECK(fs::exists(dir.str("r1/replay_agent1_actions.csv")));
  CHECK(fs::exists(dir.str("r1/replay_agent0_observations.csv")));

  CHECK(run_cli({"replay", dir.str("trace.csv"), "--out-dir", dir.str("r2")}) == 0);
  CHECK(read_file(dir.str("r1/replay_agent0_beliefs.csv")) ==
        read_file(dir.str("r2/replay_agent0_beliefs.csv")));

  // Empty trace: empty outputs, exit 0.
  write_file(dir.str("empty.csv"), "");
  CHECK(run_cli({"replay", dir.str("empty.csv"), "--out-dir", dir.str("r3")}) == 0);

  // Malformed trace: exit 2 (line number reported on stderr).
  write_file(dir.str("bad.csv"),
             "episode,step,agent,action_kind,global_process,observation,reward,belief_0,"
             "belief_1,belief_2,message_kind,message_payload\n"
             "0,1,0,sample,1,not_a_number,-0.05,0.3,0.3,0.4,null,\n");
  CHECK(run_cli({"replay", dir.str("bad.csv"), "--out-dir", dir.str("r4")}) == 2);
}

TEST_CASE("cli: sweep writes the curve CSV and reports per-point status") {
  TempDir dir("sweep");
  write_file(dir.str("cfg.txt"),
             "env.num_processes = 3\nenv.num_agents = 2\nnetwork.hidden = 8,8\n"
             "run.mode = heuristic\nheuristic.threshold = 0.9\n");
  write_file(dir.str("sweep.txt"),
             "sweep.x_kind = threshold\nsweep.values = 0.8,0.95\n"
             "sweep.episodes_per_point = 100\nsweep.seed = 2\n");
  CHECK(run_cli({"sweep", "--config", dir.str("cfg.txt"), "--spec", dir.str("sweep.txt"),
                 "--out-dir", dir.str("out")}) == 0);
  const std::string curve = read_file(dir.str("out/curve.csv"));
  CHECK(curve.rfind("config_id,x_kind,x_value", 0) == 0);
  CHECK(curve.find("\nheuristic_m3_k2,threshold,0.8") != std::string::npos);

  // A failing point (invalid threshold) flips the exit code to 1 but keeps
  // the good rows.
  write_file(dir.str("sweep_bad.txt"),
             "sweep.x_kind = threshold\nsweep.values = 0.1,0.95\n"
             "sweep.episodes_per_point = 100\nsweep.seed = 2\n");
  CHECK(run_cli({"sweep", "--config", dir.str("cfg.txt"), "--spec", dir.str("sweep_bad.txt"),
                 "--out-dir", dir.str("out2")}) == 1);
  CHECK(read_file(dir.str("out2/curve.csv")).find("0.95") != std::string::npos);

  // Missing sweep file.
  CHECK(run_cli({"sweep", "--config", dir.str("cfg.txt"), "--spec", dir.str("nope.txt"),
                 "--out-dir", dir.str("out3")}) == 2);

  // plot-data reshapes the curve into the two per-figure tables.
  CHECK(run_cli({"plot-data", dir.str("out/curve.csv"), "--out-dir", dir.str("figs")}) == 0);
  const std::string err_fig = read_file(dir.str("figs/fig_error_vs_delay.csv"));
  CHECK(err_fig.rfind("config_id,avg_sample_size,", 0) == 0);
  CHECK(err_fig.find("heuristic_m3_k2") != std::string::npos);
  CHECK(fs::exists(dir.str("figs/fig_risk_vs_x.csv")));
  // Not a curve CSV: exit 2.
  CHECK(run_cli({"plot-data", dir.str("cfg.txt"), "--out-dir", dir.str("figs2")}) == 2);
}
