#ifndef MARLA_CONFIG_HPP
#define MARLA_CONFIG_HPP

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "marla/env.hpp"
#include "marla/ppo.hpp"

namespace marla {

enum class RunMode { Marla, SingleAgent, NoComm, Heuristic };

std::string run_mode_name(RunMode mode);
RunMode run_mode_from(const std::string& name);

struct NetworkSettings {
  std::vector<int> hidden = {64, 64};
  // Initial logit bias of the stop action. Negative values make stopping
  // rare at the start of training so episodes stay long enough for
  // belief-conditioned stopping to become learnable.
  double stop_bias = -2.5;
};

struct RunSettings {
  std::uint64_t seed = 42;
  int iterations = 300;
  int workers = 1;
  int checkpoint_every = 50;
  std::string out_dir = "out";
  RunMode mode = RunMode::Marla;
};

struct EvalSettings {
  int episodes = 10000;
};

struct HeuristicSettings {
  double threshold = 0.95;
};

// Everything a run needs, parsed from a flat key = value file with dotted
// keys (env.num_processes, ppo.clip_epsilon, ...). Overrides arrive as
// repeated "key=value" strings from --set flags.
struct RunConfig {
  EnvConfig env;
  PPOHyperparams ppo;
  NetworkSettings network;
  RunSettings run;
  EvalSettings eval;
  HeuristicSettings heuristic;

  void validate() const;
  // Canonical serialization: every key in fixed order. Feeding the snapshot
  // back through the parser reproduces the config.
  std::string snapshot() const;
};

// Parse from text; `source` names the origin for error messages.
RunConfig parse_run_config(const std::string& text,
                           const std::vector<std::string>& overrides = {},
                           const std::string& source = "<config>");
RunConfig load_run_config(const std::string& path,
                          const std::vector<std::string>& overrides = {});

// Sweep specification file: same syntax, sweep.* keys.
struct SweepSpec {
  std::string x_kind;  // "sampling_cost" | "threshold"
  std::vector<double> values;
  int episodes_per_point = 10000;
  int iterations_per_point = 100;
  std::uint64_t seed = 7;

  void validate() const;
};

SweepSpec parse_sweep_spec(const std::string& text, const std::string& source = "<sweep>");
SweepSpec load_sweep_spec(const std::string& path);

}  // namespace marla

#endif  // MARLA_CONFIG_HPP
