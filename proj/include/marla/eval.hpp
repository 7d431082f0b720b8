#ifndef MARLA_EVAL_HPP
#define MARLA_EVAL_HPP

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "marla/config.hpp"
#include "marla/env.hpp"
#include "marla/nn.hpp"
#include "marla/trace.hpp"

namespace marla {

struct MetricsRecord {
  std::string config_id;
  int num_episodes = 0;
  std::vector<double> per_agent_error;  // fraction of wrong declarations per agent
  double error_rate = 0.0;              // averaged over agents
  double error_se = 0.0;
  double avg_sample_size = 0.0;  // mean tau, averaged over agents
  double sample_se = 0.0;
  double bayes_risk = 0.0;  // mean over episodes of c * sum(tau) + J
  double risk_se = 0.0;
  double mean_terminal_cost = 0.0;
};

std::string metrics_csv_header();
std::string metrics_csv_row(const MetricsRecord& record);

enum class ActionMode { Stochastic, Greedy };

struct PolicyContext {
  int agent_id;
  const EpisodeState& state;
  const EnvConfig& config;
  const std::vector<double>& policy_input;
  const std::vector<std::uint8_t>& mask;
  Rng& rng;
  ActionMode mode;
};

using PolicyFn = std::function<AgentAction(const PolicyContext&)>;

// Softmax policy over the shared network; greedy mode takes the argmax.
PolicyFn make_network_policy(const Network& actor);
// Highest-belief baseline with a stopping threshold.
PolicyFn make_heuristic_policy(double threshold);
PolicyFn make_immediate_stop_policy();
PolicyFn make_uniform_random_policy();

// Stop once the maximum belief reaches the threshold, otherwise sample the
// sampleable process with the highest belief (ties toward the lowest index).
AgentAction heuristic_policy(const Belief& belief, double threshold, const AgentSpec& spec);

// Frozen-policy evaluation. Per-episode seeds derive from (seed, episode
// index), so the result is identical for any worker count.
MetricsRecord evaluate(const PolicyFn& policy, const EnvConfig& config, int num_episodes,
                       std::uint64_t seed, ActionMode mode = ActionMode::Stochastic,
                       int workers = 1, TraceWriter* trace = nullptr);

struct ComparisonReport {
  bool comparable = false;  // error rates matched within 1% absolute
  double error_gap = 0.0;
  double sample_reduction = 0.0;  // (single - multi) / single
  double sample_reduction_se = 0.0;
  double risk_reduction = 0.0;
  double risk_reduction_se = 0.0;
};

ComparisonReport compare(const MetricsRecord& multi_agent, const MetricsRecord& single_agent);

struct SweepPointResult {
  double x_value = 0.0;
  bool ok = false;
  std::string error;
  MetricsRecord metrics;
  std::string checkpoint_path;
};

// One trained policy (or heuristic threshold) per point; failures are
// recorded and the sweep continues.
std::vector<SweepPointResult> sweep(const SweepSpec& spec, const RunConfig& base,
                                    const std::string& checkpoint_dir = "");

std::string curve_csv_header();
std::string curve_csv_row(const std::string& config_id, const std::string& x_kind,
                          std::uint64_t seed, const SweepPointResult& point);

}  // namespace marla

#endif  // MARLA_EVAL_HPP
