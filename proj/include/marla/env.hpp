#ifndef MARLA_ENV_HPP
#define MARLA_ENV_HPP

#include <optional>
#include <string>
#include <vector>

#include "marla/rng.hpp"

namespace marla {

// Sentinel for message_repeat: stopped agents keep broadcasting their
// declaration until the episode ends.
inline constexpr int kRepeatUntilEpisodeEnd = -1;

struct HypothesisSpace {
  int num_hypotheses = 0;               // M, one hypothesis per process
  std::vector<double> prior;            // p_m, strictly inside (0,1), sums to 1

  static HypothesisSpace uniform(int m);
  void validate() const;
};

// Shared Gaussian observation model: sampling the anomalous process yields
// N(anomalous_mean, std_dev^2), any normal process yields N(normal_mean, ...).
struct ObservationModel {
  double normal_mean = 0.0;
  double anomalous_mean = 1.0;
  double std_dev = 1.0;

  double density_normal(double x) const;
  double density_anomalous(double x) const;
  void validate() const;
};

struct AgentSpec {
  int agent_id = 0;
  std::vector<int> sampleable_processes;  // global indices, ascending

  // Local action space: one sampling action per entry, then one stop action.
  int num_actions() const { return static_cast<int>(sampleable_processes.size()) + 1; }
  int stop_action() const { return static_cast<int>(sampleable_processes.size()); }
  int global_of_local(int local) const { return sampleable_processes.at(local); }
  // -1 when the process is outside this agent's set.
  int local_of_global(int global) const;
};

struct EnvConfig {
  HypothesisSpace hypothesis_space;
  ObservationModel observation_model;
  std::vector<AgentSpec> agents;
  double sampling_cost = 0.05;            // c, per observation per agent
  std::vector<double> terminal_cost_table;  // J[w], w = number of wrong declarations
  int max_horizon = 200;                  // forced declaration at this tick
  int message_repeat = kRepeatUntilEpisodeEnd;  // T'
  bool communication_enabled = true;

  int num_processes() const { return hypothesis_space.num_hypotheses; }
  int num_agents() const { return static_cast<int>(agents.size()); }
  void validate() const;  // throws std::invalid_argument naming the violated invariant

  // Independent-agents config with uniform prior and default costs: every
  // agent may sample every process. The shape used by most experiments.
  static EnvConfig independent(int num_processes, int num_agents);
  // J[w] = w (strictly increasing, J[0] = 0).
  static std::vector<double> default_terminal_table(int num_agents);
};

// Per-agent posterior over the M hypotheses. Entries are floored at 1e-12
// and renormalized on every update, so the sum stays within 1e-9 of 1.
struct Belief {
  std::vector<double> probs;

  int size() const { return static_cast<int>(probs.size()); }
  int argmax() const;  // ties toward the lowest index
  double max() const;
};

struct AgentAction {
  enum class Kind { Sample, Stop };
  Kind kind = Kind::Stop;
  int local_index = -1;  // valid for Sample
  // Test hook: overrides the argmax declaration rule at Stop.
  std::optional<int> declare_override;

  static AgentAction sample(int local) { return {Kind::Sample, local, std::nullopt}; }
  static AgentAction stop() { return {Kind::Stop, -1, std::nullopt}; }
  static AgentAction stop_declaring(int hypothesis) {
    return {Kind::Stop, -1, hypothesis};
  }
};

// Rate-limited channel content. While the sender is active it carries the
// sender's previous action; after the sender stops it carries the declared
// hypothesis for T' steps, then Null.
struct Message {
  enum class Kind { Null, LastAction, Declared };
  Kind kind = Kind::Null;
  int payload = -1;  // global process (LastAction) or hypothesis (Declared)
};

struct EpisodeState {
  int true_hypothesis = -1;
  int time = 0;  // completed ticks; agents act on tick time+1
  std::vector<Belief> beliefs;       // after `time` ticks
  std::vector<Belief> beliefs_prev;  // after `time`-1 ticks (equal to prior at start)
  std::vector<std::uint8_t> active;
  std::vector<int> stop_time;     // tau, -1 while active
  std::vector<int> declaration;   // delta, -1 while active
  std::vector<Message> messages;  // outgoing message of each agent, visible next tick
  Rng rng{1};

  bool terminal() const;
  int num_agents() const { return static_cast<int>(beliefs.size()); }
};

struct AgentStepResult {
  int agent_id = -1;
  AgentAction action;
  bool sampled = false;
  int global_process = -1;  // valid when sampled
  double observation = 0.0;
  double reward = 0.0;      // -c for each tick the agent was active (Eq.-(1) accounting)
};

struct StepOutcome {
  std::vector<AgentStepResult> results;  // one per agent that acted this tick
  bool terminal = false;
  double terminal_cost = 0.0;  // J(delta..., H); distribution over agents is the
                               // collector's job (see rollout assign_coupled_rewards)
};

EpisodeState new_episode(const EnvConfig& config, std::uint64_t seed);

double draw_observation(const ObservationModel& model, int sampled_process,
                        int true_hypothesis, Rng& rng);

Belief update_belief(const Belief& belief, int sampled_process, double observation,
                     const ObservationModel& model);

// J[w] with w the number of agents whose declaration differs from the truth.
double terminal_cost(const std::vector<int>& declarations, int true_hypothesis,
                     const std::vector<double>& table);

// Allocation of the coupled terminal cost onto agents: the agents that
// declared wrongly split J(delta..., H) evenly (for the default linear table
// each wrong agent pays exactly its marginal contribution). Constructed so
// the shares sum back to exactly `total` when added in agent order.
std::vector<double> terminal_cost_shares(double total, const std::vector<int>& declarations,
                                         int true_hypothesis);

// Declaration at Stop: argmax of own belief. When the channel is enabled,
// exact ties are broken toward a hypothesis currently declared by another
// agent (lowest sender id first), then toward the lowest index.
int choose_declaration(const Belief& belief, const EpisodeState& state, int agent_id,
                       bool communication_enabled);

// Simultaneous-move tick: every active agent must supply exactly one action,
// inactive agents must supply none.
StepOutcome step(EpisodeState& state,
                 const std::vector<std::optional<AgentAction>>& actions,
                 const EnvConfig& config);

}  // namespace marla

#endif  // MARLA_ENV_HPP
