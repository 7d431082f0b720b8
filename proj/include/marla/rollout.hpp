#ifndef MARLA_ROLLOUT_HPP
#define MARLA_ROLLOUT_HPP

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "marla/env.hpp"
#include "marla/nn.hpp"

namespace marla {

struct Transition {
  int agent_id = -1;
  int step = 0;        // env tick, 1-based
  int episode_id = 0;
  std::vector<double> policy_input;
  std::vector<double> critic_input;
  std::vector<std::uint8_t> action_mask;
  int action = -1;        // policy-space index: global process, or M for stop
  int action_local = -1;  // index into the agent's local action set
  double reward = 0.0;
  double old_log_prob = 0.0;
  std::vector<double> old_policy;  // full masked distribution at collection time
  double value_old = 0.0;          // V_{mu_old}(s) at collection time
  bool done = false;               // agent's last transition in the episode
  bool forced_stop = false;        // truncated by the horizon cap
  double bootstrap_value = 0.0;    // V(s') for truncated trajectories, else 0

  // Trace-export fields, unused by training.
  bool sampled = false;
  int global_process = -1;
  double observation = 0.0;
  std::vector<double> belief_after;
  Message out_message;
};

struct EpisodeOutcome {
  int episode_id = 0;
  int true_hypothesis = -1;
  std::vector<int> stop_times;
  std::vector<int> declarations;
  double terminal_cost = 0.0;
  double total_risk = 0.0;  // c * sum(tau) + J
};

struct RolloutBuffer {
  std::vector<Transition> transitions;
  std::vector<std::pair<int, int>> episode_ranges;  // [begin, end) into transitions
  std::vector<EpisodeOutcome> outcomes;

  int size() const { return static_cast<int>(transitions.size()); }
  int num_episodes() const { return static_cast<int>(outcomes.size()); }
};

// Input widths derived from the config. The policy sees its own belief plus
// one message block per other agent; the critic additionally sees the other
// agents' previous-step beliefs (zeroed once they stop).
int policy_input_size(const EnvConfig& config);
int critic_input_size(const EnvConfig& config);
// Shared policy head: one logit per global process plus the stop action.
int policy_action_size(const EnvConfig& config);

std::vector<double> build_policy_input(int agent, const EpisodeState& state,
                                       const EnvConfig& config);
std::vector<double> build_critic_input(int agent, const EpisodeState& state,
                                       const EnvConfig& config);
std::vector<std::uint8_t> action_mask(const AgentSpec& spec, int num_processes);

// Policy-space action index -> environment action for this agent.
AgentAction action_from_policy_index(const AgentSpec& spec, int index, int num_processes);

// Splits the episode's terminal cost into per-agent shares and adds each
// share to that agent's final transition, wherever in the episode it sits.
void assign_coupled_rewards(std::span<Transition> episode, const EpisodeOutcome& outcome,
                            int num_agents);

// Runs complete episodes until at least min_timesteps transitions are stored.
// Deterministic given (config, seed, parameter versions, workers).
RolloutBuffer collect(const EnvConfig& config, const Network& actor, const Network& critic,
                      int min_timesteps, std::uint64_t seed, int workers = 1);

// Trace dump in the episode CSV schema plus value_estimate and logprob.
void dump_trace(const RolloutBuffer& buffer, const EnvConfig& config,
                const std::string& path);

}  // namespace marla

#endif  // MARLA_ROLLOUT_HPP
