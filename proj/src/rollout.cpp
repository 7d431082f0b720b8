#include "marla/rollout.hpp"

#include <cmath>
#include <stdexcept>
#include <thread>

#include "marla/trace.hpp"

namespace marla {

int policy_input_size(const EnvConfig& config) {
  const int m = config.num_processes();
  return m + (config.num_agents() - 1) * (2 * m + 1);
}

int critic_input_size(const EnvConfig& config) {
  const int m = config.num_processes();
  return m + (config.num_agents() - 1) * (3 * m + 1);
}

int policy_action_size(const EnvConfig& config) { return config.num_processes() + 1; }

std::vector<double> build_policy_input(int agent, const EpisodeState& state,
                                       const EnvConfig& config) {
  const int m = config.num_processes();
  const int k = config.num_agents();
  std::vector<double> input;
  input.reserve(static_cast<std::size_t>(policy_input_size(config)));

  const Belief& own = state.beliefs[static_cast<std::size_t>(agent)];
  input.insert(input.end(), own.probs.begin(), own.probs.end());

  for (int j = 0; j < k; ++j) {
    if (j == agent) continue;
    const std::size_t base = input.size();
    input.resize(base + static_cast<std::size_t>(2 * m + 1), 0.0);
    if (!config.communication_enabled) continue;
    const Message& msg = state.messages[static_cast<std::size_t>(j)];
    if (msg.kind == Message::Kind::LastAction && msg.payload >= 0) {
      input[base + static_cast<std::size_t>(msg.payload)] = 1.0;
    } else if (msg.kind == Message::Kind::Declared) {
      input[base + static_cast<std::size_t>(m)] = 1.0;  // stopped flag
      if (msg.payload >= 0) {
        input[base + static_cast<std::size_t>(m + 1 + msg.payload)] = 1.0;
      }
    }
  }
  return input;
}

std::vector<double> build_critic_input(int agent, const EpisodeState& state,
                                       const EnvConfig& config) {
  const int m = config.num_processes();
  const int k = config.num_agents();
  std::vector<double> input;
  input.reserve(static_cast<std::size_t>(critic_input_size(config)));

  const Belief& own = state.beliefs[static_cast<std::size_t>(agent)];
  input.insert(input.end(), own.probs.begin(), own.probs.end());

  for (int j = 0; j < k; ++j) {
    if (j == agent) continue;
    const std::size_t base = input.size();
    input.resize(base + static_cast<std::size_t>(3 * m + 1), 0.0);
    const bool other_active = state.active[static_cast<std::size_t>(j)] != 0;
    if (other_active) {
      // Previous-step belief of the other agent; stopped agents are a zero state.
      const Belief& prev = state.beliefs_prev[static_cast<std::size_t>(j)];
      for (int i = 0; i < m; ++i) {
        input[base + static_cast<std::size_t>(i)] = prev.probs[static_cast<std::size_t>(i)];
      }
      const Message& msg = state.messages[static_cast<std::size_t>(j)];
      if (msg.kind == Message::Kind::LastAction && msg.payload >= 0) {
        input[base + static_cast<std::size_t>(m + msg.payload)] = 1.0;
      }
    } else {
      input[base + static_cast<std::size_t>(2 * m)] = 1.0;  // stopped flag
      const int declared = state.declaration[static_cast<std::size_t>(j)];
      if (declared >= 0) {
        input[base + static_cast<std::size_t>(2 * m + 1 + declared)] = 1.0;
      }
    }
  }
  return input;
}

std::vector<std::uint8_t> action_mask(const AgentSpec& spec, int num_processes) {
  std::vector<std::uint8_t> mask(static_cast<std::size_t>(num_processes) + 1, 0);
  for (int g : spec.sampleable_processes) mask[static_cast<std::size_t>(g)] = 1;
  mask[static_cast<std::size_t>(num_processes)] = 1;  // stop is always legal
  return mask;
}

AgentAction action_from_policy_index(const AgentSpec& spec, int index, int num_processes) {
  if (index == num_processes) return AgentAction::stop();
  const int local = spec.local_of_global(index);
  if (local < 0) {
    throw std::logic_error("action_from_policy_index: process outside the agent's set");
  }
  return AgentAction::sample(local);
}

void assign_coupled_rewards(std::span<Transition> episode, const EpisodeOutcome& outcome,
                            int num_agents) {
  for (int d : outcome.declarations) {
    if (d < 0) throw std::logic_error("assign_coupled_rewards: episode incomplete");
  }
  const std::vector<double> shares = terminal_cost_shares(
      outcome.terminal_cost, outcome.declarations, outcome.true_hypothesis);
  std::vector<int> last(static_cast<std::size_t>(num_agents), -1);
  for (std::size_t i = 0; i < episode.size(); ++i) {
    last[static_cast<std::size_t>(episode[i].agent_id)] = static_cast<int>(i);
  }
  for (int agent = 0; agent < num_agents; ++agent) {
    const int idx = last[static_cast<std::size_t>(agent)];
    if (idx < 0) throw std::logic_error("assign_coupled_rewards: agent has no transitions");
    episode[static_cast<std::size_t>(idx)].reward -= shares[static_cast<std::size_t>(agent)];
  }
}

namespace {

void run_episode_into(RolloutBuffer& buf, int episode_id, const EnvConfig& config,
                      const Network& actor, const Network& critic,
                      const std::vector<std::vector<std::uint8_t>>& masks,
                      std::uint64_t env_seed, std::uint64_t action_seed) {
  const int k = config.num_agents();
  const int m = config.num_processes();
  EpisodeState state = new_episode(config, env_seed);
  Rng action_rng(action_seed);

  const int begin = buf.size();
  std::vector<int> last_index(static_cast<std::size_t>(k), -1);
  double episode_terminal_cost = 0.0;

  while (!state.terminal()) {
    std::vector<std::optional<AgentAction>> actions(static_cast<std::size_t>(k));
    std::vector<int> tr_index(static_cast<std::size_t>(k), -1);
    for (int i = 0; i < k; ++i) {
      if (!state.active[static_cast<std::size_t>(i)]) continue;
      Transition tr;
      tr.agent_id = i;
      tr.episode_id = episode_id;
      tr.policy_input = build_policy_input(i, state, config);
      tr.critic_input = build_critic_input(i, state, config);
      tr.action_mask = masks[static_cast<std::size_t>(i)];
      const std::vector<double> probs = forward_policy(actor, tr.policy_input, tr.action_mask);
      const int a = action_rng.categorical(probs);
      tr.action = a;
      tr.old_policy = probs;
      tr.old_log_prob = std::log(probs[static_cast<std::size_t>(a)]);
      tr.value_old = forward_value(critic, tr.critic_input);
      const AgentSpec& spec = config.agents[static_cast<std::size_t>(i)];
      const AgentAction act = action_from_policy_index(spec, a, m);
      tr.action_local =
          act.kind == AgentAction::Kind::Sample ? act.local_index : spec.stop_action();
      actions[static_cast<std::size_t>(i)] = act;
      tr_index[static_cast<std::size_t>(i)] = buf.size();
      buf.transitions.push_back(std::move(tr));
    }

    const StepOutcome out = step(state, actions, config);
    for (const AgentStepResult& r : out.results) {
      Transition& tr =
          buf.transitions[static_cast<std::size_t>(tr_index[static_cast<std::size_t>(r.agent_id)])];
      tr.step = state.time;
      tr.reward = r.reward;
      tr.sampled = r.sampled;
      tr.global_process = r.global_process;
      tr.observation = r.observation;
      tr.belief_after = state.beliefs[static_cast<std::size_t>(r.agent_id)].probs;
      tr.out_message = state.messages[static_cast<std::size_t>(r.agent_id)];
      last_index[static_cast<std::size_t>(r.agent_id)] =
          tr_index[static_cast<std::size_t>(r.agent_id)];
    }
    if (out.terminal) episode_terminal_cost = out.terminal_cost;
  }

  EpisodeOutcome oc;
  oc.episode_id = episode_id;
  oc.true_hypothesis = state.true_hypothesis;
  oc.stop_times = state.stop_time;
  oc.declarations = state.declaration;
  oc.terminal_cost = episode_terminal_cost;
  long tau_sum = 0;
  for (int tau : state.stop_time) tau_sum += tau;
  oc.total_risk = config.sampling_cost * static_cast<double>(tau_sum) + episode_terminal_cost;

  for (int i = 0; i < k; ++i) {
    Transition& tr =
        buf.transitions[static_cast<std::size_t>(last_index[static_cast<std::size_t>(i)])];
    tr.done = true;
    // A final Sample action means the horizon cap forced the declaration;
    // those trajectories bootstrap with the critic's estimate of the next state.
    if (tr.action != m) {
      tr.forced_stop = true;
      tr.bootstrap_value = forward_value(critic, build_critic_input(i, state, config));
    }
  }

  assign_coupled_rewards(
      std::span<Transition>(buf.transitions.data() + begin,
                            static_cast<std::size_t>(buf.size() - begin)),
      oc, k);
  buf.episode_ranges.emplace_back(begin, buf.size());
  buf.outcomes.push_back(oc);
}

RolloutBuffer collect_worker(const EnvConfig& config, const Network& actor,
                             const Network& critic, int min_timesteps, std::uint64_t seed) {
  RolloutBuffer buf;
  std::vector<std::vector<std::uint8_t>> masks;
  for (const AgentSpec& spec : config.agents) {
    masks.push_back(action_mask(spec, config.num_processes()));
  }
  int episode = 0;
  while (buf.size() < min_timesteps) {
    run_episode_into(buf, episode, config, actor, critic, masks,
                     derive_seed(seed, "env", static_cast<std::uint64_t>(episode)),
                     derive_seed(seed, "policy-sampling", static_cast<std::uint64_t>(episode)));
    ++episode;
  }
  return buf;
}

}  // namespace

RolloutBuffer collect(const EnvConfig& config, const Network& actor, const Network& critic,
                      int min_timesteps, std::uint64_t seed, int workers) {
  config.validate();
  if (actor.input_size() != policy_input_size(config) ||
      actor.output_size() != policy_action_size(config)) {
    throw std::invalid_argument("collect: actor width does not match the config");
  }
  if (critic.input_size() != critic_input_size(config) || critic.output_size() != 1) {
    throw std::invalid_argument("collect: critic width does not match the config");
  }
  if (min_timesteps < 1) throw std::invalid_argument("collect: min_timesteps must be positive");

  if (workers <= 1) return collect_worker(config, actor, critic, min_timesteps, seed);

  const int per_worker = (min_timesteps + workers - 1) / workers;
  std::vector<RolloutBuffer> parts(static_cast<std::size_t>(workers));
  std::vector<std::thread> threads;
  threads.reserve(static_cast<std::size_t>(workers));
  for (int w = 0; w < workers; ++w) {
    threads.emplace_back([&, w] {
      parts[static_cast<std::size_t>(w)] =
          collect_worker(config, actor, critic, per_worker,
                         derive_seed(seed, "worker", static_cast<std::uint64_t>(w)));
    });
  }
  for (std::thread& t : threads) t.join();

  RolloutBuffer merged;
  int episode = 0;
  for (RolloutBuffer& part : parts) {
    const int offset = merged.size();
    const int episode_offset = episode;
    for (Transition& tr : part.transitions) {
      tr.episode_id += episode_offset;
      merged.transitions.push_back(std::move(tr));
    }
    for (const auto& [b, e] : part.episode_ranges) {
      merged.episode_ranges.emplace_back(b + offset, e + offset);
    }
    for (EpisodeOutcome& oc : part.outcomes) {
      oc.episode_id += episode_offset;
      merged.outcomes.push_back(std::move(oc));
      ++episode;
    }
  }
  return merged;
}

void dump_trace(const RolloutBuffer& buffer, const EnvConfig& config, const std::string& path) {
  TraceWriter writer(path, config.num_processes(), /*training_columns=*/true);
  for (const Transition& tr : buffer.transitions) {
    TraceRow row;
    row.episode = tr.episode_id;
    row.step = tr.step;
    row.agent = tr.agent_id;
    row.sampled = tr.sampled;
    row.global_process = tr.global_process;
    row.observation = tr.observation;
    row.reward = tr.reward;
    row.belief = tr.belief_after;
    row.message = tr.out_message;
    row.value_estimate = tr.value_old;
    row.logprob = tr.old_log_prob;
    writer.write(row);
  }
}

}  // namespace marla
