#include "marla/env.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace marla {

namespace {

constexpr double kBeliefFloor = 1e-12;
constexpr double kMinStdDev = 1e-6;

[[noreturn]] void config_error(const std::string& what) {
  throw std::invalid_argument("invalid config: " + what);
}

}  // namespace

HypothesisSpace HypothesisSpace::uniform(int m) {
  HypothesisSpace hs;
  hs.num_hypotheses = m;
  hs.prior.assign(static_cast<std::size_t>(m), 1.0 / m);
  return hs;
}

void HypothesisSpace::validate() const {
  if (num_hypotheses < 2) {
    config_error("hypothesis_space.num_hypotheses: need at least 2 hypotheses");
  }
  if (static_cast<int>(prior.size()) != num_hypotheses) {
    config_error("hypothesis_space.prior: length must equal num_hypotheses");
  }
  double sum = 0.0;
  for (double p : prior) {
    if (!(p > 0.0 && p < 1.0)) {
      config_error("hypothesis_space.prior: entries must lie strictly in (0,1)");
    }
    sum += p;
  }
  if (std::abs(sum - 1.0) > 1e-12) {
    config_error("hypothesis_space.prior: entries must sum to 1 within 1e-12");
  }
}

double ObservationModel::density_normal(double x) const {
  const double z = (x - normal_mean) / std_dev;
  return std::exp(-0.5 * z * z) / (std_dev * std::sqrt(2.0 * std::numbers::pi));
}

double ObservationModel::density_anomalous(double x) const {
  const double z = (x - anomalous_mean) / std_dev;
  return std::exp(-0.5 * z * z) / (std_dev * std::sqrt(2.0 * std::numbers::pi));
}

void ObservationModel::validate() const {
  if (!(std_dev >= kMinStdDev)) {
    config_error("observation_model.std_dev: must be at least 1e-6");
  }
  if (anomalous_mean == normal_mean) {
    config_error(
        "observation_model.anomalous_mean: must differ from normal_mean, "
        "otherwise hypotheses are indistinguishable");
  }
}

int AgentSpec::local_of_global(int global) const {
  for (std::size_t i = 0; i < sampleable_processes.size(); ++i) {
    if (sampleable_processes[i] == global) return static_cast<int>(i);
  }
  return -1;
}

void EnvConfig::validate() const {
  hypothesis_space.validate();
  observation_model.validate();

  const int m = num_processes();
  const int k = num_agents();
  if (k < 1) config_error("agents: at least one agent required");

  std::vector<bool> covered(static_cast<std::size_t>(m), false);
  for (int i = 0; i < k; ++i) {
    const AgentSpec& spec = agents[static_cast<std::size_t>(i)];
    if (spec.agent_id != i) {
      config_error("agents: agent_id must equal the agent's position");
    }
    if (spec.sampleable_processes.empty()) {
      config_error("agents: sampleable_processes must be non-empty");
    }
    int prev = -1;
    for (int g : spec.sampleable_processes) {
      if (g < 0 || g >= m) {
        config_error("agents: sampleable process index out of range");
      }
      if (g <= prev) {
        config_error("agents: sampleable_processes must be strictly ascending");
      }
      prev = g;
      covered[static_cast<std::size_t>(g)] = true;
    }
  }
  for (int g = 0; g < m; ++g) {
    if (!covered[static_cast<std::size_t>(g)]) {
      config_error("agents: union of sampleable_processes must cover every process");
    }
  }

  if (!(sampling_cost >= 0.0)) config_error("sampling_cost: must be >= 0");
  if (static_cast<int>(terminal_cost_table.size()) != k + 1) {
    config_error("terminal_cost_table: length must be num_agents + 1");
  }
  if (terminal_cost_table[0] != 0.0) {
    config_error("terminal_cost_table: J[0] must be 0");
  }
  for (std::size_t w = 1; w < terminal_cost_table.size(); ++w) {
    if (!(terminal_cost_table[w] > terminal_cost_table[w - 1])) {
      config_error("terminal_cost_table: must be strictly increasing");
    }
  }
  if (max_horizon < 1) config_error("max_horizon: must be positive");
  if (message_repeat != kRepeatUntilEpisodeEnd && message_repeat < 1) {
    config_error("message_repeat: must be positive or until-episode-end");
  }
}

EnvConfig EnvConfig::independent(int num_processes, int num_agents) {
  EnvConfig cfg;
  cfg.hypothesis_space = HypothesisSpace::uniform(num_processes);
  cfg.agents.resize(static_cast<std::size_t>(num_agents));
  for (int k = 0; k < num_agents; ++k) {
    AgentSpec& spec = cfg.agents[static_cast<std::size_t>(k)];
    spec.agent_id = k;
    spec.sampleable_processes.resize(static_cast<std::size_t>(num_processes));
    for (int g = 0; g < num_processes; ++g) spec.sampleable_processes[static_cast<std::size_t>(g)] = g;
  }
  cfg.terminal_cost_table = default_terminal_table(num_agents);
  return cfg;
}

std::vector<double> EnvConfig::default_terminal_table(int num_agents) {
  std::vector<double> table(static_cast<std::size_t>(num_agents) + 1);
  for (int w = 0; w <= num_agents; ++w) table[static_cast<std::size_t>(w)] = w;
  return table;
}

int Belief::argmax() const {
  int best = 0;
  for (int i = 1; i < size(); ++i) {
    if (probs[static_cast<std::size_t>(i)] > probs[static_cast<std::size_t>(best)]) best = i;
  }
  return best;
}

double Belief::max() const { return probs[static_cast<std::size_t>(argmax())]; }

bool EpisodeState::terminal() const {
  for (std::uint8_t a : active) {
    if (a) return false;
  }
  return true;
}

EpisodeState new_episode(const EnvConfig& config, std::uint64_t seed) {
  config.validate();

  EpisodeState state;
  const int k = config.num_agents();
  Belief initial{config.hypothesis_space.prior};
  state.beliefs.assign(static_cast<std::size_t>(k), initial);
  state.beliefs_prev = state.beliefs;
  state.active.assign(static_cast<std::size_t>(k), 1);
  state.stop_time.assign(static_cast<std::size_t>(k), -1);
  state.declaration.assign(static_cast<std::size_t>(k), -1);
  state.messages.assign(static_cast<std::size_t>(k), Message{});
  state.rng = Rng(derive_seed(seed, "episode"));
  state.true_hypothesis = state.rng.categorical(config.hypothesis_space.prior);
  state.time = 0;
  return state;
}

double draw_observation(const ObservationModel& model, int sampled_process,
                        int true_hypothesis, Rng& rng) {
  if (sampled_process < 0 || true_hypothesis < 0) {
    throw std::logic_error("draw_observation: negative process index");
  }
  const double mean =
      sampled_process == true_hypothesis ? model.anomalous_mean : model.normal_mean;
  return rng.normal(mean, model.std_dev);
}

Belief update_belief(const Belief& belief, int sampled_process, double observation,
                     const ObservationModel& model) {
  if (!std::isfinite(observation)) {
    throw std::invalid_argument("update_belief: observation must be finite");
  }
  const int m = belief.size();
  if (sampled_process < 0 || sampled_process >= m) {
    throw std::logic_error("update_belief: sampled process out of range");
  }

  const double f = model.density_normal(observation);
  const double g = model.density_anomalous(observation);

  Belief out;
  out.probs.resize(static_cast<std::size_t>(m));
  double norm = 0.0;
  for (int j = 0; j < m; ++j) {
    const double w = belief.probs[static_cast<std::size_t>(j)] * (j == sampled_process ? g : f);
    out.probs[static_cast<std::size_t>(j)] = w;
    norm += w;
  }
  // Both densities can underflow for extreme observations; the floor keeps
  // the distribution valid without ever dividing by zero.
  if (norm >= 1e-300) {
    for (double& p : out.probs) p /= norm;
  }
  double floored = 0.0;
  for (double& p : out.probs) {
    if (p < kBeliefFloor) p = kBeliefFloor;
    floored += p;
  }
  for (double& p : out.probs) p /= floored;
  return out;
}

double terminal_cost(const std::vector<int>& declarations, int true_hypothesis,
                     const std::vector<double>& table) {
  int wrong = 0;
  for (int d : declarations) {
    if (d < 0) throw std::logic_error("terminal_cost: missing declaration");
    if (d != true_hypothesis) ++wrong;
  }
  if (wrong >= static_cast<int>(table.size())) {
    throw std::logic_error("terminal_cost: table shorter than number of agents + 1");
  }
  return table[static_cast<std::size_t>(wrong)];
}

std::vector<double> terminal_cost_shares(double total, const std::vector<int>& declarations,
                                         int true_hypothesis) {
  const int num_agents = static_cast<int>(declarations.size());
  std::vector<double> shares(static_cast<std::size_t>(num_agents), 0.0);
  std::vector<int> wrong;
  for (int k = 0; k < num_agents; ++k) {
    if (declarations[static_cast<std::size_t>(k)] != true_hypothesis) wrong.push_back(k);
  }
  if (wrong.empty() || total == 0.0) return shares;
  // The last wrong agent takes the remainder: accumulating the shares in
  // agent order then reproduces `total` exactly (Sterbenz lemma, the partial
  // sum stays within a factor of two of the total).
  const double even = total / static_cast<double>(wrong.size());
  double acc = 0.0;
  for (std::size_t i = 0; i + 1 < wrong.size(); ++i) {
    shares[static_cast<std::size_t>(wrong[i])] = even;
    acc += even;
  }
  shares[static_cast<std::size_t>(wrong.back())] = total - acc;
  return shares;
}

int choose_declaration(const Belief& belief, const EpisodeState& state, int agent_id,
                       bool communication_enabled) {
  const int best = belief.argmax();
  if (!communication_enabled) return best;
  const double top = belief.probs[static_cast<std::size_t>(best)];
  // Prefer a partner's currently visible declaration when it ties the argmax.
  for (int sender = 0; sender < state.num_agents(); ++sender) {
    if (sender == agent_id) continue;
    const Message& msg = state.messages[static_cast<std::size_t>(sender)];
    if (msg.kind != Message::Kind::Declared) continue;
    const int h = msg.payload;
    if (h >= 0 && h < belief.size() &&
        belief.probs[static_cast<std::size_t>(h)] == top) {
      return h;
    }
  }
  return best;
}

StepOutcome step(EpisodeState& state,
                 const std::vector<std::optional<AgentAction>>& actions,
                 const EnvConfig& config) {
  const int k = config.num_agents();
  if (state.terminal()) {
    throw std::logic_error("step: episode already terminal");
  }
  if (static_cast<int>(actions.size()) != k) {
    throw std::logic_error("step: need one action slot per agent");
  }
  for (int i = 0; i < k; ++i) {
    const bool is_active = state.active[static_cast<std::size_t>(i)] != 0;
    if (is_active && !actions[static_cast<std::size_t>(i)].has_value()) {
      throw std::logic_error("step: missing action for active agent");
    }
    if (!is_active && actions[static_cast<std::size_t>(i)].has_value()) {
      throw std::logic_error("step: action supplied for inactive agent");
    }
  }

  const int n = state.time + 1;
  state.beliefs_prev = state.beliefs;

  StepOutcome outcome;
  std::vector<int> sampled_process(static_cast<std::size_t>(k), -1);

  for (int i = 0; i < k; ++i) {
    if (!actions[static_cast<std::size_t>(i)].has_value()) continue;
    const AgentAction& action = *actions[static_cast<std::size_t>(i)];
    const AgentSpec& spec = config.agents[static_cast<std::size_t>(i)];

    AgentStepResult result;
    result.agent_id = i;
    result.action = action;
    result.reward = -config.sampling_cost;  // every active tick costs c, stop included

    if (action.kind == AgentAction::Kind::Sample) {
      if (action.local_index < 0 || action.local_index >= spec.stop_action()) {
        throw std::logic_error("step: sample index outside the agent's action set");
      }
      const int global = spec.global_of_local(action.local_index);
      const double obs =
          draw_observation(config.observation_model, global, state.true_hypothesis, state.rng);
      state.beliefs[static_cast<std::size_t>(i)] =
          update_belief(state.beliefs[static_cast<std::size_t>(i)], global, obs,
                        config.observation_model);
      sampled_process[static_cast<std::size_t>(i)] = global;
      result.sampled = true;
      result.global_process = global;
      result.observation = obs;
    } else {
      const int decl = action.declare_override
                           ? *action.declare_override
                           : choose_declaration(state.beliefs[static_cast<std::size_t>(i)],
                                                state, i, config.communication_enabled);
      state.stop_time[static_cast<std::size_t>(i)] = n;
      state.declaration[static_cast<std::size_t>(i)] = decl;
      state.active[static_cast<std::size_t>(i)] = 0;
    }
    outcome.results.push_back(result);
  }

  state.time = n;

  // Horizon cap: remaining agents are force-stopped with argmax declarations
  // (computed on the belief just updated by their final sample).
  if (n == config.max_horizon) {
    for (int i = 0; i < k; ++i) {
      if (!state.active[static_cast<std::size_t>(i)]) continue;
      state.stop_time[static_cast<std::size_t>(i)] = n;
      state.declaration[static_cast<std::size_t>(i)] = choose_declaration(
          state.beliefs[static_cast<std::size_t>(i)], state, i,
          config.communication_enabled);
      state.active[static_cast<std::size_t>(i)] = 0;
    }
  }

  // Messages visible from tick n+1.
  for (int i = 0; i < k; ++i) {
    Message& msg = state.messages[static_cast<std::size_t>(i)];
    if (state.active[static_cast<std::size_t>(i)]) {
      msg.kind = Message::Kind::LastAction;
      msg.payload = sampled_process[static_cast<std::size_t>(i)];
    } else {
      const int since_stop = n - state.stop_time[static_cast<std::size_t>(i)];
      const bool broadcasting = config.message_repeat == kRepeatUntilEpisodeEnd ||
                                since_stop < config.message_repeat;
      if (broadcasting) {
        msg.kind = Message::Kind::Declared;
        msg.payload = state.declaration[static_cast<std::size_t>(i)];
      } else {
        msg.kind = Message::Kind::Null;
        msg.payload = -1;
      }
    }
  }

  if (state.terminal()) {
    outcome.terminal = true;
    outcome.terminal_cost =
        terminal_cost(state.declaration, state.true_hypothesis, config.terminal_cost_table);
  }
  return outcome;
}

}  // namespace marla
