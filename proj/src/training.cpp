#include "marla/training.hpp"

#include <algorithm>
#include <cmath>

#include "marla/rollout.hpp"

namespace marla {

TrainingRun initialize_training(const RunConfig& cfg) {
  cfg.validate();
  TrainingRun run;

  std::vector<int> actor_sizes;
  actor_sizes.push_back(policy_input_size(cfg.env));
  for (int h : cfg.network.hidden) actor_sizes.push_back(h);
  actor_sizes.push_back(policy_action_size(cfg.env));

  std::vector<int> critic_sizes;
  critic_sizes.push_back(critic_input_size(cfg.env));
  for (int h : cfg.network.hidden) critic_sizes.push_back(h);
  critic_sizes.push_back(1);

  // Near-uniform initial policy over sampling actions: the output layer
  // starts at gain 0.01. The stop logit starts depressed so early episodes
  // are long enough for belief-conditioned stopping to become learnable;
  // a zero-bias start collapses into stopping immediately.
  Rng actor_rng(derive_seed(cfg.run.seed, "net-init", 0));
  run.actor = make_network(actor_sizes, actor_rng, 0.01);
  run.actor.layers.back().bias.back() = cfg.network.stop_bias;
  Rng critic_rng(derive_seed(cfg.run.seed, "net-init", 1));
  run.critic = make_network(critic_sizes, critic_rng, 1.0);

  run.actor_opt = AdamState::init(run.actor, cfg.ppo.policy_lr);
  run.critic_opt = AdamState::init(run.critic, cfg.ppo.value_lr);
  run.kl_state.beta = cfg.ppo.beta_init;
  return run;
}

// Sampling cost used for collection at this absolute iteration: held at a
// small floor for the first half of the warmup, then ramped geometrically
// up to the target.
double curriculum_cost(const PPOHyperparams& hp, double target, int iteration) {
  const int warmup = hp.cost_warmup_iterations;
  if (warmup <= 0 || target <= 0.0 || iteration >= warmup) return target;
  const double floor = std::min(0.01, target);
  if (floor >= target) return target;
  const int hold = warmup / 2;
  if (iteration < hold) return floor;
  const double frac =
      static_cast<double>(iteration + 1 - hold) / static_cast<double>(warmup - hold);
  return floor * std::pow(target / floor, frac);
}

void run_training(TrainingRun& run, const RunConfig& cfg, int iterations,
                  const std::function<bool(const TrainingStats&)>& on_iteration) {
  const int start = static_cast<int>(run.history.size());
  EnvConfig env = cfg.env;
  for (int it = start; it < start + iterations; ++it) {
    env.sampling_cost = curriculum_cost(cfg.ppo, cfg.env.sampling_cost, it);
    const RolloutBuffer buffer =
        collect(env, run.actor, run.critic, cfg.ppo.rollout_timesteps,
                derive_seed(cfg.run.seed, "collect", static_cast<std::uint64_t>(it)),
                cfg.run.workers);
    TrainingStats stats = train_iteration(buffer, run.actor, run.critic, run.actor_opt,
                                          run.critic_opt, cfg.ppo, run.kl_state, it,
                                          cfg.run.seed);
    run.history.push_back(stats);
    if (on_iteration && on_iteration(stats)) break;
  }
}

}  // namespace marla
