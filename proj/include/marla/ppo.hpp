#ifndef MARLA_PPO_HPP
#define MARLA_PPO_HPP

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "marla/nn.hpp"
#include "marla/rollout.hpp"

namespace marla {

struct PPOHyperparams {
  double gamma = 0.99;
  double gae_lambda = 0.95;
  double clip_epsilon = 0.2;
  double kl_target = 0.01;   // d_des
  double kl_band = 1.5;      // c_des
  double beta_factor = 2.0;
  double beta_init = 1.0;
  int epochs = 10;
  int minibatch_size = 256;
  int rollout_timesteps = 4096;  // T, transitions per iteration
  double policy_lr = 3e-4;
  double value_lr = 1e-3;
  double grad_clip = 0.5;  // global-norm clip, <= 0 disables
  // Sampling-cost curriculum: collection holds the cost at min(0.01, c)
  // for the first half of this window, then ramps it geometrically up to
  // the configured value (0 disables). At a high cost a fresh policy
  // collapses into stopping immediately before informative sampling can
  // form; the cheap phase lets it learn on long episodes first.
  int cost_warmup_iterations = 200;

  void validate() const;
};

struct AdaptiveKLState {
  double beta = 1.0;
  double last_kl = 0.0;
  int num_increases = 0;
  int num_decreases = 0;
};

// eta_t = r_t + gamma V(s_{t+1}) - V(s_t); values carries one extra entry,
// the bootstrap (0 at true episode ends, V(s_T) at horizon truncation).
std::vector<double> td_errors(const std::vector<double>& rewards,
                              const std::vector<double>& values, double gamma);

// A_t = sum_{i>=t} (gamma lambda)^{i-t} eta_i via backward recursion.
std::vector<double> gae(const std::vector<double>& td, double gamma, double lambda);

// beta /= factor when d < target/band, beta *= factor when d > target*band.
void adapt_beta(AdaptiveKLState& state, double measured_kl, double kl_target,
                double kl_band, double factor);

// Per-transition advantages and value targets for one training iteration.
// value_targets use the raw advantages (V_des = A_raw + V_old); the
// advantages used by the policy objective are normalized to mean 0, std 1.
struct AdvantageBatch {
  std::vector<double> advantages;
  std::vector<double> raw_advantages;
  std::vector<double> value_targets;
};

AdvantageBatch build_advantage_batch(const RolloutBuffer& buffer, const PPOHyperparams& hp);

struct PolicyObjectiveStats {
  double loss = 0.0;           // negated objective, to minimize
  double mean_kl = 0.0;
  double clip_fraction = 0.0;  // fraction of samples where the clipped branch wins
  int excluded = 0;            // transitions dropped for non-finite ratios
  int included = 0;
};

// Clipped-surrogate + KL-penalty objective over the given transitions.
// Gradients (if requested) are the mean over included samples and flow only
// through the selected min branch plus the KL term.
PolicyObjectiveStats policy_objective(const RolloutBuffer& buffer, const AdvantageBatch& batch,
                                      std::span<const int> indices, const Network& actor,
                                      double beta, double clip_epsilon, Gradients* grads,
                                      Workspace& ws);

// Mean squared error against the precomputed V_des targets.
double value_loss(const RolloutBuffer& buffer, const AdvantageBatch& batch,
                  std::span<const int> indices, const Network& critic, Gradients* grads,
                  Workspace& ws);

struct TrainingStats {
  int iteration = 0;
  double policy_loss = 0.0;
  double value_loss = 0.0;
  double mean_kl = 0.0;  // measured on the whole buffer after the last epoch
  double beta = 0.0;
  double clip_fraction = 0.0;
  double grad_norm = 0.0;  // mean pre-clip policy gradient norm
  double mean_episode_risk = 0.0;
  double mean_error_rate = 0.0;
  double mean_sample_size = 0.0;
  // Surfaced in logs, not part of the CSV schema.
  int excluded_transitions = 0;
  std::int64_t skipped_adam_steps = 0;
};

std::string training_stats_header();
std::string training_stats_row(const TrainingStats& stats);

// One PPO iteration: multi-epoch shuffled minibatch updates of both networks,
// then a single beta adaptation from the KL measured on the whole buffer.
TrainingStats train_iteration(const RolloutBuffer& buffer, Network& actor, Network& critic,
                              AdamState& actor_opt, AdamState& critic_opt,
                              const PPOHyperparams& hp, AdaptiveKLState& kl_state,
                              int iteration, std::uint64_t seed);

}  // namespace marla

#endif  // MARLA_PPO_HPP
