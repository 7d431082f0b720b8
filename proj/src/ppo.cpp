#include "marla/ppo.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "marla/csv.hpp"

namespace marla {

namespace {

constexpr double kLogProbGapLimit = 30.0;

[[noreturn]] void hp_error(const std::string& what) {
  throw std::invalid_argument("invalid hyperparameters: " + what);
}

}  // namespace

void PPOHyperparams::validate() const {
  if (!(gamma > 0.0 && gamma <= 1.0)) hp_error("gamma must be in (0,1]");
  if (!(gae_lambda >= 0.0 && gae_lambda <= 1.0)) hp_error("gae_lambda must be in [0,1]");
  if (!(clip_epsilon > 0.0)) hp_error("clip_epsilon must be positive");
  if (!(kl_target > 0.0)) hp_error("kl_target must be positive");
  if (!(kl_band > 1.0)) hp_error("kl_band must exceed 1");
  if (!(beta_factor > 1.0)) hp_error("beta_factor must exceed 1");
  if (!(beta_init > 0.0)) hp_error("beta_init must be positive");
  if (epochs < 1) hp_error("epochs must be positive");
  if (minibatch_size < 1) hp_error("minibatch_size must be positive");
  if (rollout_timesteps < 1) hp_error("rollout_timesteps must be positive");
  if (cost_warmup_iterations < 0) hp_error("cost_warmup_iterations must be non-negative");
  if (!(policy_lr >= 0.0)) hp_error("policy_lr must be non-negative");
  if (!(value_lr >= 0.0)) hp_error("value_lr must be non-negative");
}

std::vector<double> td_errors(const std::vector<double>& rewards,
                              const std::vector<double>& values, double gamma) {
  if (values.size() != rewards.size() + 1) {
    throw std::logic_error("td_errors: values must have one more entry than rewards");
  }
  std::vector<double> td(rewards.size());
  for (std::size_t t = 0; t < rewards.size(); ++t) {
    td[t] = rewards[t] + gamma * values[t + 1] - values[t];
  }
  return td;
}

std::vector<double> gae(const std::vector<double>& td, double gamma, double lambda) {
  std::vector<double> adv(td.size());
  double running = 0.0;
  const double decay = gamma * lambda;
  for (std::size_t i = td.size(); i-- > 0;) {
    running = td[i] + decay * running;
    adv[i] = running;
  }
  return adv;
}

void adapt_beta(AdaptiveKLState& state, double measured_kl, double kl_target, double kl_band,
                double factor) {
  state.last_kl = measured_kl;
  if (measured_kl < kl_target / kl_band) {
    state.beta /= factor;
    ++state.num_decreases;
  } else if (measured_kl > kl_target * kl_band) {
    state.beta *= factor;
    ++state.num_increases;
  }
}

AdvantageBatch build_advantage_batch(const RolloutBuffer& buffer, const PPOHyperparams& hp) {
  const std::size_t n = buffer.transitions.size();
  AdvantageBatch batch;
  batch.advantages.assign(n, 0.0);
  batch.raw_advantages.assign(n, 0.0);
  batch.value_targets.assign(n, 0.0);

  // GAE runs per agent trajectory; advantages never cross episode boundaries.
  for (const auto& [begin, end] : buffer.episode_ranges) {
    std::vector<std::vector<int>> per_agent;
    for (int i = begin; i < end; ++i) {
      const int agent = buffer.transitions[static_cast<std::size_t>(i)].agent_id;
      if (agent >= static_cast<int>(per_agent.size())) {
        per_agent.resize(static_cast<std::size_t>(agent) + 1);
      }
      per_agent[static_cast<std::size_t>(agent)].push_back(i);
    }
    for (const std::vector<int>& traj : per_agent) {
      if (traj.empty()) continue;
      std::vector<double> rewards(traj.size());
      std::vector<double> values(traj.size() + 1);
      for (std::size_t t = 0; t < traj.size(); ++t) {
        const Transition& tr = buffer.transitions[static_cast<std::size_t>(traj[t])];
        rewards[t] = tr.reward;
        values[t] = tr.value_old;
      }
      const Transition& last = buffer.transitions[static_cast<std::size_t>(traj.back())];
      values[traj.size()] = last.forced_stop ? last.bootstrap_value : 0.0;
      const std::vector<double> adv = gae(td_errors(rewards, values, hp.gamma), hp.gamma,
                                          hp.gae_lambda);
      for (std::size_t t = 0; t < traj.size(); ++t) {
        const std::size_t idx = static_cast<std::size_t>(traj[t]);
        batch.raw_advantages[idx] = adv[t];
        batch.value_targets[idx] = adv[t] + values[t];
      }
    }
  }

  // Normalize to mean 0, population std 1 across the iteration's batch.
  double mean = 0.0;
  for (double a : batch.raw_advantages) mean += a;
  mean /= static_cast<double>(n);
  double var = 0.0;
  for (double a : batch.raw_advantages) var += (a - mean) * (a - mean);
  var /= static_cast<double>(n);
  const double inv = 1.0 / (std::sqrt(var) + 1e-8);
  for (std::size_t i = 0; i < n; ++i) {
    batch.advantages[i] = (batch.raw_advantages[i] - mean) * inv;
  }
  return batch;
}

PolicyObjectiveStats policy_objective(const RolloutBuffer& buffer, const AdvantageBatch& batch,
                                      std::span<const int> indices, const Network& actor,
                                      double beta, double clip_epsilon, Gradients* grads,
                                      Workspace& ws) {
  PolicyObjectiveStats stats;
  double loss_acc = 0.0;
  double kl_acc = 0.0;
  int clipped_count = 0;
  std::vector<double> upstream;

  for (int idx : indices) {
    const Transition& tr = buffer.transitions[static_cast<std::size_t>(idx)];
    const std::vector<double> probs = forward_policy(actor, tr.policy_input, tr.action_mask);
    const double log_prob = std::log(probs[static_cast<std::size_t>(tr.action)]);
    const double gap = log_prob - tr.old_log_prob;
    if (!std::isfinite(gap) || std::abs(gap) > kLogProbGapLimit) {
      ++stats.excluded;
      continue;
    }
    const double ratio = std::exp(gap);
    const double advantage = batch.advantages[static_cast<std::size_t>(idx)];
    const double clipped_ratio =
        std::clamp(ratio, 1.0 - clip_epsilon, 1.0 + clip_epsilon);
    const double unclipped = ratio * advantage;
    const double clipped = clipped_ratio * advantage;
    const bool clip_active = clipped < unclipped;
    const double surrogate = clip_active ? clipped : unclipped;
    const double kl = kl_categorical(tr.old_policy, probs);

    loss_acc += -(surrogate - beta * kl);
    kl_acc += kl;
    clipped_count += clip_active ? 1 : 0;
    ++stats.included;

    if (grads != nullptr) {
      // d(-surrogate)/dz flows only through the unclipped branch; the
      // clipped branch is constant in theta. d(beta KL)/dz = beta (p - p_old).
      const double coef = clip_active ? 0.0 : -advantage * ratio;
      upstream.assign(probs.size(), 0.0);
      for (std::size_t j = 0; j < probs.size(); ++j) {
        upstream[j] = coef * (-probs[j]) + beta * (probs[j] - tr.old_policy[j]);
      }
      upstream[static_cast<std::size_t>(tr.action)] += coef;
      backward(actor, tr.policy_input, upstream, *grads, ws, 1.0);
    }
  }

  if (stats.included > 0) {
    const double inv = 1.0 / stats.included;
    stats.loss = loss_acc * inv;
    stats.mean_kl = kl_acc * inv;
    stats.clip_fraction = static_cast<double>(clipped_count) * inv;
    if (grads != nullptr) grads->scale(inv);
  }
  return stats;
}

double value_loss(const RolloutBuffer& buffer, const AdvantageBatch& batch,
                  std::span<const int> indices, const Network& critic, Gradients* grads,
                  Workspace& ws) {
  double loss = 0.0;
  std::vector<double> upstream(1);
  const double inv = indices.empty() ? 0.0 : 1.0 / static_cast<double>(indices.size());
  for (int idx : indices) {
    const Transition& tr = buffer.transitions[static_cast<std::size_t>(idx)];
    const double v = forward_value(critic, tr.critic_input);
    const double err = v - batch.value_targets[static_cast<std::size_t>(idx)];
    loss += err * err;
    if (grads != nullptr) {
      upstream[0] = 2.0 * err * inv;
      backward(critic, tr.critic_input, upstream, *grads, ws, 1.0);
    }
  }
  return loss * inv;
}

std::string training_stats_header() {
  return "iteration,policy_loss,value_loss,mean_kl,beta,clip_fraction,grad_norm,"
         "mean_episode_risk,mean_error_rate,mean_sample_size";
}

std::string training_stats_row(const TrainingStats& s) {
  std::vector<std::string> fields = {
      std::to_string(s.iteration),         format_double(s.policy_loss),
      format_double(s.value_loss),         format_double(s.mean_kl),
      format_double(s.beta),               format_double(s.clip_fraction),
      format_double(s.grad_norm),          format_double(s.mean_episode_risk),
      format_double(s.mean_error_rate),    format_double(s.mean_sample_size)};
  return join_csv(fields);
}

TrainingStats train_iteration(const RolloutBuffer& buffer, Network& actor, Network& critic,
                              AdamState& actor_opt, AdamState& critic_opt,
                              const PPOHyperparams& hp, AdaptiveKLState& kl_state,
                              int iteration, std::uint64_t seed) {
  if (buffer.transitions.empty()) {
    throw std::logic_error("train_iteration: empty buffer");
  }
  hp.validate();

  const AdvantageBatch batch = build_advantage_batch(buffer, hp);
  const int n = buffer.size();
  std::vector<int> indices(static_cast<std::size_t>(n));
  std::iota(indices.begin(), indices.end(), 0);

  Rng shuffle_rng(derive_seed(seed, "minibatch-shuffle", static_cast<std::uint64_t>(iteration)));
  Gradients policy_grads = Gradients::zeros_like(actor);
  Gradients value_grads = Gradients::zeros_like(critic);
  Workspace ws_actor;
  Workspace ws_critic;

  TrainingStats stats;
  stats.iteration = iteration;
  const std::int64_t skipped_before = actor_opt.skipped_steps + critic_opt.skipped_steps;
  double loss_acc = 0.0;
  double vloss_acc = 0.0;
  double clip_acc = 0.0;
  double norm_acc = 0.0;
  int minibatches = 0;

  for (int epoch = 0; epoch < hp.epochs; ++epoch) {
    shuffle_rng.shuffle(indices);
    for (int off = 0; off < n; off += hp.minibatch_size) {
      const int len = std::min(hp.minibatch_size, n - off);
      const std::span<const int> chunk(indices.data() + off, static_cast<std::size_t>(len));

      policy_grads.zero();
      const PolicyObjectiveStats pstats = policy_objective(
          buffer, batch, chunk, actor, kl_state.beta, hp.clip_epsilon, &policy_grads, ws_actor);
      const double pnorm = std::sqrt(policy_grads.squared_norm());
      if (hp.grad_clip > 0.0 && pnorm > hp.grad_clip) {
        policy_grads.scale(hp.grad_clip / pnorm);
      }
      adam_step(actor, policy_grads, actor_opt);

      value_grads.zero();
      const double vloss =
          value_loss(buffer, batch, chunk, critic, &value_grads, ws_critic);
      const double vnorm = std::sqrt(value_grads.squared_norm());
      if (hp.grad_clip > 0.0 && vnorm > hp.grad_clip) {
        value_grads.scale(hp.grad_clip / vnorm);
      }
      adam_step(critic, value_grads, critic_opt);

      loss_acc += pstats.loss;
      vloss_acc += vloss;
      clip_acc += pstats.clip_fraction;
      norm_acc += pnorm;
      stats.excluded_transitions += pstats.excluded;
      ++minibatches;
    }
  }

  // One beta adaptation per iteration, measured after the last epoch.
  double kl_acc = 0.0;
  int kl_count = 0;
  for (const Transition& tr : buffer.transitions) {
    const std::vector<double> probs = forward_policy(actor, tr.policy_input, tr.action_mask);
    kl_acc += kl_categorical(tr.old_policy, probs);
    ++kl_count;
  }
  const double measured_kl = kl_count > 0 ? kl_acc / kl_count : 0.0;
  stats.beta = kl_state.beta;  // the value used during this iteration's updates
  adapt_beta(kl_state, measured_kl, hp.kl_target, hp.kl_band, hp.beta_factor);

  stats.policy_loss = minibatches ? loss_acc / minibatches : 0.0;
  stats.value_loss = minibatches ? vloss_acc / minibatches : 0.0;
  stats.mean_kl = measured_kl;
  stats.clip_fraction = minibatches ? clip_acc / minibatches : 0.0;
  stats.grad_norm = minibatches ? norm_acc / minibatches : 0.0;
  stats.skipped_adam_steps =
      actor_opt.skipped_steps + critic_opt.skipped_steps - skipped_before;

  double risk_acc = 0.0;
  double err_acc = 0.0;
  double size_acc = 0.0;
  for (const EpisodeOutcome& oc : buffer.outcomes) {
    risk_acc += oc.total_risk;
    int wrong = 0;
    long tau_sum = 0;
    for (std::size_t a = 0; a < oc.declarations.size(); ++a) {
      wrong += oc.declarations[a] != oc.true_hypothesis ? 1 : 0;
      tau_sum += oc.stop_times[a];
    }
    const double agents = static_cast<double>(oc.declarations.size());
    err_acc += wrong / agents;
    size_acc += static_cast<double>(tau_sum) / agents;
  }
  const double episodes = static_cast<double>(buffer.num_episodes());
  if (episodes > 0) {
    stats.mean_episode_risk = risk_acc / episodes;
    stats.mean_error_rate = err_acc / episodes;
    stats.mean_sample_size = size_acc / episodes;
  }
  return stats;
}

}  // namespace marla
