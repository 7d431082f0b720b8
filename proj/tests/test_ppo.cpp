#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <numeric>

#include "marla/ppo.hpp"

using namespace marla;

namespace {

// Two-action bandit buffer: a single state, reward 1 for action 0 and 0 for
// action 1, each transition its own one-step episode. Old distributions and
// log-probs are recorded under the current actor, like a real collection.
RolloutBuffer make_bandit_buffer(const Network& actor, const Network& critic, int samples,
                                 std::uint64_t seed) {
  RolloutBuffer buf;
  Rng rng(seed);
  const std::vector<double> state_input = {1.0};
  const std::vector<std::uint8_t> mask = {1, 1};
  for (int i = 0; i < samples; ++i) {
    Transition tr;
    tr.agent_id = 0;
    tr.step = 1;
    tr.episode_id = i;
    tr.policy_input = state_input;
    tr.critic_input = state_input;
    tr.action_mask = mask;
    tr.old_policy = forward_policy(actor, state_input, mask);
    tr.action = rng.categorical(tr.old_policy);
    tr.old_log_prob = std::log(tr.old_policy[static_cast<std::size_t>(tr.action)]);
    tr.value_old = forward_value(critic, state_input);
    tr.reward = tr.action == 0 ? 1.0 : 0.0;
    tr.done = true;
    buf.transitions.push_back(std::move(tr));
    buf.episode_ranges.emplace_back(i, i + 1);
    EpisodeOutcome oc;
    oc.episode_id = i;
    oc.true_hypothesis = 0;
    oc.stop_times = {1};
    oc.declarations = {0};
    oc.total_risk = 0.0;
    buf.outcomes.push_back(oc);
  }
  return buf;
}

PPOHyperparams small_hp() {
  PPOHyperparams hp;
  hp.epochs = 4;
  hp.minibatch_size = 4096;
  hp.rollout_timesteps = 256;
  return hp;
}

}  // namespace

TEST_CASE("hyperparameter validation") {
  PPOHyperparams hp;
  CHECK_NOTHROW(hp.validate());
  hp.gamma = 0.0;
  CHECK_THROWS_AS(hp.validate(), std::invalid_argument);
  hp = PPOHyperparams{};
  hp.kl_band = 1.0;
  CHECK_THROWS_AS(hp.validate(), std::invalid_argument);
  hp = PPOHyperparams{};
  hp.clip_epsilon = 0.0;
  CHECK_THROWS_AS(hp.validate(), std::invalid_argument);
}

TEST_CASE("td_errors: direct evaluations") {
  CHECK(td_errors({0.0}, {0.0, 0.0}, 0.7) == std::vector<double>{0.0});

  const std::vector<double> td = td_errors({1.0}, {2.0, 3.0}, 0.5);
  CHECK(td[0] == doctest::Approx(0.5).epsilon(1e-15));

  CHECK_THROWS_AS(td_errors({1.0, 1.0}, {0.0, 0.0}, 0.9), std::logic_error);
}

TEST_CASE("td_errors: a perfect critic zeroes every error on a deterministic chain") {
  // Three rewards of 1 with gamma = 0.5; V(s_t) is the exact discounted return.
  const std::vector<double> rewards = {1.0, 1.0, 1.0};
  const std::vector<double> values = {1.75, 1.5, 1.0, 0.0};
  for (double e : td_errors(rewards, values, 0.5)) {
    CHECK(std::abs(e) <= 1e-15);
  }
}

TEST_CASE("gae: lambda 0 reduces to the td errors exactly") {
  const std::vector<double> td = {0.3, -1.2, 0.5, 2.0};
  CHECK(gae(td, 0.9, 0.0) == td);
}

TEST_CASE("gae: gamma = lambda = 1 telescopes to return minus baseline") {
  // rewards [1,1], V = 0 everywhere: advantages are [2, 1].
  const std::vector<double> td = td_errors({1.0, 1.0}, {0.0, 0.0, 0.0}, 1.0);
  const std::vector<double> adv = gae(td, 1.0, 1.0);
  CHECK(std::abs(adv[0] - 2.0) <= 1e-10);
  CHECK(std::abs(adv[1] - 1.0) <= 1e-10);
}

TEST_CASE("gae: hand-computed backward recursion") {
  const std::vector<double> adv = gae({1.0, 1.0, 1.0}, 0.9, 0.5);
  CHECK(std::abs(adv[0] - 1.6525) <= 1e-12);
  CHECK(std::abs(adv[1] - 1.45) <= 1e-12);
  CHECK(std::abs(adv[2] - 1.0) <= 1e-12);
}

TEST_CASE("gae: backward recursion matches the forward power-series sum") {
  Rng rng(3);
  std::vector<double> td(17);
  for (double& x : td) x = rng.normal();
  const double gamma = 0.97, lambda = 0.6;
  const std::vector<double> adv = gae(td, gamma, lambda);
  for (std::size_t t = 0; t < td.size(); ++t) {
    double expect = 0.0;
    double w = 1.0;
    for (std::size_t i = t; i < td.size(); ++i) {
      expect += w * td[i];
      w *= gamma * lambda;
    }
    CHECK(std::abs(adv[t] - expect) <= 1e-12);
  }
}

TEST_CASE("adapt_beta: band behavior and scripted trajectory") {
  AdaptiveKLState state;
  state.beta = 1.0;

  adapt_beta(state, 0.01, 0.01, 1.5, 2.0);  // inside the band
  CHECK(state.beta == 1.0);

  adapt_beta(state, 0.004, 0.01, 1.5, 2.0);  // below target/band = 0.00667
  CHECK(state.beta == 0.5);

  adapt_beta(state, 0.02, 0.01, 1.5, 2.0);  // above target*band = 0.015
  CHECK(state.beta == 1.0);

  // Scripted d-sequence reproduces the exact multiplicative trajectory.
  state.beta = 1.0;
  const std::vector<double> ds = {0.001, 0.001, 0.5, 0.009, 0.5, 0.5, 0.002};
  std::vector<double> expect;
  double beta = 1.0;
  for (double d : ds) {
    if (d < 0.01 / 1.5) beta /= 2.0;
    else if (d > 0.01 * 1.5) beta *= 2.0;
    expect.push_back(beta);
  }
  for (std::size_t i = 0; i < ds.size(); ++i) {
    adapt_beta(state, ds[i], 0.01, 1.5, 2.0);
    CHECK(state.beta == expect[i]);
  }
  CHECK(state.beta > 0.0);
}

TEST_CASE("policy_objective: identity policy gives ratio 1, zero KL, advantage objective") {
  Rng rng(11);
  Network actor = make_network({1, 8, 2}, rng, 0.01);
  Network critic = make_network({1, 8, 1}, rng, 1.0);
  const RolloutBuffer buf = make_bandit_buffer(actor, critic, 64, 5);

  AdvantageBatch batch;
  batch.advantages.resize(64);
  batch.raw_advantages.resize(64);
  batch.value_targets.assign(64, 0.0);
  double mean_adv = 0.0;
  Rng arng(7);
  for (int i = 0; i < 64; ++i) {
    batch.advantages[i] = arng.normal();
    mean_adv += batch.advantages[i];
  }
  mean_adv /= 64;

  std::vector<int> indices(64);
  std::iota(indices.begin(), indices.end(), 0);
  Workspace ws;
  const PolicyObjectiveStats stats =
      policy_objective(buf, batch, indices, actor, /*beta=*/3.0, 0.2, nullptr, ws);
  CHECK(stats.mean_kl == 0.0);
  CHECK(stats.clip_fraction == 0.0);
  CHECK(stats.excluded == 0);
  CHECK(std::abs(stats.loss + mean_adv) <= 1e-12);
}

TEST_CASE("policy_objective: clipping keeps the lower bound on both signs") {
  Rng rng(13);
  Network actor = make_network({1, 4, 2}, rng, 0.01);
  Network critic = make_network({1, 4, 1}, rng, 1.0);
  RolloutBuffer buf = make_bandit_buffer(actor, critic, 2, 5);

  AdvantageBatch batch;
  batch.advantages = {1.0, -1.0};
  batch.raw_advantages = batch.advantages;
  batch.value_targets = {0.0, 0.0};

  // Forge old log-probs so the current policy sits at ratio 1.5 and 0.5.
  buf.transitions[0].old_log_prob -= std::log(1.5);
  buf.transitions[1].old_log_prob -= std::log(0.5);

  Workspace ws;
  const std::vector<int> first = {0};
  PolicyObjectiveStats s0 = policy_objective(buf, batch, first, actor, 0.0, 0.2, nullptr, ws);
  // min(1.5 * 1, 1.2 * 1) = 1.2, negated for minimization.
  CHECK(std::abs(s0.loss + 1.2) <= 1e-9);
  CHECK(s0.clip_fraction == 1.0);

  const std::vector<int> second = {1};
  PolicyObjectiveStats s1 = policy_objective(buf, batch, second, actor, 0.0, 0.2, nullptr, ws);
  // min(0.5 * -1, 0.8 * -1) = -0.8: the min keeps the lower bound.
  CHECK(std::abs(s1.loss - 0.8) <= 1e-9);
  CHECK(s1.clip_fraction == 1.0);
}

TEST_CASE("policy_objective: elementwise surrogate never exceeds the unclipped term") {
  Rng rng(17);
  Network actor = make_network({1, 6, 2}, rng, 0.01);
  Network critic = make_network({1, 6, 1}, rng, 1.0);
  RolloutBuffer buf = make_bandit_buffer(actor, critic, 200, 5);

  AdvantageBatch batch;
  batch.advantages.resize(200);
  batch.raw_advantages.resize(200);
  batch.value_targets.assign(200, 0.0);
  Rng arng(19);
  for (int i = 0; i < 200; ++i) {
    batch.advantages[i] = arng.normal() * 2.0;
    // Forge a spread of ratios around 1.
    buf.transitions[i].old_log_prob += arng.normal() * 0.4;
  }

  Workspace ws;
  double independent_sum = 0.0;
  int counted = 0;
  for (int i = 0; i < 200; ++i) {
    const Transition& tr = buf.transitions[i];
    const std::vector<double> probs = forward_policy(actor, tr.policy_input, tr.action_mask);
    const double ratio = std::exp(std::log(probs[tr.action]) - tr.old_log_prob);
    const double unclipped = ratio * batch.advantages[i];
    const double clipped = std::clamp(ratio, 0.8, 1.2) * batch.advantages[i];
    const double surrogate = std::min(unclipped, clipped);
    CHECK(surrogate <= unclipped);
    independent_sum += surrogate;
    ++counted;
  }
  std::vector<int> indices(200);
  std::iota(indices.begin(), indices.end(), 0);
  const PolicyObjectiveStats stats =
      policy_objective(buf, batch, indices, actor, 0.0, 0.2, nullptr, ws);
  CHECK(stats.included == counted);
  CHECK(std::abs(stats.loss + independent_sum / counted) <= 1e-9);
}

TEST_CASE("policy_objective: gradient at theta_old equals a score-function gradient") {
  Rng rng(23);
  Network actor = make_network({1, 8, 2}, rng, 0.01);
  Network critic = make_network({1, 8, 1}, rng, 1.0);
  const RolloutBuffer buf = make_bandit_buffer(actor, critic, 64, 5);

  AdvantageBatch batch;
  batch.advantages.resize(64);
  batch.raw_advantages.resize(64);
  batch.value_targets.assign(64, 0.0);
  Rng arng(29);
  for (int i = 0; i < 64; ++i) batch.advantages[i] = arng.normal();

  std::vector<int> indices(64);
  std::iota(indices.begin(), indices.end(), 0);
  Workspace ws;
  Gradients ppo_grads = Gradients::zeros_like(actor);
  policy_objective(buf, batch, indices, actor, /*beta=*/0.7, 0.2, &ppo_grads, ws);

  // Independent estimator: grad of -mean(A log pi(a|s)).
  Gradients score_grads = Gradients::zeros_like(actor);
  Workspace ws2;
  std::vector<double> up;
  for (int i = 0; i < 64; ++i) {
    const Transition& tr = buf.transitions[i];
    const std::vector<double> probs = forward_policy(actor, tr.policy_input, tr.action_mask);
    logprob_logit_grad(probs, tr.action, up);
    for (double& u : up) u *= -batch.advantages[i] / 64.0;
    backward(actor, tr.policy_input, up, score_grads, ws2, 1.0);
  }

  for (std::size_t l = 0; l < ppo_grads.weight.size(); ++l) {
    for (std::size_t i = 0; i < ppo_grads.weight[l].data.size(); ++i) {
      CHECK(std::abs(ppo_grads.weight[l].data[i] - score_grads.weight[l].data[i]) <= 1e-6);
    }
  }
}

TEST_CASE("value_loss: exact cases and the Eq-(15)-style target") {
  Rng rng(31);
  Network critic = make_network({1, 4, 1}, rng, 1.0);
  Network actor = make_network({1, 4, 2}, rng, 0.01);
  const RolloutBuffer buf = make_bandit_buffer(actor, critic, 1, 5);

  AdvantageBatch batch;
  batch.advantages = {0.0};
  batch.raw_advantages = {0.5};
  const double v_old = buf.transitions[0].value_old;
  batch.value_targets = {0.5 + v_old};  // V_des = A_raw + V_old

  Workspace ws;
  const std::vector<int> indices = {0};
  // The critic's own output vs its own value: loss is (V - V_des)^2.
  const double loss = value_loss(buf, batch, indices, critic, nullptr, ws);
  CHECK(std::abs(loss - 0.25) <= 1e-12);

  batch.value_targets = {v_old};
  CHECK(value_loss(buf, batch, indices, critic, nullptr, ws) == 0.0);

  batch.value_targets = {v_old + 2.0};  // V = 1, target 3 shape: loss 4
  CHECK(std::abs(value_loss(buf, batch, indices, critic, nullptr, ws) - 4.0) <= 1e-12);
}

TEST_CASE("build_advantage_batch: GAE stays inside each agent trajectory") {
  // Two one-agent episodes with constant rewards; a cross-episode leak would
  // change the advantage of the first episode's last transition.
  Rng rng(37);
  Network actor = make_network({1, 4, 2}, rng, 0.01);
  Network critic = make_network({1, 4, 1}, rng, 1.0);
  RolloutBuffer buf = make_bandit_buffer(actor, critic, 4, 5);
  for (Transition& tr : buf.transitions) {
    tr.reward = 1.0;
    tr.value_old = 0.0;
  }

  PPOHyperparams hp;
  hp.gamma = 1.0;
  hp.gae_lambda = 1.0;
  const AdvantageBatch batch = build_advantage_batch(buf, hp);
  // Episodes are single transitions: every raw advantage is exactly 1.
  for (double a : batch.raw_advantages) CHECK(a == 1.0);
  // Targets are raw advantage + old value.
  for (std::size_t i = 0; i < buf.transitions.size(); ++i) {
    CHECK(batch.value_targets[i] == 1.0);
  }
  // Normalized advantages of identical raw values are all zero.
  for (double a : batch.advantages) CHECK(std::abs(a) <= 1e-9);

  // Normalization is affine: the ordering of advantages is preserved.
  for (Transition& tr : buf.transitions) tr.reward = tr.episode_id * 0.25;
  const AdvantageBatch spread = build_advantage_batch(buf, hp);
  for (std::size_t i = 0; i + 1 < spread.raw_advantages.size(); ++i) {
    for (std::size_t j = i + 1; j < spread.raw_advantages.size(); ++j) {
      const bool raw_less = spread.raw_advantages[i] < spread.raw_advantages[j];
      const bool norm_less = spread.advantages[i] < spread.advantages[j];
      CHECK(raw_less == norm_less);
    }
  }
}

TEST_CASE("train_iteration: zero learning rate leaves networks unchanged and halves beta") {
  Rng rng(41);
  Network actor = make_network({1, 8, 2}, rng, 0.01);
  Network critic = make_network({1, 8, 1}, rng, 1.0);
  const RolloutBuffer buf = make_bandit_buffer(actor, critic, 128, 5);
  const Network actor_before = actor;
  const Network critic_before = critic;

  PPOHyperparams hp = small_hp();
  AdamState aopt = AdamState::init(actor, 0.0);
  AdamState copt = AdamState::init(critic, 0.0);
  AdaptiveKLState kl;
  kl.beta = 1.0;

  const TrainingStats stats =
      train_iteration(buf, actor, critic, aopt, copt, hp, kl, 0, 99);
  CHECK(stats.mean_kl == 0.0);
  CHECK(kl.beta == 0.5);
  for (std::size_t l = 0; l < actor.layers.size(); ++l) {
    CHECK(actor.layers[l].weight.data == actor_before.layers[l].weight.data);
    CHECK(critic.layers[l].weight.data == critic_before.layers[l].weight.data);
  }
}

TEST_CASE("train_iteration: bandit probability of the rewarded action rises") {
  Rng rng(43);
  Network actor = make_network({1, 8, 2}, rng, 0.01);
  Network critic = make_network({1, 8, 1}, rng, 1.0);

  PPOHyperparams hp = small_hp();
  hp.policy_lr = 1e-2;
  hp.value_lr = 1e-2;
  AdamState aopt = AdamState::init(actor, hp.policy_lr);
  AdamState copt = AdamState::init(critic, hp.value_lr);
  AdaptiveKLState kl;

  const std::vector<double> input = {1.0};
  const std::vector<std::uint8_t> mask = {1, 1};
  const double p0_before = forward_policy(actor, input, mask)[0];
  double p0 = p0_before;
  for (int it = 0; it < 10; ++it) {
    const RolloutBuffer buf =
        make_bandit_buffer(actor, critic, 256, static_cast<std::uint64_t>(it) + 100);
    train_iteration(buf, actor, critic, aopt, copt, hp, kl, it, 999);
    const double next = forward_policy(actor, input, mask)[0];
    p0 = next;
  }
  CHECK(p0 > p0_before);
  CHECK(p0 > 0.7);
}

TEST_CASE("train_iteration: duplicated buffer produces the same full-batch update") {
  Rng rng(47);
  Network actor1 = make_network({1, 8, 2}, rng, 0.01);
  Network critic1 = make_network({1, 8, 1}, rng, 1.0);
  Network actor2 = actor1;
  Network critic2 = critic1;

  const RolloutBuffer base = make_bandit_buffer(actor1, critic1, 64, 5);
  RolloutBuffer doubled = base;
  for (const Transition& tr : base.transitions) doubled.transitions.push_back(tr);
  for (int i = 0; i < base.size(); ++i) {
    doubled.episode_ranges.emplace_back(base.size() + i, base.size() + i + 1);
    doubled.outcomes.push_back(base.outcomes[static_cast<std::size_t>(i)]);
  }

  PPOHyperparams hp = small_hp();
  hp.epochs = 3;
  AdamState a1 = AdamState::init(actor1, hp.policy_lr);
  AdamState c1 = AdamState::init(critic1, hp.value_lr);
  AdamState a2 = AdamState::init(actor2, hp.policy_lr);
  AdamState c2 = AdamState::init(critic2, hp.value_lr);
  AdaptiveKLState kl1, kl2;
  train_iteration(base, actor1, critic1, a1, c1, hp, kl1, 0, 7);
  train_iteration(doubled, actor2, critic2, a2, c2, hp, kl2, 0, 7);

  for (std::size_t l = 0; l < actor1.layers.size(); ++l) {
    for (std::size_t i = 0; i < actor1.layers[l].weight.data.size(); ++i) {
      CHECK(std::abs(actor1.layers[l].weight.data[i] - actor2.layers[l].weight.data[i]) <=
            1e-9);
    }
  }
}

TEST_CASE("train_iteration: empty buffer is a contract error") {
  Rng rng(53);
  Network actor = make_network({1, 4, 2}, rng, 0.01);
  Network critic = make_network({1, 4, 1}, rng, 1.0);
  RolloutBuffer empty;
  PPOHyperparams hp;
  AdamState aopt = AdamState::init(actor, 1e-3);
  AdamState copt = AdamState::init(critic, 1e-3);
  AdaptiveKLState kl;
  CHECK_THROWS_AS(train_iteration(empty, actor, critic, aopt, copt, hp, kl, 0, 1),
                  std::logic_error);
}
