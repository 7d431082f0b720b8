#include "marla/eval.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <thread>

#include "marla/csv.hpp"
#include "marla/rollout.hpp"
#include "marla/training.hpp"

namespace marla {

namespace {

double sample_se(const std::vector<double>& xs, double mean) {
  const std::size_t n = xs.size();
  if (n < 2) return 0.0;
  double acc = 0.0;
  for (double x : xs) acc += (x - mean) * (x - mean);
  return std::sqrt(acc / static_cast<double>(n - 1) / static_cast<double>(n));
}

struct EpisodeStatsSink {
  std::vector<double> error;      // per-episode fraction of wrong agents
  std::vector<double> mean_tau;   // per-episode mean stopping time
  std::vector<double> risk;       // per-episode c * sum(tau) + J
  std::vector<double> terminal;   // per-episode J
  std::vector<std::vector<int>> agent_wrong;  // [agent][episode]
};

void run_eval_episode(int episode_index, const PolicyFn& policy, const EnvConfig& config,
                      std::uint64_t seed, ActionMode mode,
                      const std::vector<std::vector<std::uint8_t>>& masks,
                      EpisodeStatsSink& sink, TraceWriter* trace) {
  const int k = config.num_agents();
  EpisodeState state =
      new_episode(config, derive_seed(seed, "eval-env", static_cast<std::uint64_t>(episode_index)));
  Rng action_rng(derive_seed(seed, "eval-policy", static_cast<std::uint64_t>(episode_index)));

  double terminal_cost_value = 0.0;
  while (!state.terminal()) {
    std::vector<std::optional<AgentAction>> actions(static_cast<std::size_t>(k));
    for (int i = 0; i < k; ++i) {
      if (!state.active[static_cast<std::size_t>(i)]) continue;
      const std::vector<double> input = build_policy_input(i, state, config);
      const PolicyContext ctx{i,     state,      config, input,
                              masks[static_cast<std::size_t>(i)], action_rng, mode};
      actions[static_cast<std::size_t>(i)] = policy(ctx);
    }
    const StepOutcome out = step(state, actions, config);
    if (trace != nullptr) {
      for (const AgentStepResult& r : out.results) {
        TraceRow row;
        row.episode = episode_index;
        row.step = state.time;
        row.agent = r.agent_id;
        row.sampled = r.sampled;
        row.global_process = r.global_process;
        row.observation = r.observation;
        row.reward = r.reward;
        row.belief = state.beliefs[static_cast<std::size_t>(r.agent_id)].probs;
        row.message = state.messages[static_cast<std::size_t>(r.agent_id)];
        trace->write(row);
      }
    }
    if (out.terminal) terminal_cost_value = out.terminal_cost;
  }

  int wrong = 0;
  long tau_sum = 0;
  for (int i = 0; i < k; ++i) {
    const bool agent_wrong =
        state.declaration[static_cast<std::size_t>(i)] != state.true_hypothesis;
    wrong += agent_wrong ? 1 : 0;
    tau_sum += state.stop_time[static_cast<std::size_t>(i)];
    sink.agent_wrong[static_cast<std::size_t>(i)][static_cast<std::size_t>(episode_index)] =
        agent_wrong ? 1 : 0;
  }
  const std::size_t e = static_cast<std::size_t>(episode_index);
  sink.error[e] = static_cast<double>(wrong) / k;
  sink.mean_tau[e] = static_cast<double>(tau_sum) / k;
  sink.risk[e] =
      config.sampling_cost * static_cast<double>(tau_sum) + terminal_cost_value;
  sink.terminal[e] = terminal_cost_value;
}

}  // namespace

std::string metrics_csv_header() {
  return "config_id,episodes,error_rate,error_se,avg_sample_size,sample_se,bayes_risk,"
         "risk_se,mean_terminal_cost";
}

std::string metrics_csv_row(const MetricsRecord& r) {
  return join_csv({r.config_id, std::to_string(r.num_episodes), format_double(r.error_rate),
                   format_double(r.error_se), format_double(r.avg_sample_size),
                   format_double(r.sample_se), format_double(r.bayes_risk),
                   format_double(r.risk_se), format_double(r.mean_terminal_cost)});
}

PolicyFn make_network_policy(const Network& actor) {
  return [&actor](const PolicyContext& ctx) {
    const std::vector<double> probs = forward_policy(actor, ctx.policy_input, ctx.mask);
    int index;
    if (ctx.mode == ActionMode::Greedy) {
      index = 0;
      for (std::size_t i = 1; i < probs.size(); ++i) {
        if (probs[i] > probs[static_cast<std::size_t>(index)]) index = static_cast<int>(i);
      }
    } else {
      index = ctx.rng.categorical(probs);
    }
    const AgentSpec& spec = ctx.config.agents[static_cast<std::size_t>(ctx.agent_id)];
    return action_from_policy_index(spec, index, ctx.config.num_processes());
  };
}

AgentAction heuristic_policy(const Belief& belief, double threshold, const AgentSpec& spec) {
  if (belief.max() >= threshold) return AgentAction::stop();
  int best_local = 0;
  double best = -1.0;
  for (std::size_t local = 0; local < spec.sampleable_processes.size(); ++local) {
    const double p = belief.probs[static_cast<std::size_t>(spec.sampleable_processes[local])];
    if (p > best) {
      best = p;
      best_local = static_cast<int>(local);
    }
  }
  return AgentAction::sample(best_local);
}

PolicyFn make_heuristic_policy(double threshold) {
  return [threshold](const PolicyContext& ctx) {
    const AgentSpec& spec = ctx.config.agents[static_cast<std::size_t>(ctx.agent_id)];
    return heuristic_policy(ctx.state.beliefs[static_cast<std::size_t>(ctx.agent_id)],
                            threshold, spec);
  };
}

PolicyFn make_immediate_stop_policy() {
  return [](const PolicyContext&) { return AgentAction::stop(); };
}

PolicyFn make_uniform_random_policy() {
  return [](const PolicyContext& ctx) {
    int legal = 0;
    for (std::uint8_t m : ctx.mask) legal += m ? 1 : 0;
    int pick = static_cast<int>(ctx.rng.uniform_int(static_cast<std::uint64_t>(legal)));
    for (std::size_t i = 0; i < ctx.mask.size(); ++i) {
      if (!ctx.mask[i]) continue;
      if (pick == 0) {
        const AgentSpec& spec = ctx.config.agents[static_cast<std::size_t>(ctx.agent_id)];
        return action_from_policy_index(spec, static_cast<int>(i), ctx.config.num_processes());
      }
      --pick;
    }
    return AgentAction::stop();
  };
}

MetricsRecord evaluate(const PolicyFn& policy, const EnvConfig& config, int num_episodes,
                       std::uint64_t seed, ActionMode mode, int workers, TraceWriter* trace) {
  config.validate();
  if (num_episodes < 1) throw std::invalid_argument("evaluate: num_episodes must be positive");
  const int k = config.num_agents();

  std::vector<std::vector<std::uint8_t>> masks;
  for (const AgentSpec& spec : config.agents) {
    masks.push_back(action_mask(spec, config.num_processes()));
  }

  EpisodeStatsSink sink;
  sink.error.assign(static_cast<std::size_t>(num_episodes), 0.0);
  sink.mean_tau.assign(static_cast<std::size_t>(num_episodes), 0.0);
  sink.risk.assign(static_cast<std::size_t>(num_episodes), 0.0);
  sink.terminal.assign(static_cast<std::size_t>(num_episodes), 0.0);
  sink.agent_wrong.assign(static_cast<std::size_t>(k),
                          std::vector<int>(static_cast<std::size_t>(num_episodes), 0));

  if (trace != nullptr) workers = 1;  // trace rows must stay in episode order
  if (workers <= 1) {
    for (int ep = 0; ep < num_episodes; ++ep) {
      run_eval_episode(ep, policy, config, seed, mode, masks, sink, trace);
    }
  } else {
    std::vector<std::thread> threads;
    const int chunk = (num_episodes + workers - 1) / workers;
    for (int w = 0; w < workers; ++w) {
      const int begin = w * chunk;
      const int end = std::min(num_episodes, begin + chunk);
      if (begin >= end) break;
      threads.emplace_back([&, begin, end] {
        for (int ep = begin; ep < end; ++ep) {
          run_eval_episode(ep, policy, config, seed, mode, masks, sink, nullptr);
        }
      });
    }
    for (std::thread& t : threads) t.join();
  }

  MetricsRecord record;
  record.num_episodes = num_episodes;
  double err_mean = 0.0;
  double tau_mean = 0.0;
  double risk_mean = 0.0;
  double terminal_mean = 0.0;
  for (int ep = 0; ep < num_episodes; ++ep) {
    const std::size_t e = static_cast<std::size_t>(ep);
    err_mean += sink.error[e];
    tau_mean += sink.mean_tau[e];
    risk_mean += sink.risk[e];
    terminal_mean += sink.terminal[e];
  }
  const double n = static_cast<double>(num_episodes);
  err_mean /= n;
  tau_mean /= n;
  risk_mean /= n;
  terminal_mean /= n;

  record.error_rate = err_mean;
  record.error_se = sample_se(sink.error, err_mean);
  record.avg_sample_size = tau_mean;
  record.sample_se = sample_se(sink.mean_tau, tau_mean);
  record.bayes_risk = risk_mean;
  record.risk_se = sample_se(sink.risk, risk_mean);
  record.mean_terminal_cost = terminal_mean;
  record.per_agent_error.resize(static_cast<std::size_t>(k), 0.0);
  for (int i = 0; i < k; ++i) {
    long wrong = 0;
    for (int v : sink.agent_wrong[static_cast<std::size_t>(i)]) wrong += v;
    record.per_agent_error[static_cast<std::size_t>(i)] = static_cast<double>(wrong) / n;
  }
  return record;
}

ComparisonReport compare(const MetricsRecord& multi_agent, const MetricsRecord& single_agent) {
  ComparisonReport report;
  report.error_gap = multi_agent.error_rate - single_agent.error_rate;
  report.comparable = std::abs(report.error_gap) <= 0.01;
  if (!report.comparable) return report;
  if (single_agent.avg_sample_size > 0.0) {
    report.sample_reduction =
        (single_agent.avg_sample_size - multi_agent.avg_sample_size) /
        single_agent.avg_sample_size;
    report.sample_reduction_se =
        std::sqrt(multi_agent.sample_se * multi_agent.sample_se +
                  single_agent.sample_se * single_agent.sample_se) /
        single_agent.avg_sample_size;
  }
  if (single_agent.bayes_risk > 0.0) {
    report.risk_reduction =
        (single_agent.bayes_risk - multi_agent.bayes_risk) / single_agent.bayes_risk;
    report.risk_reduction_se = std::sqrt(multi_agent.risk_se * multi_agent.risk_se +
                                         single_agent.risk_se * single_agent.risk_se) /
                               single_agent.bayes_risk;
  }
  return report;
}

std::vector<SweepPointResult> sweep(const SweepSpec& spec, const RunConfig& base,
                                    const std::string& checkpoint_dir) {
  spec.validate();
  if (spec.x_kind == "threshold" && base.run.mode != RunMode::Heuristic) {
    throw std::invalid_argument("sweep: threshold sweeps require run.mode = heuristic");
  }

  std::vector<SweepPointResult> results;
  for (std::size_t i = 0; i < spec.values.size(); ++i) {
    SweepPointResult point;
    point.x_value = spec.values[i];
    try {
      RunConfig cfg = base;
      if (spec.x_kind == "sampling_cost") {
        cfg.env.sampling_cost = point.x_value;
      } else {
        cfg.heuristic.threshold = point.x_value;
      }
      cfg.validate();
      const std::uint64_t eval_seed = derive_seed(spec.seed, "sweep-eval", i);

      if (base.run.mode == RunMode::Heuristic) {
        point.metrics = evaluate(make_heuristic_policy(cfg.heuristic.threshold), cfg.env,
                                 spec.episodes_per_point, eval_seed, ActionMode::Stochastic,
                                 cfg.run.workers);
      } else {
        cfg.run.seed = derive_seed(spec.seed, "sweep-train", i);
        TrainingRun run = initialize_training(cfg);
        run_training(run, cfg, spec.iterations_per_point);
        point.metrics = evaluate(make_network_policy(run.actor), cfg.env,
                                 spec.episodes_per_point, eval_seed, ActionMode::Stochastic,
                                 cfg.run.workers);
        if (!checkpoint_dir.empty()) {
          point.checkpoint_path =
              checkpoint_dir + "/sweep_point_" + std::to_string(i) + ".bin";
          Checkpoint ckpt;
          ckpt.actor = run.actor;
          ckpt.critic = run.critic;
          ckpt.kl_beta = run.kl_state.beta;
          save_checkpoint(point.checkpoint_path, ckpt);
        }
      }
      point.metrics.config_id = run_mode_name(base.run.mode) + "_m" +
                                std::to_string(base.env.num_processes()) + "_k" +
                                std::to_string(base.env.num_agents());
      point.ok = true;
    } catch (const std::exception& e) {
      point.ok = false;
      point.error = e.what();
    }
    results.push_back(std::move(point));
  }
  return results;
}

std::string curve_csv_header() {
  return "config_id,x_kind,x_value,error_rate,error_se,avg_sample_size,sample_se,"
         "bayes_risk,risk_se,episodes,seed,checkpoint_path";
}

std::string curve_csv_row(const std::string& config_id, const std::string& x_kind,
                          std::uint64_t seed, const SweepPointResult& point) {
  const MetricsRecord& m = point.metrics;
  return join_csv({config_id, x_kind, format_double(point.x_value),
                   format_double(m.error_rate), format_double(m.error_se),
                   format_double(m.avg_sample_size), format_double(m.sample_se),
                   format_double(m.bayes_risk), format_double(m.risk_se),
                   std::to_string(m.num_episodes), std::to_string(seed),
                   point.checkpoint_path});
}

}  // namespace marla
