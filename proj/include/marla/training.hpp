#ifndef MARLA_TRAINING_HPP
#define MARLA_TRAINING_HPP

#include <functional>
#include <vector>

#include "marla/config.hpp"
#include "marla/nn.hpp"
#include "marla/ppo.hpp"

namespace marla {

struct TrainingRun {
  Network actor;
  Network critic;
  AdamState actor_opt;
  AdamState critic_opt;
  AdaptiveKLState kl_state;
  std::vector<TrainingStats> history;
};

// Fresh networks sized from the config, seeded from run.seed.
TrainingRun initialize_training(const RunConfig& cfg);

// collect -> train_iteration loop. The callback fires after every iteration;
// returning true stops early. Deterministic given (config, seed, workers).
void run_training(TrainingRun& run, const RunConfig& cfg, int iterations,
                  const std::function<bool(const TrainingStats&)>& on_iteration = {});

}  // namespace marla

#endif  // MARLA_TRAINING_HPP
