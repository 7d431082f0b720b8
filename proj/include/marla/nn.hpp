#ifndef MARLA_NN_HPP
#define MARLA_NN_HPP

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "marla/rng.hpp"

namespace marla {

struct Matrix {
  int rows = 0;
  int cols = 0;
  std::vector<double> data;  // row-major

  Matrix() = default;
  Matrix(int r, int c) : rows(r), cols(c), data(static_cast<std::size_t>(r) * c, 0.0) {}

  double& at(int r, int c) { return data[static_cast<std::size_t>(r) * cols + c]; }
  double at(int r, int c) const { return data[static_cast<std::size_t>(r) * cols + c]; }
};

enum class Activation { Tanh, Identity };

struct Layer {
  Matrix weight;  // out x in
  std::vector<double> bias;
  Activation activation = Activation::Identity;
};

// Dense feed-forward network: tanh hidden layers, identity output. The raw
// output doubles as policy logits or the scalar value depending on use.
struct Network {
  std::vector<Layer> layers;
  std::uint64_t version = 0;  // incremented on every optimizer step

  int input_size() const { return layers.front().weight.cols; }
  int output_size() const { return layers.back().weight.rows; }
  std::vector<int> layer_sizes() const;
};

// Orthogonal-style initialization (Gram-Schmidt on Gaussian draws, gain
// sqrt(2) on hidden layers), zero biases, output layer scaled by output_gain.
Network make_network(const std::vector<int>& sizes, Rng& rng, double output_gain = 1.0);

struct Gradients {
  std::vector<Matrix> weight;
  std::vector<std::vector<double>> bias;

  static Gradients zeros_like(const Network& net);
  void zero();
  void scale(double s);
  double squared_norm() const;
  bool finite() const;
};

// Scratch buffers so the hot training loop never allocates.
struct Workspace {
  std::vector<std::vector<double>> activations;  // [0] = input, then per layer
  std::vector<std::vector<double>> deltas;
};

void forward(const Network& net, const std::vector<double>& input, std::vector<double>& out);
std::vector<double> forward(const Network& net, const std::vector<double>& input);

// Masked categorical head: softmax over logits with -1e9 added to masked-out
// entries (their probability underflows to exactly 0, gradients stay defined).
std::vector<double> forward_policy(const Network& net, const std::vector<double>& input,
                                   const std::vector<std::uint8_t>& mask);
double forward_value(const Network& net, const std::vector<double>& input);

// Reverse-mode gradients of a scalar loss whose derivative with respect to
// the raw network output is `upstream`. Recomputes activations internally;
// accumulates scale * grad into `accum`.
void backward(const Network& net, const std::vector<double>& input,
              const std::vector<double>& upstream, Gradients& accum, Workspace& ws,
              double scale = 1.0);
Gradients backward(const Network& net, const std::vector<double>& input,
                   const std::vector<double>& upstream);

// Softmax with max subtraction; probabilities are shift-invariant in the logits.
std::vector<double> softmax(const std::vector<double>& logits);
void add_mask(std::vector<double>& logits, const std::vector<std::uint8_t>& mask);

// KL(p || q) = sum p_i ln(p_i / q_i), q floored at 1e-12, 0 ln 0 := 0.
double kl_categorical(const std::vector<double>& p, const std::vector<double>& q);

// d KL(p_old || softmax(z)) / dz  =  softmax(z) - p_old.
void kl_logit_grad(const std::vector<double>& p_old, const std::vector<double>& p_new,
                   std::vector<double>& out);
// d log softmax(z)[action] / dz  =  e_action - softmax(z).
void logprob_logit_grad(const std::vector<double>& probs, int action,
                        std::vector<double>& out);

struct AdamState {
  double learning_rate = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::int64_t step_count = 0;
  std::int64_t skipped_steps = 0;  // non-finite gradient events
  Gradients first_moment;
  Gradients second_moment;

  static AdamState init(const Network& net, double lr);
};

// Bias-corrected Adam. A non-finite gradient skips the step entirely and
// bumps skipped_steps; parameters and moments are left untouched.
void adam_step(Network& net, const Gradients& grads, AdamState& state);

// Checkpoint file: "MARLANN1" magic, format version, then tagged sections
// (NET0 per network with architecture descriptor + little-endian f64 params,
// OPT0 per optimizer state, END0). Written atomically via temp + rename.
struct Checkpoint {
  Network actor;
  Network critic;
  std::optional<AdamState> actor_opt;
  std::optional<AdamState> critic_opt;
  double kl_beta = 1.0;
};

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace marla

#endif  // MARLA_NN_HPP
