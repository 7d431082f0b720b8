#include "marla/nn.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace marla {

namespace {

constexpr double kMaskLogit = -1e9;
constexpr double kKlFloor = 1e-12;

void matvec(const Matrix& w, const std::vector<double>& x, const std::vector<double>& b,
            std::vector<double>& out) {
  out.resize(static_cast<std::size_t>(w.rows));
  const double* wd = w.data.data();
  for (int r = 0; r < w.rows; ++r) {
    double acc = b[static_cast<std::size_t>(r)];
    const double* row = wd + static_cast<std::size_t>(r) * w.cols;
    for (int c = 0; c < w.cols; ++c) acc += row[c] * x[static_cast<std::size_t>(c)];
    out[static_cast<std::size_t>(r)] = acc;
  }
}

void apply_activation(Activation act, std::vector<double>& v) {
  if (act == Activation::Tanh) {
    for (double& x : v) x = std::tanh(x);
  }
}

// Modified Gram-Schmidt along the shorter dimension of a Gaussian matrix.
void orthogonalize(Matrix& w, Rng& rng, double gain) {
  for (double& x : w.data) x = rng.normal();
  const bool by_rows = w.rows <= w.cols;
  const int vectors = by_rows ? w.rows : w.cols;
  const int dim = by_rows ? w.cols : w.rows;
  auto get = [&](int v, int d) -> double& { return by_rows ? w.at(v, d) : w.at(d, v); };
  for (int v = 0; v < vectors; ++v) {
    for (int prev = 0; prev < v; ++prev) {
      double dot = 0.0;
      for (int d = 0; d < dim; ++d) dot += get(v, d) * get(prev, d);
      for (int d = 0; d < dim; ++d) get(v, d) -= dot * get(prev, d);
    }
    double norm = 0.0;
    for (int d = 0; d < dim; ++d) norm += get(v, d) * get(v, d);
    norm = std::sqrt(norm);
    if (norm < 1e-12) norm = 1.0;
    for (int d = 0; d < dim; ++d) get(v, d) = get(v, d) / norm * gain;
  }
}

}  // namespace

std::vector<int> Network::layer_sizes() const {
  std::vector<int> sizes;
  sizes.push_back(input_size());
  for (const Layer& l : layers) sizes.push_back(l.weight.rows);
  return sizes;
}

Network make_network(const std::vector<int>& sizes, Rng& rng, double output_gain) {
  if (sizes.size() < 2) throw std::invalid_argument("make_network: need input and output sizes");
  Network net;
  for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
    Layer layer;
    layer.weight = Matrix(sizes[l + 1], sizes[l]);
    layer.bias.assign(static_cast<std::size_t>(sizes[l + 1]), 0.0);
    const bool last = l + 2 == sizes.size();
    layer.activation = last ? Activation::Identity : Activation::Tanh;
    orthogonalize(layer.weight, rng, last ? output_gain : std::sqrt(2.0));
    net.layers.push_back(std::move(layer));
  }
  return net;
}

Gradients Gradients::zeros_like(const Network& net) {
  Gradients g;
  for (const Layer& l : net.layers) {
    g.weight.emplace_back(l.weight.rows, l.weight.cols);
    g.bias.emplace_back(l.bias.size(), 0.0);
  }
  return g;
}

void Gradients::zero() {
  for (Matrix& m : weight) std::fill(m.data.begin(), m.data.end(), 0.0);
  for (auto& b : bias) std::fill(b.begin(), b.end(), 0.0);
}

void Gradients::scale(double s) {
  for (Matrix& m : weight) {
    for (double& x : m.data) x *= s;
  }
  for (auto& b : bias) {
    for (double& x : b) x *= s;
  }
}

double Gradients::squared_norm() const {
  double acc = 0.0;
  for (const Matrix& m : weight) {
    for (double x : m.data) acc += x * x;
  }
  for (const auto& b : bias) {
    for (double x : b) acc += x * x;
  }
  return acc;
}

bool Gradients::finite() const {
  for (const Matrix& m : weight) {
    for (double x : m.data) {
      if (!std::isfinite(x)) return false;
    }
  }
  for (const auto& b : bias) {
    for (double x : b) {
      if (!std::isfinite(x)) return false;
    }
  }
  return true;
}

void forward(const Network& net, const std::vector<double>& input, std::vector<double>& out) {
  if (static_cast<int>(input.size()) != net.input_size()) {
    throw std::logic_error("forward: input width mismatch");
  }
  std::vector<double> cur = input;
  for (const Layer& l : net.layers) {
    matvec(l.weight, cur, l.bias, out);
    apply_activation(l.activation, out);
    cur = out;
  }
  out = std::move(cur);
}

std::vector<double> forward(const Network& net, const std::vector<double>& input) {
  std::vector<double> out;
  forward(net, input, out);
  return out;
}

std::vector<double> softmax(const std::vector<double>& logits) {
  double max_logit = logits[0];
  for (double z : logits) max_logit = std::max(max_logit, z);
  std::vector<double> probs(logits.size());
  double norm = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    probs[i] = std::exp(logits[i] - max_logit);
    norm += probs[i];
  }
  for (double& p : probs) p /= norm;
  return probs;
}

void add_mask(std::vector<double>& logits, const std::vector<std::uint8_t>& mask) {
  if (mask.size() != logits.size()) throw std::logic_error("add_mask: size mismatch");
  bool any = false;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (mask[i]) {
      any = true;
    } else {
      logits[i] += kMaskLogit;
    }
  }
  if (!any) throw std::logic_error("add_mask: mask admits no action");
}

std::vector<double> forward_policy(const Network& net, const std::vector<double>& input,
                                   const std::vector<std::uint8_t>& mask) {
  std::vector<double> logits = forward(net, input);
  for (double z : logits) {
    if (!std::isfinite(z)) {
      throw std::runtime_error("forward_policy: non-finite logits (parameter version " +
                               std::to_string(net.version) + ")");
    }
  }
  add_mask(logits, mask);
  return softmax(logits);
}

double forward_value(const Network& net, const std::vector<double>& input) {
  std::vector<double> out = forward(net, input);
  if (out.size() != 1) throw std::logic_error("forward_value: network output is not scalar");
  if (!std::isfinite(out[0])) {
    throw std::runtime_error("forward_value: non-finite value (parameter version " +
                             std::to_string(net.version) + ")");
  }
  return out[0];
}

void backward(const Network& net, const std::vector<double>& input,
              const std::vector<double>& upstream, Gradients& accum, Workspace& ws,
              double scale) {
  const std::size_t depth = net.layers.size();
  if (accum.weight.size() != depth) throw std::logic_error("backward: gradient shape mismatch");
  if (static_cast<int>(upstream.size()) != net.output_size()) {
    throw std::logic_error("backward: upstream width mismatch");
  }

  ws.activations.resize(depth + 1);
  ws.deltas.resize(depth);
  ws.activations[0] = input;
  for (std::size_t l = 0; l < depth; ++l) {
    matvec(net.layers[l].weight, ws.activations[l], net.layers[l].bias, ws.activations[l + 1]);
    apply_activation(net.layers[l].activation, ws.activations[l + 1]);
  }

  // Output layer is identity, so the first delta is the upstream itself.
  ws.deltas[depth - 1] = upstream;
  for (std::size_t l = depth; l-- > 0;) {
    const Layer& layer = net.layers[l];
    std::vector<double>& delta = ws.deltas[l];
    if (layer.activation == Activation::Tanh) {
      const std::vector<double>& a = ws.activations[l + 1];
      for (int r = 0; r < layer.weight.rows; ++r) {
        delta[static_cast<std::size_t>(r)] *= 1.0 - a[static_cast<std::size_t>(r)] * a[static_cast<std::size_t>(r)];
      }
    }
    const std::vector<double>& prev = ws.activations[l];
    Matrix& gw = accum.weight[l];
    std::vector<double>& gb = accum.bias[l];
    for (int r = 0; r < layer.weight.rows; ++r) {
      const double d = scale * delta[static_cast<std::size_t>(r)];
      gb[static_cast<std::size_t>(r)] += d;
      double* grow = gw.data.data() + static_cast<std::size_t>(r) * gw.cols;
      for (int c = 0; c < layer.weight.cols; ++c) grow[c] += d * prev[static_cast<std::size_t>(c)];
    }
    if (l > 0) {
      std::vector<double>& down = ws.deltas[l - 1];
      down.assign(prev.size(), 0.0);
      const double* wd = layer.weight.data.data();
      for (int r = 0; r < layer.weight.rows; ++r) {
        const double d = delta[static_cast<std::size_t>(r)];
        const double* row = wd + static_cast<std::size_t>(r) * layer.weight.cols;
        for (int c = 0; c < layer.weight.cols; ++c) down[static_cast<std::size_t>(c)] += d * row[c];
      }
    }
  }
}

Gradients backward(const Network& net, const std::vector<double>& input,
                   const std::vector<double>& upstream) {
  Gradients g = Gradients::zeros_like(net);
  Workspace ws;
  backward(net, input, upstream, g, ws, 1.0);
  return g;
}

double kl_categorical(const std::vector<double>& p, const std::vector<double>& q) {
  if (p.size() != q.size()) throw std::logic_error("kl_categorical: support mismatch");
  double kl = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] <= 0.0) continue;  // 0 ln 0 := 0
    kl += p[i] * std::log(p[i] / std::max(q[i], kKlFloor));
  }
  return std::max(kl, 0.0);
}

void kl_logit_grad(const std::vector<double>& p_old, const std::vector<double>& p_new,
                   std::vector<double>& out) {
  out.resize(p_new.size());
  for (std::size_t i = 0; i < p_new.size(); ++i) out[i] = p_new[i] - p_old[i];
}

void logprob_logit_grad(const std::vector<double>& probs, int action,
                        std::vector<double>& out) {
  out.assign(probs.size(), 0.0);
  for (std::size_t i = 0; i < probs.size(); ++i) out[i] = -probs[i];
  out[static_cast<std::size_t>(action)] += 1.0;
}

AdamState AdamState::init(const Network& net, double lr) {
  AdamState s;
  s.learning_rate = lr;
  s.first_moment = Gradients::zeros_like(net);
  s.second_moment = Gradients::zeros_like(net);
  return s;
}

void adam_step(Network& net, const Gradients& grads, AdamState& state) {
  if (grads.weight.size() != net.layers.size()) {
    throw std::logic_error("adam_step: gradient shape mismatch");
  }
  if (!grads.finite()) {
    ++state.skipped_steps;
    return;
  }
  ++state.step_count;
  const double t = static_cast<double>(state.step_count);
  const double corr1 = 1.0 - std::pow(state.beta1, t);
  const double corr2 = 1.0 - std::pow(state.beta2, t);

  auto update = [&](double& param, double g, double& m, double& v) {
    m = state.beta1 * m + (1.0 - state.beta1) * g;
    v = state.beta2 * v + (1.0 - state.beta2) * g * g;
    const double mhat = m / corr1;
    const double vhat = v / corr2;
    param -= state.learning_rate * mhat / (std::sqrt(vhat) + state.epsilon);
  };

  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    Layer& layer = net.layers[l];
    const Matrix& gw = grads.weight[l];
    Matrix& mw = state.first_moment.weight[l];
    Matrix& vw = state.second_moment.weight[l];
    for (std::size_t i = 0; i < layer.weight.data.size(); ++i) {
      update(layer.weight.data[i], gw.data[i], mw.data[i], vw.data[i]);
    }
    const std::vector<double>& gb = grads.bias[l];
    std::vector<double>& mb = state.first_moment.bias[l];
    std::vector<double>& vb = state.second_moment.bias[l];
    for (std::size_t i = 0; i < layer.bias.size(); ++i) {
      update(layer.bias[i], gb[i], mb[i], vb[i]);
    }
  }
  ++net.version;
}

// ---------------------------------------------------------------------------
// Checkpoint IO
// ---------------------------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'M', 'A', 'R', 'L', 'A', 'N', 'N', '1'};
constexpr std::uint32_t kFormatVersion = 1;

void put_u32(std::ostream& os, std::uint32_t v) {
  char buf[4];
  for (int i = 0; i < 4; ++i) buf[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  os.write(buf, 4);
}

void put_u64(std::ostream& os, std::uint64_t v) {
  char buf[8];
  for (int i = 0; i < 8; ++i) buf[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  os.write(buf, 8);
}

void put_f64(std::ostream& os, double d) {
  std::uint64_t bits;
  std::memcpy(&bits, &d, 8);
  put_u64(os, bits);
}

std::uint32_t get_u32(std::istream& is) {
  unsigned char buf[4];
  is.read(reinterpret_cast<char*>(buf), 4);
  if (!is) throw std::runtime_error("checkpoint: truncated file");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(buf[i]) << (8 * i);
  return v;
}

std::uint64_t get_u64(std::istream& is) {
  unsigned char buf[8];
  is.read(reinterpret_cast<char*>(buf), 8);
  if (!is) throw std::runtime_error("checkpoint: truncated file");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
  return v;
}

double get_f64(std::istream& is) {
  const std::uint64_t bits = get_u64(is);
  double d;
  std::memcpy(&d, &bits, 8);
  return d;
}

void put_tag(std::ostream& os, const char tag[4]) { os.write(tag, 4); }

std::string get_tag(std::istream& is) {
  char buf[4];
  is.read(buf, 4);
  if (!is) throw std::runtime_error("checkpoint: truncated file");
  return std::string(buf, 4);
}

void write_params(std::ostream& os, const Gradients& g) {
  for (const Matrix& m : g.weight) {
    for (double x : m.data) put_f64(os, x);
  }
  for (const auto& b : g.bias) {
    for (double x : b) put_f64(os, x);
  }
}

void read_params(std::istream& is, Gradients& g) {
  for (Matrix& m : g.weight) {
    for (double& x : m.data) x = get_f64(is);
  }
  for (auto& b : g.bias) {
    for (double& x : b) x = get_f64(is);
  }
}

void write_network(std::ostream& os, const Network& net) {
  put_tag(os, "NET0");
  const std::vector<int> sizes = net.layer_sizes();
  put_u32(os, static_cast<std::uint32_t>(sizes.size()));
  for (int s : sizes) put_u32(os, static_cast<std::uint32_t>(s));
  put_u64(os, net.version);
  for (const Layer& l : net.layers) {
    for (double x : l.weight.data) put_f64(os, x);
    for (double x : l.bias) put_f64(os, x);
  }
}

Network read_network(std::istream& is) {
  const std::uint32_t n = get_u32(is);
  if (n < 2 || n > 64) throw std::runtime_error("checkpoint: bad architecture descriptor");
  std::vector<int> sizes(n);
  for (std::uint32_t i = 0; i < n; ++i) sizes[i] = static_cast<int>(get_u32(is));
  Network net;
  for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
    Layer layer;
    layer.weight = Matrix(sizes[l + 1], sizes[l]);
    layer.bias.assign(static_cast<std::size_t>(sizes[l + 1]), 0.0);
    layer.activation = l + 2 == sizes.size() ? Activation::Identity : Activation::Tanh;
    net.layers.push_back(std::move(layer));
  }
  net.version = get_u64(is);
  for (Layer& l : net.layers) {
    for (double& x : l.weight.data) x = get_f64(is);
    for (double& x : l.bias) x = get_f64(is);
  }
  return net;
}

void write_opt(std::ostream& os, const AdamState& s) {
  put_tag(os, "OPT0");
  put_f64(os, s.learning_rate);
  put_f64(os, s.beta1);
  put_f64(os, s.beta2);
  put_f64(os, s.epsilon);
  put_u64(os, static_cast<std::uint64_t>(s.step_count));
  put_u64(os, static_cast<std::uint64_t>(s.skipped_steps));
  write_params(os, s.first_moment);
  write_params(os, s.second_moment);
}

AdamState read_opt(std::istream& is, const Network& net) {
  AdamState s = AdamState::init(net, 0.0);
  s.learning_rate = get_f64(is);
  s.beta1 = get_f64(is);
  s.beta2 = get_f64(is);
  s.epsilon = get_f64(is);
  s.step_count = static_cast<std::int64_t>(get_u64(is));
  s.skipped_steps = static_cast<std::int64_t>(get_u64(is));
  read_params(is, s.first_moment);
  read_params(is, s.second_moment);
  return s;
}

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("checkpoint: cannot open " + tmp + " for writing");
    os.write(kMagic, 8);
    put_u32(os, kFormatVersion);
    write_network(os, ckpt.actor);
    write_network(os, ckpt.critic);
    if (ckpt.actor_opt) write_opt(os, *ckpt.actor_opt);
    if (ckpt.critic_opt) write_opt(os, *ckpt.critic_opt);
    put_tag(os, "BETA");
    put_f64(os, ckpt.kl_beta);
    put_tag(os, "END0");
    if (!os) throw std::runtime_error("checkpoint: write failed for " + tmp);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) {
    throw std::runtime_error("checkpoint: rename to " + path + " failed");
  }
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("checkpoint: cannot open " + path);
  char magic[8];
  is.read(magic, 8);
  if (!is || std::memcmp(magic, kMagic, 8) != 0) {
    throw std::runtime_error("checkpoint: bad magic in " + path);
  }
  const std::uint32_t version = get_u32(is);
  if (version != kFormatVersion) {
    throw std::runtime_error("checkpoint: unsupported format version");
  }

  Checkpoint ckpt;
  int nets_read = 0;
  int opts_read = 0;
  for (;;) {
    const std::string tag = get_tag(is);
    if (tag == "END0") break;
    if (tag == "NET0") {
      Network net = read_network(is);
      if (nets_read == 0) {
        ckpt.actor = std::move(net);
      } else if (nets_read == 1) {
        ckpt.critic = std::move(net);
      } else {
        throw std::runtime_error("checkpoint: too many network sections");
      }
      ++nets_read;
    } else if (tag == "OPT0") {
      if (nets_read < 2) throw std::runtime_error("checkpoint: optimizer before networks");
      AdamState s = read_opt(is, opts_read == 0 ? ckpt.actor : ckpt.critic);
      if (opts_read == 0) {
        ckpt.actor_opt = std::move(s);
      } else {
        ckpt.critic_opt = std::move(s);
      }
      ++opts_read;
    } else if (tag == "BETA") {
      ckpt.kl_beta = get_f64(is);
    } else {
      throw std::runtime_error("checkpoint: unknown section tag '" + tag + "'");
    }
  }
  if (nets_read != 2) throw std::runtime_error("checkpoint: expected actor and critic sections");
  return ckpt;
}

}  // namespace marla
