#include "marla/config.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "marla/csv.hpp"

namespace marla {

namespace {

[[noreturn]] void key_error(const std::string& key, const std::string& what) {
  throw std::invalid_argument("config key '" + key + "': " + what);
}

std::string trim(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  std::size_t e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

// Flat key/value store with consumption tracking so unknown keys are caught.
class KeyStore {
 public:
  void put(const std::string& key, const std::string& value) { values_[key] = value; }

  bool has(const std::string& key) const { return values_.count(key) > 0; }

  std::string raw(const std::string& key) {
    consumed_.insert({key, true});
    return values_.at(key);
  }

  std::string get_string(const std::string& key, const std::string& fallback) {
    if (!has(key)) return fallback;
    return raw(key);
  }

  double get_double(const std::string& key, double fallback) {
    if (!has(key)) return fallback;
    const std::string v = raw(key);
    try {
      std::size_t pos = 0;
      const double d = std::stod(v, &pos);
      if (pos != v.size()) throw std::invalid_argument(v);
      return d;
    } catch (const std::exception&) {
      key_error(key, "expected a number, got '" + v + "'");
    }
  }

  long get_int(const std::string& key, long fallback) {
    if (!has(key)) return fallback;
    const std::string v = raw(key);
    try {
      std::size_t pos = 0;
      const long n = std::stol(v, &pos);
      if (pos != v.size()) throw std::invalid_argument(v);
      return n;
    } catch (const std::exception&) {
      key_error(key, "expected an integer, got '" + v + "'");
    }
  }

  bool get_bool(const std::string& key, bool fallback) {
    if (!has(key)) return fallback;
    const std::string v = raw(key);
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    key_error(key, "expected true/false, got '" + v + "'");
  }

  std::vector<double> get_doubles(const std::string& key) {
    const std::string v = raw(key);
    std::vector<double> out;
    for (const std::string& part : split_csv_line(v)) {
      const std::string p = trim(part);
      if (p.empty()) key_error(key, "empty list entry");
      try {
        std::size_t pos = 0;
        out.push_back(std::stod(p, &pos));
        if (pos != p.size()) throw std::invalid_argument(p);
      } catch (const std::exception&) {
        key_error(key, "expected a number list, got '" + v + "'");
      }
    }
    return out;
  }

  std::vector<int> get_ints(const std::string& key) {
    std::vector<int> out;
    for (double d : get_doubles(key)) {
      const int i = static_cast<int>(d);
      if (static_cast<double>(i) != d) key_error(key, "expected integers");
      out.push_back(i);
    }
    return out;
  }

  void fail_on_unconsumed(const std::string& source) const {
    for (const auto& [key, value] : values_) {
      if (!consumed_.count(key)) {
        throw std::invalid_argument(source + ": unknown config key '" + key + "'");
      }
    }
  }

 private:
  std::map<std::string, std::string> values_;
  std::map<std::string, bool> consumed_;
};

KeyStore parse_key_values(const std::string& text, const std::string& source,
                          const std::vector<std::string>& overrides) {
  KeyStore store;
  std::istringstream in(text);
  std::string line;
  int line_number = 0;
  while (std::getline(in, line)) {
    ++line_number;
    const std::size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos) {
      throw std::invalid_argument(source + " line " + std::to_string(line_number) +
                                  ": expected 'key = value'");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) {
      throw std::invalid_argument(source + " line " + std::to_string(line_number) +
                                  ": empty key");
    }
    store.put(key, value);
  }
  for (const std::string& ov : overrides) {
    const std::size_t eq = ov.find('=');
    if (eq == std::string::npos) {
      throw std::invalid_argument("override '" + ov + "': expected key=value");
    }
    store.put(trim(ov.substr(0, eq)), trim(ov.substr(eq + 1)));
  }
  return store;
}

// "all", "a-b", or a comma list of indices.
std::vector<int> parse_process_set(KeyStore& store, const std::string& key,
                                   int num_processes) {
  if (!store.has(key)) {
    std::vector<int> all(static_cast<std::size_t>(num_processes));
    for (int g = 0; g < num_processes; ++g) all[static_cast<std::size_t>(g)] = g;
    return all;
  }
  const std::string v = store.raw(key);
  if (v == "all") {
    std::vector<int> all(static_cast<std::size_t>(num_processes));
    for (int g = 0; g < num_processes; ++g) all[static_cast<std::size_t>(g)] = g;
    return all;
  }
  const std::size_t dash = v.find('-');
  if (dash != std::string::npos && v.find(',') == std::string::npos) {
    try {
      const int lo = std::stoi(v.substr(0, dash));
      const int hi = std::stoi(v.substr(dash + 1));
      if (lo > hi) key_error(key, "range start exceeds range end");
      std::vector<int> out;
      for (int g = lo; g <= hi; ++g) out.push_back(g);
      return out;
    } catch (const std::invalid_argument&) {
      key_error(key, "expected 'all', 'lo-hi', or a comma list");
    }
  }
  std::vector<int> out;
  for (const std::string& part : split_csv_line(v)) {
    try {
      out.push_back(std::stoi(trim(part)));
    } catch (const std::exception&) {
      key_error(key, "expected 'all', 'lo-hi', or a comma list");
    }
  }
  return out;
}

}  // namespace

std::string run_mode_name(RunMode mode) {
  switch (mode) {
    case RunMode::Marla: return "marla";
    case RunMode::SingleAgent: return "single_agent";
    case RunMode::NoComm: return "no_comm";
    case RunMode::Heuristic: return "heuristic";
  }
  return "marla";
}

RunMode run_mode_from(const std::string& name) {
  if (name == "marla") return RunMode::Marla;
  if (name == "single_agent") return RunMode::SingleAgent;
  if (name == "no_comm") return RunMode::NoComm;
  if (name == "heuristic") return RunMode::Heuristic;
  throw std::invalid_argument("config key 'run.mode': unknown mode '" + name +
                              "' (marla|single_agent|no_comm|heuristic)");
}

void RunConfig::validate() const {
  env.validate();
  ppo.validate();
  if (network.hidden.empty()) {
    throw std::invalid_argument("config key 'network.hidden': need at least one hidden layer");
  }
  for (int h : network.hidden) {
    if (h < 1) throw std::invalid_argument("config key 'network.hidden': widths must be positive");
  }
  if (run.iterations < 0) {
    throw std::invalid_argument("config key 'run.iterations': must be non-negative");
  }
  if (run.workers < 1) {
    throw std::invalid_argument("config key 'run.workers': must be positive");
  }
  if (run.checkpoint_every < 1) {
    throw std::invalid_argument("config key 'run.checkpoint_every': must be positive");
  }
  if (eval.episodes < 1) {
    throw std::invalid_argument("config key 'eval.episodes': must be positive");
  }
  if (run.mode == RunMode::SingleAgent && env.num_agents() != 1) {
    throw std::invalid_argument(
        "config key 'run.mode': single_agent requires env.num_agents = 1");
  }
  if (run.mode == RunMode::NoComm && env.communication_enabled) {
    throw std::invalid_argument(
        "config key 'run.mode': no_comm requires env.communication_enabled = false");
  }
  if (run.mode == RunMode::Heuristic) {
    const double thr = heuristic.threshold;
    const double floor = 1.0 / env.num_processes();
    if (!(thr > floor && thr < 1.0)) {
      throw std::invalid_argument(
          "config key 'heuristic.threshold': must lie in (1/num_processes, 1)");
    }
  }
}

RunConfig parse_run_config(const std::string& text, const std::vector<std::string>& overrides,
                           const std::string& source) {
  KeyStore store = parse_key_values(text, source, overrides);
  RunConfig cfg;

  const int m = static_cast<int>(store.get_int("env.num_processes", 0));
  if (m < 1) key_error("env.num_processes", "required, must be positive");
  const int k = static_cast<int>(store.get_int("env.num_agents", 0));
  if (k < 1) key_error("env.num_agents", "required, must be positive");

  cfg.env.hypothesis_space.num_hypotheses = m;
  if (store.has("env.prior")) {
    cfg.env.hypothesis_space.prior = store.get_doubles("env.prior");
  } else {
    cfg.env.hypothesis_space = HypothesisSpace::uniform(m);
  }
  cfg.env.observation_model.normal_mean = store.get_double("env.normal_mean", 0.0);
  cfg.env.observation_model.anomalous_mean = store.get_double("env.anomalous_mean", 1.0);
  cfg.env.observation_model.std_dev = store.get_double("env.std_dev", 1.0);

  cfg.env.agents.resize(static_cast<std::size_t>(k));
  for (int i = 0; i < k; ++i) {
    AgentSpec& spec = cfg.env.agents[static_cast<std::size_t>(i)];
    spec.agent_id = i;
    spec.sampleable_processes =
        parse_process_set(store, "env.agent." + std::to_string(i) + ".processes", m);
  }

  cfg.env.sampling_cost = store.get_double("env.sampling_cost", 0.05);
  if (store.has("env.terminal_cost_table")) {
    cfg.env.terminal_cost_table = store.get_doubles("env.terminal_cost_table");
  } else {
    cfg.env.terminal_cost_table = EnvConfig::default_terminal_table(k);
  }
  cfg.env.max_horizon = static_cast<int>(store.get_int("env.max_horizon", 200));
  const std::string repeat = store.get_string("env.message_repeat", "episode_end");
  if (repeat == "episode_end") {
    cfg.env.message_repeat = kRepeatUntilEpisodeEnd;
  } else {
    try {
      cfg.env.message_repeat = std::stoi(repeat);
    } catch (const std::exception&) {
      key_error("env.message_repeat", "expected a positive integer or 'episode_end'");
    }
  }
  cfg.env.communication_enabled = store.get_bool("env.communication_enabled", true);

  cfg.ppo.gamma = store.get_double("ppo.gamma", cfg.ppo.gamma);
  cfg.ppo.gae_lambda = store.get_double("ppo.gae_lambda", cfg.ppo.gae_lambda);
  cfg.ppo.clip_epsilon = store.get_double("ppo.clip_epsilon", cfg.ppo.clip_epsilon);
  cfg.ppo.kl_target = store.get_double("ppo.kl_target", cfg.ppo.kl_target);
  cfg.ppo.kl_band = store.get_double("ppo.kl_band", cfg.ppo.kl_band);
  cfg.ppo.beta_factor = store.get_double("ppo.beta_factor", cfg.ppo.beta_factor);
  cfg.ppo.beta_init = store.get_double("ppo.beta_init", cfg.ppo.beta_init);
  cfg.ppo.epochs = static_cast<int>(store.get_int("ppo.epochs", cfg.ppo.epochs));
  cfg.ppo.minibatch_size =
      static_cast<int>(store.get_int("ppo.minibatch_size", cfg.ppo.minibatch_size));
  cfg.ppo.rollout_timesteps =
      static_cast<int>(store.get_int("ppo.rollout_timesteps", cfg.ppo.rollout_timesteps));
  cfg.ppo.policy_lr = store.get_double("ppo.policy_lr", cfg.ppo.policy_lr);
  cfg.ppo.value_lr = store.get_double("ppo.value_lr", cfg.ppo.value_lr);
  cfg.ppo.grad_clip = store.get_double("ppo.grad_clip", cfg.ppo.grad_clip);
  cfg.ppo.cost_warmup_iterations = static_cast<int>(
      store.get_int("ppo.cost_warmup_iterations", cfg.ppo.cost_warmup_iterations));

  if (store.has("network.hidden")) cfg.network.hidden = store.get_ints("network.hidden");
  cfg.network.stop_bias = store.get_double("network.stop_bias", cfg.network.stop_bias);

  cfg.run.seed = static_cast<std::uint64_t>(store.get_int("run.seed", 42));
  cfg.run.iterations = static_cast<int>(store.get_int("run.iterations", cfg.run.iterations));
  cfg.run.workers = static_cast<int>(store.get_int("run.workers", cfg.run.workers));
  cfg.run.checkpoint_every =
      static_cast<int>(store.get_int("run.checkpoint_every", cfg.run.checkpoint_every));
  cfg.run.out_dir = store.get_string("run.out_dir", cfg.run.out_dir);
  cfg.run.mode = run_mode_from(store.get_string("run.mode", "marla"));

  cfg.eval.episodes = static_cast<int>(store.get_int("eval.episodes", cfg.eval.episodes));
  cfg.heuristic.threshold =
      store.get_double("heuristic.threshold", cfg.heuristic.threshold);

  store.fail_on_unconsumed(source);
  cfg.validate();
  return cfg;
}

RunConfig load_run_config(const std::string& path, const std::vector<std::string>& overrides) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("config file '" + path + "': cannot open");
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_run_config(buf.str(), overrides, path);
}

std::string RunConfig::snapshot() const {
  std::ostringstream out;
  out << "env.num_processes = " << env.num_processes() << "\n";
  out << "env.prior = ";
  for (std::size_t i = 0; i < env.hypothesis_space.prior.size(); ++i) {
    if (i) out << ",";
    out << format_double(env.hypothesis_space.prior[i]);
  }
  out << "\n";
  out << "env.normal_mean = " << format_double(env.observation_model.normal_mean) << "\n";
  out << "env.anomalous_mean = " << format_double(env.observation_model.anomalous_mean) << "\n";
  out << "env.std_dev = " << format_double(env.observation_model.std_dev) << "\n";
  out << "env.num_agents = " << env.num_agents() << "\n";
  for (const AgentSpec& spec : env.agents) {
    out << "env.agent." << spec.agent_id << ".processes = ";
    for (std::size_t i = 0; i < spec.sampleable_processes.size(); ++i) {
      if (i) out << ",";
      out << spec.sampleable_processes[i];
    }
    out << "\n";
  }
  out << "env.sampling_cost = " << format_double(env.sampling_cost) << "\n";
  out << "env.terminal_cost_table = ";
  for (std::size_t i = 0; i < env.terminal_cost_table.size(); ++i) {
    if (i) out << ",";
    out << format_double(env.terminal_cost_table[i]);
  }
  out << "\n";
  out << "env.max_horizon = " << env.max_horizon << "\n";
  out << "env.message_repeat = "
      << (env.message_repeat == kRepeatUntilEpisodeEnd ? std::string("episode_end")
                                                       : std::to_string(env.message_repeat))
      << "\n";
  out << "env.communication_enabled = " << (env.communication_enabled ? "true" : "false")
      << "\n";
  out << "ppo.gamma = " << format_double(ppo.gamma) << "\n";
  out << "ppo.gae_lambda = " << format_double(ppo.gae_lambda) << "\n";
  out << "ppo.clip_epsilon = " << format_double(ppo.clip_epsilon) << "\n";
  out << "ppo.kl_target = " << format_double(ppo.kl_target) << "\n";
  out << "ppo.kl_band = " << format_double(ppo.kl_band) << "\n";
  out << "ppo.beta_factor = " << format_double(ppo.beta_factor) << "\n";
  out << "ppo.beta_init = " << format_double(ppo.beta_init) << "\n";
  out << "ppo.epochs = " << ppo.epochs << "\n";
  out << "ppo.minibatch_size = " << ppo.minibatch_size << "\n";
  out << "ppo.rollout_timesteps = " << ppo.rollout_timesteps << "\n";
  out << "ppo.policy_lr = " << format_double(ppo.policy_lr) << "\n";
  out << "ppo.value_lr = " << format_double(ppo.value_lr) << "\n";
  out << "ppo.grad_clip = " << format_double(ppo.grad_clip) << "\n";
  out << "ppo.cost_warmup_iterations = " << ppo.cost_warmup_iterations << "\n";
  out << "network.hidden = ";
  for (std::size_t i = 0; i < network.hidden.size(); ++i) {
    if (i) out << ",";
    out << network.hidden[i];
  }
  out << "\n";
  out << "network.stop_bias = " << format_double(network.stop_bias) << "\n";
  out << "run.seed = " << run.seed << "\n";
  out << "run.iterations = " << run.iterations << "\n";
  out << "run.workers = " << run.workers << "\n";
  out << "run.checkpoint_every = " << run.checkpoint_every << "\n";
  out << "run.out_dir = " << run.out_dir << "\n";
  out << "run.mode = " << run_mode_name(run.mode) << "\n";
  out << "eval.episodes = " << eval.episodes << "\n";
  out << "heuristic.threshold = " << format_double(heuristic.threshold) << "\n";
  return out.str();
}

void SweepSpec::validate() const {
  if (x_kind != "sampling_cost" && x_kind != "threshold") {
    throw std::invalid_argument(
        "config key 'sweep.x_kind': must be sampling_cost or threshold");
  }
  if (values.empty()) {
    throw std::invalid_argument("config key 'sweep.values': must be non-empty");
  }
  if (episodes_per_point < 1) {
    throw std::invalid_argument("config key 'sweep.episodes_per_point': must be positive");
  }
  if (iterations_per_point < 0) {
    throw std::invalid_argument("config key 'sweep.iterations_per_point': must be non-negative");
  }
}

SweepSpec parse_sweep_spec(const std::string& text, const std::string& source) {
  KeyStore store = parse_key_values(text, source, {});
  SweepSpec spec;
  spec.x_kind = store.get_string("sweep.x_kind", "");
  if (store.has("sweep.values")) spec.values = store.get_doubles("sweep.values");
  spec.episodes_per_point =
      static_cast<int>(store.get_int("sweep.episodes_per_point", spec.episodes_per_point));
  spec.iterations_per_point = static_cast<int>(
      store.get_int("sweep.iterations_per_point", spec.iterations_per_point));
  spec.seed = static_cast<std::uint64_t>(store.get_int("sweep.seed", 7));
  store.fail_on_unconsumed(source);
  spec.validate();
  return spec;
}

SweepSpec load_sweep_spec(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("sweep file '" + path + "': cannot open");
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_sweep_spec(buf.str(), path);
}

}  // namespace marla
