#ifndef MARLA_RNG_HPP
#define MARLA_RNG_HPP

#include <cmath>
#include <cstdint>
#include <string_view>
#include <vector>

namespace marla {

// Deterministic RNG used everywhere in place of <random> distributions,
// whose output is implementation-defined. Byte-identical runs across
// platforms require that every draw comes through this class.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) { state_ = seed ? seed : 0x9e3779b97f4a7c15ULL; }

  std::uint64_t next_u64() {
    // xorshift64* — small, fast, passes the statistical tests we care about.
    std::uint64_t x = state_;
    x ^= x >> 12;
    x ^= x << 25;
    x ^= x >> 27;
    state_ = x;
    return x * 0x2545F4914F6CDD1DULL;
  }

  // Uniform in [0, 1).
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  // Uniform integer in [0, n).
  std::uint64_t uniform_int(std::uint64_t n) {
    // Modulo bias is negligible for n << 2^64 but reject anyway.
    const std::uint64_t limit = ~0ULL - ~0ULL % n;
    std::uint64_t v = next_u64();
    while (v >= limit) v = next_u64();
    return v % n;
  }

  // Standard normal via Marsaglia polar method (second value discarded so
  // the stream has no hidden cache state).
  double normal() {
    for (;;) {
      const double u = 2.0 * uniform() - 1.0;
      const double v = 2.0 * uniform() - 1.0;
      const double s = u * u + v * v;
      if (s > 0.0 && s < 1.0) {
        return u * std::sqrt(-2.0 * std::log(s) / s);
      }
    }
  }

  double normal(double mean, double std_dev) { return mean + std_dev * normal(); }

  // Index sampled from an unnormalized weight vector by CDF walk.
  int categorical(const std::vector<double>& weights) {
    double total = 0.0;
    for (double w : weights) total += w;
    double r = uniform() * total;
    for (std::size_t i = 0; i + 1 < weights.size(); ++i) {
      r -= weights[i];
      if (r < 0.0) return static_cast<int>(i);
    }
    return static_cast<int>(weights.size()) - 1;
  }

  // In-place Fisher-Yates (std::shuffle has unspecified draw order).
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(uniform_int(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::uint64_t state_;
};

// Named sub-stream derivation: all randomness in a run flows from one seed
// through (name, index) labels, e.g. derive_seed(seed, "env", episode).
inline std::uint64_t derive_seed(std::uint64_t base, std::string_view name,
                                 std::uint64_t index = 0) {
  // FNV-1a over the label, then splitmix finalization with the index.
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : name) {
    h ^= static_cast<std::uint8_t>(c);
    h *= 0x100000001b3ULL;
  }
  std::uint64_t z = base + 0x9e3779b97f4a7c15ULL * (h ^ (index + 1));
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace marla

#endif  // MARLA_RNG_HPP
