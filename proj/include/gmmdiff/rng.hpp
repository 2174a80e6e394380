#pragma once

// Seeded random streams.
//
// Every stream is a std::mt19937_64 whose seed is derived with SplitMix64
// from (base_seed, stream index). Child streams for parallel tasks are
// obtained with Rng::child(base_seed, index), so results never depend on
// which worker ran which task. No ambient entropy source is ever used.
//
// Normal draws use std::normal_distribution; uniform draws use
// std::uniform_real_distribution. Both are deterministic for a fixed
// standard library, which is what the byte-identical CSV guarantee is
// stated against.

#include <cstdint>
#include <random>

namespace gmmdiff {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(splitmix64(seed)) {}

  /// Independent stream for task `index` under `base_seed`.
  static Rng child(std::uint64_t base_seed, std::uint64_t index) {
    return Rng(splitmix64(base_seed) ^ splitmix64(index ^ 0xD1B54A32D192ED03ULL));
  }

  /// Stream derived from this one's next output; advances this stream.
  Rng split() { return Rng(engine_()); }

  double normal() { return normal_(engine_); }
  double uniform() { return uniform_(engine_); }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform_(engine_); }

  std::uint64_t below(std::uint64_t n) {
    return std::uniform_int_distribution<std::uint64_t>(0, n - 1)(engine_);
  }

  std::mt19937_64& engine() noexcept { return engine_; }

 private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
  std::uniform_real_distribution<double> uniform_{0.0, 1.0};
};

}  // namespace gmmdiff
