#pragma once

#include <cstdint>
#include <random>

namespace rceed {

// Seeded pseudo-random stream. Uniform and normal draws are derived from
// the raw 64-bit engine output directly so sequences do not depend on the
// standard library's distribution implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }
  // Uniform in [0, 1).
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  // Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) { return n ? next() % n : 0; }
  double normal();
  bool bernoulli(double p) { return uniform() < p; }

  // Independent stream keyed by (seed, index); used to shard work.
  static Rng derive(std::uint64_t seed, std::uint64_t index);

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace rceed
