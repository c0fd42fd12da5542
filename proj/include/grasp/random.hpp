#pragma once

// Portable seeded generator. The state is seeded with splitmix64 and advanced
// with Marsaglia's xorshift64 (shifts 13, 7, 17). Uniform doubles take the
// top 53 bits. Every constant is fixed here so golden values are reproducible
// on any platform.

#include <cstdint>

namespace grasp {

inline std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9E3779B97F4A7C15ull);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

class Rng {
 public:
  explicit Rng(std::uint64_t seed) {
    std::uint64_t sm = seed;
    state_ = splitmix64(sm);
    if (state_ == 0) state_ = 0x2545F4914F6CDD1Dull;
  }

  std::uint64_t next() {
    std::uint64_t x = state_;
    x ^= x << 13;
    x ^= x >> 7;
    x ^= x << 17;
    state_ = x;
    return x;
  }

  // [0, 1)
  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

 private:
  std::uint64_t state_;
};

}  // namespace grasp
