#pragma once

#include <cmath>
#include <cstdint>

namespace mat {

// Counter-based uniform generator. The draw at (seed, counter) is a pure
// function of both, so sequences can be replayed, resumed mid-stream, or
// addressed out of order without keeping generator state around.
class RngStream {
 public:
  RngStream() = default;
  explicit RngStream(uint64_t seed, uint64_t counter = 0)
      : seed_(seed), counter_(counter) {}

  static uint64_t bits_at(uint64_t seed, uint64_t counter) {
    // SplitMix-style finalizer over a linear combination of seed and counter.
    uint64_t z = seed * 0xd1342543de82ef95ull + (counter + 1) * 0x9e3779b97f4a7c15ull;
    z ^= z >> 30;
    z *= 0xbf58476d1ce4e5b9ull;
    z ^= z >> 27;
    z *= 0x94d049bb133111ebull;
    z ^= z >> 31;
    return z;
  }

  // Uniform draw in [0, 1) with 53 bits of precision.
  static double uniform_at(uint64_t seed, uint64_t counter) {
    return static_cast<double>(bits_at(seed, counter) >> 11) * 0x1.0p-53;
  }

  uint64_t next_bits() { return bits_at(seed_, counter_++); }
  double next_uniform() { return uniform_at(seed_, counter_++); }

  // Uniform integer in [0, n). n must be positive.
  uint64_t next_below(uint64_t n) {
    return static_cast<uint64_t>(next_uniform() * static_cast<double>(n)) % n;
  }

  // Standard normal via Box-Muller; consumes two counters.
  double next_gaussian() {
    double u1 = 1.0 - next_uniform();  // (0, 1], keeps log finite
    double u2 = next_uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
  }

  uint64_t seed() const { return seed_; }
  uint64_t counter() const { return counter_; }

 private:
  uint64_t seed_ = 0;
  uint64_t counter_ = 0;
};

}  // namespace mat
