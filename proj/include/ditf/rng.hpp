#pragma once

#include <cstdint>
#include <random>

namespace ditf {

// Fixture generator used everywhere a seed appears.
//
// state_0 = splitmix64(seed); state_{n+1} = 6364136223846793005 * state_n +
// 1442695040888963407 (mod 2^64). A draw takes the top 24 bits of the new
// state, k, and returns 2 * k / 2^24 - 1, which is exact in binary32 and lies
// in [-1, 1).
class FixtureRng {
 public:
  explicit FixtureRng(std::uint64_t seed) : engine_(splitmix64(seed)) {}

  float uniform_pm1() {
    const std::uint64_t bits = engine_() >> 40;
    return static_cast<float>(static_cast<double>(bits) * (2.0 / 16777216.0) - 1.0);
  }

  // Uniform in [0, bound) by rejection on the raw 64-bit stream.
  std::uint64_t below(std::uint64_t bound) {
    const std::uint64_t limit = bound == 0 ? 0 : UINT64_MAX - UINT64_MAX % bound;
    for (;;) {
      const std::uint64_t v = engine_();
      if (v < limit) return v % bound;
    }
  }

  static std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
  }

 private:
  std::linear_congruential_engine<std::uint64_t, 6364136223846793005ULL, 1442695040888963407ULL, 0> engine_;
};

}  // namespace ditf
