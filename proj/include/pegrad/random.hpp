#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace pegrad {

// Seeded random source for parameter/input initialization and DP noise.
//
// Gaussian draws use the Box-Muller transform over two fresh uniforms, so the
// stream depends only on the seed and the number of calls. No spare value is
// cached.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  // Uniform in (0, 1]. The +1 keeps log() in gaussian() away from zero.
  double uniform01() {
    return static_cast<double>((engine_() >> 11) + 1) * 0x1.0p-53;
  }

  // Standard normal N(0, 1).
  double gaussian() {
    const double u1 = uniform01();
    const double u2 = uniform01();
    constexpr double two_pi = 6.283185307179586476925286766559;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(two_pi * u2);
  }

 private:
  std::mt19937_64 engine_;
};

}  // namespace pegrad
