#pragma once

#include <cmath>
#include <cstdint>

#include "kdl/common.hpp"

namespace kdl {

// Counter-based generator: every draw is a pure function of
// (seed, stream, counter), so parallel trials keyed by (seed, trial index)
// are order-independent and reruns are bit-reproducible.
struct Rng {
  std::uint64_t seed = 0;
  std::uint64_t stream = 0;
  std::uint64_t counter = 0;

  Rng() = default;
  Rng(std::uint64_t seed_, std::uint64_t stream_) : seed(seed_), stream(stream_) {}

  static std::uint64_t mix(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  std::uint64_t next_u64() {
    const std::uint64_t c = counter++;
    return mix(seed ^ mix(stream ^ mix(c)));
  }

  /// uniform in [0,1)
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double a, double b) { return a + (b - a) * uniform(); }

  int uniform_int(int lo, int hi) {  // inclusive bounds
    return lo + static_cast<int>(next_u64() % static_cast<std::uint64_t>(hi - lo + 1));
  }

  /// standard normal (Box-Muller, always consumes two draws)
  double normal() {
    const double u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1 + 1e-300));
    return r * std::cos(2.0 * pi * u2);
  }
};

}  // namespace kdl
