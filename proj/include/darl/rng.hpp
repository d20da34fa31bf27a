#pragma once

#include <cmath>
#include <cstdint>
#include <istream>
#include <numbers>
#include <ostream>
#include <random>

namespace darl {

// All randomness in a run flows through one master seed, split into named
// streams so that changes in one subsystem do not perturb the draws of
// another. Draw helpers are stateless (no cached spare normal etc.) so an
// engine's state alone fully determines the remaining sequence; this is what
// makes checkpoint/resume bit-exact.

inline std::uint64_t split_seed(std::uint64_t seed, std::uint64_t stream) {
  // splitmix64 over (seed ^ stream-tag)
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

struct RngStreams {
  std::mt19937_64 data;
  std::mt19937_64 agent;
  std::mt19937_64 adversarial;
  std::mt19937_64 replay;

  explicit RngStreams(std::uint64_t seed = 0)
      : data(split_seed(seed, 0)),
        agent(split_seed(seed, 1)),
        adversarial(split_seed(seed, 2)),
        replay(split_seed(seed, 3)) {}

  friend std::ostream& operator<<(std::ostream& os, const RngStreams& r) {
    return os << r.data << '\n' << r.agent << '\n' << r.adversarial << '\n'
              << r.replay << '\n';
  }
  friend std::istream& operator>>(std::istream& is, RngStreams& r) {
    return is >> r.data >> r.agent >> r.adversarial >> r.replay;
  }
};

inline double uniform_real(std::mt19937_64& rng, double lo = 0.0,
                           double hi = 1.0) {
  // 53-bit mantissa draw in [0,1)
  const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
  return lo + (hi - lo) * u;
}

inline std::uint64_t uniform_index(std::mt19937_64& rng, std::uint64_t n) {
  // Lemire-style rejection to avoid modulo bias
  std::uint64_t x = rng();
  __uint128_t m = static_cast<__uint128_t>(x) * n;
  auto lo = static_cast<std::uint64_t>(m);
  if (lo < n) {
    const std::uint64_t threshold = -n % n;
    while (lo < threshold) {
      x = rng();
      m = static_cast<__uint128_t>(x) * n;
      lo = static_cast<std::uint64_t>(m);
    }
  }
  return static_cast<std::uint64_t>(m >> 64);
}

inline double normal(std::mt19937_64& rng, double mean = 0.0,
                     double stddev = 1.0) {
  // Box-Muller, fresh pair per call, second value discarded
  double u1 = uniform_real(rng);
  while (u1 <= 0.0) u1 = uniform_real(rng);
  const double u2 = uniform_real(rng);
  const double r = std::sqrt(-2.0 * std::log(u1));
  return mean + stddev * r * std::cos(2.0 * std::numbers::pi * u2);
}

}  // namespace darl
