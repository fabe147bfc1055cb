#pragma once

#include <cstdint>
#include <random>

namespace panomaly {

/// SplitMix64 step; also used as the seed-mixing function.
inline std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

/// Derives an independent stream seed for a (parent, index) pair, so work
/// split across threads stays reproducible regardless of scheduling.
inline std::uint64_t split_seed(std::uint64_t seed, std::uint64_t index) {
  return mix64(seed ^ mix64(index + 0x6a09e667f3bcc909ull));
}

/// Tiny counter-free generator for hot loops (index sampling in subset
/// draws). One word of state; construction is free, unlike mt19937_64.
class SplitMix64 {
 public:
  explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next() {
    state_ += 0x9e3779b97f4a7c15ull;
    std::uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  /// Uniform integer in [0, bound). bound must be > 0.
  std::uint64_t below(std::uint64_t bound) {
    // Lemire's multiply-shift with rejection of the biased zone.
    std::uint64_t x = next();
    __uint128_t m = static_cast<__uint128_t>(x) * bound;
    std::uint64_t lo = static_cast<std::uint64_t>(m);
    if (lo < bound) {
      const std::uint64_t threshold = -bound % bound;
      while (lo < threshold) {
        x = next();
        m = static_cast<__uint128_t>(x) * bound;
        lo = static_cast<std::uint64_t>(m);
      }
    }
    return static_cast<std::uint64_t>(m >> 64);
  }

  double uniform01() { return (next() >> 11) * 0x1.0p-53; }

 private:
  std::uint64_t state_;
};

/// Full-featured generator for simulation code paths.
using StdRng = std::mt19937_64;

inline StdRng make_rng(std::uint64_t seed, std::uint64_t stream) {
  return StdRng(split_seed(seed, stream));
}

}  // namespace panomaly
