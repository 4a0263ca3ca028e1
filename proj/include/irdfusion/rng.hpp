#pragma once

#include <cstddef>
#include <cstdint>
#include <random>

namespace irdfusion {

/// Seedable generator with a fixed, platform-independent output sequence.
///
/// The engine is std::mt19937_64, whose output is pinned by the standard.
/// Distributions are computed here rather than through <random> adaptors,
/// whose algorithms vary between standard libraries:
///   uniform()  = top 53 bits of one engine draw, scaled to [0, 1)
///   normal()   = Box-Muller on two uniform() draws, cosine branch only
///
/// Independent streams come from stream(seed, a, b): the three words are
/// folded through SplitMix64 and the result seeds a fresh engine.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  static Rng stream(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0);

  std::uint64_t next_u64() { return engine_(); }
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Integer in [0, n).
  std::size_t uniform_index(std::size_t n);
  /// Integer in [lo, hi], inclusive.
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi);
  double normal();
  double normal(double mean, double stddev) { return mean + stddev * normal(); }

 private:
  std::mt19937_64 engine_;
};

std::uint64_t splitmix64(std::uint64_t x);

}  // namespace irdfusion
