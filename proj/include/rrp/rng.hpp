#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

namespace rrp {

// Counter-based 64-bit generator. A stream is fully determined by its key,
// so independent consumers (scene i, epoch e) never share sequence state.
class SplitMix64 {
 public:
  explicit SplitMix64(std::uint64_t key) : state_(key) {}

  std::uint64_t next() {
    std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
    return mix(z);
  }

  // Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [lo, hi] (inclusive). Rejection keeps it unbiased.
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
    const std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
    if (span == 0) return static_cast<std::int64_t>(next());
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % span;
    std::uint64_t v;
    do {
      v = next();
    } while (v >= limit);
    return lo + static_cast<std::int64_t>(v % span);
  }

  // Standard normal via Box-Muller; the second variate is discarded so every
  // draw consumes exactly two words.
  double normal() {
    double u1 = uniform();
    const double u2 = uniform();
    if (u1 <= 0.0) u1 = 0x1.0p-53;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  static constexpr std::uint64_t mix(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

 private:
  std::uint64_t state_;
};

// Derives a stream key from a base seed and a tag. Used where plain XOR of
// small counters would collide (epoch 1 / image 2 vs epoch 2 / image 1).
constexpr std::uint64_t derive_key(std::uint64_t seed, std::uint64_t tag) {
  return seed ^ SplitMix64::mix(tag + 0x632BE59BD9B4E019ULL);
}

}  // namespace rrp
