#pragma once

// Deterministic hashing and random streams. Every run must be reproducible
// bit-for-bit from a single seed, so nothing here touches std::random
// distributions (their output is implementation-defined). Streams for
// unrelated purposes are split from the base seed with derive_seed and a
// stream tag, which keeps draw sequences independent of each other.

#include <cmath>
#include <cstdint>

namespace matt {

inline constexpr std::uint64_t kGoldenGamma = 0x9E3779B97F4A7C15ull;

// splitmix64 finalizer; full-avalanche mix of a 64-bit word.
constexpr std::uint64_t mix64(std::uint64_t z) {
  z ^= z >> 30;
  z *= 0xBF58476D1CE4E5B9ull;
  z ^= z >> 27;
  z *= 0x94D049BB133111EBull;
  z ^= z >> 31;
  return z;
}

constexpr std::uint64_t hash_combine(std::uint64_t h, std::uint64_t v) {
  return mix64(h ^ (v + kGoldenGamma));
}

// Stream tags. New uses get a new tag; reusing one silently correlates
// streams that are supposed to be independent.
enum StreamTag : std::uint64_t {
  kStreamSketchTable = 1,
  kStreamPath = 2,
  kStreamShuffle = 3,
  kStreamInit = 4,
  kStreamSynthValues = 5,
  kStreamSynthWeights = 6,
  kStreamSynthLabels = 7,
  kStreamSynthFlips = 8,
};

constexpr std::uint64_t derive_seed(std::uint64_t base, std::uint64_t tag,
                                    std::uint64_t a = 0, std::uint64_t b = 0) {
  std::uint64_t h = hash_combine(base, tag);
  h = hash_combine(h, a);
  h = hash_combine(h, b);
  return h;
}

// splitmix64 generator. Small state, no warm-up needed, and distinct seeds
// give distinct streams, which is all the sketch and sampler require.
class Rng {
 public:
  explicit constexpr Rng(std::uint64_t seed) : state_(seed) {}

  constexpr std::uint64_t next_u64() {
    state_ += kGoldenGamma;
    return mix64(state_);
  }

  // Uniform in [0, 1) with 53 random bits.
  double next_double() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  bool bernoulli(double p) { return next_double() < p; }

  double uniform(double lo, double hi) {
    return lo + (hi - lo) * next_double();
  }

  // Bounded draw via Lemire multiply-shift; bias is below n / 2^64.
  std::uint64_t below(std::uint64_t n) {
    return static_cast<std::uint64_t>(
        (static_cast<unsigned __int128>(next_u64()) * n) >> 64);
  }

  // Standard normal via Box-Muller; the paired draw is cached so the
  // sequence stays deterministic.
  double gaussian() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    // u1 in (0, 1] so the log is finite.
    double u1 = static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;
    double u2 = next_double();
    double r = std::sqrt(-2.0 * std::log(u1));
    double theta = 2.0 * 3.141592653589793238462643383279502884 * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

 private:
  std::uint64_t state_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace matt
