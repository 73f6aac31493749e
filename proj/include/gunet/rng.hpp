#pragma once

#include <cmath>
#include <cstdint>

namespace gunet {

// Counter-based splittable random stream. A stream is a (key, counter) pair;
// each draw mixes key + counter, and child(i) derives an independent key
// without consuming draws from the parent. Different pipeline stages (weight
// init, patch sampling, augmentation) get their own child streams, so adding
// draws to one stage never perturbs another. The full state is two u64s,
// which keeps checkpointed RNG state trivial.
class RngStream {
 public:
  explicit RngStream(std::uint64_t key) : key_(key) {}

  static RngStream root(std::uint64_t seed) { return RngStream(mix(seed ^ kRootSalt)); }

  // Independent stream derived from this one. Does not advance the counter.
  RngStream child(std::uint64_t index) const {
    return RngStream(mix(key_ ^ mix(index + kChildSalt)));
  }

  std::uint64_t next_u64() { return mix(key_ + kGamma * ++counter_); }

  // Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n). Rejection sampling, so no modulo bias.
  std::uint64_t uniform_int(std::uint64_t n) {
    const std::uint64_t threshold = (0 - n) % n;
    for (;;) {
      const std::uint64_t r = next_u64();
      if (r >= threshold) return r % n;
    }
  }

  bool bernoulli(double p) { return uniform() < p; }

  // Standard normal via Box-Muller. No cached spare: every draw consumes
  // exactly two uniforms, so the stream state stays a plain counter.
  double normal() {
    double u1 = uniform();
    if (u1 <= 0.0) u1 = 0x1.0p-53;
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * kPi * u2);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  std::uint64_t key() const { return key_; }
  std::uint64_t counter() const { return counter_; }

 private:
  static constexpr std::uint64_t kGamma = 0x9E3779B97F4A7C15ull;
  static constexpr std::uint64_t kRootSalt = 0x5DEECE66Dull;
  static constexpr std::uint64_t kChildSalt = 0xD1B54A32D192ED03ull;
  static constexpr double kPi = 3.141592653589793238462643383279502884;

  // SplitMix64 finalizer.
  static std::uint64_t mix(std::uint64_t z) {
    z ^= z >> 30;
    z *= 0xBF58476D1CE4E5B9ull;
    z ^= z >> 27;
    z *= 0x94D049BB133111EBull;
    z ^= z >> 31;
    return z;
  }

  std::uint64_t key_;
  std::uint64_t counter_{0};
};

// Fixed stream ids for the training pipeline.
enum class Stream : std::uint64_t {
  kInit = 1,     // weight initialization
  kSampler = 2,  // patch positions and source image choice
  kAugment = 3,  // flips and gamma jitter
  kSynth = 4,    // synthetic scene generation
};

inline RngStream seed_stream(std::uint64_t seed, Stream s) {
  return RngStream::root(seed).child(static_cast<std::uint64_t>(s));
}

}  // namespace gunet
