#pragma once

#include <cmath>
#include <cstdint>

namespace cshap {

// Counter-based pseudo-random generator (SplitMix64 stream). The i-th output
// of a stream is a pure function of (seed, stream, i), so sequences are
// reproducible across runs and platforms. Every stochastic operation in the
// library draws from an explicitly seeded Rng; nothing touches global state.
class Rng {
 public:
  explicit Rng(std::uint64_t seed, std::uint64_t stream = 0)
      : key_(mix(seed + 0x9E3779B97F4A7C15ull * (mix(stream) | 1ull))) {}

  static std::uint64_t mix(std::uint64_t z) {
    z += 0x9E3779B97F4A7C15ull;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }

  std::uint64_t next_u64() { return mix(key_ + counter_++ * 0x9E3779B97F4A7C15ull); }

  // Independent sub-stream; advancing the child never affects the parent.
  Rng fork(std::uint64_t stream) const {
    return Rng(mix(key_ ^ 0xA0761D6478BD642Full), stream + 1);
  }

  // Uniform on [0, 1), 53-bit resolution.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Uniform on [-1, 1].
  double uniform_sym() { return 2.0 * uniform() - 1.0; }

  // Standard normal via Box-Muller; consumes two outputs per draw.
  double normal() {
    double u1 = static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;  // (0, 1]
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
  }

  // Unbiased integer on [0, n) via rejection.
  std::uint64_t below(std::uint64_t n) {
    if (n <= 1) return 0;
    const std::uint64_t bound = n * ((~std::uint64_t{0}) / n);
    std::uint64_t x = next_u64();
    while (x >= bound) x = next_u64();
    return x % n;
  }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

}  // namespace cshap
