#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace rcnn {

/// SplitMix64 finalizer. Used to derive independent per-item seeds.
constexpr std::uint64_t mix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

/// Seed for one generated scene:
///   mix64(mix64(master ^ mix64(digit)) ^ combo)
constexpr std::uint64_t scene_seed(std::uint64_t master, std::uint64_t digit,
                                   std::uint64_t combo) {
  return mix64(mix64(master ^ mix64(digit)) ^ combo);
}

/// mt19937_64 with distribution code written out here rather than taken
/// from <random>, whose distributions are implementation-defined. Streams
/// are therefore identical on every platform.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }

  /// Uniform on [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n), unbiased.
  std::uint64_t below(std::uint64_t n) {
    const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
    std::uint64_t x = engine_();
    while (x >= limit) x = engine_();
    return x % n;
  }

  /// Standard normal via the Marsaglia polar method.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u = 0;
    double v = 0;
    double s = 0;
    do {
      u = 2.0 * uniform() - 1.0;
      v = 2.0 * uniform() - 1.0;
      s = u * u + v * v;
    } while (s >= 1.0 || s == 0.0);
    const double f = std::sqrt(-2.0 * std::log(s) / s);
    spare_ = v * f;
    has_spare_ = true;
    return u * f;
  }

  /// Normal(0, sigma) redrawn until it lies within +-cut*sigma.
  double truncated_normal(double sigma, double cut = 2.0) {
    for (;;) {
      const double z = normal();
      if (std::abs(z) <= cut) return z * sigma;
    }
  }

 private:
  std::mt19937_64 engine_;
  double spare_ = 0;
  bool has_spare_ = false;
};

}  // namespace rcnn
