#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

#include "osclab/matrix.hpp"

namespace osclab {

/// Deterministic 64-bit generator (splitmix64). Integer output is
/// platform-independent bit for bit; substreams are derived by hashing the
/// root seed with a stream tag, so (seed, layer) pairs get independent
/// streams without coordination.
class Rng {
 public:
  static constexpr const char* kAlgorithm = "splitmix64";

  explicit Rng(std::uint64_t seed) : seed_(seed), state_(seed) {}

  std::uint64_t next_u64() {
    state_ += 0x9E3779B97F4A7C15ULL;
    return mix(state_);
  }

  /// Uniform in [0, 1), 53 random bits.
  double next_double() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  /// Box-Muller normal draw; the paired value is cached for the next call.
  double next_normal(double mean = 0.0, double stddev = 1.0) {
    if (has_spare_) {
      has_spare_ = false;
      return mean + stddev * spare_;
    }
    // u1 in (0, 1] so the log is finite.
    const double u1 = static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;
    const double u2 = next_double();
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * std::numbers::pi * u2;
    spare_ = radius * std::sin(angle);
    has_spare_ = true;
    return mean + stddev * (radius * std::cos(angle));
  }

  /// Independent substream keyed by (root seed, stream tag).
  Rng split(std::uint64_t stream) const {
    return Rng(mix(seed_ ^ mix(stream + 0x6A09E667F3BCC909ULL)));
  }

  std::uint64_t seed() const { return seed_; }

 private:
  static std::uint64_t mix(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  std::uint64_t seed_;
  std::uint64_t state_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

inline Matrix rand_normal(Rng& rng, std::size_t rows, std::size_t cols,
                          double mean, double stddev) {
  Matrix m(rows, cols);
  for (double& v : m.values()) v = rng.next_normal(mean, stddev);
  return m;
}

}  // namespace osclab
