#pragma once

#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace contactseg {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;

/// Base class for all recoverable errors raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Input that violates an operation's precondition.
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

/// Geometry too degenerate to define a frame or fit.
class DegenerateError : public Error {
 public:
  using Error::Error;
};

/// Seeded random source with platform-independent derived distributions.
///
/// std::uniform_int_distribution and std::normal_distribution are
/// implementation-defined, so anything feeding a snapshot or a scene goes
/// through these helpers instead.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Unbiased integer in [0, n). n must be > 0.
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
    double a = 0.0;
    double b = 0.0;
    double s = 0.0;
    do {
      a = 2.0 * uniform() - 1.0;
      b = 2.0 * uniform() - 1.0;
      s = a * a + b * b;
    } while (s >= 1.0 || s == 0.0);
    const double m = std::sqrt(-2.0 * std::log(s) / s);
    spare_ = b * m;
    has_spare_ = true;
    return a * m;
  }

 private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

/// Seed for trial `index` of a batch seeded with `base` (seed + trial index).
inline std::uint64_t trial_seed(std::uint64_t base, std::uint64_t index) {
  return base + index;
}

inline bool all_finite(const Vec3& p) {
  return std::isfinite(p.x()) && std::isfinite(p.y()) && std::isfinite(p.z());
}

}  // namespace contactseg
