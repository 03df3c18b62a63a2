// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <random>

#include <Eigen/Core>

namespace unipr {

// splitmix64; used to derive independent sub-seeds from (master, index) pairs.
inline uint64_t hash_seed(uint64_t a, uint64_t b) {
  uint64_t x = a * 0x9e3779b97f4a7c15ULL + b + 0xd1b54a32d192ed03ULL;
  x ^= x >> 30;
  x *= 0xbf58476d1ce4e5b9ULL;
  x ^= x >> 27;
  x *= 0x94d049bb133111ebULL;
  x ^= x >> 31;
  return x;
}

// Deterministic RNG. mt19937_64 output is fully specified by the standard;
// the std distributions are not, so the mappings below are implemented here.
class Rng {
 public:
  explicit Rng(uint64_t seed) : gen_(seed) {}

  // uniform in [0, 1)
  double uniform() {
    return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // uniform integer in [0, n)
  uint64_t uniform_int(uint64_t n) {
    // rejection-free modulo bias is negligible for desk-scale n; keep exact anyway
    uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    uint64_t x;
    do {
      x = gen_();
    } while (x >= limit);
    return x % n;
  }

  // Box-Muller; consumes two uniforms per pair, caches the second draw
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    double u2 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 2.0 * M_PI * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
  }

  Eigen::Vector3d normal3() {
    return {normal(), normal(), normal()};
  }

  // uniform in the closed unit ball via direction * cbrt(u)
  Eigen::Vector3d ball_point() {
    Eigen::Vector3d dir = normal3();
    double n = dir.norm();
    while (n < 1e-12) {
      dir = normal3();
      n = dir.norm();
    }
    return dir / n * std::cbrt(uniform());
  }

  // Shoemake's method, returned scalar-first (w, x, y, z)
  Eigen::Vector4d unit_quaternion() {
    double u1 = uniform(), u2 = uniform(), u3 = uniform();
    double a = std::sqrt(1.0 - u1), b = std::sqrt(u1);
    double x = a * std::sin(2.0 * M_PI * u2);
    double y = a * std::cos(2.0 * M_PI * u2);
    double z = b * std::sin(2.0 * M_PI * u3);
    double w = b * std::cos(2.0 * M_PI * u3);
    return {w, x, y, z};
  }

 private:
  std::mt19937_64 gen_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace unipr
