// SPDX-License-Identifier: Apache-2.0
// Copyright (c) 2026 The mdsurvey Authors

#pragma once

#include <cstdint>
#include <numbers>
#include <random>
#include <string_view>

#include <Eigen/Core>

namespace mdsurvey {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;

inline constexpr double kPi = std::numbers::pi;

constexpr double deg2rad(double deg) { return deg * kPi / 180.0; }
constexpr double rad2deg(double rad) { return rad * 180.0 / kPi; }

/// Wraps an angle into (-pi, pi].
double wrapAngle(double angle);

/// Yaw of a horizontal direction vector.
inline double headingOf(const Vec2& dir) { return std::atan2(dir.y(), dir.x()); }

/// 64-bit FNV-1a; stable across platforms, used for scenario hashes and sub-seeds.
std::uint64_t fnv1a64(std::string_view bytes);

/// Derives a named sub-seed so that terrain, noise and stream generation stay
/// reproducible independently of each other.
std::uint64_t deriveSeed(std::uint64_t seed, std::string_view name);

/**
 * @brief Seeded random source with platform-independent output.
 *
 * std::mt19937_64 is fully specified by the standard, the distribution
 * objects are not, so the conversions to uniform and normal variates are
 * done here.
 */
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }
  /// Uniform in [0, 1).
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Standard normal via Box-Muller.
  double normal();

 private:
  std::mt19937_64 engine_;
};

}  // namespace mdsurvey
