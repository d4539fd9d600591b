// SPDX-License-Identifier: Apache-2.0
// Copyright (c) 2026 The mdsurvey Authors

#pragma once

#include <cstdint>
#include <vector>

#include "mdsurvey/common.hpp"
#include "mdsurvey/coverage.hpp"

namespace mdsurvey {

enum class TerrainKind { kFlat, kRamp, kRolling, kFractal };

/// One additive height component. Unused fields are ignored for a given kind.
struct TerrainComponent {
  TerrainKind kind = TerrainKind::kFlat;
  double angle = 0.0;        ///< ramp inclination [rad]
  double direction = 0.0;    ///< ramp uphill / rolling wave direction [rad]
  double amplitude = 0.0;    ///< rolling and fractal amplitude [m]
  double wavelength = 1.0;   ///< rolling and base fractal wavelength [m]
  int octaves = 4;           ///< fractal
  double roughness = 0.5;    ///< fractal amplitude ratio between octaves
};

enum class ObstacleShape { kCylinder, kBox };

struct Obstacle {
  ObstacleShape shape = ObstacleShape::kCylinder;
  Vec2 center = Vec2::Zero();
  double yaw = 0.0;              ///< box orientation [rad]
  Vec2 size = Vec2(0.1, 0.1);    ///< cylinder: (radius, unused); box: half extents
  double height = 1.0;           ///< added on top of the terrain [m]
};

struct TerrainSpec {
  std::vector<TerrainComponent> components;
  std::vector<Obstacle> obstacles;
  double resolution = 0.05;  ///< sampling step of the truth grid [m]

  /// Throws std::invalid_argument on non-finite or out-of-range values.
  void validate() const;
};

/// Analytic height of all components at `xy` (obstacles excluded).
double componentHeight(const TerrainSpec& spec, std::uint64_t seed, const Vec2& xy);

/**
 * @brief Ground-truth heightfield sampled on a fine grid.
 *
 * Between grid nodes the surface is bilinear; that surface is the truth used
 * for ray casting, detector gaps and reference normals.
 */
class TruthTerrain {
 public:
  TruthTerrain(const Vec2& origin, int nx, int ny, double resolution, std::vector<double> heights);

  const Vec2& origin() const { return origin_; }
  double resolution() const { return resolution_; }
  int nodesX() const { return nx_; }
  int nodesY() const { return ny_; }
  const Vec2& extentMax() const { return max_; }
  bool inside(const Vec2& xy) const {
    return xy.x() >= origin_.x() && xy.y() >= origin_.y() && xy.x() <= max_.x() && xy.y() <= max_.y();
  }
  double maxHeight() const { return max_height_; }
  /// Upper bound of the surface gradient norm.
  double maxGradient() const { return max_gradient_; }

  /// Bilinear height; coordinates outside are clamped to the border.
  double height(const Vec2& xy) const;
  /// Unit normal from central differences with the given step.
  Vec3 normal(const Vec2& xy, double step) const;
  double node(int ix, int iy) const { return heights_[static_cast<std::size_t>(iy) * nx_ + ix]; }

 private:
  Vec2 origin_;
  int nx_;
  int ny_;
  double resolution_;
  std::vector<double> heights_;
  Vec2 max_;
  double max_height_;
  double max_gradient_;
};

/// Samples `spec` over `region`. Same spec and seed give a bitwise-identical field.
TruthTerrain generateTerrain(const TerrainSpec& spec, const Rect& region, std::uint64_t seed);

}  // namespace mdsurvey
