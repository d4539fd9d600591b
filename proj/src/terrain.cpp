// SPDX-License-Identifier: Apache-2.0
// Copyright (c) 2026 The mdsurvey Authors

#include "mdsurvey/terrain.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace mdsurvey {

namespace {

std::uint64_t mix(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Lattice value in [-1, 1] for integer coordinates.
double latticeValue(std::uint64_t seed, int octave, std::int64_t ix, std::int64_t iy) {
  std::uint64_t h = mix(seed + 0x9e3779b97f4a7c15ULL * static_cast<std::uint64_t>(octave + 1));
  h = mix(h ^ static_cast<std::uint64_t>(ix));
  h = mix(h ^ (static_cast<std::uint64_t>(iy) << 1));
  return static_cast<double>(h >> 11) * 0x1.0p-52 - 1.0;
}

double smooth(double t) { return t * t * t * (t * (t * 6.0 - 15.0) + 10.0); }

double valueNoise(std::uint64_t seed, int octave, double x, double y) {
  const double fx = std::floor(x);
  const double fy = std::floor(y);
  const auto ix = static_cast<std::int64_t>(fx);
  const auto iy = static_cast<std::int64_t>(fy);
  const double u = smooth(x - fx);
  const double v = smooth(y - fy);
  const double a = latticeValue(seed, octave, ix, iy);
  const double b = latticeValue(seed, octave, ix + 1, iy);
  const double c = latticeValue(seed, octave, ix, iy + 1);
  const double d = latticeValue(seed, octave, ix + 1, iy + 1);
  return (a + (b - a) * u) + ((c + (d - c) * u) - (a + (b - a) * u)) * v;
}

double componentValue(const TerrainComponent& c, std::uint64_t seed, int index, const Vec2& xy) {
  const Vec2 dir(std::cos(c.direction), std::sin(c.direction));
  switch (c.kind) {
    case TerrainKind::kFlat:
      return 0.0;
    case TerrainKind::kRamp:
      return xy.dot(dir) * std::tan(c.angle);
    case TerrainKind::kRolling:
      return c.amplitude * std::sin(2.0 * kPi * xy.dot(dir) / c.wavelength);
    case TerrainKind::kFractal: {
      const std::uint64_t s = deriveSeed(seed, "fractal") + static_cast<std::uint64_t>(index);
      double sum = 0.0;
      double amp = 1.0;
      double norm = 0.0;
      double freq = 1.0 / c.wavelength;
      for (int o = 0; o < c.octaves; ++o) {
        sum += amp * valueNoise(s, o, xy.x() * freq, xy.y() * freq);
        norm += amp;
        amp *= c.roughness;
        freq *= 2.0;
      }
      return c.amplitude * sum / norm;
    }
  }
  return 0.0;
}

bool insideObstacle(const Obstacle& o, const Vec2& xy) {
  const Vec2 d = xy - o.center;
  if (o.shape == ObstacleShape::kCylinder) return d.norm() <= o.size.x();
  const double c = std::cos(o.yaw);
  const double s = std::sin(o.yaw);
  const Vec2 local(c * d.x() + s * d.y(), -s * d.x() + c * d.y());
  return std::abs(local.x()) <= o.size.x() && std::abs(local.y()) <= o.size.y();
}

}  // namespace

void TerrainSpec::validate() const {
  if (!(resolution > 0.0) || !std::isfinite(resolution)) {
    throw std::invalid_argument("terrain: resolution must be positive");
  }
  for (const auto& c : components) {
    if (!std::isfinite(c.angle) || !std::isfinite(c.direction) || !std::isfinite(c.amplitude)) {
      throw std::invalid_argument("terrain: non-finite component parameter");
    }
    if (c.kind == TerrainKind::kRamp && !(std::abs(c.angle) < kPi / 2.0)) {
      throw std::invalid_argument("terrain: ramp angle must be below 90 degrees");
    }
    if ((c.kind == TerrainKind::kRolling || c.kind == TerrainKind::kFractal) &&
        (!(c.wavelength > 0.0) || c.amplitude < 0.0)) {
      throw std::invalid_argument("terrain: wavelength must be positive and amplitude non-negative");
    }
    if (c.kind == TerrainKind::kFractal && (c.octaves < 1 || c.octaves > 16 || !(c.roughness > 0.0))) {
      throw std::invalid_argument("terrain: fractal needs 1..16 octaves and positive roughness");
    }
  }
  for (const auto& o : obstacles) {
    if (!o.center.allFinite() || !(o.size.x() > 0.0) ||
        (o.shape == ObstacleShape::kBox && !(o.size.y() > 0.0)) || !std::isfinite(o.height)) {
      throw std::invalid_argument("terrain: invalid obstacle");
    }
  }
}

double componentHeight(const TerrainSpec& spec, std::uint64_t seed, const Vec2& xy) {
  double h = 0.0;
  for (std::size_t i = 0; i < spec.components.size(); ++i) {
    h += componentValue(spec.components[i], seed, static_cast<int>(i), xy);
  }
  return h;
}

TruthTerrain::TruthTerrain(const Vec2& origin, int nx, int ny, double resolution,
                           std::vector<double> heights)
    : origin_(origin), nx_(nx), ny_(ny), resolution_(resolution), heights_(std::move(heights)) {
  if (nx < 2 || ny < 2 || heights_.size() != static_cast<std::size_t>(nx) * ny) {
    throw std::invalid_argument("TruthTerrain: grid needs at least 2x2 nodes");
  }
  max_ = origin_ + resolution_ * Vec2(nx_ - 1, ny_ - 1);
  max_height_ = *std::max_element(heights_.begin(), heights_.end());
  double gx = 0.0;
  double gy = 0.0;
  for (int iy = 0; iy < ny_; ++iy) {
    for (int ix = 0; ix < nx_; ++ix) {
      if (ix + 1 < nx_) gx = std::max(gx, std::abs(node(ix + 1, iy) - node(ix, iy)));
      if (iy + 1 < ny_) gy = std::max(gy, std::abs(node(ix, iy + 1) - node(ix, iy)));
    }
  }
  // bilinear patches interpolate edge slopes, so the edges bound the gradient
  max_gradient_ = std::hypot(gx, gy) / resolution_;
}

double TruthTerrain::height(const Vec2& xy) const {
  const double fx = std::clamp((xy.x() - origin_.x()) / resolution_, 0.0, nx_ - 1.0);
  const double fy = std::clamp((xy.y() - origin_.y()) / resolution_, 0.0, ny_ - 1.0);
  const int ix = std::min(static_cast<int>(fx), nx_ - 2);
  const int iy = std::min(static_cast<int>(fy), ny_ - 2);
  const double u = fx - ix;
  const double v = fy - iy;
  const double a = node(ix, iy);
  const double b = node(ix + 1, iy);
  const double c = node(ix, iy + 1);
  const double d = node(ix + 1, iy + 1);
  return (1.0 - v) * ((1.0 - u) * a + u * b) + v * ((1.0 - u) * c + u * d);
}

Vec3 TruthTerrain::normal(const Vec2& xy, double step) const {
  const double dx = (height(xy + Vec2(step, 0.0)) - height(xy - Vec2(step, 0.0))) / (2.0 * step);
  const double dy = (height(xy + Vec2(0.0, step)) - height(xy - Vec2(0.0, step))) / (2.0 * step);
  return Vec3(-dx, -dy, 1.0).normalized();
}

TruthTerrain generateTerrain(const TerrainSpec& spec, const Rect& region, std::uint64_t seed) {
  spec.validate();
  const Vec2 size = region.size();
  if (!(size.x() > 0.0) || !(size.y() > 0.0)) throw std::invalid_argument("terrain: empty region");
  const double res = spec.resolution;
  const int nx = static_cast<int>(std::ceil(size.x() / res - 1e-9)) + 1;
  const int ny = static_cast<int>(std::ceil(size.y() / res - 1e-9)) + 1;
  std::vector<double> heights(static_cast<std::size_t>(nx) * ny);
  for (int iy = 0; iy < ny; ++iy) {
    for (int ix = 0; ix < nx; ++ix) {
      const Vec2 xy = region.min + res * Vec2(ix, iy);
      double h = componentHeight(spec, seed, xy);
      for (const auto& o : spec.obstacles) {
        if (insideObstacle(o, xy)) h += o.height;
      }
      heights[static_cast<std::size_t>(iy) * nx + ix] = h;
    }
  }
  return TruthTerrain(region.min, nx, ny, res, std::move(heights));
}

}  // namespace mdsurvey
