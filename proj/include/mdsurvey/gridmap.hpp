// SPDX-License-Identifier: Apache-2.0
// Copyright (c) 2026 The mdsurvey Authors

#pragma once

#include <compare>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <optional>
#include <ostream>
#include <span>
#include <vector>

#include "mdsurvey/common.hpp"

namespace mdsurvey {

struct CellIndex {
  int col = 0;
  int row = 0;

  auto operator<=>(const CellIndex&) const = default;
};

enum class ElevationFusion {
  kMaximum,       ///< per-cell maximum of all point heights
  kMovingAverage  ///< exponential moving average with a fixed weight
};

struct IntegrationResult {
  std::size_t updated_cells = 0;  ///< distinct cells touched by the batch
  std::size_t out_of_bounds = 0;  ///< points that fell outside the map
};

/// Pose of the detector coil center. Roll is structurally zero.
struct DetectorPose {
  Vec3 position = Vec3::Zero();
  double yaw = 0.0;
  double pitch = 0.0;
};

/// Coil outline in the detector x-y plane.
struct Ellipse {
  double semi_x = 0.085;  ///< along the detector x axis [m]
  double semi_y = 0.125;  ///< along the detector y axis [m]
};

/**
 * @brief 2.5D elevation grid with observation state and detector-signal
 * accumulators.
 *
 * Cell (0, 0) has its lower-left corner at the origin; columns grow along +x,
 * rows along +y. Cells that were never hit by a point carry no elevation;
 * elevation() reports them as std::nullopt.
 */
class ElevationMap {
 public:
  ElevationMap(const Vec2& origin, const Vec2& size, double resolution,
               ElevationFusion fusion = ElevationFusion::kMaximum,
               double average_weight = 0.3);

  int width() const { return width_; }
  int height() const { return height_; }
  double resolution() const { return resolution_; }
  const Vec2& origin() const { return origin_; }
  ElevationFusion fusion() const { return fusion_; }

  bool contains(CellIndex cell) const {
    return cell.col >= 0 && cell.col < width_ && cell.row >= 0 && cell.row < height_;
  }
  std::optional<CellIndex> cellAt(const Vec2& xy) const;
  Vec2 cellCenter(CellIndex cell) const;

  bool observed(CellIndex cell) const;
  std::optional<double> elevation(CellIndex cell) const;
  std::optional<double> elevationAt(const Vec2& xy) const;
  /// Writes an elevation directly and marks the cell observed.
  void setElevation(CellIndex cell, double z);

  IntegrationResult integratePoints(std::span<const Vec3> points);

  /// Least-squares plane normal over observed cells within `window` cells.
  std::optional<Vec3> surfaceNormal(CellIndex cell, int window = 1) const;

  void accumulateSignal(std::span<const CellIndex> cells, double signal);
  int signalCount(CellIndex cell) const;
  double signalSum(CellIndex cell) const;
  std::optional<double> signalMean(CellIndex cell) const;

  std::size_t observedCount() const;

 private:
  std::size_t linear(CellIndex cell) const {
    return static_cast<std::size_t>(cell.row) * width_ + cell.col;
  }
  void requireInBounds(CellIndex cell) const;
  void invalidateNormals(CellIndex cell);
  std::optional<Vec3> fitNormal(CellIndex cell, int window) const;

  Vec2 origin_;
  double resolution_;
  int width_;
  int height_;
  ElevationFusion fusion_;
  double average_weight_;

  std::vector<double> elevation_;
  std::vector<std::uint8_t> observed_;
  std::vector<double> signal_sum_;
  std::vector<int> signal_count_;
  // memoized 3x3 normals; not safe for concurrent readers of one instance
  mutable std::vector<Vec3> normal_cache_;
  mutable std::vector<std::uint8_t> normal_state_;  ///< 0 stale, 1 valid, 2 undefined
};

/// Per-cell traversability flags; row-major, same geometry as the source map.
class TraversabilityMask {
 public:
  TraversabilityMask(int width, int height, std::vector<std::uint8_t> cells);

  int width() const { return width_; }
  int height() const { return height_; }
  bool traversable(CellIndex cell) const {
    return cells_[static_cast<std::size_t>(cell.row) * width_ + cell.col] != 0;
  }
  std::size_t blockedCount() const;

 private:
  int width_;
  int height_;
  std::vector<std::uint8_t> cells_;
};

/// A cell is traversable iff it is observed, has a normal, and its slope does
/// not exceed `slope_max`.
TraversabilityMask traversableMask(const ElevationMap& map, double slope_max, int window = 1);

/**
 * @brief 2D distance from a query to the nearest non-traversable cell center.
 *
 * Queries are evaluated at the center of the cell containing the point, so
 * the brute-force path (small maps) and the precomputed distance transform
 * (large maps) return bit-identical values.
 */
class ClearanceField {
 public:
  static constexpr double kNoObstacle = std::numeric_limits<double>::infinity();
  static constexpr int kBruteForceCellLimit = 200 * 200;

  ClearanceField(const ElevationMap& map, const TraversabilityMask& mask);

  double distance(const Vec2& xy) const;
  double distance(CellIndex cell) const;
  bool precomputed() const { return !grid_.empty(); }

 private:
  double bruteForce(CellIndex cell) const;

  Vec2 origin_;
  double resolution_;
  int width_;
  int height_;
  std::vector<CellIndex> blocked_;
  std::vector<double> grid_;  ///< squared distances in cell units, large maps only
};

/// Squared-distance transform in cell units (exact, separable).
std::vector<double> squaredDistanceTransform(const TraversabilityMask& mask);

/**
 * Casts rays along the detector -z axis from the coil center and
 * `boundary_rays` evenly spaced outline points; returns the distinct observed
 * cells they hit, sorted.
 */
std::vector<CellIndex> raytraceFootprint(const ElevationMap& map, const DetectorPose& pose,
                                         const Ellipse& ellipse, int boundary_rays = 16,
                                         double max_range = 3.0);

/// CSV `col,row,x,y,elevation,observed,traversable,signal_mean,signal_count`.
void writeMapCsv(std::ostream& os, const ElevationMap& map, const TraversabilityMask& mask);

/// Writes `<stem>.ppm`, `<stem>.pgm` and `<stem>.scale.txt` for the mean signal.
void writeSignalHeatmap(const std::filesystem::path& stem, const ElevationMap& map);

}  // namespace mdsurvey
