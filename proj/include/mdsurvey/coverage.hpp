// SPDX-License-Identifier: Apache-2.0
// Copyright (c) 2026 The mdsurvey Authors

#pragma once

#include <optional>
#include <ostream>
#include <vector>

#include "mdsurvey/common.hpp"

namespace mdsurvey {

/// Axis-aligned rectangle.
struct Rect {
  Vec2 min = Vec2::Zero();
  Vec2 max = Vec2::Zero();

  Vec2 size() const { return max - min; }
  bool contains(const Vec2& p) const {
    return p.x() >= min.x() && p.x() <= max.x() && p.y() >= min.y() && p.y() <= max.y();
  }
};

/// Which rectangle axis the lanes run along.
enum class LaneAxis { kLongSide, kShortSide, kX, kY };

struct PathSample {
  Vec2 position = Vec2::Zero();
  int lane = 0;
  Vec2 lane_dir = Vec2::UnitX();
  std::optional<Vec2> next_lane_dir;  ///< absent on the final lane
};

struct Lane {
  Vec2 start;
  Vec2 end;
};

/// Boustrophedon reference path: alternating lanes of evenly spaced samples.
class CoveragePath {
 public:
  CoveragePath(std::vector<PathSample> samples, std::vector<Lane> lanes,
               double lane_spacing, double sample_spacing);

  const std::vector<PathSample>& samples() const { return samples_; }
  const PathSample& operator[](std::size_t i) const { return samples_.at(i); }
  std::size_t size() const { return samples_.size(); }
  const std::vector<Lane>& lanes() const { return lanes_; }
  std::size_t laneCount() const { return lanes_.size(); }
  double laneSpacing() const { return lane_spacing_; }
  double sampleSpacing() const { return sample_spacing_; }

  /// Sum of distances between consecutive samples, lane changes included.
  double length() const;

  /// Direction from sample `index` to the closest point of the next lane.
  /// Throws std::invalid_argument for an invalid index.
  std::optional<Vec2> nextLaneDirection(std::size_t index) const;

 private:
  std::vector<PathSample> samples_;
  std::vector<Lane> lanes_;
  double lane_spacing_;
  double sample_spacing_;
};

/**
 * Lanes are spaced exactly `lane_spacing` apart and centered across the short
 * dimension; there are floor(across / lane_spacing) + 1 of them. Samples sit
 * every `sample_spacing` along a lane, plus one at the lane end.
 */
CoveragePath boustrophedon(const Rect& area, double lane_spacing, double sample_spacing,
                           LaneAxis axis = LaneAxis::kLongSide);

/// Closest point to `p` on segment [a, b].
Vec2 closestPointOnSegment(const Vec2& p, const Vec2& a, const Vec2& b);

/// CSV `index,lane,x,y,dir_x,dir_y`.
void writePathCsv(std::ostream& os, const CoveragePath& path);

}  // namespace mdsurvey
