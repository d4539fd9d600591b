// SPDX-License-Identifier: Apache-2.0
// Copyright (c) 2026 The mdsurvey Authors

#include "mdsurvey/coverage.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <stdexcept>

namespace mdsurvey {

Vec2 closestPointOnSegment(const Vec2& p, const Vec2& a, const Vec2& b) {
  const Vec2 ab = b - a;
  const double len2 = ab.squaredNorm();
  if (len2 == 0.0) return a;
  const double t = std::clamp((p - a).dot(ab) / len2, 0.0, 1.0);
  return a + t * ab;
}

CoveragePath::CoveragePath(std::vector<PathSample> samples, std::vector<Lane> lanes,
                           double lane_spacing, double sample_spacing)
    : samples_(std::move(samples)),
      lanes_(std::move(lanes)),
      lane_spacing_(lane_spacing),
      sample_spacing_(sample_spacing) {}

double CoveragePath::length() const {
  double total = 0.0;
  for (std::size_t i = 1; i < samples_.size(); ++i) {
    total += (samples_[i].position - samples_[i - 1].position).norm();
  }
  return total;
}

std::optional<Vec2> CoveragePath::nextLaneDirection(std::size_t index) const {
  if (index >= samples_.size()) {
    throw std::invalid_argument("nextLaneDirection: sample index out of range");
  }
  const PathSample& s = samples_[index];
  const auto next = static_cast<std::size_t>(s.lane) + 1;
  if (next >= lanes_.size()) return std::nullopt;
  const Vec2 target = closestPointOnSegment(s.position, lanes_[next].start, lanes_[next].end);
  const Vec2 d = target - s.position;
  if (d.norm() < 1e-12) return std::nullopt;
  return d.normalized();
}

CoveragePath boustrophedon(const Rect& area, double lane_spacing, double sample_spacing,
                           LaneAxis axis) {
  if (!(lane_spacing > 0.0) || !(sample_spacing > 0.0)) {
    throw std::invalid_argument("boustrophedon: spacings must be positive");
  }
  const Vec2 size = area.size();
  if (!(size.x() > 0.0) || !(size.y() > 0.0) || !size.allFinite()) {
    throw std::invalid_argument("boustrophedon: degenerate area");
  }

  bool along_x = true;
  switch (axis) {
    case LaneAxis::kLongSide: along_x = size.x() >= size.y(); break;
    case LaneAxis::kShortSide: along_x = size.x() < size.y(); break;
    case LaneAxis::kX: along_x = true; break;
    case LaneAxis::kY: along_x = false; break;
  }
  const Vec2 u = along_x ? Vec2::UnitX() : Vec2::UnitY();
  const Vec2 v = along_x ? Vec2::UnitY() : Vec2::UnitX();
  const double length = along_x ? size.x() : size.y();
  const double across = along_x ? size.y() : size.x();

  const int lane_count = static_cast<int>(std::floor(across / lane_spacing + 1e-9)) + 1;
  const double offset = 0.5 * (across - (lane_count - 1) * lane_spacing);

  std::vector<double> stations;
  for (int j = 0;; ++j) {
    const double s = j * sample_spacing;
    if (s >= length - 1e-9) break;
    stations.push_back(s);
  }
  stations.push_back(length);

  std::vector<Lane> lanes;
  std::vector<PathSample> samples;
  for (int i = 0; i < lane_count; ++i) {
    const double c = std::max(0.0, offset + i * lane_spacing);
    const Vec2 base = area.min + c * v;
    const bool forward = (i % 2) == 0;
    const Vec2 start = base + (forward ? 0.0 : length) * u;
    const Vec2 end = base + (forward ? length : 0.0) * u;
    lanes.push_back({start, end});
    const Vec2 dir = forward ? u : Vec2(-u);
    for (double s : stations) {
      PathSample sample;
      sample.position = start + s * dir;
      sample.lane = i;
      sample.lane_dir = dir;
      samples.push_back(sample);
    }
  }

  CoveragePath path(std::move(samples), std::move(lanes), lane_spacing, sample_spacing);
  std::vector<PathSample> with_next = path.samples();
  for (std::size_t k = 0; k < with_next.size(); ++k) {
    with_next[k].next_lane_dir = path.nextLaneDirection(k);
  }
  return CoveragePath(std::move(with_next), path.lanes(), lane_spacing, sample_spacing);
}

void writePathCsv(std::ostream& os, const CoveragePath& path) {
  os << "index,lane,x,y,dir_x,dir_y\n" << std::fixed << std::setprecision(6);
  for (std::size_t i = 0; i < path.size(); ++i) {
    const PathSample& s = path[i];
    os << i << ',' << s.lane << ',' << s.position.x() << ',' << s.position.y() << ','
       << s.lane_dir.x() << ',' << s.lane_dir.y() << '\n';
  }
}

}  // namespace mdsurvey
