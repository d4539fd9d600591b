// SPDX-License-Identifier: Apache-2.0
// Copyright (c) 2026 The mdsurvey Authors

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include <gtest/gtest.h>

#include "mdsurvey/gridmap.hpp"

namespace mdsurvey {
namespace {

ElevationMap planeMap(const Vec2& size, double res, double slope_x, double slope_y = 0.0) {
  ElevationMap map(Vec2::Zero(), size, res);
  for (int row = 0; row < map.height(); ++row) {
    for (int col = 0; col < map.width(); ++col) {
      const Vec2 c = map.cellCenter({col, row});
      map.setElevation({col, row}, c.x() * slope_x + c.y() * slope_y);
    }
  }
  return map;
}

// Exhaustive oracle: distance from the query's cell center to every blocked cell center.
double bruteClearance(const ElevationMap& map, const TraversabilityMask& mask, CellIndex q) {
  double best = std::numeric_limits<double>::infinity();
  const Vec2 qc = map.cellCenter(q);
  for (int row = 0; row < mask.height(); ++row) {
    for (int col = 0; col < mask.width(); ++col) {
      if (!mask.traversable({col, row})) best = std::min(best, (map.cellCenter({col, row}) - qc).norm());
    }
  }
  return best;
}

TEST(ElevationMap, CellCountsUseCeil) {
  const ElevationMap small(Vec2::Zero(), Vec2(3.0, 1.5), 0.15);
  EXPECT_EQ(small.width(), 20);
  EXPECT_EQ(small.height(), 10);
  const ElevationMap large(Vec2::Zero(), Vec2(25.0, 10.0), 0.15);
  EXPECT_EQ(large.width(), 167);
  EXPECT_EQ(large.height(), 67);
}

TEST(ElevationMap, RejectsInvalidGeometry) {
  EXPECT_THROW(ElevationMap(Vec2::Zero(), Vec2(1, 1), 0.0), std::invalid_argument);
  EXPECT_THROW(ElevationMap(Vec2::Zero(), Vec2(0, 1), 0.1), std::invalid_argument);
  EXPECT_THROW(ElevationMap(Vec2::Zero(), Vec2(1, -1), 0.1), std::invalid_argument);
}

TEST(ElevationMap, StartsUnobservedWithUnknownElevation) {
  const ElevationMap map(Vec2::Zero(), Vec2(1, 1), 0.1);
  EXPECT_FALSE(map.observed({3, 3}));
  EXPECT_FALSE(map.elevation({3, 3}).has_value());
  EXPECT_EQ(map.observedCount(), 0u);
  EXPECT_FALSE(map.signalMean({0, 0}).has_value());
}

TEST(ElevationMap, IntegratesSinglePoint) {
  ElevationMap map(Vec2::Zero(), Vec2(1.5, 1.5), 0.15);
  const Vec3 p(0.05, 0.05, 1.0);
  const IntegrationResult r = map.integratePoints(std::span(&p, 1));
  EXPECT_EQ(r.updated_cells, 1u);
  ASSERT_TRUE(map.elevation({0, 0}).has_value());
  EXPECT_DOUBLE_EQ(*map.elevation({0, 0}), 1.0);
  EXPECT_TRUE(map.observed({0, 0}));
}

TEST(ElevationMap, MaxFusionKeepsHighestPoint) {
  ElevationMap map(Vec2::Zero(), Vec2(1.5, 1.5), 0.15);
  const std::vector<Vec3> pts{{0.05, 0.05, 1.0}, {0.06, 0.07, 1.2}};
  map.integratePoints(pts);
  EXPECT_DOUBLE_EQ(*map.elevation({0, 0}), 1.2);
}

TEST(ElevationMap, MovingAverageBlendsPoints) {
  ElevationMap map(Vec2::Zero(), Vec2(1, 1), 0.1, ElevationFusion::kMovingAverage, 0.25);
  const std::vector<Vec3> pts{{0.05, 0.05, 1.0}, {0.05, 0.05, 2.0}};
  map.integratePoints(pts);
  EXPECT_NEAR(*map.elevation({0, 0}), 1.0 + 0.25 * (2.0 - 1.0), 1e-12);
}

TEST(ElevationMap, IgnoresOutOfBoundsPoints) {
  ElevationMap map(Vec2::Zero(), Vec2(1, 1), 0.1);
  const std::vector<Vec3> pts{{-0.5, 0.5, 1.0}, {0.5, 3.0, 1.0}};
  const IntegrationResult r = map.integratePoints(pts);
  EXPECT_EQ(r.updated_cells, 0u);
  EXPECT_EQ(r.out_of_bounds, 2u);
  EXPECT_EQ(map.observedCount(), 0u);
}

TEST(ElevationMap, MaxFusionIsIdempotent) {
  ElevationMap once(Vec2::Zero(), Vec2(2, 2), 0.1);
  ElevationMap twice(Vec2::Zero(), Vec2(2, 2), 0.1);
  Rng rng(3);
  std::vector<Vec3> pts;
  for (int i = 0; i < 200; ++i) pts.emplace_back(rng.uniform(0, 2), rng.uniform(0, 2), rng.uniform(-1, 1));
  once.integratePoints(pts);
  twice.integratePoints(pts);
  twice.integratePoints(pts);
  for (int row = 0; row < once.height(); ++row) {
    for (int col = 0; col < once.width(); ++col) {
      EXPECT_EQ(once.elevation({col, row}), twice.elevation({col, row}));
    }
  }
}

TEST(SurfaceNormal, FlatPatchPointsUp) {
  const ElevationMap map = planeMap(Vec2(1, 1), 0.1, 0.0);
  const auto n = map.surfaceNormal({5, 5});
  ASSERT_TRUE(n.has_value());
  EXPECT_NEAR((*n - Vec3::UnitZ()).norm(), 0.0, 1e-12);
}

TEST(SurfaceNormal, RampMatchesAnalyticNormal) {
  const double g = deg2rad(20.0);
  const ElevationMap map = planeMap(Vec2(1, 1), 0.1, std::tan(g));
  const auto n = map.surfaceNormal({4, 4});
  ASSERT_TRUE(n.has_value());
  const Vec3 expected(-std::sin(g), 0.0, std::cos(g));
  EXPECT_LT(std::acos(std::clamp(n->dot(expected), -1.0, 1.0)), 1e-6);
  EXPECT_NEAR(n->norm(), 1.0, 1e-12);
}

TEST(SurfaceNormal, RandomPlanesMatchWithinMicroradian) {
  Rng rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    const double sx = rng.uniform(-1.0, 1.0);
    const double sy = rng.uniform(-1.0, 1.0);
    const ElevationMap map = planeMap(Vec2(0.5, 0.5), 0.1, sx, sy);
    const auto n = map.surfaceNormal({2, 2});
    ASSERT_TRUE(n.has_value());
    const Vec3 expected = Vec3(-sx, -sy, 1.0).normalized();
    EXPECT_LT(std::acos(std::clamp(n->dot(expected), -1.0, 1.0)), 1e-6);
  }
}

TEST(SurfaceNormal, UnknownWithTooFewObservedCells) {
  ElevationMap map(Vec2::Zero(), Vec2(1, 1), 0.1);
  map.setElevation({5, 5}, 0.0);
  map.setElevation({6, 5}, 0.0);
  EXPECT_FALSE(map.surfaceNormal({5, 5}).has_value());
}

TEST(SurfaceNormal, OutOfBoundsCellThrows) {
  const ElevationMap map = planeMap(Vec2(1, 1), 0.1, 0.0);
  EXPECT_THROW(map.surfaceNormal({-1, 0}), std::invalid_argument);
  EXPECT_THROW(map.surfaceNormal({0, 10}), std::invalid_argument);
}

TEST(Traversability, FlatMapFullyTraversable) {
  const ElevationMap map = planeMap(Vec2(1, 1), 0.1, 0.0);
  EXPECT_EQ(traversableMask(map, deg2rad(45)).blockedCount(), 0u);
}

TEST(Traversability, UnobservedCellsBlocked) {
  ElevationMap sparse(Vec2::Zero(), Vec2(1, 1), 0.1);
  EXPECT_EQ(traversableMask(sparse, deg2rad(45)).blockedCount(), 100u);
}

TEST(Traversability, PoleCellsBlocked) {
  ElevationMap map = planeMap(Vec2(1, 1), 0.1, 0.0);
  map.setElevation({5, 5}, 2.0);
  const TraversabilityMask mask = traversableMask(map, deg2rad(45));
  EXPECT_FALSE(mask.traversable({5, 5}));
  EXPECT_FALSE(mask.traversable({4, 5}));
  EXPECT_TRUE(mask.traversable({1, 1}));
}

TEST(Traversability, SteepRampBlockedBelowItsSlope) {
  const ElevationMap map = planeMap(Vec2(1, 1), 0.1, std::tan(deg2rad(20)));
  EXPECT_EQ(traversableMask(map, deg2rad(15)).blockedCount(), 100u);
  EXPECT_EQ(traversableMask(map, deg2rad(25)).blockedCount(), 0u);
}

TEST(Traversability, MonotoneInSlopeLimit) {
  Rng rng(5);
  ElevationMap map(Vec2::Zero(), Vec2(3, 3), 0.1);
  std::vector<Vec3> pts;
  for (int i = 0; i < 2000; ++i) pts.emplace_back(rng.uniform(0, 3), rng.uniform(0, 3), rng.uniform(0, 0.3));
  map.integratePoints(pts);
  for (double lo = 5.0; lo < 85.0; lo += 10.0) {
    const TraversabilityMask a = traversableMask(map, deg2rad(lo));
    const TraversabilityMask b = traversableMask(map, deg2rad(lo + 10.0));
    for (int row = 0; row < map.height(); ++row) {
      for (int col = 0; col < map.width(); ++col) {
        if (a.traversable({col, row})) {
          EXPECT_TRUE(b.traversable({col, row}));
        }
      }
    }
  }
}

TEST(Clearance, NoObstacleGivesSentinel) {
  const ElevationMap map = planeMap(Vec2(1, 1), 0.1, 0.0);
  const ClearanceField field(map, traversableMask(map, deg2rad(45)));
  EXPECT_EQ(field.distance(Vec2(0.5, 0.5)), ClearanceField::kNoObstacle);
}

TEST(Clearance, AdjacentCellIsOneResolutionAway) {
  const ElevationMap map = planeMap(Vec2(1, 1), 0.1, 0.0);
  std::vector<std::uint8_t> cells(100, 1);
  cells[5 * 10 + 5] = 0;
  const ClearanceField field(map, TraversabilityMask(10, 10, cells));
  EXPECT_NEAR(field.distance(CellIndex{6, 5}), 0.1, 1e-12);
  EXPECT_NEAR(field.distance(CellIndex{6, 6}), 0.1 * std::sqrt(2.0), 1e-12);
  EXPECT_THROW(field.distance(Vec2(-0.1, 0.5)), std::invalid_argument);
}

TEST(Clearance, MatchesExhaustiveScanOnRandomMasks) {
  Rng rng(17);
  for (int trial = 0; trial < 30; ++trial) {
    const int w = 1 + static_cast<int>(rng.uniform() * 50);
    const int h = 1 + static_cast<int>(rng.uniform() * 50);
    const double density = rng.uniform(0.0, 0.2);
    const ElevationMap map(Vec2(rng.uniform(-5, 5), rng.uniform(-5, 5)), Vec2(w * 0.1, h * 0.1), 0.1);
    ASSERT_EQ(map.width(), w);
    std::vector<std::uint8_t> cells(static_cast<std::size_t>(w * h));
    for (auto& c : cells) c = rng.uniform() < density ? 0 : 1;
    const TraversabilityMask mask(w, h, cells);
    const ClearanceField field(map, mask);
    for (int row = 0; row < h; ++row) {
      for (int col = 0; col < w; ++col) {
        EXPECT_NEAR(field.distance(CellIndex{col, row}), bruteClearance(map, mask, {col, row}), 1e-12);
      }
    }
  }
}

TEST(Clearance, PrecomputedGridMatchesBruteForce) {
  const int n = 210;
  const ElevationMap map(Vec2::Zero(), Vec2(n * 0.1, n * 0.1), 0.1);
  std::vector<std::uint8_t> cells(static_cast<std::size_t>(n * n), 1);
  Rng rng(23);
  for (int i = 0; i < 40; ++i) cells[static_cast<std::size_t>(rng.uniform() * n * n)] = 0;
  const TraversabilityMask mask(n, n, cells);
  const ClearanceField field(map, mask);
  EXPECT_TRUE(field.precomputed());
  for (int k = 0; k < 400; ++k) {
    const CellIndex q{static_cast<int>(rng.uniform() * n), static_cast<int>(rng.uniform() * n)};
    EXPECT_NEAR(field.distance(q), bruteClearance(map, mask, q), 1e-12);
  }
}

TEST(Footprint, LevelCoilCoversProjectedEllipse) {
  const ElevationMap map = planeMap(Vec2(2, 2), 0.05, 0.0);
  const DetectorPose pose{Vec3(1.0, 1.0, 0.18), deg2rad(30), 0.0};
  const Ellipse e{0.085, 0.125};
  const auto cells = raytraceFootprint(map, pose, e);
  ASSERT_FALSE(cells.empty());
  EXPECT_TRUE(std::binary_search(cells.begin(), cells.end(), *map.cellAt(Vec2(1.0, 1.0))));
  const double diag = 0.05 * std::sqrt(2.0);
  const double c = std::cos(pose.yaw);
  const double s = std::sin(pose.yaw);
  for (const CellIndex& cell : cells) {
    EXPECT_TRUE(map.observed(cell));
    // distance from the cell center to the ellipse region, sampled densely
    const Vec2 center = map.cellCenter(cell);
    double best = std::numeric_limits<double>::infinity();
    for (int i = 0; i <= 40; ++i) {
      for (int j = 0; j < 72; ++j) {
        const double r = i / 40.0;
        const double a = 2 * kPi * j / 72.0;
        const Vec2 local(r * e.semi_x * std::cos(a), r * e.semi_y * std::sin(a));
        const Vec2 world(1.0 + c * local.x() - s * local.y(), 1.0 + s * local.x() + c * local.y());
        best = std::min(best, (world - center).norm());
      }
    }
    EXPECT_LE(best, diag);
  }
}

TEST(Footprint, HorizontalRaysMiss) {
  const ElevationMap map = planeMap(Vec2(2, 2), 0.05, 0.0);
  const DetectorPose pose{Vec3(1.0, 1.0, 0.18), 0.0, deg2rad(90)};
  EXPECT_TRUE(raytraceFootprint(map, pose, Ellipse{}).empty());
}

TEST(Footprint, ZeroSizeEllipseRejected) {
  const ElevationMap map = planeMap(Vec2(1, 1), 0.05, 0.0);
  EXPECT_THROW(raytraceFootprint(map, DetectorPose{Vec3(0.5, 0.5, 0.2)}, Ellipse{0.0, 0.1}),
               std::invalid_argument);
}

TEST(Signal, MeanOfAccumulatedSignals) {
  ElevationMap map(Vec2::Zero(), Vec2(1, 1), 0.1);
  const CellIndex c{2, 3};
  map.accumulateSignal(std::span(&c, 1), 1.0);
  map.accumulateSignal(std::span(&c, 1), 3.0);
  EXPECT_EQ(map.signalCount(c), 2);
  EXPECT_DOUBLE_EQ(*map.signalMean(c), 2.0);
  EXPECT_DOUBLE_EQ(map.signalSum(CellIndex{0, 0}), 0.0);
  const CellIndex bad{10, 0};
  EXPECT_THROW(map.accumulateSignal(std::span(&bad, 1), 1.0), std::invalid_argument);
}

TEST(MapCsv, HeaderAndRowCount) {
  const ElevationMap map = planeMap(Vec2(0.3, 0.2), 0.1, 0.0);
  std::ostringstream os;
  writeMapCsv(os, map, traversableMask(map, deg2rad(45)));
  std::istringstream is(os.str());
  std::string line;
  std::getline(is, line);
  EXPECT_EQ(line, "col,row,x,y,elevation,observed,traversable,signal_mean,signal_count");
  int rows = 0;
  while (std::getline(is, line)) ++rows;
  EXPECT_EQ(rows, 6);
}

}  // namespace
}  // namespace mdsurvey
