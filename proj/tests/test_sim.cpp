// SPDX-License-Identifier: Apache-2.0
// Copyright (c) 2026 The mdsurvey Authors

#include <cmath>
#include <map>
#include <numeric>
#include <sstream>

#include <gtest/gtest.h>

#include "mdsurvey/alignment.hpp"
#include "mdsurvey/sim.hpp"

namespace mdsurvey {
namespace {

TerrainSpec flatSpec() {
  TerrainSpec spec;
  spec.components.push_back({TerrainKind::kFlat});
  return spec;
}

TerrainSpec rampSpec(double angle) {
  TerrainSpec spec;
  TerrainComponent ramp;
  ramp.kind = TerrainKind::kRamp;
  ramp.angle = angle;
  spec.components.push_back(ramp);
  return spec;
}

TerrainSpec fractalSpec() {
  TerrainSpec spec;
  TerrainComponent rolling;
  rolling.kind = TerrainKind::kRolling;
  rolling.amplitude = 0.3;
  rolling.wavelength = 4.0;
  rolling.direction = deg2rad(75);
  TerrainComponent fractal;
  fractal.kind = TerrainKind::kFractal;
  fractal.amplitude = 0.1;
  fractal.wavelength = 1.5;
  fractal.octaves = 3;
  spec.components = {rolling, fractal};
  return spec;
}

SurveyScenario smallScenario(const TerrainSpec& terrain) {
  SurveyScenario sc;
  sc.area = Rect{Vec2(0, 0), Vec2(3.0, 1.0)};
  sc.terrain = terrain;
  sc.targets = {{Vec2(1.5, 0.5), 0.05, 1.0}};
  return sc;
}

TEST(Terrain, FlatIsZero) {
  const TruthTerrain t = generateTerrain(flatSpec(), Rect{Vec2(0, 0), Vec2(2, 2)}, 1);
  for (int iy = 0; iy < t.nodesY(); ++iy)
    for (int ix = 0; ix < t.nodesX(); ++ix) EXPECT_EQ(t.node(ix, iy), 0.0);
  EXPECT_EQ(t.height(Vec2(0.73, 1.21)), 0.0);
}

TEST(Terrain, RampFollowsTangent) {
  const double g = deg2rad(20);
  const TruthTerrain t = generateTerrain(rampSpec(g), Rect{Vec2(-1, 0), Vec2(2, 2)}, 1);
  Rng rng(4);
  for (int i = 0; i < 200; ++i) {
    const Vec2 xy(rng.uniform(-1, 2), rng.uniform(0, 2));
    EXPECT_NEAR(t.height(xy), xy.x() * std::tan(g), 1e-9);
  }
  const Vec3 n = t.normal(Vec2(0.5, 1.0), t.resolution());
  EXPECT_NEAR((n - Vec3(-std::sin(g), 0, std::cos(g))).norm(), 0.0, 1e-9);
}

TEST(Terrain, SameSeedBitwiseIdentical) {
  const Rect region{Vec2(0, 0), Vec2(4, 3)};
  const TruthTerrain a = generateTerrain(fractalSpec(), region, 99);
  const TruthTerrain b = generateTerrain(fractalSpec(), region, 99);
  const TruthTerrain c = generateTerrain(fractalSpec(), region, 100);
  bool differs = false;
  for (int iy = 0; iy < a.nodesY(); ++iy) {
    for (int ix = 0; ix < a.nodesX(); ++ix) {
      EXPECT_EQ(a.node(ix, iy), b.node(ix, iy));
      differs = differs || a.node(ix, iy) != c.node(ix, iy);
    }
  }
  EXPECT_TRUE(differs);
}

TEST(Terrain, InvalidSpecRejected) {
  TerrainSpec spec = rampSpec(deg2rad(95));
  EXPECT_THROW(generateTerrain(spec, Rect{Vec2(0, 0), Vec2(1, 1)}, 1), std::invalid_argument);
  spec = flatSpec();
  spec.resolution = 0.0;
  EXPECT_THROW(generateTerrain(spec, Rect{Vec2(0, 0), Vec2(1, 1)}, 1), std::invalid_argument);
}

// ---------------------------------------------------------------------------

class LidarTest : public ::testing::Test {
 protected:
  TruthTerrain truth = generateTerrain(flatSpec(), Rect{Vec2(-10, -10), Vec2(10, 10)}, 1);
  LidarSpec spec;
  VehicleState pose{Vec3(0, 0, 1.0), 0.0, 0.0, 0.0};
};

TEST_F(LidarTest, FlatGroundGivesConcentricRings) {
  const auto points = lidarScan(truth, pose, spec);
  ASSERT_FALSE(points.empty());
  const Vec3 origin = pose.position + spec.mount;
  for (const Vec3& p : points) {
    EXPECT_NEAR(p.z(), 0.0, 1e-6);
    const double horizontal = (p - origin).head<2>().norm();
    // depression angle must be one of the beam elevations
    const double depression = rad2deg(std::atan2(origin.z() - p.z(), horizontal));
    EXPECT_NEAR(depression, std::round(depression), 1e-4);
    EXPECT_LE((p - origin).norm(), spec.range + 1e-9);
  }
  const double ring30 = origin.z() / std::tan(deg2rad(30));
  const auto on_ring = std::count_if(points.begin(), points.end(), [&](const Vec3& p) {
    return std::abs((p - origin).head<2>().norm() - ring30) < 1e-4;
  });
  EXPECT_EQ(on_ring, 91);
}

TEST_F(LidarTest, RearSectorReturnsNothing) {
  for (double yaw : {0.0, 1.0, -2.5}) {
    pose.yaw = yaw;
    const Vec3 origin = pose.position + yawPitchRotation({yaw, 0.0}) * spec.mount;
    const Vec2 heading(std::cos(yaw), std::sin(yaw));
    for (const Vec3& p : lidarScan(truth, pose, spec)) {
      EXPECT_GE((p - origin).head<2>().dot(heading), -1e-6);
    }
  }
}

TEST_F(LidarTest, ZeroRangeGivesEmptyScan) {
  spec.range = 0.0;
  EXPECT_TRUE(lidarScan(truth, pose, spec).empty());
}

TEST_F(LidarTest, SensorBelowSurfaceGivesEmptyScan) {
  pose.position.z() = -1.0;
  EXPECT_TRUE(lidarScan(truth, pose, spec).empty());
}

// ---------------------------------------------------------------------------

TEST(StepVehicle, TranslationBound) {
  const VehicleStep s = stepVehicle({}, {Vec3(0.3, 0, 0), 0.0, 0.0}, VehicleLimits{});
  EXPECT_NEAR(s.dt, 0.3, 1e-12);
  EXPECT_NEAR(s.state.elapsed, 0.3, 1e-12);
}

TEST(StepVehicle, RotationBound) {
  const VehicleStep s = stepVehicle({}, {Vec3(0.3, 0, 0), deg2rad(60), 0.0}, VehicleLimits{});
  EXPECT_NEAR(s.dt, 1.0, 1e-12);
}

TEST(StepVehicle, ZeroCommand) {
  const VehicleState st{Vec3(1, 2, 3), 0.4, 0.1, 5.0};
  const VehicleStep s = stepVehicle(st, {st.position, st.yaw, st.pitch}, VehicleLimits{});
  EXPECT_EQ(s.dt, 0.0);
  EXPECT_EQ(s.state.elapsed, 5.0);
}

TEST(StepVehicle, UsesShortestYawAndRejectsBadPitch) {
  const VehicleState st{Vec3::Zero(), deg2rad(170), 0.0, 0.0};
  EXPECT_NEAR(stepVehicle(st, {Vec3::Zero(), deg2rad(-170), 0.0}, VehicleLimits{}).dt, 20.0 / 60.0, 1e-12);
  EXPECT_THROW(stepVehicle(st, {Vec3::Zero(), 0.0, deg2rad(90)}, VehicleLimits{}), std::invalid_argument);
}

// ---------------------------------------------------------------------------

class DetectorTest : public ::testing::Test {
 protected:
  TruthTerrain truth = generateTerrain(flatSpec(), Rect{Vec2(-2, -2), Vec2(2, 2)}, 1);
  DetectorModel model;
  std::vector<Target> targets{{Vec2(0, 0), 0.0, 0.8}};
};

TEST_F(DetectorTest, CenteredPerfectStandoff) {
  EXPECT_NEAR(detectorSample(truth, targets, {Vec3(0, 0, model.standoff), 0.3, 0.0}, model), 0.8, 1e-12);
}

TEST_F(DetectorTest, FarTargetIsWeak) {
  const double far = 3.0 * model.sigma_r + 1e-9;
  EXPECT_LT(detectorSample(truth, targets, {Vec3(far, 0, model.standoff), 0.0, 0.0}, model), 0.012 * 0.8);
  EXPECT_NEAR(detectorSample(truth, targets, {Vec3(far, 0, model.standoff), 0.0, 0.0}, model),
              0.8 * std::exp(-4.5), 1e-9);
}

TEST_F(DetectorTest, NinetyDegreeMisalignmentGivesZero) {
  EXPECT_NEAR(detectorSample(truth, targets, {Vec3(0, 0, model.standoff), 0.0, deg2rad(90)}, model), 0.0, 1e-12);
}

TEST_F(DetectorTest, MonotoneInOffsetGapAndTilt) {
  double prev = 2.0;
  for (double r = 0.0; r < 0.5; r += 0.02) {
    const double s = detectorSample(truth, targets, {Vec3(r, 0, model.standoff), 0.0, 0.0}, model);
    EXPECT_LT(s, prev);
    prev = s;
  }
  prev = 2.0;
  for (double z = model.standoff; z < 0.6; z += 0.02) {
    const double s = detectorSample(truth, targets, {Vec3(0, 0, z), 0.0, 0.0}, model);
    EXPECT_LE(s, prev);
    prev = s;
  }
  prev = 2.0;
  for (double p = 0.0; p < 1.5; p += 0.1) {
    const double s = detectorSample(truth, targets, {Vec3(0, 0, model.standoff), 0.0, p}, model);
    EXPECT_LT(s, prev);
    prev = s;
  }
}

TEST_F(DetectorTest, ClampedToUnitInterval) {
  std::vector<Target> many(5, Target{Vec2(0, 0), 0.0, 1.0});
  EXPECT_EQ(detectorSample(truth, many, {Vec3(0, 0, model.standoff), 0.0, 0.0}, model), 1.0);
}

// ---------------------------------------------------------------------------

TEST(Methods, NamesRoundTrip) {
  for (SurveyMethod m : kAllMethods) EXPECT_EQ(parseMethod(methodName(m)), m);
  EXPECT_THROW(parseMethod("aligned3"), std::invalid_argument);
}

TEST(Survey, FlatTerrainCostsOnlyTheDeviationTurn) {
  const SurveyScenario sc = smallScenario(flatSpec());
  const TruthTerrain truth = scenarioTruth(sc, 1);
  std::map<SurveyMethod, SurveyResult> runs;
  for (SurveyMethod m : kAllMethods) {
    SurveyResult r = runSurvey(sc, truth, m);
    EXPECT_FALSE(r.aborted) << methodName(m);
    EXPECT_TRUE(r.skipped_samples.empty()) << methodName(m);
    runs.emplace(m, std::move(r));
  }
  const double baseline = runs.at(SurveyMethod::kFixedAttitude).log.duration();
  EXPECT_NEAR(runs.at(SurveyMethod::kAligned1).log.duration(), baseline, 1e-9);
  EXPECT_NEAR(runs.at(SurveyMethod::kAligned6).log.duration(), baseline, 1e-9);

  // alternating lanes force one turn of pi - max_lane_deviation, after which every yaw aligns equally
  const SurveyLog& proposed = runs.at(SurveyMethod::kProposed).log;
  double total_turn = 0.0;
  for (const TickRecord& t : proposed.ticks) total_turn += std::abs(t.dyaw);
  const double turn = kPi - sc.planner.max_lane_deviation;
  EXPECT_NEAR(total_turn, turn, 1e-9);
  EXPECT_GE(proposed.duration(), baseline - 1e-9);
  EXPECT_LE(proposed.duration(), baseline + turn / sc.limits.omega_max + 1e-9);
}

TEST(Survey, FixedAttitudeOnRampSeesRampAngle) {
  const SurveyScenario sc = smallScenario(rampSpec(deg2rad(20)));
  const TruthTerrain truth = scenarioTruth(sc, 1);
  const SurveyResult r = runSurvey(sc, truth, SurveyMethod::kFixedAttitude);
  std::size_t cells = 0;
  for (const TickRecord& t : r.log.ticks) {
    for (const CellAlignment& c : t.cells) {
      EXPECT_NEAR(rad2deg(c.alpha), 20.0, 0.5);
      ++cells;
    }
  }
  EXPECT_GT(cells, 100u);
}

TEST(Survey, ProposedOnRampStaysAligned) {
  const SurveyScenario sc = smallScenario(rampSpec(deg2rad(20)));
  const TruthTerrain truth = scenarioTruth(sc, 1);
  const SurveyResult r = runSurvey(sc, truth, SurveyMethod::kProposed);
  EXPECT_FALSE(r.aborted);
  EXPECT_EQ(r.log.overUnobservedCount(), 0u);
  std::vector<double> alphas;
  for (const TickRecord& t : r.log.ticks)
    for (const CellAlignment& c : t.cells) alphas.push_back(c.alpha);
  ASSERT_FALSE(alphas.empty());
  std::sort(alphas.begin(), alphas.end());
  EXPECT_LE(rad2deg(alphas[alphas.size() / 2]), 7.5);
}

TEST(Survey, DeterministicAndTimingConsistent) {
  const SurveyScenario sc = smallScenario(fractalSpec());
  const TruthTerrain truth = scenarioTruth(sc, 3);
  for (SurveyMethod m : {SurveyMethod::kProposed, SurveyMethod::kAligned6}) {
    const SurveyResult a = runSurvey(sc, truth, m);
    const SurveyResult b = runSurvey(sc, truth, m);
    std::ostringstream sa;
    std::ostringstream sb;
    writeSurveyCsv(sa, a.log);
    writeSurveyCsv(sb, b.log);
    EXPECT_EQ(sa.str(), sb.str());
    const double total = std::accumulate(a.log.ticks.begin(), a.log.ticks.end(), 0.0,
                                         [](double acc, const TickRecord& t) { return acc + t.dt; });
    EXPECT_NEAR(total, a.log.duration(), 1e-9);
    for (std::size_t i = 1; i < a.log.ticks.size(); ++i) EXPECT_GT(a.log.ticks[i].time, a.log.ticks[i - 1].time);
  }
}

TEST(Survey, InvalidScenarioRejected) {
  SurveyScenario sc = smallScenario(flatSpec());
  sc.targets.push_back({Vec2(10, 10), 0.05, 1.0});
  const TruthTerrain truth = scenarioTruth(smallScenario(flatSpec()), 1);
  EXPECT_THROW(runSurvey(sc, truth, SurveyMethod::kProposed), std::invalid_argument);
}

}  // namespace
}  // namespace mdsurvey
