// SPDX-License-Identifier: Apache-2.0
// Copyright (c) 2026 The mdsurvey Authors

#include <cmath>
#include <sstream>

#include <Eigen/Dense>
#include <gtest/gtest.h>

#include "mdsurvey/fusion.hpp"

namespace mdsurvey {
namespace {

RigidTransform randomTransform(Rng& rng) {
  RigidTransform t;
  const Vec3 phi(rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(-2, 2));
  t.rotation = Eigen::Quaterniond(Eigen::AngleAxisd(phi.norm(), phi.normalized()));
  t.translation = Vec3(rng.uniform(-5, 5), rng.uniform(-5, 5), rng.uniform(-5, 5));
  return t;
}

double poseDistance(const RigidTransform& a, const RigidTransform& b) {
  return std::max((a.translation - b.translation).norm(), a.rotation.angularDistance(b.rotation));
}

Matrix6d diag6(double rot, double trans) {
  Vector6d v;
  v << rot, rot, rot, trans, trans, trans;
  return v.asDiagonal();
}

FusionScenario zeroNoise() {
  FusionScenario s;
  s.odometry_sigma_translation = 0.0;
  s.odometry_sigma_rotation = 0.0;
  s.gnss_sigma = 0.0;
  return s;
}

// ---------------------------------------------------------------------------

TEST(RigidTransform, OdometryDeltaCases) {
  Rng rng(1);
  const RigidTransform a = randomTransform(rng);
  EXPECT_LT(poseDistance(odometryDelta(a, a), RigidTransform::identity()), 1e-12);
  const RigidTransform shifted{Eigen::Quaterniond::Identity(), Vec3(1, 0, 0)};
  EXPECT_LT((odometryDelta(RigidTransform::identity(), shifted).translation - Vec3(1, 0, 0)).norm(), 1e-15);
  const RigidTransform yawed = RigidTransform::fromYaw(kPi / 2, Vec3(2, 3, 0));
  const RigidTransform moved = yawed * shifted;
  EXPECT_LT((odometryDelta(yawed, moved).translation - Vec3(1, 0, 0)).norm(), 1e-12);
  for (int i = 0; i < 200; ++i) {
    const RigidTransform p = randomTransform(rng);
    const RigidTransform c = randomTransform(rng);
    EXPECT_LT(poseDistance(p * odometryDelta(p, c), c), 1e-12);
  }
}

TEST(RigidTransform, ExpLogAndRetractRoundTrip) {
  Rng rng(2);
  for (int i = 0; i < 200; ++i) {
    Vec3 phi(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1));
    phi *= rng.uniform(0.0, 3.0) / std::max(phi.norm(), 1e-12);
    EXPECT_LT((logSO3(expSO3(phi)) - phi).norm(), 1e-9);
    EXPECT_LT((expSO3(phi) - Eigen::AngleAxisd(phi.norm(), phi.normalized()).toRotationMatrix()).norm(), 1e-12);
    const RigidTransform t = randomTransform(rng);
    Vector6d d;
    for (int k = 0; k < 6; ++k) d(k) = rng.uniform(-0.5, 0.5);
    EXPECT_LT((t.localCoordinates(t.retract(d)) - d).norm(), 1e-9);
    EXPECT_TRUE(t.retract(d).isNormalized());
  }
  EXPECT_LT(logSO3(Eigen::Matrix3d::Identity()).norm(), 1e-15);
  EXPECT_NEAR(RigidTransform::fromYaw(1.2, Vec3::Zero()).yaw(), 1.2, 1e-12);
}

TEST(RegistrationCovariance, IdentityStack) {
  Eigen::MatrixXd j(12, 3);
  for (int k = 0; k < 4; ++k) j.block<3, 3>(3 * k, 0).setIdentity();
  const RegistrationCovariance c = registrationCovariance(j, j, 1.0);
  EXPECT_LT((c.position - Eigen::Matrix3d::Identity() / 4.0).norm(), 1e-15);
  EXPECT_LT((c.rotation - Eigen::Matrix3d::Identity() / 4.0).norm(), 1e-15);
}

TEST(RegistrationCovariance, UnconstrainedAxisGetsSigmaMax) {
  Eigen::MatrixXd j = Eigen::MatrixXd::Identity(3, 3);
  j(0, 0) = 0.0;
  const RegistrationCovariance c = registrationCovariance(j, Eigen::MatrixXd::Identity(3, 3), 1.0, 10.0);
  EXPECT_NEAR(c.position(0, 0), 100.0, 1e-12);
  EXPECT_NEAR(c.position(1, 1), 1.0, 1e-12);
  EXPECT_NEAR(c.position(0, 1), 0.0, 1e-12);
}

TEST(RegistrationCovariance, MatchesDenseInverse) {
  Rng rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    Eigen::MatrixXd jp(20, 3);
    Eigen::MatrixXd jr(20, 3);
    for (int r = 0; r < 20; ++r)
      for (int c = 0; c < 3; ++c) {
        jp(r, c) = rng.normal();
        jr(r, c) = rng.normal();
      }
    const double scale = rng.uniform(0.1, 3.0);
    const RegistrationCovariance c = registrationCovariance(jp, jr, scale);
    const Eigen::Matrix3d ip = scale * (jp.transpose() * jp).inverse();
    const Eigen::Matrix3d ir = scale * (jr.transpose() * jr).inverse();
    EXPECT_LT((c.position - ip).norm(), 1e-10 * std::max(1.0, ip.norm()));
    EXPECT_LT((c.rotation - ir).norm(), 1e-10 * std::max(1.0, ir.norm()));
  }
}

TEST(GateGnss, ThresholdRule) {
  const Eigen::Matrix3d s = Eigen::Matrix3d::Identity() * 4e-4;
  const double thr = deg2rad(5) * deg2rad(5);
  EXPECT_EQ(gateGnss(0.5 * thr, s), s);
  EXPECT_LT((gateGnss(2.0 * thr, s) - 1e4 * s).norm(), 1e-15);
  EXPECT_EQ(gateGnss(thr, s, thr), s);
}

TEST(RequireSpd, RejectsIndefiniteAndAsymmetric) {
  Matrix6d m = Matrix6d::Identity();
  EXPECT_NO_THROW(requireSpd(m, "m"));
  m(2, 2) = -1.0;
  EXPECT_THROW(requireSpd(m, "m"), std::invalid_argument);
  m = Matrix6d::Identity();
  m(0, 1) = 0.5;
  EXPECT_THROW(requireSpd(m, "m"), std::invalid_argument);
  EXPECT_THROW(requireSpd(Matrix6d::Zero(), "m"), std::invalid_argument);
}

// ---------------------------------------------------------------------------

TEST(FusionGraph, IdentityDeltaStaysPut) {
  FusionGraph g;
  Rng rng(4);
  const RigidTransform start = randomTransform(rng);
  g.initialize(0.0, start, diag6(1e-6, 1e-6));
  const int id = g.addOdometry({0.05, RigidTransform::identity(), diag6(1e-4, 1e-4)});
  EXPECT_LT(poseDistance(g.estimate(id), start), 1e-15);
  g.optimize();
  EXPECT_LT(poseDistance(g.estimate(id), start), 1e-9);
}

TEST(FusionGraph, RejectsBadOdometry) {
  FusionGraph g;
  g.initialize(0.0, RigidTransform::identity(), diag6(1e-6, 1e-6));
  Matrix6d bad = diag6(1e-4, 1e-4);
  bad(4, 4) = -1e-4;
  EXPECT_THROW(g.addOdometry({0.05, RigidTransform::identity(), bad}), std::invalid_argument);
  g.addOdometry({0.05, RigidTransform::identity(), diag6(1e-4, 1e-4)});
  EXPECT_THROW(g.addOdometry({0.01, RigidTransform::identity(), diag6(1e-4, 1e-4)}), std::invalid_argument);
}

TEST(FusionGraph, OdometryChainEqualsDeadReckoning) {
  Rng rng(5);
  FusionGraph g;
  RigidTransform dead = randomTransform(rng);
  g.initialize(0.0, dead, diag6(1e-8, 1e-8));
  std::vector<std::pair<int, RigidTransform>> expected;
  for (int k = 1; k <= 60; ++k) {
    RigidTransform delta;
    delta.rotation = Eigen::Quaterniond(expSO3(Vec3(rng.uniform(-0.05, 0.05), rng.uniform(-0.05, 0.05),
                                                    rng.uniform(-0.05, 0.05))));
    delta.translation = Vec3(rng.uniform(0, 0.1), rng.uniform(-0.02, 0.02), rng.uniform(-0.02, 0.02));
    dead = dead * delta;
    const int id = g.addOdometry({0.05 * k, delta, diag6(1e-6, 1e-4)});
    expected.emplace_back(id, dead);
    if (k % 4 == 0) g.optimize();
  }
  for (const auto& [id, pose] : expected) {
    if (g.active(id)) {
      EXPECT_LT(poseDistance(g.estimate(id), pose), 1e-9);
    }
  }
}

TEST(FusionGraph, FixFarFromAnyStateIsDropped) {
  FusionGraph g;
  g.initialize(0.0, RigidTransform::identity(), diag6(1e-6, 1e-6));
  g.addOdometry({0.05, RigidTransform::identity(), diag6(1e-4, 1e-4)});
  const auto id = g.addPositionFix({1.05, Vec3::Zero(), Eigen::Matrix3d::Identity() * 4e-4}, Vec3::Zero());
  EXPECT_FALSE(id.has_value());
  EXPECT_EQ(g.droppedFixes(), 1u);
  EXPECT_FALSE(g.diagnostics().empty());
  EXPECT_TRUE(g.addPositionFix({0.06, Vec3::Zero(), Eigen::Matrix3d::Identity() * 4e-4}, Vec3::Zero()).has_value());
}

TEST(FusionGraph, ExtrinsicRandomWalkMustBeSpd) {
  FusionGraph g;
  g.initialize(0.0, RigidTransform::identity(), diag6(1e-6, 1e-6));
  g.addPositionFix({0.0, Vec3::Zero(), Eigen::Matrix3d::Identity() * 4e-4}, Vec3::Zero());
  ASSERT_TRUE(g.hasExtrinsic());
  EXPECT_THROW(g.advanceExtrinsic(1.0, Matrix6d::Zero()), std::invalid_argument);
}

TEST(FusionGraph, TightRandomWalkKeepsExtrinsicsTogether) {
  FusionScenario s;
  s.params.random_walk_translation = 1e-6;
  s.params.random_walk_rotation = 1e-6;
  s.waypoints = {Vec3(0, 0, 0), Vec3(4, 0, 0), Vec3(4, 4, 0)};
  const FusionRun run = runFusion(s, simulateStreams(s, 8), [](const FusionGraph& g, double) {
    const auto& ext = g.extrinsicNodes();
    for (std::size_t i = 1; i < ext.size(); ++i) {
      if (!g.active(ext[i - 1]) || !g.active(ext[i])) continue;
      EXPECT_LT(poseDistance(g.estimate(ext[i - 1]), g.estimate(ext[i])), 1e-4);
    }
  });
  EXPECT_EQ(run.solver_failures, 0u);
}

TEST(FusionGraph, CostNeverIncreasesAndMarginalsAreSpd) {
  FusionScenario s;
  s.waypoints = {Vec3(0, 0, 0), Vec3(6, 0, 0), Vec3(6, 5, 0)};
  s.drift_per_meter = 0.01;
  s.degenerate = {{2.0, 6.0}};
  const MeasurementStreams streams = simulateStreams(s, 9);
  FusionGraph g(s.params);
  g.initialize(0.0, streams.initial_pose, diag6(1e-8, 1e-8));
  std::size_t f = 0;
  int solves = 0;
  for (std::size_t k = 0; k < streams.odometry.size(); ++k) {
    g.addOdometry(streams.odometry[k]);
    for (; f < streams.gnss.size() && streams.gnss[f].timestamp <= streams.odometry[k].timestamp + 0.025; ++f) {
      g.addPositionFix(streams.gnss[f], s.lever_arm);
    }
    if (g.hasExtrinsic() && streams.odometry[k].timestamp - g.timestamp(g.latestExtrinsic()) >= 1.0) {
      g.advanceExtrinsic(streams.odometry[k].timestamp, s.params.randomWalkCovariance(1.0));
    }
    if (k % 4 != 3) continue;
    const OptimizationReport r = g.optimize();
    ++solves;
    EXPECT_FALSE(r.solver_failure);
    EXPECT_LE(r.final_cost, r.initial_cost * (1.0 + 1e-12) + 1e-12);
    EXPECT_GE(r.final_cost, 0.0);
    EXPECT_NO_THROW(requireSpd(g.extrinsicCovariance(), "extrinsic marginal"));
    EXPECT_NO_THROW(requireSpd(g.marginalCovariance(g.latestState()), "state marginal"));
    EXPECT_GT(g.extrinsicYawVariance(), 0.0);
    EXPECT_LE(static_cast<double>(g.activeStateCount()), s.params.window * s.odometry_rate + 5);
  }
  EXPECT_GT(solves, 50);
}

// ---------------------------------------------------------------------------

TEST(Streams, ZeroNoiseIsConsistentWithTruth) {
  FusionScenario s = zeroNoise();
  s.extrinsic_yaw = 0.7;
  s.extrinsic_translation = Vec3(1, -2, 0.5);
  s.waypoints = {Vec3(0, 0, 0), Vec3(3, 0, 0), Vec3(3, 2, 1)};
  const MeasurementStreams st = simulateStreams(s, 1);
  const RigidTransform t_oi = RigidTransform::fromYaw(s.extrinsic_yaw, s.extrinsic_translation);
  RigidTransform pose = st.initial_pose;
  for (const OdometryMeasurement& m : st.odometry) {
    pose = pose * m.delta;
    EXPECT_LT(poseDistance(pose, t_oi * truthPose(s, m.timestamp)), 1e-9);
  }
  for (const PositionMeasurement& f : st.gnss) {
    EXPECT_LT((f.position - truthPose(s, f.timestamp) * s.lever_arm).norm(), 1e-12);
  }
  EXPECT_EQ(st.gnss.size(), static_cast<std::size_t>(std::floor(s.duration() * s.gnss_rate + 1e-9)) + 1);
}

TEST(Streams, DropoutHasNoFixes) {
  FusionScenario s;
  s.waypoints = {Vec3(0, 0, 0), Vec3(10, 0, 0)};
  s.dropouts = {{2.0, 4.5}};
  const MeasurementStreams st = simulateStreams(s, 2);
  for (const PositionMeasurement& f : st.gnss) EXPECT_FALSE(s.dropouts[0].contains(f.timestamp));
  EXPECT_GT(st.gnss.size(), 30u);
}

TEST(Streams, DegenerateSegmentCarriesSigmaMax) {
  FusionScenario s;
  s.waypoints = {Vec3(0, 0, 0), Vec3(10, 0, 0)};
  s.degenerate = {{2.0, 4.0}};
  s.degenerate_axis = Vec3(1, 0, 0);
  s.degenerate_sigma = 1.5;
  const MeasurementStreams st = simulateStreams(s, 3);
  for (const OdometryMeasurement& m : st.odometry) {
    const Eigen::Matrix3d pos = m.covariance.bottomRightCorner<3, 3>();
    if (s.degenerate[0].contains(m.timestamp)) {
      EXPECT_NEAR(pos(0, 0), 1.5 * 1.5, 1e-9);
      EXPECT_NEAR(pos(1, 1), s.odometry_sigma_translation * s.odometry_sigma_translation, 1e-15);
    } else {
      EXPECT_NEAR(pos(0, 0), s.odometry_sigma_translation * s.odometry_sigma_translation, 1e-15);
    }
  }
}

TEST(Streams, CsvRoundTrip) {
  FusionScenario s;
  s.waypoints = {Vec3(0, 0, 0), Vec3(2, 0, 0), Vec3(2, 1, 0)};
  s.degenerate = {{0.5, 1.0}};
  const MeasurementStreams st = simulateStreams(s, 4);
  std::stringstream a;
  writeStreamsCsv(a, st);
  const MeasurementStreams back = readStreamsCsv(a);
  ASSERT_EQ(back.odometry.size(), st.odometry.size());
  ASSERT_EQ(back.gnss.size(), st.gnss.size());
  EXPECT_LT(poseDistance(back.initial_pose, st.initial_pose), 1e-15);
  for (std::size_t i = 0; i < st.odometry.size(); ++i) {
    EXPECT_EQ(back.odometry[i].timestamp, st.odometry[i].timestamp);
    EXPECT_EQ(back.odometry[i].delta.translation, st.odometry[i].delta.translation);
    EXPECT_EQ(back.odometry[i].covariance, st.odometry[i].covariance);
  }
  std::stringstream b;
  writeStreamsCsv(b, back);
  EXPECT_EQ(a.str(), b.str());
  std::stringstream broken("type,timestamp,...\nodom,1,2\n");
  EXPECT_THROW(readStreamsCsv(broken), std::runtime_error);
}

// ---------------------------------------------------------------------------

TEST(RunFusion, ZeroNoiseRecoversTruth) {
  FusionScenario s = zeroNoise();
  s.extrinsic_translation = Vec3(3, -1, 0.2);
  s.waypoints = {Vec3(0, 0, 0), Vec3(5, 0, 0)};
  const FusionRun run = runFusion(s, simulateStreams(s, 5));
  ASSERT_EQ(run.online.size(), run.truth.size());
  for (std::size_t i = 0; i < run.online.size(); ++i) {
    EXPECT_LT((run.online[i].pose.translation - run.truth[i].pose.translation).norm(), 1e-6);
    EXPECT_LT(run.online[i].pose.rotation.angularDistance(run.truth[i].pose.rotation), 1e-6);
  }
  for (const EstimateRecord& e : run.smoothed) {
    EXPECT_LT((e.pose.translation - truthPose(s, e.timestamp).translation).norm(), 1e-6);
  }
  EXPECT_NEAR(run.extrinsic_yaw.back(), 0.0, 1e-6);
  EXPECT_EQ(run.dropped_fixes, 0u);
  EXPECT_EQ(run.solver_failures, 0u);
}

TEST(RunFusion, NinetyDegreeExtrinsicConverges) {
  FusionScenario s;
  s.extrinsic_yaw = deg2rad(90);
  s.extrinsic_translation = Vec3(2, -1, 0.5);
  s.waypoints = {Vec3(0, 0, 0), Vec3(3, 0, 0), Vec3(3, 12, 0)};
  const FusionRun run = runFusion(s, simulateStreams(s, 42));
  ASSERT_FALSE(run.extrinsic_yaw.empty());
  EXPECT_LT(std::abs(rad2deg(wrapAngle(run.extrinsic_yaw.back() - s.extrinsic_yaw))), 2.0);
  EXPECT_TRUE(run.yaw_observable_time.has_value());
}

TEST(RunFusion, WindowBoundsActiveStates) {
  FusionScenario s;
  s.waypoints = {Vec3(0, 0, 0), Vec3(15, 0, 0)};
  const FusionRun run = runFusion(s, simulateStreams(s, 6));
  const double per_window = s.params.window * s.odometry_rate;
  EXPECT_LE(static_cast<double>(run.max_active_states), per_window + s.odometry_rate / s.optimize_rate + 1);
  EXPECT_GE(static_cast<double>(run.max_active_states), per_window);
  EXPECT_EQ(run.smoothed.size(), run.online.size());
}

TEST(RunFusion, DropoutFollowsOdometryAndRejoinsSmoothly) {
  FusionScenario s;
  s.waypoints = {Vec3(0, 0, 0), Vec3(20, 0, 0)};
  s.dropouts = {{6.0, 12.0}};
  const FusionRun run = runFusion(s, simulateStreams(s, 7));
  // consecutive online estimates change by the odometry step only
  double max_jump = 0.0;
  for (std::size_t i = 1; i < run.online.size(); ++i) {
    const double est = (run.online[i].pose.translation - run.online[i - 1].pose.translation).norm();
    const double odo = (run.dead_reckoning[i].pose.translation - run.dead_reckoning[i - 1].pose.translation).norm();
    max_jump = std::max(max_jump, std::abs(est - odo));
  }
  EXPECT_LT(max_jump, 3.0 * s.gnss_sigma);
  EXPECT_EQ(run.dropped_fixes, 0u);
}

}  // namespace
}  // namespace mdsurvey
