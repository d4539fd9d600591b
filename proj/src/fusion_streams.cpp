// SPDX-License-Identifier: Apache-2.0
// Copyright (c) 2026 The mdsurvey Authors

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <string>

#include "mdsurvey/fusion.hpp"

namespace mdsurvey {

void FusionScenario::validate() const {
  if (waypoints.size() < 2) throw std::invalid_argument("fusion trajectory needs at least two waypoints");
  if (!(speed > 0.0)) throw std::invalid_argument("trajectory speed must be positive");
  if (!(odometry_rate > 0.0) || !(gnss_rate > 0.0) || !(optimize_rate > 0.0)) {
    throw std::invalid_argument("stream rates must be positive");
  }
  if (odometry_sigma_translation < 0.0 || odometry_sigma_rotation < 0.0 || gnss_sigma < 0.0 ||
      drift_per_meter < 0.0) {
    throw std::invalid_argument("noise parameters must be non-negative");
  }
  if (!(degenerate_sigma > 0.0) || !(sigma_floor > 0.0)) {
    throw std::invalid_argument("degenerate sigma and sigma floor must be positive");
  }
  if (degenerate_axis.norm() < 1e-9) throw std::invalid_argument("degenerate axis must be non-zero");
  for (const TimeInterval& i : degenerate) {
    if (i.end < i.begin) throw std::invalid_argument("degenerate interval ends before it begins");
  }
  for (const TimeInterval& i : dropouts) {
    if (i.end < i.begin) throw std::invalid_argument("dropout interval ends before it begins");
  }
  params.validate();
}

double FusionScenario::duration() const {
  double length = 0.0;
  for (std::size_t i = 1; i < waypoints.size(); ++i) length += (waypoints[i] - waypoints[i - 1]).norm();
  return length / speed;
}

RigidTransform truthPose(const FusionScenario& scenario, double t) {
  const auto& w = scenario.waypoints;
  double remaining = std::max(0.0, t) * scenario.speed;
  double yaw = 0.0;
  bool have_yaw = false;
  for (std::size_t i = 1; i < w.size(); ++i) {
    const Vec3 seg = w[i] - w[i - 1];
    const double len = seg.norm();
    if (len < 1e-12) continue;
    const double seg_yaw = std::atan2(seg.y(), seg.x());
    if (!have_yaw) {
      yaw = seg_yaw;
      have_yaw = true;
    }
    if (remaining <= len) return RigidTransform::fromYaw(seg_yaw, w[i - 1] + seg * (remaining / len));
    remaining -= len;
    yaw = seg_yaw;
  }
  return RigidTransform::fromYaw(yaw, w.back());
}

namespace {

bool inAny(const std::vector<TimeInterval>& intervals, double t) {
  return std::any_of(intervals.begin(), intervals.end(), [t](const TimeInterval& i) { return i.contains(t); });
}

RigidTransform trueExtrinsic(const FusionScenario& s) {
  return RigidTransform::fromYaw(s.extrinsic_yaw, s.extrinsic_translation);
}

}  // namespace

MeasurementStreams simulateStreams(const FusionScenario& scenario, std::uint64_t seed) {
  scenario.validate();
  Rng odo_rng(deriveSeed(seed, "odometry"));
  Rng gnss_rng(deriveSeed(seed, "gnss"));
  const RigidTransform t_oi = trueExtrinsic(scenario);
  const double duration = scenario.duration();
  const Vec3 axis_odom = scenario.degenerate_axis.normalized();

  MeasurementStreams out;
  out.initial_pose = t_oi * truthPose(scenario, 0.0);

  const auto steps = static_cast<long>(std::floor(duration * scenario.odometry_rate + 1e-9));
  RigidTransform prev_true = out.initial_pose;
  for (long k = 1; k <= steps; ++k) {
    const double t = static_cast<double>(k) / scenario.odometry_rate;
    const RigidTransform curr_true = t_oi * truthPose(scenario, t);
    const RigidTransform true_delta = odometryDelta(prev_true, curr_true);
    const bool degenerate = inAny(scenario.degenerate, t);
    const Vec3 axis_body = prev_true.rotation.conjugate() * axis_odom;

    Vec3 rot_noise;
    Vec3 trans_noise;
    for (int i = 0; i < 3; ++i) rot_noise(i) = scenario.odometry_sigma_rotation * odo_rng.normal();
    for (int i = 0; i < 3; ++i) trans_noise(i) = scenario.odometry_sigma_translation * odo_rng.normal();
    OdometryMeasurement m;
    m.timestamp = t;
    m.delta.rotation = (true_delta.rotation * Eigen::Quaterniond(expSO3(rot_noise))).normalized();
    m.delta.translation = true_delta.translation + trans_noise;
    if (degenerate) {
      m.delta.translation += axis_body * (scenario.drift_per_meter * true_delta.translation.norm());
    }

    const double st = std::max(scenario.odometry_sigma_translation, scenario.sigma_floor);
    const double sr = std::max(scenario.odometry_sigma_rotation, scenario.sigma_floor);
    Eigen::Matrix3d jp = Eigen::Matrix3d::Identity() / st;
    if (degenerate) jp = (Eigen::Matrix3d::Identity() - axis_body * axis_body.transpose()) / st;
    const Eigen::Matrix3d jr = Eigen::Matrix3d::Identity() / sr;
    const RegistrationCovariance cov = registrationCovariance(jp, jr, 1.0, scenario.degenerate_sigma);
    m.covariance.setZero();
    m.covariance.topLeftCorner<3, 3>() = cov.rotation;
    m.covariance.bottomRightCorner<3, 3>() = cov.position;
    m.covariance = 0.5 * (m.covariance + m.covariance.transpose()).eval();
    out.odometry.push_back(m);
    prev_true = curr_true;
  }

  const auto fixes = static_cast<long>(std::floor(duration * scenario.gnss_rate + 1e-9));
  const double sg = std::max(scenario.gnss_sigma, scenario.sigma_floor);
  for (long j = 0; j <= fixes; ++j) {
    const double t = static_cast<double>(j) / scenario.gnss_rate;
    Vec3 noise;
    for (int i = 0; i < 3; ++i) noise(i) = scenario.gnss_sigma * gnss_rng.normal();
    if (inAny(scenario.dropouts, t)) continue;
    PositionMeasurement fix;
    fix.timestamp = t;
    fix.position = truthPose(scenario, t) * scenario.lever_arm + noise;
    fix.covariance = Eigen::Matrix3d::Identity() * sg * sg;
    out.gnss.push_back(fix);
  }
  return out;
}

// ---------------------------------------------------------------------------
// CSV

namespace {

void writeNumber(std::ostream& os, double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  os << ',' << buf;
}

void writePose(std::ostream& os, const RigidTransform& t) {
  for (int i = 0; i < 3; ++i) writeNumber(os, t.translation(i));
  writeNumber(os, t.rotation.w());
  writeNumber(os, t.rotation.x());
  writeNumber(os, t.rotation.y());
  writeNumber(os, t.rotation.z());
}

template <int N>
void writeUpper(std::ostream& os, const Eigen::Matrix<double, N, N>& m) {
  for (int r = 0; r < N; ++r) {
    for (int c = r; c < N; ++c) writeNumber(os, m(r, c));
  }
}

std::vector<double> parseFields(const std::string& line, std::string& type) {
  std::stringstream ss(line);
  std::getline(ss, type, ',');
  std::vector<double> values;
  std::string field;
  while (std::getline(ss, field, ',')) {
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(field, &used);
    } catch (const std::exception&) {
      throw std::runtime_error("malformed number in stream row: " + line);
    }
    if (used != field.size()) throw std::runtime_error("malformed number in stream row: " + line);
    values.push_back(v);
  }
  return values;
}

RigidTransform readPose(const std::vector<double>& v, std::size_t at) {
  RigidTransform t;
  t.translation = Vec3(v[at], v[at + 1], v[at + 2]);
  t.rotation = Eigen::Quaterniond(v[at + 3], v[at + 4], v[at + 5], v[at + 6]).normalized();
  return t;
}

template <int N>
Eigen::Matrix<double, N, N> readUpper(const std::vector<double>& v, std::size_t at) {
  Eigen::Matrix<double, N, N> m;
  for (int r = 0; r < N; ++r) {
    for (int c = r; c < N; ++c) {
      m(r, c) = v[at++];
      m(c, r) = m(r, c);
    }
  }
  return m;
}

}  // namespace

void writeStreamsCsv(std::ostream& os, const MeasurementStreams& streams) {
  os << "type,timestamp,...\n";
  os << "init";
  writeNumber(os, 0.0);
  writePose(os, streams.initial_pose);
  os << '\n';
  std::size_t g = 0;
  auto flush_gnss = [&](double until) {
    for (; g < streams.gnss.size() && streams.gnss[g].timestamp <= until; ++g) {
      os << "gnss";
      writeNumber(os, streams.gnss[g].timestamp);
      for (int i = 0; i < 3; ++i) writeNumber(os, streams.gnss[g].position(i));
      writeUpper<3>(os, streams.gnss[g].covariance);
      os << '\n';
    }
  };
  for (const OdometryMeasurement& m : streams.odometry) {
    flush_gnss(m.timestamp - 1e-12);
    os << "odom";
    writeNumber(os, m.timestamp);
    writePose(os, m.delta);
    writeUpper<6>(os, m.covariance);
    os << '\n';
  }
  flush_gnss(std::numeric_limits<double>::infinity());
}

MeasurementStreams readStreamsCsv(std::istream& is) {
  MeasurementStreams out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty() || line_no == 1) continue;
    std::string type;
    const std::vector<double> v = parseFields(line, type);
    if (type == "init" && v.size() == 8) {
      out.initial_pose = readPose(v, 1);
    } else if (type == "odom" && v.size() == 1 + 7 + 21) {
      OdometryMeasurement m;
      m.timestamp = v[0];
      m.delta = readPose(v, 1);
      m.covariance = readUpper<6>(v, 8);
      out.odometry.push_back(m);
    } else if (type == "gnss" && v.size() == 1 + 3 + 6) {
      PositionMeasurement fix;
      fix.timestamp = v[0];
      fix.position = Vec3(v[1], v[2], v[3]);
      fix.covariance = readUpper<3>(v, 4);
      out.gnss.push_back(fix);
    } else {
      throw std::runtime_error("malformed stream row " + std::to_string(line_no) + ": " + line);
    }
  }
  return out;
}

void writeEstimatesCsv(std::ostream& os, const std::vector<EstimateRecord>& estimates) {
  os << "timestamp,x,y,z,qw,qx,qy,qz,yaw_var_extrinsic\n";
  for (const EstimateRecord& e : estimates) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", e.timestamp);
    os << buf;
    writePose(os, e.pose);
    writeNumber(os, e.yaw_variance);
    os << '\n';
  }
}

// ---------------------------------------------------------------------------
// Driver

namespace {

/// Extrinsic estimate in force at time t: the newest node not after t.
const RigidTransform& extrinsicAt(const FusionGraph& graph, double t) {
  const auto& nodes = graph.extrinsicNodes();
  int chosen = nodes.front();
  for (int id : nodes) {
    if (graph.timestamp(id) <= t + 1e-9) chosen = id;
  }
  return graph.estimate(chosen);
}

EstimateRecord inertialEstimate(const FusionGraph& graph, int state) {
  EstimateRecord r;
  r.timestamp = graph.timestamp(state);
  r.yaw_variance = graph.extrinsicYawVariance();
  const RigidTransform& t_ob = graph.estimate(state);
  r.pose = graph.hasExtrinsic() ? extrinsicAt(graph, r.timestamp).inverse() * t_ob : t_ob;
  return r;
}

}  // namespace

FusionRun runFusion(const FusionScenario& scenario, const MeasurementStreams& streams,
                    const FusionObserver& observer) {
  scenario.validate();
  FusionRun run;
  FusionGraph graph(scenario.params);
  const FusionParams& p = scenario.params;

  Vector6d prior_var = Vector6d::Constant(1e-8);
  graph.initialize(0.0, streams.initial_pose, prior_var.asDiagonal());

  const RigidTransform t_io_true = trueExtrinsic(scenario).inverse();
  RigidTransform dead = streams.initial_pose;
  auto record_dead = [&](double t) {
    run.dead_reckoning.push_back({t, t_io_true * dead, 0.0});
    run.truth.push_back({t, truthPose(scenario, t), 0.0});
  };
  record_dead(0.0);

  std::size_t g = 0;
  double last_opt = -std::numeric_limits<double>::infinity();
  auto ingest_fixes = [&](double t) {
    for (; g < streams.gnss.size() && streams.gnss[g].timestamp <= t + p.attach_tolerance; ++g) {
      graph.addPositionFix(streams.gnss[g], scenario.lever_arm);
    }
  };
  auto step_optimizer = [&](double t) {
    if (t - last_opt < 1.0 / scenario.optimize_rate - 1e-9) return;
    last_opt = t;
    const OptimizationReport rep = graph.optimize();
    if (rep.solver_failure) ++run.solver_failures;
    if (graph.hasExtrinsic()) {
      run.extrinsic_yaw.push_back(graph.estimate(graph.latestExtrinsic()).yaw());
      run.extrinsic_yaw_time.push_back(t);
      if (!run.yaw_observable_time && graph.extrinsicYawVariance() <= p.yaw_variance_threshold) {
        run.yaw_observable_time = t;
      }
    }
    for (int id : graph.takeRetiredStates()) run.smoothed.push_back(inertialEstimate(graph, id));
    if (observer) observer(graph, t);
  };

  ingest_fixes(0.0);
  step_optimizer(0.0);
  run.online.push_back(inertialEstimate(graph, graph.latestState()));

  for (const OdometryMeasurement& m : streams.odometry) {
    graph.addOdometry(m);
    dead = dead * m.delta;
    record_dead(m.timestamp);
    if (graph.hasExtrinsic()) {
      const double since = m.timestamp - graph.timestamp(graph.latestExtrinsic());
      if (since >= p.extrinsic_period - 1e-9) graph.advanceExtrinsic(m.timestamp, p.randomWalkCovariance(since));
    }
    ingest_fixes(m.timestamp);
    step_optimizer(m.timestamp);
    run.max_active_states = std::max(run.max_active_states, graph.activeStateCount());
    run.online.push_back(inertialEstimate(graph, graph.latestState()));
  }
  if (!streams.odometry.empty() && last_opt < streams.odometry.back().timestamp) {
    last_opt = -std::numeric_limits<double>::infinity();
    step_optimizer(streams.odometry.back().timestamp);
  }
  for (int id : graph.stateNodes()) {
    if (graph.active(id)) run.smoothed.push_back(inertialEstimate(graph, id));
  }
  run.dropped_fixes = graph.droppedFixes();
  return run;
}

}  // namespace mdsurvey
