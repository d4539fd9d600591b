// SPDX-License-Identifier: Apache-2.0
// Copyright (c) 2026 The mdsurvey Authors

#include "mdsurvey/sim.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "mdsurvey/alignment.hpp"

namespace mdsurvey {

void LidarSpec::validate() const {
  if (!(vertical_fov > 0.0) || vertical_fov > kPi || !(azimuth_resolution > 0.0) || !(elevation_resolution > 0.0) ||
      !(march_step > 0.0) || range < 0.0 || rear_occlusion < 0.0 || rear_occlusion > 2.0 * kPi ||
      !mount.allFinite()) {
    throw std::invalid_argument("LidarSpec: invalid sensor parameters");
  }
}

std::vector<Vec3> lidarScan(const TruthTerrain& truth, const VehicleState& pose, const LidarSpec& spec) {
  spec.validate();
  std::vector<Vec3> points;
  if (!(spec.range > 0.0) || !pose.position.allFinite()) return points;
  const Eigen::Matrix3d rotation = yawPitchRotation({pose.yaw, pose.pitch});
  const Vec3 origin = pose.position + rotation * spec.mount;
  if (!truth.inside(origin.head<2>()) || origin.z() <= truth.height(origin.head<2>())) return points;

  const int n_az = std::max(1, static_cast<int>(std::lround(2.0 * kPi / spec.azimuth_resolution)));
  const int n_el = static_cast<int>(std::floor(spec.vertical_fov / spec.elevation_resolution + 1e-9)) + 1;
  const double el0 = -0.5 * spec.vertical_fov;
  const double top = truth.maxHeight();
  const double step = spec.march_step;

  auto gap = [&](double t, const Vec3& dir) {
    const Vec3 p = origin + t * dir;
    return p.z() - truth.height(p.head<2>());
  };

  for (int a = 0; a < n_az; ++a) {
    const double az = -kPi + a * (2.0 * kPi / n_az);
    if (std::abs(wrapAngle(az - kPi)) < 0.5 * spec.rear_occlusion) continue;
    for (int e = 0; e < n_el; ++e) {
      const double el = el0 + e * spec.elevation_resolution;
      const Vec3 dir = rotation * Vec3(std::cos(el) * std::cos(az), std::cos(el) * std::sin(az), std::sin(el));
      // no crossing is possible within gap / closing_rate, so larger steps are exact
      const double closing_rate = std::max(0.0, -dir.z()) + truth.maxGradient() * dir.head<2>().norm();
      double t_prev = 0.0;
      double f = origin.z() - truth.height(origin.head<2>());
      for (;;) {
        double advance = step;
        if (closing_rate > 0.0) advance = std::max(step, f / closing_rate);
        const double tt = std::min(t_prev + advance, spec.range);
        const Vec3 p = origin + tt * dir;
        if (!truth.inside(p.head<2>())) break;
        f = p.z() - truth.height(p.head<2>());
        if (f <= 0.0) {
          double lo = t_prev;
          double hi = tt;
          while (hi - lo > 1e-7) {
            const double mid = 0.5 * (lo + hi);
            if (gap(mid, dir) <= 0.0) {
              hi = mid;
            } else {
              lo = mid;
            }
          }
          points.push_back(origin + hi * dir);
          break;
        }
        if (tt >= spec.range) break;
        if (dir.z() >= 0.0 && p.z() > top) break;
        if (closing_rate == 0.0 && dir.z() >= 0.0) break;
        t_prev = tt;
      }
    }
  }
  return points;
}

VehicleStep stepVehicle(const VehicleState& state, const PoseCommand& command, const VehicleLimits& limits) {
  if (!(limits.v_max > 0.0) || !(limits.omega_max > 0.0)) {
    throw std::invalid_argument("stepVehicle: limits must be positive");
  }
  if (!(std::abs(command.pitch) < kPi / 2.0) || !command.position.allFinite()) {
    throw std::invalid_argument("stepVehicle: command pitch must lie in (-pi/2, pi/2)");
  }
  const double translation = (command.position - state.position).norm();
  const double rotation = std::abs(wrapAngle(command.yaw - state.yaw));
  VehicleStep out;
  out.dt = std::max(translation / limits.v_max, rotation / limits.omega_max);
  out.state.position = command.position;
  out.state.yaw = wrapAngle(command.yaw);
  out.state.pitch = command.pitch;
  out.state.elapsed = state.elapsed + out.dt;
  return out;
}

double detectorSample(const TruthTerrain& truth, std::span<const Target> targets,
                      const DetectorPose& pose, const DetectorModel& model) {
  const Vec2 xy = pose.position.head<2>();
  const double gap = pose.position.z() - truth.height(xy);
  const AttitudeYP att{pose.yaw, pose.pitch};
  double signal = 0.0;
  for (const Target& t : targets) {
    const double r = (xy - t.position).norm();
    const double g = std::max(0.0, gap - model.standoff) + t.depth;
    const double alpha = alignmentError(truth.normal(t.position, truth.resolution()), att);
    const double cos_plus = std::max(0.0, std::cos(alpha));
    signal += t.strength * std::exp(-r * r / (2.0 * model.sigma_r * model.sigma_r)) *
              std::exp(-g * g / (2.0 * model.sigma_g * model.sigma_g)) * cos_plus;
  }
  return std::clamp(signal, 0.0, 1.0);
}

std::string_view methodName(SurveyMethod method) {
  switch (method) {
    case SurveyMethod::kProposed:
      return "proposed";
    case SurveyMethod::kAligned1:
      return "aligned1";
    case SurveyMethod::kAligned6:
      return "aligned6";
    case SurveyMethod::kFixedAttitude:
      return "fixed_attitude";
  }
  return "unknown";
}

SurveyMethod parseMethod(std::string_view name) {
  for (SurveyMethod m : kAllMethods) {
    if (methodName(m) == name) return m;
  }
  throw std::invalid_argument("unknown survey method: " + std::string(name));
}

Rect SurveyScenario::mapRegion() const {
  return Rect{area.min - Vec2::Constant(margin), area.max + Vec2::Constant(margin)};
}

void SurveyScenario::validate() const {
  const Vec2 size = area.size();
  if (!(size.x() > 0.0) || !(size.y() > 0.0) || !size.allFinite()) {
    throw std::invalid_argument("scenario: area must be a non-empty rectangle");
  }
  if (margin < 0.0 || !(map_resolution > 0.0) || !(lane_spacing > 0.0) || !(detector_step > 0.0) ||
      stall_timeout < 0.0 || max_consecutive_stalls < 1 || landing_radius < 0.0) {
    throw std::invalid_argument("scenario: invalid survey settings");
  }
  if (!(detector.sigma_r > 0.0) || !(detector.sigma_g > 0.0) || !(detector.standoff > 0.0)) {
    throw std::invalid_argument("scenario: invalid detector model");
  }
  if (!(limits.v_max > 0.0) || !(limits.omega_max > 0.0)) {
    throw std::invalid_argument("scenario: limits must be positive");
  }
  for (const Target& t : targets) {
    if (!area.contains(t.position)) throw std::invalid_argument("scenario: target outside the area");
    if (t.depth < 0.0 || t.strength < 0.0) throw std::invalid_argument("scenario: invalid target");
  }
  planner.validate();
  lidar.validate();
  terrain.validate();
}

std::size_t SurveyLog::overUnobservedCount() const {
  return static_cast<std::size_t>(
      std::count_if(ticks.begin(), ticks.end(), [](const TickRecord& t) { return t.over_unobserved; }));
}

std::size_t SurveyLog::stallCount() const {
  return static_cast<std::size_t>(
      std::count_if(ticks.begin(), ticks.end(), [](const TickRecord& t) { return t.stalled; }));
}

TruthTerrain scenarioTruth(const SurveyScenario& scenario, std::uint64_t seed) {
  const Rect region = scenario.mapRegion();
  // one extra truth cell keeps bilinear lookups at the map border inside the grid
  const Vec2 pad = Vec2::Constant(scenario.terrain.resolution);
  return generateTerrain(scenario.terrain, Rect{region.min - pad, region.max + pad},
                         deriveSeed(seed, "terrain"));
}

namespace {

ElevationMap emptyMap(const SurveyScenario& scenario) {
  const Rect region = scenario.mapRegion();
  return ElevationMap(region.min, region.size(), scenario.map_resolution);
}

}  // namespace

ElevationMap truthMap(const TruthTerrain& truth, const SurveyScenario& scenario) {
  ElevationMap map = emptyMap(scenario);
  for (int r = 0; r < map.height(); ++r) {
    for (int c = 0; c < map.width(); ++c) {
      map.setElevation({c, r}, truth.height(map.cellCenter({c, r})));
    }
  }
  return map;
}

CoveragePath scenarioPath(const SurveyScenario& scenario) {
  return boustrophedon(scenario.area, scenario.lane_spacing, scenario.planner.sample_spacing,
                       scenario.lane_axis);
}

namespace {

/// Shared closed-loop machinery for all methods.
class SurveyRunner {
 public:
  SurveyRunner(const SurveyScenario& scenario, const TruthTerrain& truth, SurveyMethod method)
      : sc_(scenario), truth_(truth), path_(scenarioPath(scenario)), map_(emptyMap(scenario)), method_(method) {
  }

  SurveyResult run() {
    takeoff();
    switch (method_) {
      case SurveyMethod::kProposed:
        runProposed();
        break;
      case SurveyMethod::kAligned1:
        runBaseline(1);
        break;
      case SurveyMethod::kAligned6:
        runBaseline(6);
        break;
      case SurveyMethod::kFixedAttitude:
        runBaseline(0);
        break;
    }
    return SurveyResult{method_, std::move(log_), std::move(map_), std::move(skipped_), aborted_};
  }

 private:
  void scan() {
    const auto points = lidarScan(truth_, state_, sc_.lidar);
    map_.integratePoints(points);
  }

  void takeoff() {
    const Vec2 start = path_[0].position;
    const double res = map_.resolution();
    for (int r = 0; r < map_.height(); ++r) {
      for (int c = 0; c < map_.width(); ++c) {
        const Vec2 center = map_.cellCenter({c, r});
        if ((center - start).norm() <= sc_.landing_radius + 0.5 * res) {
          map_.setElevation({c, r}, truth_.height(center));
        }
      }
    }
    state_.position = Vec3(start.x(), start.y(), truth_.height(start) + sc_.detector.standoff);
    state_.yaw = headingOf(path_[0].lane_dir);
    state_.pitch = 0.0;
    const VehicleState ground = state_;
    for (double h : sc_.takeoff_heights) {
      for (int k = 0; k < 4; ++k) {
        state_ = ground;
        state_.position.z() += h;
        state_.yaw = wrapAngle(ground.yaw + k * kPi / 2.0);
        scan();
      }
    }
    state_ = ground;
  }

  /// Moves to `command`, senses along the way and appends a tick record.
  TickRecord& execute(const PoseCommand& command, bool sense = true) {
    const VehicleState from = state_;
    const VehicleStep step = stepVehicle(state_, command, sc_.limits);
    TickRecord rec;
    rec.command = command;
    rec.dt = step.dt;
    rec.realized = step.state;
    rec.time = step.state.elapsed;
    rec.dyaw = wrapAngle(step.state.yaw - from.yaw);
    rec.dpitch = step.state.pitch - from.pitch;
    state_ = step.state;
    if (sense) senseAlong(from, state_, rec);
    if (step.dt > 0.0) {
      log_.ticks.push_back(std::move(rec));
    } else {
      scratch_ = std::move(rec);
      return scratch_;
    }
    return log_.ticks.back();
  }

  void senseAlong(const VehicleState& from, const VehicleState& to, TickRecord& rec) {
    const double length = (to.position - from.position).norm();
    const int n = std::max(1, static_cast<int>(std::ceil(length / sc_.detector_step - 1e-9)));
    const double turn = wrapAngle(to.yaw - from.yaw);
    const double res = map_.resolution();
    for (int s = 1; s <= n; ++s) {
      const double f = static_cast<double>(s) / n;
      DetectorPose pose;
      pose.position = from.position + f * (to.position - from.position);
      pose.yaw = wrapAngle(from.yaw + f * turn);
      pose.pitch = from.pitch + f * (to.pitch - from.pitch);
      const auto cells = raytraceFootprint(map_, pose, sc_.detector.coil);
      const double signal = detectorSample(truth_, sc_.targets, pose, sc_.detector);
      map_.accumulateSignal(cells, signal);
      rec.signal = std::max(rec.signal, signal);
      for (const CellIndex& c : cells) {
        const Vec3 n_truth = truth_.normal(map_.cellCenter(c), res);
        rec.cells.push_back({c, alignmentError(n_truth, {pose.yaw, pose.pitch})});
      }
    }
  }

  bool observedAt(const Vec2& xy) const {
    const auto cell = map_.cellAt(xy);
    return cell && map_.observed(*cell);
  }

  void runProposed() {
    YawLatticePlanner planner(path_, sc_.planner, 1);
    int consecutive = 0;
    for (;;) {
      scan();
      const TerrainSnapshot terrain = TerrainSnapshot::capture(map_, sc_.planner.slope_max);
      std::optional<PlanStep> step;
      try {
        step = planner.tick(state_, terrain);
      } catch (const PlannerStall&) {
        ++consecutive;
        if (consecutive == 1) {
          // first attempt: re-plan at once and let the vehicle turn in place
          planner.recover();
          continue;
        }
        if (consecutive > sc_.max_consecutive_stalls) {
          aborted_ = true;
          break;
        }
        hold(sc_.stall_timeout);
        const double yaw0 = state_.yaw;
        for (int k = 1; k <= 3; ++k) {
          PoseCommand turn{state_.position, wrapAngle(yaw0 + k * kPi / 2.0), state_.pitch};
          execute(turn).stalled = true;
          scan();
        }
        planner.recover();
        continue;
      }
      if (!step) break;
      consecutive = 0;
      const bool unobserved = !observedAt(step->command.position.head<2>());
      TickRecord& rec = execute(step->command);
      rec.cost = step->cost;
      rec.sample_index = step->sample_index;
      rec.preferred = step->preferred;
      rec.shifted = step->shifted;
      rec.over_unobserved = unobserved;
    }
    skipped_ = planner.skippedSamples();
  }

  void hold(double seconds) {
    if (!(seconds > 0.0)) return;
    TickRecord rec;
    rec.command = {state_.position, state_.yaw, state_.pitch};
    rec.dt = seconds;
    state_.elapsed += seconds;
    rec.realized = state_;
    rec.time = state_.elapsed;
    rec.stalled = true;
    log_.ticks.push_back(std::move(rec));
  }

  /// Optimistic terrain view: unobserved cells do not count as obstacles.
  TerrainSnapshot optimisticSnapshot() const {
    const TraversabilityMask strict = traversableMask(map_, sc_.planner.slope_max);
    std::vector<std::uint8_t> cells(static_cast<std::size_t>(map_.width()) * map_.height());
    for (int r = 0; r < map_.height(); ++r) {
      for (int c = 0; c < map_.width(); ++c) {
        cells[static_cast<std::size_t>(r) * map_.width() + c] =
            (!map_.observed({c, r}) || strict.traversable({c, r})) ? 1 : 0;
      }
    }
    TraversabilityMask mask(map_.width(), map_.height(), std::move(cells));
    ClearanceField clearance(map_, mask);
    return TerrainSnapshot{map_, std::move(mask), std::move(clearance)};
  }

  std::optional<Vec3> normalAt(const Vec2& xy) const {
    const auto cell = map_.cellAt(xy);
    if (!cell) return std::nullopt;
    const auto n = map_.surfaceNormal(*cell);
    if (!n || n->z() <= 0.0) return std::nullopt;
    return n;
  }

  /// Orientation minimizing the summed residual alignment over the next `window` samples.
  double alignedYaw(std::size_t index, int window) const {
    std::vector<Vec3> normals;
    for (std::size_t j = index; j < path_.size() && j < index + static_cast<std::size_t>(window); ++j) {
      if (auto n = normalAt(path_[j].position)) normals.push_back(*n);
    }
    std::vector<double> candidates{state_.yaw};
    for (const Vec3& n : normals) {
      if (n.head<2>().norm() < 1e-9) continue;
      const double fall = std::atan2(n.y(), n.x());
      candidates.push_back(wrapAngle(fall));
      candidates.push_back(wrapAngle(fall + kPi));
    }
    std::vector<double> scores;
    double best = std::numeric_limits<double>::infinity();
    for (double yaw : candidates) {
      double s = 0.0;
      for (const Vec3& n : normals) s += residualAlignment(n, yaw);
      scores.push_back(s);
      best = std::min(best, s);
    }
    const double tolerance = window * 1e-3;
    double chosen = state_.yaw;
    double chosen_turn = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < candidates.size(); ++i) {
      if (scores[i] > best + tolerance) continue;
      const double turn = std::abs(wrapAngle(candidates[i] - state_.yaw));
      if (turn < chosen_turn) {
        chosen_turn = turn;
        chosen = candidates[i];
      }
    }
    return chosen;
  }

  /// Aligned-k for window > 0, fixed attitude for window == 0.
  void runBaseline(int window) {
    const double d = sc_.detector.standoff;
    for (std::size_t i = 1; i < path_.size(); ++i) {
      scan();
      const PathSample& sample = path_[i];
      Vec2 xy = sample.position;
      bool shifted = false;
      if (observedAt(xy)) {
        const TerrainSnapshot terrain = optimisticSnapshot();
        const Avoidance avoid = avoidObstacle(terrain, xy, sample.lane_dir, sc_.planner);
        if (!avoid.position) {
          skipped_.push_back(i);
          continue;
        }
        xy = *avoid.position;
        shifted = avoid.offset_steps != 0;
      }
      PoseCommand cmd{Vec3(xy.x(), xy.y(), state_.position.z()), state_.yaw, state_.pitch};
      const bool unobserved = !observedAt(xy);
      const auto z = map_.elevationAt(xy);
      if (window == 0) {
        cmd.yaw = 0.0;
        cmd.pitch = 0.0;
        if (z) cmd.position.z() = *z + d;
      } else if (const auto n = normalAt(xy); n && z) {
        cmd.yaw = alignedYaw(i, window);
        cmd.pitch = optimalPitch(*n, cmd.yaw);
        cmd.position = Vec3(xy.x(), xy.y(), *z) + d * *n;
      } else if (z) {
        cmd.position.z() = *z + d;
      }
      TickRecord& rec = execute(cmd);
      rec.sample_index = i;
      rec.shifted = shifted;
      rec.over_unobserved = unobserved;
    }
  }

  const SurveyScenario& sc_;
  const TruthTerrain& truth_;
  CoveragePath path_;
  ElevationMap map_;
  VehicleState state_;
  SurveyMethod method_;
  SurveyLog log_;
  std::vector<std::size_t> skipped_;
  bool aborted_ = false;
  TickRecord scratch_;
};

}  // namespace

SurveyResult runSurvey(const SurveyScenario& scenario, const TruthTerrain& truth, SurveyMethod method) {
  scenario.validate();
  SurveyRunner runner(scenario, truth, method);
  return runner.run();
}

void writeSurveyCsv(std::ostream& os, const SurveyLog& log) {
  os << "tick,time,x,y,z,yaw_deg,pitch_deg,cost_deg,preferred,shifted,stalled,over_unobserved,cells,signal\n";
  const auto precision = os.precision(10);
  for (std::size_t i = 0; i < log.ticks.size(); ++i) {
    const TickRecord& t = log.ticks[i];
    os << i << ',' << t.time << ',' << t.realized.position.x() << ',' << t.realized.position.y() << ','
       << t.realized.position.z() << ',' << rad2deg(t.realized.yaw) << ',' << rad2deg(t.realized.pitch)
       << ',' << rad2deg(t.cost) << ',' << t.preferred << ',' << t.shifted << ',' << t.stalled << ','
       << t.over_unobserved << ',' << t.cells.size() << ',' << t.signal << '\n';
  }
  os.precision(precision);
}

}  // namespace mdsurvey
