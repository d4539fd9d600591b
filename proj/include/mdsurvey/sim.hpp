// SPDX-License-Identifier: Apache-2.0
// Copyright (c) 2026 The mdsurvey Authors

#pragma once

#include <cstdint>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mdsurvey/coverage.hpp"
#include "mdsurvey/gridmap.hpp"
#include "mdsurvey/planner.hpp"
#include "mdsurvey/terrain.hpp"
#include "mdsurvey/vehicle.hpp"

namespace mdsurvey {

/// Spinning LiDAR mounted on the body; the rear sector is blocked by the frame.
struct LidarSpec {
  double vertical_fov = deg2rad(90.0);
  double range = 6.0;                         ///< [m]
  double rear_occlusion = deg2rad(180.0);     ///< full width of the blocked sector behind the sensor
  double azimuth_resolution = deg2rad(2.0);
  double elevation_resolution = deg2rad(1.0);
  double march_step = 0.05;                   ///< ray-march step [m]
  Vec3 mount = Vec3(-0.3, 0.0, 0.45);         ///< sensor origin in the body frame [m]

  void validate() const;
};

struct VehicleLimits {
  double v_max = 1.0;              ///< [m/s]
  double omega_max = deg2rad(60);  ///< [rad/s]
};

struct Target {
  Vec2 position = Vec2::Zero();
  double depth = 0.05;    ///< burial depth [m]
  double strength = 1.0;
};

/// Empirical coil response: Gaussian in offset and gap, cosine in misalignment.
struct DetectorModel {
  double sigma_r = 0.1;  ///< [m]
  double sigma_g = 0.1;  ///< [m]
  double standoff = 0.15;
  Ellipse coil;
};

/// First-hit points of all rays that reach the truth surface within range.
std::vector<Vec3> lidarScan(const TruthTerrain& truth, const VehicleState& pose, const LidarSpec& spec);

struct VehicleStep {
  VehicleState state;
  double dt = 0.0;
};

/// Kinematic step: the pose follows the command, dt = max(|dp| / v_max, |dyaw| / omega_max).
VehicleStep stepVehicle(const VehicleState& state, const PoseCommand& command, const VehicleLimits& limits);

/// Coil response in [0, 1] at `pose` (coil center and attitude).
double detectorSample(const TruthTerrain& truth, std::span<const Target> targets,
                      const DetectorPose& pose, const DetectorModel& model);

enum class SurveyMethod { kProposed, kAligned1, kAligned6, kFixedAttitude };

std::string_view methodName(SurveyMethod method);
/// Accepts `proposed`, `aligned1`, `aligned6`, `fixed_attitude`; throws std::invalid_argument otherwise.
SurveyMethod parseMethod(std::string_view name);
inline constexpr SurveyMethod kAllMethods[] = {SurveyMethod::kProposed, SurveyMethod::kAligned1,
                                               SurveyMethod::kAligned6, SurveyMethod::kFixedAttitude};

struct SurveyScenario {
  std::string name = "survey";
  Rect area{Vec2(0.0, 0.0), Vec2(12.0, 5.0)};
  double margin = 1.0;            ///< map extends this far beyond the area [m]
  double map_resolution = 0.1;
  double lane_spacing = 0.2;
  LaneAxis lane_axis = LaneAxis::kLongSide;
  TerrainSpec terrain;
  std::vector<Target> targets;
  PlannerParams planner;
  VehicleLimits limits;
  LidarSpec lidar;
  DetectorModel detector;
  double detector_step = 0.05;     ///< detector sampling interval along a motion [m]
  double stall_timeout = 1.0;      ///< hover time charged per planner stall [s]
  int max_consecutive_stalls = 8;
  double landing_radius = 1.0;     ///< known surroundings of the takeoff site [m]
  std::vector<double> takeoff_heights{0.0, 0.5, 1.0, 2.0};

  Rect mapRegion() const;
  void validate() const;
};

struct CellAlignment {
  CellIndex cell;
  double alpha = 0.0;  ///< alignment error vs the truth normal [rad]
};

struct TickRecord {
  double time = 0.0;   ///< elapsed time after the tick [s]
  double dt = 0.0;
  PoseCommand command;
  VehicleState realized;
  double cost = 0.0;   ///< planner yaw cost of the committed path [rad]
  double dyaw = 0.0;   ///< wrapped yaw change of this tick [rad]
  double dpitch = 0.0;
  double signal = 0.0; ///< peak detector response during the tick
  std::vector<CellAlignment> cells;
  std::optional<std::size_t> sample_index;
  bool preferred = false;
  bool shifted = false;
  bool stalled = false;
  bool over_unobserved = false;
};

struct SurveyLog {
  std::vector<TickRecord> ticks;

  double duration() const { return ticks.empty() ? 0.0 : ticks.back().time; }
  std::size_t overUnobservedCount() const;
  std::size_t stallCount() const;
};

struct SurveyResult {
  SurveyMethod method = SurveyMethod::kProposed;
  SurveyLog log;
  ElevationMap map;
  std::vector<std::size_t> skipped_samples;
  bool aborted = false;
};

/// Deterministic truth field for the scenario (covers the map region).
TruthTerrain scenarioTruth(const SurveyScenario& scenario, std::uint64_t seed);

/// Fully observed map sampled from the truth at cell centers.
ElevationMap truthMap(const TruthTerrain& truth, const SurveyScenario& scenario);

CoveragePath scenarioPath(const SurveyScenario& scenario);

/// Closed-loop survey: scan, map, command, step, sense.
SurveyResult runSurvey(const SurveyScenario& scenario, const TruthTerrain& truth, SurveyMethod method);

/// CSV with the planner-trace columns plus time, over_unobserved, cells and signal.
void writeSurveyCsv(std::ostream& os, const SurveyLog& log);

}  // namespace mdsurvey
