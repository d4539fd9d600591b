// SPDX-License-Identifier: Apache-2.0
// Copyright (c) 2026 The mdsurvey Authors

#pragma once

#include <cstddef>
#include <limits>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "mdsurvey/fusion.hpp"
#include "mdsurvey/gridmap.hpp"
#include "mdsurvey/sim.hpp"

namespace mdsurvey {

/// Nearest-rank percentile, p in (0, 100]. Throws on empty input.
double percentileNearestRank(std::vector<double> values, double p);

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;  ///< population standard deviation
};

/// Two-pass mean and population standard deviation. Throws on empty input.
MeanStd meanStd(std::span<const double> values);

struct AlignmentStats {
  std::size_t covered_cells = 0;
  double mean = std::numeric_limits<double>::quiet_NaN();  ///< [rad]
  double p95 = std::numeric_limits<double>::quiet_NaN();   ///< [rad]
  double max = std::numeric_limits<double>::quiet_NaN();   ///< [rad]
  std::vector<std::pair<CellIndex, double>> per_cell;      ///< best alignment per cell, sorted by cell
  std::string diagnostic;                                  ///< set when nothing was covered

  bool empty() const { return covered_cells == 0; }
};

/// Best (minimum) alignment error per covered cell over all ticks.
AlignmentStats alignmentStats(const SurveyLog& log);

struct AttitudeStats {
  MeanStd yaw;          ///< |wrapped per-tick yaw change| [deg]
  MeanStd pitch;        ///< |per-tick pitch change| [deg]
  MeanStd yaw_signed;   ///< [deg]
  MeanStd pitch_signed; ///< [deg]
  std::vector<double> yaw_changes;   ///< signed, per tick [deg]
  std::vector<double> pitch_changes; ///< signed, per tick [deg]
};

/// Per-tick attitude change statistics. Throws std::invalid_argument for fewer than two ticks.
AttitudeStats yawPitchStats(const SurveyLog& log);

struct TrajectoryErrors {
  double rmse = 0.0;              ///< [m]
  double closure = 0.0;           ///< estimate closure minus truth closure [m]
  double estimate_closure = 0.0;  ///< |first - last| of the estimate [m]
  double truth_closure = 0.0;
  std::size_t matched = 0;
};

/// Position truth at time t by linear interpolation; nothing outside the truth span.
std::optional<Vec3> interpolatePosition(const std::vector<EstimateRecord>& series, double t);

/// RMSE over estimate timestamps inside the truth span. Throws std::invalid_argument if none overlap.
TrajectoryErrors trajectoryErrors(const std::vector<EstimateRecord>& estimate,
                                  const std::vector<EstimateRecord>& truth);

/// Change of the position error across `time`: first estimate at or after it
/// against the last estimate before it.
double errorJump(const std::vector<EstimateRecord>& estimate, const std::vector<EstimateRecord>& truth,
                 double time);

struct DetectionParams {
  double background_distance = 0.5;  ///< cells farther than this from every target [m]
  double sigma_factor = 5.0;
  double min_threshold = 1e-3;
  std::optional<double> threshold;   ///< overrides the background rule
};

struct DetectionComponent {
  std::vector<CellIndex> cells;
  Vec2 centroid = Vec2::Zero();  ///< signal-weighted [m]
  Vec2 box_min = Vec2::Zero();
  Vec2 box_max = Vec2::Zero();
  double peak = 0.0;
};

struct TargetDetection {
  Vec2 target = Vec2::Zero();
  bool detected = false;
  std::optional<std::size_t> component;
  double error = std::numeric_limits<double>::quiet_NaN();  ///< to the component centroid [m]
};

struct DetectionReport {
  double threshold = 0.0;
  double background_mean = 0.0;
  double background_std = 0.0;
  std::size_t background_cells = 0;
  std::vector<DetectionComponent> components;
  std::vector<TargetDetection> targets;

  std::size_t detectedCount() const;
};

/// Thresholds the mean-signal layer and groups cells into 8-connected components.
DetectionReport detectionReport(const ElevationMap& map, std::span<const Target> targets,
                                const DetectionParams& params = {});

struct CoverageReport {
  std::size_t reachable_cells = 0;
  std::size_t covered_cells = 0;   ///< reachable cells inside some footprint
  double fraction = 0.0;
  std::size_t clearance_violations = 0;  ///< commanded poses closer than body_radius to a blocked cell
  double min_clearance = std::numeric_limits<double>::infinity();  ///< over commanded poses [m]
};

/**
 * Coverage of the survey area against a reference map. A cell is reachable
 * when its center lies in `area` and at least `body_radius` from every
 * non-traversable cell of `reference`.
 */
CoverageReport coverageReport(const SurveyLog& log, const ElevationMap& reference, const Rect& area,
                              double body_radius, double slope_max);

struct SurveyReport {
  std::string method;
  double duration = 0.0;
  AttitudeStats attitude;
  AlignmentStats alignment;
  std::size_t over_unobserved = 0;
  std::size_t stalls = 0;
  std::size_t skipped_samples = 0;
  bool aborted = false;
};

SurveyReport makeSurveyReport(const SurveyResult& result);

/// One row per method: duration, yaw and pitch change statistics, alignment mean and 95th percentile, then extras.
void writeSummaryCsv(std::ostream& os, std::span<const SurveyReport> reports);

nlohmann::json toJson(const SurveyReport& report);
nlohmann::json toJson(const DetectionReport& report);
nlohmann::json toJson(const TrajectoryErrors& errors);

}  // namespace mdsurvey
