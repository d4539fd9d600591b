// SPDX-License-Identifier: Apache-2.0
// Copyright (c) 2026 The mdsurvey Authors

#include "mdsurvey/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdint>
#include <map>
#include <stdexcept>

namespace mdsurvey {

double percentileNearestRank(std::vector<double> values, double p) {
  if (values.empty()) throw std::invalid_argument("percentile of an empty series");
  if (!(p > 0.0 && p <= 100.0)) throw std::invalid_argument("percentile must be in (0, 100]");
  std::sort(values.begin(), values.end());
  const auto rank = static_cast<std::size_t>(std::ceil(p / 100.0 * static_cast<double>(values.size())));
  return values[std::clamp<std::size_t>(rank, 1, values.size()) - 1];
}

MeanStd meanStd(std::span<const double> values) {
  if (values.empty()) throw std::invalid_argument("statistics of an empty series");
  MeanStd out;
  for (double v : values) out.mean += v;
  out.mean /= static_cast<double>(values.size());
  double ss = 0.0;
  for (double v : values) ss += (v - out.mean) * (v - out.mean);
  out.std = std::sqrt(ss / static_cast<double>(values.size()));
  return out;
}

AlignmentStats alignmentStats(const SurveyLog& log) {
  std::map<CellIndex, double> best;
  for (const TickRecord& tick : log.ticks) {
    for (const CellAlignment& c : tick.cells) {
      auto [it, inserted] = best.try_emplace(c.cell, c.alpha);
      if (!inserted) it->second = std::min(it->second, c.alpha);
    }
  }
  AlignmentStats stats;
  if (best.empty()) {
    stats.diagnostic = "no covered cells";
    return stats;
  }
  std::vector<double> values;
  values.reserve(best.size());
  for (const auto& [cell, alpha] : best) {
    stats.per_cell.emplace_back(cell, alpha);
    values.push_back(alpha);
  }
  stats.covered_cells = values.size();
  stats.mean = meanStd(values).mean;
  stats.max = *std::max_element(values.begin(), values.end());
  stats.p95 = percentileNearestRank(std::move(values), 95.0);
  return stats;
}

AttitudeStats yawPitchStats(const SurveyLog& log) {
  if (log.ticks.size() < 2) throw std::invalid_argument("attitude statistics need at least two ticks");
  AttitudeStats s;
  std::vector<double> yaw_abs;
  std::vector<double> pitch_abs;
  for (const TickRecord& t : log.ticks) {
    const double dy = rad2deg(wrapAngle(t.dyaw));
    const double dp = rad2deg(t.dpitch);
    s.yaw_changes.push_back(dy);
    s.pitch_changes.push_back(dp);
    yaw_abs.push_back(std::abs(dy));
    pitch_abs.push_back(std::abs(dp));
  }
  s.yaw = meanStd(yaw_abs);
  s.pitch = meanStd(pitch_abs);
  s.yaw_signed = meanStd(s.yaw_changes);
  s.pitch_signed = meanStd(s.pitch_changes);
  return s;
}

std::optional<Vec3> interpolatePosition(const std::vector<EstimateRecord>& series, double t) {
  if (series.empty() || t < series.front().timestamp || t > series.back().timestamp) return std::nullopt;
  const auto hi = std::lower_bound(series.begin(), series.end(), t,
                                   [](const EstimateRecord& r, double x) { return r.timestamp < x; });
  if (hi->timestamp == t || hi == series.begin()) return hi->pose.translation;
  const auto lo = hi - 1;
  const double w = (t - lo->timestamp) / (hi->timestamp - lo->timestamp);
  return ((1.0 - w) * lo->pose.translation + w * hi->pose.translation).eval();
}

TrajectoryErrors trajectoryErrors(const std::vector<EstimateRecord>& estimate,
                                  const std::vector<EstimateRecord>& truth) {
  TrajectoryErrors out;
  double ss = 0.0;
  for (const EstimateRecord& e : estimate) {
    const std::optional<Vec3> p = interpolatePosition(truth, e.timestamp);
    if (!p) continue;
    ss += (e.pose.translation - *p).squaredNorm();
    ++out.matched;
  }
  if (out.matched == 0) throw std::invalid_argument("estimate and truth do not overlap in time");
  out.rmse = std::sqrt(ss / static_cast<double>(out.matched));
  out.estimate_closure = (estimate.front().pose.translation - estimate.back().pose.translation).norm();
  out.truth_closure = (truth.front().pose.translation - truth.back().pose.translation).norm();
  out.closure = out.estimate_closure - out.truth_closure;
  return out;
}

double errorJump(const std::vector<EstimateRecord>& estimate, const std::vector<EstimateRecord>& truth,
                 double time) {
  const auto after = std::lower_bound(estimate.begin(), estimate.end(), time,
                                      [](const EstimateRecord& r, double x) { return r.timestamp < x; });
  if (after == estimate.begin() || after == estimate.end()) {
    throw std::invalid_argument("jump time must lie inside the estimate span");
  }
  const auto before = after - 1;
  const auto err = [&](const EstimateRecord& r) -> Vec3 {
    const std::optional<Vec3> p = interpolatePosition(truth, r.timestamp);
    if (!p) throw std::invalid_argument("truth does not cover the jump time");
    return r.pose.translation - *p;
  };
  return (err(*after) - err(*before)).norm();
}

std::size_t DetectionReport::detectedCount() const {
  return static_cast<std::size_t>(
      std::count_if(targets.begin(), targets.end(), [](const TargetDetection& t) { return t.detected; }));
}

DetectionReport detectionReport(const ElevationMap& map, std::span<const Target> targets,
                                const DetectionParams& params) {
  DetectionReport report;
  const int w = map.width();
  const int h = map.height();

  std::vector<double> background;
  for (int row = 0; row < h; ++row) {
    for (int col = 0; col < w; ++col) {
      const CellIndex c{col, row};
      const std::optional<double> mean = map.signalMean(c);
      if (!mean) continue;
      const Vec2 center = map.cellCenter(c);
      const bool far = std::all_of(targets.begin(), targets.end(), [&](const Target& t) {
        return (t.position - center).norm() > params.background_distance;
      });
      if (far) background.push_back(*mean);
    }
  }
  report.background_cells = background.size();
  if (!background.empty()) {
    const MeanStd bg = meanStd(background);
    report.background_mean = bg.mean;
    report.background_std = bg.std;
  }
  report.threshold = params.threshold.value_or(
      std::max(report.background_mean + params.sigma_factor * report.background_std, params.min_threshold));

  // 8-connected flood fill over cells above threshold.
  std::vector<int> label(static_cast<std::size_t>(w) * static_cast<std::size_t>(h), -1);
  const auto above = [&](CellIndex c) {
    const std::optional<double> m = map.signalMean(c);
    return m && *m > report.threshold;
  };
  for (int row = 0; row < h; ++row) {
    for (int col = 0; col < w; ++col) {
      const CellIndex seed{col, row};
      const std::size_t idx = static_cast<std::size_t>(row) * static_cast<std::size_t>(w) + static_cast<std::size_t>(col);
      if (label[idx] >= 0 || !above(seed)) continue;
      const int id = static_cast<int>(report.components.size());
      DetectionComponent comp;
      std::vector<CellIndex> stack{seed};
      label[idx] = id;
      while (!stack.empty()) {
        const CellIndex c = stack.back();
        stack.pop_back();
        comp.cells.push_back(c);
        for (int dr = -1; dr <= 1; ++dr) {
          for (int dc = -1; dc <= 1; ++dc) {
            const CellIndex n{c.col + dc, c.row + dr};
            if (!map.contains(n)) continue;
            const std::size_t ni = static_cast<std::size_t>(n.row) * static_cast<std::size_t>(w) + static_cast<std::size_t>(n.col);
            if (label[ni] >= 0 || !above(n)) continue;
            label[ni] = id;
            stack.push_back(n);
          }
        }
      }
      std::sort(comp.cells.begin(), comp.cells.end());
      double weight = 0.0;
      comp.box_min = Vec2::Constant(std::numeric_limits<double>::infinity());
      comp.box_max = -comp.box_min;
      const Vec2 half = Vec2::Constant(0.5 * map.resolution());
      for (const CellIndex& c : comp.cells) {
        const double s = *map.signalMean(c);
        const Vec2 center = map.cellCenter(c);
        comp.centroid += s * center;
        weight += s;
        comp.peak = std::max(comp.peak, s);
        comp.box_min = comp.box_min.cwiseMin(center - half);
        comp.box_max = comp.box_max.cwiseMax(center + half);
      }
      comp.centroid /= weight;
      report.components.push_back(std::move(comp));
    }
  }

  for (const Target& t : targets) {
    TargetDetection d;
    d.target = t.position;
    for (std::size_t i = 0; i < report.components.size(); ++i) {
      const DetectionComponent& c = report.components[i];
      const bool inside = (t.position.array() >= c.box_min.array()).all() &&
                          (t.position.array() <= c.box_max.array()).all();
      if (!inside) continue;
      const double err = (c.centroid - t.position).norm();
      if (!d.detected || err < d.error) {
        d.detected = true;
        d.component = i;
        d.error = err;
      }
    }
    report.targets.push_back(d);
  }
  return report;
}

CoverageReport coverageReport(const SurveyLog& log, const ElevationMap& reference, const Rect& area,
                              double body_radius, double slope_max) {
  const TraversabilityMask mask = traversableMask(reference, slope_max);
  const ClearanceField clearance(reference, mask);
  std::vector<std::uint8_t> covered(static_cast<std::size_t>(reference.width()) *
                                        static_cast<std::size_t>(reference.height()),
                                    0);
  CoverageReport out;
  for (const TickRecord& tick : log.ticks) {
    for (const CellAlignment& c : tick.cells) {
      if (reference.contains(c.cell)) {
        covered[static_cast<std::size_t>(c.cell.row) * static_cast<std::size_t>(reference.width()) +
                static_cast<std::size_t>(c.cell.col)] = 1;
      }
    }
    const Vec2 xy = tick.command.position.head<2>();
    const double d = reference.cellAt(xy) ? clearance.distance(xy) : 0.0;
    out.min_clearance = std::min(out.min_clearance, d);
    if (d < body_radius) ++out.clearance_violations;
  }
  for (int row = 0; row < reference.height(); ++row) {
    for (int col = 0; col < reference.width(); ++col) {
      const CellIndex c{col, row};
      if (!area.contains(reference.cellCenter(c)) || clearance.distance(c) < body_radius) continue;
      ++out.reachable_cells;
      if (covered[static_cast<std::size_t>(row) * static_cast<std::size_t>(reference.width()) +
                  static_cast<std::size_t>(col)]) {
        ++out.covered_cells;
      }
    }
  }
  out.fraction = out.reachable_cells == 0
                     ? 0.0
                     : static_cast<double>(out.covered_cells) / static_cast<double>(out.reachable_cells);
  return out;
}

SurveyReport makeSurveyReport(const SurveyResult& result) {
  SurveyReport r;
  r.method = std::string(methodName(result.method));
  r.duration = result.log.duration();
  if (result.log.ticks.size() >= 2) r.attitude = yawPitchStats(result.log);
  r.alignment = alignmentStats(result.log);
  r.over_unobserved = result.log.overUnobservedCount();
  r.stalls = result.log.stallCount();
  r.skipped_samples = result.skipped_samples.size();
  r.aborted = result.aborted;
  return r;
}

namespace {

std::string fixed(double v, int digits) {
  if (!std::isfinite(v)) return "nan";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

}  // namespace

void writeSummaryCsv(std::ostream& os, std::span<const SurveyReport> reports) {
  os << "method,duration_s,dyaw_mean_deg,dyaw_std_deg,dpitch_mean_deg,dpitch_std_deg,alpha_min_mean_deg,"
        "alpha_min_p95_deg,over_unobserved,covered_cells,stalls,skipped_samples,aborted\n";
  for (const SurveyReport& r : reports) {
    os << r.method << ',' << fixed(r.duration, 3) << ',' << fixed(r.attitude.yaw.mean, 4) << ','
       << fixed(r.attitude.yaw.std, 4) << ',' << fixed(r.attitude.pitch.mean, 4) << ','
       << fixed(r.attitude.pitch.std, 4) << ',' << fixed(rad2deg(r.alignment.mean), 4) << ','
       << fixed(rad2deg(r.alignment.p95), 4) << ',' << r.over_unobserved << ',' << r.alignment.covered_cells << ','
       << r.stalls << ',' << r.skipped_samples << ',' << (r.aborted ? 1 : 0) << '\n';
  }
}

nlohmann::json toJson(const SurveyReport& r) {
  nlohmann::json j;
  j["method"] = r.method;
  j["duration_s"] = r.duration;
  j["dyaw_deg"] = {{"mean", r.attitude.yaw.mean}, {"std", r.attitude.yaw.std}};
  j["dpitch_deg"] = {{"mean", r.attitude.pitch.mean}, {"std", r.attitude.pitch.std}};
  j["dyaw_signed_deg"] = {{"mean", r.attitude.yaw_signed.mean}, {"std", r.attitude.yaw_signed.std}};
  j["dpitch_signed_deg"] = {{"mean", r.attitude.pitch_signed.mean}, {"std", r.attitude.pitch_signed.std}};
  j["dyaw_per_tick_deg"] = r.attitude.yaw_changes;
  j["dpitch_per_tick_deg"] = r.attitude.pitch_changes;
  j["alpha_min_mean_deg"] = r.alignment.empty() ? nlohmann::json(nullptr) : nlohmann::json(rad2deg(r.alignment.mean));
  j["alpha_min_p95_deg"] = r.alignment.empty() ? nlohmann::json(nullptr) : nlohmann::json(rad2deg(r.alignment.p95));
  nlohmann::json cells = nlohmann::json::array();
  for (const auto& [cell, alpha] : r.alignment.per_cell) cells.push_back({cell.col, cell.row, rad2deg(alpha)});
  j["alpha_min_per_cell_deg"] = std::move(cells);
  j["covered_cells"] = r.alignment.covered_cells;
  if (!r.alignment.diagnostic.empty()) j["diagnostic"] = r.alignment.diagnostic;
  j["over_unobserved"] = r.over_unobserved;
  j["stalls"] = r.stalls;
  j["skipped_samples"] = r.skipped_samples;
  j["aborted"] = r.aborted;
  return j;
}

nlohmann::json toJson(const DetectionReport& r) {
  nlohmann::json j;
  j["threshold"] = r.threshold;
  j["background"] = {{"mean", r.background_mean}, {"std", r.background_std}, {"cells", r.background_cells}};
  nlohmann::json comps = nlohmann::json::array();
  for (const DetectionComponent& c : r.components) {
    comps.push_back({{"cells", c.cells.size()},
                     {"centroid", {c.centroid.x(), c.centroid.y()}},
                     {"box_min", {c.box_min.x(), c.box_min.y()}},
                     {"box_max", {c.box_max.x(), c.box_max.y()}},
                     {"peak", c.peak}});
  }
  j["components"] = std::move(comps);
  nlohmann::json targets = nlohmann::json::array();
  for (const TargetDetection& t : r.targets) {
    nlohmann::json tj = {{"position", {t.target.x(), t.target.y()}}, {"detected", t.detected}};
    if (t.detected) {
      tj["component"] = *t.component;
      tj["error_m"] = t.error;
    }
    targets.push_back(std::move(tj));
  }
  j["targets"] = std::move(targets);
  j["detected"] = r.detectedCount();
  return j;
}

nlohmann::json toJson(const TrajectoryErrors& e) {
  return {{"rmse_m", e.rmse},
          {"closure_m", e.closure},
          {"estimate_closure_m", e.estimate_closure},
          {"truth_closure_m", e.truth_closure},
          {"matched", e.matched}};
}

}  // namespace mdsurvey
