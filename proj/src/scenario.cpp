// SPDX-License-Identifier: Apache-2.0
// Copyright (c) 2026 The mdsurvey Authors

#include "mdsurvey/scenario.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <initializer_list>
#include <string_view>

namespace mdsurvey {

namespace {

using nlohmann::json;

void requireObject(const json& j, std::string_view where, std::initializer_list<std::string_view> allowed) {
  if (!j.is_object()) throw ScenarioError(std::string(where) + ": expected an object");
  for (const auto& [key, value] : j.items()) {
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
      throw ScenarioError(std::string(where) + ": unknown key '" + key + "'");
    }
  }
}

double number(const json& j, std::string_view where) {
  if (!j.is_number()) throw ScenarioError(std::string(where) + ": expected a number");
  return j.get<double>();
}

void readNumber(const json& j, const char* key, double& out) {
  if (j.contains(key)) out = number(j.at(key), key);
}

void readAngle(const json& j, const char* key, double& out) {
  if (j.contains(key)) out = deg2rad(number(j.at(key), key));
}

void readInt(const json& j, const char* key, int& out) {
  if (!j.contains(key)) return;
  if (!j.at(key).is_number_integer()) throw ScenarioError(std::string(key) + ": expected an integer");
  out = j.at(key).get<int>();
}

Vec2 vec2(const json& j, std::string_view where) {
  if (!j.is_array() || j.size() != 2) throw ScenarioError(std::string(where) + ": expected [x, y]");
  return {number(j[0], where), number(j[1], where)};
}

Vec3 vec3(const json& j, std::string_view where) {
  if (!j.is_array() || j.size() != 3) throw ScenarioError(std::string(where) + ": expected [x, y, z]");
  return {number(j[0], where), number(j[1], where), number(j[2], where)};
}

std::vector<TimeInterval> intervals(const json& j, std::string_view where) {
  if (!j.is_array()) throw ScenarioError(std::string(where) + ": expected a list of [begin, end]");
  std::vector<TimeInterval> out;
  for (const json& e : j) {
    const Vec2 v = vec2(e, where);
    out.push_back({v.x(), v.y()});
  }
  return out;
}

TerrainKind terrainKind(const std::string& s) {
  if (s == "flat") return TerrainKind::kFlat;
  if (s == "ramp") return TerrainKind::kRamp;
  if (s == "rolling") return TerrainKind::kRolling;
  if (s == "fractal") return TerrainKind::kFractal;
  throw ScenarioError("unknown terrain component kind '" + s + "'");
}

LaneAxis laneAxis(const std::string& s) {
  if (s == "long_side") return LaneAxis::kLongSide;
  if (s == "short_side") return LaneAxis::kShortSide;
  if (s == "x") return LaneAxis::kX;
  if (s == "y") return LaneAxis::kY;
  throw ScenarioError("unknown lane axis '" + s + "'");
}

template <typename F>
auto validated(F&& check, std::string_view where) {
  try {
    return check();
  } catch (const std::invalid_argument& e) {
    throw ScenarioError(std::string(where) + ": " + e.what());
  } catch (const json::exception& e) {
    throw ScenarioError(std::string(where) + ": " + e.what());
  }
}

}  // namespace

TerrainSpec parseTerrain(const json& doc) {
  requireObject(doc, "terrain", {"resolution", "components", "obstacles"});
  TerrainSpec spec;
  readNumber(doc, "resolution", spec.resolution);
  for (const json& c : doc.value("components", json::array())) {
    requireObject(c, "terrain component",
                  {"kind", "angle_deg", "direction_deg", "amplitude", "wavelength", "octaves", "roughness"});
    TerrainComponent comp;
    comp.kind = terrainKind(c.at("kind").get<std::string>());
    readAngle(c, "angle_deg", comp.angle);
    readAngle(c, "direction_deg", comp.direction);
    readNumber(c, "amplitude", comp.amplitude);
    readNumber(c, "wavelength", comp.wavelength);
    readInt(c, "octaves", comp.octaves);
    readNumber(c, "roughness", comp.roughness);
    spec.components.push_back(comp);
  }
  for (const json& o : doc.value("obstacles", json::array())) {
    requireObject(o, "obstacle", {"shape", "center", "radius", "half_extents", "yaw_deg", "height"});
    Obstacle obs;
    const std::string shape = o.at("shape").get<std::string>();
    if (shape == "cylinder") {
      obs.shape = ObstacleShape::kCylinder;
      obs.size = Vec2(number(o.at("radius"), "radius"), 0.0);
    } else if (shape == "box") {
      obs.shape = ObstacleShape::kBox;
      obs.size = vec2(o.at("half_extents"), "half_extents");
    } else {
      throw ScenarioError("unknown obstacle shape '" + shape + "'");
    }
    obs.center = vec2(o.at("center"), "center");
    readAngle(o, "yaw_deg", obs.yaw);
    readNumber(o, "height", obs.height);
    spec.obstacles.push_back(obs);
  }
  validated([&] { spec.validate(); return 0; }, "terrain");
  return spec;
}

SurveyScenario parseSurveyScenario(const json& doc) {
  return validated(
      [&] {
        requireObject(doc, "survey scenario",
                      {"kind", "name", "seed", "area", "margin", "map_resolution", "lane_spacing", "lane_axis",
                       "terrain", "targets", "planner", "limits", "lidar", "detector", "execution"});
        SurveyScenario sc;
        sc.name = doc.value("name", sc.name);
        if (doc.contains("area")) {
          requireObject(doc.at("area"), "area", {"min", "max"});
          sc.area = Rect{vec2(doc.at("area").at("min"), "area.min"), vec2(doc.at("area").at("max"), "area.max")};
        }
        readNumber(doc, "margin", sc.margin);
        readNumber(doc, "map_resolution", sc.map_resolution);
        readNumber(doc, "lane_spacing", sc.lane_spacing);
        if (doc.contains("lane_axis")) sc.lane_axis = laneAxis(doc.at("lane_axis").get<std::string>());
        if (doc.contains("terrain")) sc.terrain = parseTerrain(doc.at("terrain"));
        for (const json& t : doc.value("targets", json::array())) {
          requireObject(t, "target", {"position", "depth", "strength"});
          Target target;
          target.position = vec2(t.at("position"), "target.position");
          readNumber(t, "depth", target.depth);
          readNumber(t, "strength", target.strength);
          sc.targets.push_back(target);
        }
        if (doc.contains("planner")) {
          const json& p = doc.at("planner");
          requireObject(p, "planner",
                        {"horizon", "sample_spacing", "yaw_resolution_deg", "max_alignment_deg",
                         "max_lane_deviation_deg", "exploration_sector_deg", "max_yaw_step_deg", "standoff",
                         "body_radius", "vertical_clearance", "avoidance_margin", "max_avoidance_steps",
                         "slope_max_deg"});
          readNumber(p, "horizon", sc.planner.horizon);
          readNumber(p, "sample_spacing", sc.planner.sample_spacing);
          readAngle(p, "yaw_resolution_deg", sc.planner.yaw_resolution);
          readAngle(p, "max_alignment_deg", sc.planner.max_alignment);
          readAngle(p, "max_lane_deviation_deg", sc.planner.max_lane_deviation);
          readAngle(p, "exploration_sector_deg", sc.planner.exploration_sector);
          readAngle(p, "max_yaw_step_deg", sc.planner.max_yaw_step);
          readNumber(p, "standoff", sc.planner.standoff);
          readNumber(p, "body_radius", sc.planner.body_radius);
          readNumber(p, "vertical_clearance", sc.planner.vertical_clearance);
          readNumber(p, "avoidance_margin", sc.planner.avoidance_margin);
          readInt(p, "max_avoidance_steps", sc.planner.max_avoidance_steps);
          readAngle(p, "slope_max_deg", sc.planner.slope_max);
        }
        if (doc.contains("limits")) {
          const json& l = doc.at("limits");
          requireObject(l, "limits", {"v_max", "omega_max_deg"});
          readNumber(l, "v_max", sc.limits.v_max);
          readAngle(l, "omega_max_deg", sc.limits.omega_max);
        }
        if (doc.contains("lidar")) {
          const json& l = doc.at("lidar");
          requireObject(l, "lidar",
                        {"vertical_fov_deg", "range", "rear_occlusion_deg", "azimuth_resolution_deg",
                         "elevation_resolution_deg", "march_step", "mount"});
          readAngle(l, "vertical_fov_deg", sc.lidar.vertical_fov);
          readNumber(l, "range", sc.lidar.range);
          readAngle(l, "rear_occlusion_deg", sc.lidar.rear_occlusion);
          readAngle(l, "azimuth_resolution_deg", sc.lidar.azimuth_resolution);
          readAngle(l, "elevation_resolution_deg", sc.lidar.elevation_resolution);
          readNumber(l, "march_step", sc.lidar.march_step);
          if (l.contains("mount")) sc.lidar.mount = vec3(l.at("mount"), "lidar.mount");
        }
        if (doc.contains("detector")) {
          const json& d = doc.at("detector");
          requireObject(d, "detector", {"sigma_r", "sigma_g", "standoff", "coil_semi_axes"});
          readNumber(d, "sigma_r", sc.detector.sigma_r);
          readNumber(d, "sigma_g", sc.detector.sigma_g);
          readNumber(d, "standoff", sc.detector.standoff);
          if (d.contains("coil_semi_axes")) {
            const Vec2 axes = vec2(d.at("coil_semi_axes"), "detector.coil_semi_axes");
            sc.detector.coil = Ellipse{axes.x(), axes.y()};
          }
        }
        if (doc.contains("execution")) {
          const json& e = doc.at("execution");
          requireObject(e, "execution",
                        {"detector_step", "stall_timeout", "max_consecutive_stalls", "landing_radius",
                         "takeoff_heights"});
          readNumber(e, "detector_step", sc.detector_step);
          readNumber(e, "stall_timeout", sc.stall_timeout);
          readInt(e, "max_consecutive_stalls", sc.max_consecutive_stalls);
          readNumber(e, "landing_radius", sc.landing_radius);
          if (e.contains("takeoff_heights")) {
            sc.takeoff_heights.clear();
            for (const json& h : e.at("takeoff_heights")) sc.takeoff_heights.push_back(number(h, "takeoff_heights"));
          }
        }
        sc.validate();
        return sc;
      },
      "survey scenario");
}

FusionScenario parseFusionScenario(const json& doc) {
  return validated(
      [&] {
        requireObject(doc, "fusion scenario",
                      {"kind", "name", "seed", "waypoints", "speed", "odometry_rate", "gnss_rate", "optimize_rate",
                       "odometry_sigma_translation", "odometry_sigma_rotation_deg", "degenerate_sigma",
                       "degenerate", "degenerate_axis", "drift_per_meter", "gnss_sigma", "sigma_floor",
                       "dropouts", "lever_arm", "extrinsic_yaw_deg", "extrinsic_translation", "estimator"});
        FusionScenario sc;
        sc.name = doc.value("name", sc.name);
        if (doc.contains("waypoints")) {
          sc.waypoints.clear();
          for (const json& w : doc.at("waypoints")) sc.waypoints.push_back(vec3(w, "waypoints"));
        }
        readNumber(doc, "speed", sc.speed);
        readNumber(doc, "odometry_rate", sc.odometry_rate);
        readNumber(doc, "gnss_rate", sc.gnss_rate);
        readNumber(doc, "optimize_rate", sc.optimize_rate);
        readNumber(doc, "odometry_sigma_translation", sc.odometry_sigma_translation);
        readAngle(doc, "odometry_sigma_rotation_deg", sc.odometry_sigma_rotation);
        readNumber(doc, "degenerate_sigma", sc.degenerate_sigma);
        if (doc.contains("degenerate")) sc.degenerate = intervals(doc.at("degenerate"), "degenerate");
        if (doc.contains("degenerate_axis")) sc.degenerate_axis = vec3(doc.at("degenerate_axis"), "degenerate_axis");
        readNumber(doc, "drift_per_meter", sc.drift_per_meter);
        readNumber(doc, "gnss_sigma", sc.gnss_sigma);
        readNumber(doc, "sigma_floor", sc.sigma_floor);
        if (doc.contains("dropouts")) sc.dropouts = intervals(doc.at("dropouts"), "dropouts");
        if (doc.contains("lever_arm")) sc.lever_arm = vec3(doc.at("lever_arm"), "lever_arm");
        readAngle(doc, "extrinsic_yaw_deg", sc.extrinsic_yaw);
        if (doc.contains("extrinsic_translation")) {
          sc.extrinsic_translation = vec3(doc.at("extrinsic_translation"), "extrinsic_translation");
        }
        if (doc.contains("estimator")) {
          const json& e = doc.at("estimator");
          requireObject(e, "estimator",
                        {"window", "extrinsic_period", "random_walk_translation", "random_walk_rotation_deg",
                         "yaw_threshold_deg", "gnss_inflation", "initial_yaw_sigma_deg", "initial_tilt_sigma_deg",
                         "initial_translation_sigma", "attach_tolerance", "max_iterations", "cost_tolerance"});
          FusionParams& p = sc.params;
          readNumber(e, "window", p.window);
          readNumber(e, "extrinsic_period", p.extrinsic_period);
          readNumber(e, "random_walk_translation", p.random_walk_translation);
          readAngle(e, "random_walk_rotation_deg", p.random_walk_rotation);
          if (e.contains("yaw_threshold_deg")) {
            const double t = deg2rad(number(e.at("yaw_threshold_deg"), "yaw_threshold_deg"));
            p.yaw_variance_threshold = t * t;
          }
          readNumber(e, "gnss_inflation", p.gnss_inflation);
          readAngle(e, "initial_yaw_sigma_deg", p.initial_yaw_sigma);
          readAngle(e, "initial_tilt_sigma_deg", p.initial_tilt_sigma);
          readNumber(e, "initial_translation_sigma", p.initial_translation_sigma);
          readNumber(e, "attach_tolerance", p.attach_tolerance);
          readInt(e, "max_iterations", p.max_iterations);
          readNumber(e, "cost_tolerance", p.cost_tolerance);
        }
        sc.validate();
        return sc;
      },
      "fusion scenario");
}

ScenarioFile parseScenario(const json& doc) {
  if (!doc.is_object()) throw ScenarioError("scenario: expected a JSON object");
  ScenarioFile file;
  const std::string kind = doc.value("kind", std::string("survey"));
  file.canonical = doc;
  file.hash = fnv1a64(doc.dump());
  if (doc.contains("seed")) {
    const json& seed = doc.at("seed");
    if (!seed.is_number_integer() || (!seed.is_number_unsigned() && seed.get<std::int64_t>() < 0)) {
      throw ScenarioError("seed: expected a non-negative integer");
    }
    file.seed = seed.get<std::uint64_t>();
  }
  if (kind == "survey") {
    file.kind = ScenarioKind::kSurvey;
    file.survey = parseSurveyScenario(doc);
    file.name = file.survey->name;
  } else if (kind == "fusion") {
    file.kind = ScenarioKind::kFusion;
    file.fusion = parseFusionScenario(doc);
    file.name = file.fusion->name;
  } else {
    throw ScenarioError("unknown scenario kind '" + kind + "'");
  }
  return file;
}

ScenarioFile loadScenario(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ScenarioError("cannot open scenario file " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::exception& e) {
    throw ScenarioError("cannot parse " + path.string() + ": " + e.what());
  }
  return parseScenario(doc);
}

std::string hashHex(std::uint64_t hash) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(hash));
  return buf;
}

}  // namespace mdsurvey
