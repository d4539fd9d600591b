// SPDX-License-Identifier: Apache-2.0
// Copyright (c) 2026 The mdsurvey Authors

#include "mdsurvey/cli.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <stdexcept>

#include <CLI11.hpp>
#include <json.hpp>

#include "mdsurvey/metrics.hpp"
#include "mdsurvey/scenario.hpp"

namespace mdsurvey {

namespace {

using nlohmann::json;
namespace fs = std::filesystem;

constexpr const char* kVersion = "0.1.0";

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::vector<std::string> splitList(const std::string& list) {
  std::vector<std::string> out;
  std::stringstream ss(list);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::ofstream openOutput(const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  return out;
}

void writeText(const fs::path& path, const std::string& text) {
  std::ofstream out = openOutput(path);
  out << text;
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

ScenarioFile loadChecked(const RunManifest& m, ScenarioKind kind) {
  ScenarioFile file = loadScenario(m.scenario);
  if (file.kind != kind) {
    throw ScenarioError(m.scenario.string() + ": scenario kind does not match the '" + m.command + "' command");
  }
  return file;
}

json manifestJson(const RunManifest& m, const ScenarioFile& file, std::uint64_t seed) {
  json emit = json::array();
  if (m.emit_csv) emit.push_back("csv");
  if (m.emit_heatmap) emit.push_back("heatmap");
  if (m.emit_report) emit.push_back("report");
  json j;
  j["tool"] = "mdsurvey";
  j["version"] = kVersion;
  j["command"] = m.command;
  j["scenario_path"] = m.scenario.generic_string();
  j["scenario_name"] = file.name;
  j["scenario_hash"] = hashHex(file.hash);
  j["seed"] = seed;
  j["sub_seeds"] = {{"terrain", deriveSeed(seed, "terrain")},
                    {"odometry", deriveSeed(seed, "odometry")},
                    {"gnss", deriveSeed(seed, "gnss")}};
  if (m.command == "ablate") j["methods"] = m.methods;
  j["emit"] = emit;
  j["parameters"] = file.canonical;
  return j;
}

/// Leading comment line for CSV artifacts so each file names its manifest.
std::string manifestComment(const ScenarioFile& file, std::uint64_t seed) {
  return "# mdsurvey " + std::string(kVersion) + " scenario=" + file.name + " hash=" + hashHex(file.hash) +
         " seed=" + std::to_string(seed) + " manifest=manifest.json\n";
}

template <typename Body>
int guarded(const RunManifest& m, std::ostream& err, Body&& body) {
  try {
    body();
    return kExitOk;
  } catch (const UsageError& e) {
    err << "mdsurvey " << m.command << ": " << e.what() << "\n";
    return kExitUsage;
  } catch (const ScenarioError& e) {
    err << "mdsurvey " << m.command << ": " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::invalid_argument& e) {
    err << "mdsurvey " << m.command << ": " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "mdsurvey " << m.command << ": runtime failure: " << e.what() << "\n";
    return kExitRuntime;
  }
}

}  // namespace

void parseEmitList(const std::string& list, RunManifest& manifest) {
  manifest.emit_csv = manifest.emit_heatmap = manifest.emit_report = false;
  for (const std::string& e : splitList(list)) {
    if (e == "csv") manifest.emit_csv = true;
    else if (e == "heatmap") manifest.emit_heatmap = true;
    else if (e == "report") manifest.emit_report = true;
    else throw std::invalid_argument("unknown --emit entry '" + e + "' (expected csv, heatmap, report)");
  }
}

int cmdAblate(const RunManifest& m, std::ostream& log, std::ostream& err) {
  return guarded(m, err, [&] {
    std::vector<SurveyMethod> methods;
    for (const std::string& name : m.methods) {
      try {
        methods.push_back(parseMethod(name));
      } catch (const std::invalid_argument& e) {
        throw UsageError(e.what());
      }
    }
    if (methods.empty()) throw UsageError("no methods requested");
    const ScenarioFile file = loadChecked(m, ScenarioKind::kSurvey);
    const std::uint64_t seed = m.seed.value_or(file.seed);
    const SurveyScenario& sc = *file.survey;

    fs::create_directories(m.out);
    writeText(m.out / "manifest.json", manifestJson(m, file, seed).dump(2) + "\n");
    const TruthTerrain truth = scenarioTruth(sc, seed);

    std::vector<SurveyReport> reports;
    json report_json;
    report_json["manifest"] = "manifest.json";
    report_json["scenario_hash"] = hashHex(file.hash);
    report_json["seed"] = seed;
    report_json["methods"] = json::array();
    for (SurveyMethod method : methods) {
      const std::string name(methodName(method));
      log << "running " << name << " on " << file.name << " (seed " << seed << ")\n";
      const SurveyResult result = runSurvey(sc, truth, method);
      reports.push_back(makeSurveyReport(result));
      const SurveyReport& r = reports.back();
      log << "  duration " << r.duration << " s, over_unobserved " << r.over_unobserved
          << (result.aborted ? ", aborted" : "") << "\n";
      if (m.emit_csv) {
        std::ofstream os = openOutput(m.out / (name + "_log.csv"));
        os << manifestComment(file, seed);
        writeSurveyCsv(os, result.log);
        std::ofstream ms = openOutput(m.out / (name + "_map.csv"));
        ms << manifestComment(file, seed);
        writeMapCsv(ms, result.map, traversableMask(result.map, sc.planner.slope_max));
      }
      if (m.emit_heatmap) writeSignalHeatmap(m.out / (name + "_signal"), result.map);
      json entry = toJson(r);
      if (!sc.targets.empty()) entry["detection"] = toJson(detectionReport(result.map, sc.targets));
      report_json["methods"].push_back(std::move(entry));
    }
    if (m.emit_csv) {
      std::ofstream os = openOutput(m.out / "summary.csv");
      os << manifestComment(file, seed);
      writeSummaryCsv(os, reports);
    }
    if (m.emit_report) writeText(m.out / "report.json", report_json.dump(2) + "\n");
  });
}

int cmdFuse(const RunManifest& m, std::ostream& log, std::ostream& err) {
  return guarded(m, err, [&] {
    const ScenarioFile file = loadChecked(m, ScenarioKind::kFusion);
    const std::uint64_t seed = m.seed.value_or(file.seed);
    const FusionScenario& sc = *file.fusion;
    fs::create_directories(m.out);
    writeText(m.out / "manifest.json", manifestJson(m, file, seed).dump(2) + "\n");

    const MeasurementStreams streams = simulateStreams(sc, seed);
    const FusionRun run = runFusion(sc, streams);
    const TrajectoryErrors fused = trajectoryErrors(run.smoothed, run.truth);
    const TrajectoryErrors online = trajectoryErrors(run.online, run.truth);
    const TrajectoryErrors odom = trajectoryErrors(run.dead_reckoning, run.truth);
    log << "fused closure " << fused.closure << " m, rmse " << fused.rmse << " m; odometry-only closure "
        << odom.closure << " m\n";

    if (m.emit_csv) {
      auto emit = [&](const char* name, const std::vector<EstimateRecord>& series) {
        std::ofstream os = openOutput(m.out / name);
        os << manifestComment(file, seed);
        writeEstimatesCsv(os, series);
      };
      emit("estimates.csv", run.smoothed);
      emit("estimates_online.csv", run.online);
      emit("odometry_only.csv", run.dead_reckoning);
      emit("truth.csv", run.truth);
      std::ofstream ss = openOutput(m.out / "streams.csv");
      ss << manifestComment(file, seed);
      writeStreamsCsv(ss, streams);
      std::ofstream sum = openOutput(m.out / "summary.csv");
      sum << manifestComment(file, seed) << "estimate,rmse_m,closure_m\n";
      char buf[128];
      for (const auto& [name, e] : {std::pair{"fused", fused}, std::pair{"fused_online", online},
                                    std::pair{"odometry_only", odom}}) {
        std::snprintf(buf, sizeof buf, "%s,%.6f,%.6f\n", name, e.rmse, e.closure);
        sum << buf;
      }
    }
    if (m.emit_report) {
      json j;
      j["manifest"] = "manifest.json";
      j["scenario_hash"] = hashHex(file.hash);
      j["seed"] = seed;
      j["fused"] = toJson(fused);
      j["fused_online"] = toJson(online);
      j["odometry_only"] = toJson(odom);
      j["dropped_fixes"] = run.dropped_fixes;
      j["solver_failures"] = run.solver_failures;
      j["max_active_states"] = run.max_active_states;
      j["yaw_observable_time_s"] = run.yaw_observable_time ? json(*run.yaw_observable_time) : json(nullptr);
      if (!run.extrinsic_yaw.empty()) j["final_extrinsic_yaw_deg"] = rad2deg(run.extrinsic_yaw.back());
      json recoveries = json::array();
      for (const TimeInterval& d : sc.dropouts) {
        if (d.end < run.online.back().timestamp) {
          const auto it = std::find_if(streams.gnss.begin(), streams.gnss.end(),
                                       [&](const PositionMeasurement& g) { return g.timestamp > d.end; });
          if (it != streams.gnss.end()) {
            recoveries.push_back({{"time_s", it->timestamp}, {"jump_m", errorJump(run.online, run.truth, it->timestamp)}});
          }
        }
      }
      j["recoveries"] = std::move(recoveries);
      writeText(m.out / "report.json", j.dump(2) + "\n");
    }
  });
}

int cmdTerrain(const RunManifest& m, std::ostream& log, std::ostream& err) {
  return guarded(m, err, [&] {
    const ScenarioFile file = loadChecked(m, ScenarioKind::kSurvey);
    const std::uint64_t seed = m.seed.value_or(file.seed);
    fs::create_directories(m.out);
    writeText(m.out / "manifest.json", manifestJson(m, file, seed).dump(2) + "\n");
    const TruthTerrain truth = scenarioTruth(*file.survey, seed);
    log << "terrain " << truth.nodesX() << " x " << truth.nodesY() << " nodes\n";

    std::ofstream os = openOutput(m.out / "heightfield.csv");
    os << manifestComment(file, seed) << "ix,iy,x,y,z\n";
    double lo = std::numeric_limits<double>::infinity();
    double hi = -lo;
    char buf[160];
    for (int iy = 0; iy < truth.nodesY(); ++iy) {
      for (int ix = 0; ix < truth.nodesX(); ++ix) {
        const double z = truth.node(ix, iy);
        lo = std::min(lo, z);
        hi = std::max(hi, z);
        std::snprintf(buf, sizeof buf, "%d,%d,%.4f,%.4f,%.6f\n", ix, iy,
                      truth.origin().x() + ix * truth.resolution(), truth.origin().y() + iy * truth.resolution(), z);
        os << buf;
      }
    }
    if (!os) throw std::runtime_error("failed writing heightfield.csv");

    std::ofstream img = openOutput(m.out / "heightfield.pgm");
    img << "P5\n" << truth.nodesX() << ' ' << truth.nodesY() << "\n255\n";
    const double span = hi > lo ? hi - lo : 1.0;
    for (int iy = truth.nodesY() - 1; iy >= 0; --iy) {
      for (int ix = 0; ix < truth.nodesX(); ++ix) {
        img.put(static_cast<char>(std::lround(255.0 * (truth.node(ix, iy) - lo) / span)));
      }
    }
    if (!img) throw std::runtime_error("failed writing heightfield.pgm");
  });
}

int runCli(int argc, char** argv) {
  CLI::App app{"Terrain-following metal-detector survey simulator"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);

  RunManifest manifest;
  std::string methods = "proposed,aligned1,aligned6,fixed_attitude";
  std::string emit = "csv,heatmap,report";
  std::uint64_t seed = 0;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--scenario", manifest.scenario, "Scenario JSON file")->required();
    sub->add_option("--out", manifest.out, "Output directory (created if missing)")->capture_default_str();
    sub->add_option("--seed", seed, "Random seed (default: the scenario's seed)");
    sub->add_option("--emit", emit, "Artifacts to write: csv,heatmap,report")->capture_default_str();
  };
  CLI::App* ablate = app.add_subcommand("ablate", "Run the survey methods on a survey scenario");
  add_common(ablate);
  ablate->add_option("--methods", methods, "Comma-separated: proposed,aligned1,aligned6,fixed_attitude")
      ->capture_default_str();
  CLI::App* fuse = app.add_subcommand("fuse", "Run the GNSS/odometry smoother on a fusion scenario");
  add_common(fuse);
  CLI::App* terrain = app.add_subcommand("terrain", "Write the truth heightfield of a survey scenario");
  add_common(terrain);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  for (CLI::App* sub : {ablate, fuse, terrain}) {
    if (sub->parsed()) {
      manifest.command = sub->get_name();
      if (sub->count("--seed") > 0) manifest.seed = seed;
    }
  }
  manifest.methods = splitList(methods);
  try {
    parseEmitList(emit, manifest);
  } catch (const std::invalid_argument& e) {
    std::cerr << "mdsurvey: " << e.what() << "\n" << app.help();
    return kExitUsage;
  }
  if (ablate->parsed()) {
    for (const std::string& name : manifest.methods) {
      try {
        parseMethod(name);
      } catch (const std::invalid_argument& e) {
        std::cerr << "mdsurvey ablate: " << e.what() << "\n" << ablate->help();
        return kExitUsage;
      }
    }
    return cmdAblate(manifest, std::cout, std::cerr);
  }
  if (fuse->parsed()) return cmdFuse(manifest, std::cout, std::cerr);
  return cmdTerrain(manifest, std::cout, std::cerr);
}

}  // namespace mdsurvey
