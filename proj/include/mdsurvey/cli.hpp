// SPDX-License-Identifier: Apache-2.0
// Copyright (c) 2026 The mdsurvey Authors

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace mdsurvey {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitRuntime = 3;

struct RunManifest {
  std::string command;
  std::filesystem::path scenario;
  std::vector<std::string> methods{"proposed", "aligned1", "aligned6", "fixed_attitude"};
  std::filesystem::path out = "out";
  std::optional<std::uint64_t> seed;  ///< falls back to the scenario seed
  bool emit_csv = true;
  bool emit_heatmap = true;
  bool emit_report = true;
};

/// Parses `csv,heatmap,report` into the manifest; throws std::invalid_argument on unknown entries.
void parseEmitList(const std::string& list, RunManifest& manifest);

int cmdAblate(const RunManifest& manifest, std::ostream& log, std::ostream& err);
int cmdFuse(const RunManifest& manifest, std::ostream& log, std::ostream& err);
int cmdTerrain(const RunManifest& manifest, std::ostream& log, std::ostream& err);

/// Full command-line entry point; returns the process exit status.
int runCli(int argc, char** argv);

}  // namespace mdsurvey
