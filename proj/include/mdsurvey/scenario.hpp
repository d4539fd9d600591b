// SPDX-License-Identifier: Apache-2.0
// Copyright (c) 2026 The mdsurvey Authors

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>

#include <json.hpp>

#include "mdsurvey/fusion.hpp"
#include "mdsurvey/sim.hpp"

namespace mdsurvey {

/// Malformed or invalid scenario file.
class ScenarioError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class ScenarioKind { kSurvey, kFusion };

/**
 * @brief Parsed scenario file.
 *
 * Angles are given in degrees in files (keys ending in `_deg`) and converted
 * to radians here. Unknown keys are rejected so typos do not silently fall
 * back to defaults.
 */
struct ScenarioFile {
  ScenarioKind kind = ScenarioKind::kSurvey;
  std::string name;
  std::uint64_t seed = 1;      ///< default seed when none is given on the command line
  std::uint64_t hash = 0;      ///< FNV-1a of the canonical JSON dump
  nlohmann::json canonical;
  std::optional<SurveyScenario> survey;
  std::optional<FusionScenario> fusion;
};

ScenarioFile parseScenario(const nlohmann::json& doc);
/// Throws ScenarioError on I/O, syntax or validation failures.
ScenarioFile loadScenario(const std::filesystem::path& path);

TerrainSpec parseTerrain(const nlohmann::json& doc);
SurveyScenario parseSurveyScenario(const nlohmann::json& doc);
FusionScenario parseFusionScenario(const nlohmann::json& doc);

/// 16-digit lowercase hex.
std::string hashHex(std::uint64_t hash);

}  // namespace mdsurvey
