// SPDX-License-Identifier: Apache-2.0
// Copyright (c) 2026 The mdsurvey Authors

#pragma once

#include "mdsurvey/common.hpp"

namespace mdsurvey {

/// Platform state; `position` is the detector coil center, roll is always zero.
struct VehicleState {
  Vec3 position = Vec3::Zero();
  double yaw = 0.0;
  double pitch = 0.0;
  double elapsed = 0.0;  ///< [s]
};

/// Commanded detector pose for the next planner step.
struct PoseCommand {
  Vec3 position = Vec3::Zero();
  double yaw = 0.0;
  double pitch = 0.0;
};

}  // namespace mdsurvey
