// SPDX-License-Identifier: Apache-2.0
// Copyright (c) 2026 The mdsurvey Authors

#pragma once

#include <Eigen/Core>

#include "mdsurvey/common.hpp"

namespace mdsurvey {

/**
 * @brief Yaw/pitch attitude of the platform; roll is structurally zero.
 *
 * Convention used throughout the project: rotate by yaw about world z, then
 * by pitch about the resulting body y axis (R = Rz(yaw) * Ry(pitch)).
 */
struct AttitudeYP {
  double yaw = 0.0;
  double pitch = 0.0;
};

Eigen::Matrix3d yawPitchRotation(const AttitudeYP& att);

/// Detector z axis in the world frame, (cos(yaw) sin(pitch), sin(yaw) sin(pitch), cos(pitch)).
Vec3 detectorZAxis(const AttitudeYP& att);

/// Angle between the surface normal and the detector z axis, in [0, pi].
double alignmentError(const Vec3& normal, const AttitudeYP& att);

/**
 * @brief Pitch that minimizes the alignment error for a fixed yaw.
 *
 * Maximizes f(pitch) = sin(pitch) * a + cos(pitch) * n_z with
 * a = n_x cos(yaw) + n_y sin(yaw), giving pitch* = atan(a / n_z).
 * Throws std::invalid_argument for n_z <= 0 (overhanging surfaces).
 */
double optimalPitch(const Vec3& normal, double yaw);

/// Alignment error remaining at the optimal pitch for `yaw`.
double residualAlignment(const Vec3& normal, double yaw);

}  // namespace mdsurvey
