// SPDX-License-Identifier: Apache-2.0
// Copyright (c) 2026 The mdsurvey Authors

#include "mdsurvey/alignment.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace mdsurvey {

Eigen::Matrix3d yawPitchRotation(const AttitudeYP& att) {
  const double cy = std::cos(att.yaw), sy = std::sin(att.yaw);
  const double cp = std::cos(att.pitch), sp = std::sin(att.pitch);
  Eigen::Matrix3d r;
  r << cy * cp, -sy, cy * sp,
       sy * cp,  cy, sy * sp,
           -sp, 0.0,      cp;
  return r;
}

Vec3 detectorZAxis(const AttitudeYP& att) {
  const double sp = std::sin(att.pitch);
  return {std::cos(att.yaw) * sp, std::sin(att.yaw) * sp, std::cos(att.pitch)};
}

double alignmentError(const Vec3& normal, const AttitudeYP& att) {
  return std::acos(std::clamp(normal.dot(detectorZAxis(att)), -1.0, 1.0));
}

double optimalPitch(const Vec3& normal, double yaw) {
  if (!(normal.z() > 0.0)) {
    throw std::invalid_argument("optimalPitch: surface normal must have n_z > 0");
  }
  const double a = normal.x() * std::cos(yaw) + normal.y() * std::sin(yaw);
  return std::atan(a / normal.z());
}

double residualAlignment(const Vec3& normal, double yaw) {
  return alignmentError(normal, {yaw, optimalPitch(normal, yaw)});
}

}  // namespace mdsurvey
