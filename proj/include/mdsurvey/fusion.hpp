// SPDX-License-Identifier: Apache-2.0
// Copyright (c) 2026 The mdsurvey Authors

#pragma once

#include <cstdint>
#include <functional>
#include <istream>
#include <optional>
#include <ostream>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Geometry>

#include "mdsurvey/common.hpp"

namespace mdsurvey {

using Vector6d = Eigen::Matrix<double, 6, 1>;
using Matrix6d = Eigen::Matrix<double, 6, 6>;

/// Rigid transform x' = R x + t. Tangent order is [rotation; translation].
struct RigidTransform {
  Eigen::Quaterniond rotation = Eigen::Quaterniond::Identity();
  Vec3 translation = Vec3::Zero();

  static RigidTransform identity() { return {}; }
  static RigidTransform fromYaw(double yaw, const Vec3& translation);
  Eigen::Matrix3d matrix() const { return rotation.toRotationMatrix(); }
  RigidTransform inverse() const;
  RigidTransform operator*(const RigidTransform& other) const;
  Vec3 operator*(const Vec3& p) const { return rotation * p + translation; }
  /// Right perturbation: (R Exp(dphi), t + dt).
  RigidTransform retract(const Vector6d& delta) const;
  /// Inverse of retract: delta with retract(delta) == other.
  Vector6d localCoordinates(const RigidTransform& other) const;
  double yaw() const;
  bool isNormalized(double tolerance = 1e-9) const;
};

Eigen::Matrix3d skew(const Vec3& v);
Eigen::Matrix3d expSO3(const Vec3& phi);
Vec3 logSO3(const Eigen::Matrix3d& rotation);

/// Relative motion T_prev^-1 T_curr.
RigidTransform odometryDelta(const RigidTransform& prev, const RigidTransform& curr);

struct RegistrationCovariance {
  Eigen::Matrix3d position;
  Eigen::Matrix3d rotation;
};

/**
 * Covariance of a registration result from its Jacobian blocks:
 * scale * (J^T J)^-1 per block. Directions whose eigenvalue falls below
 * `relative_tolerance` times the largest one (or are exactly zero) are
 * unconstrained and receive sigma_max^2 instead.
 */
RegistrationCovariance registrationCovariance(const Eigen::MatrixXd& j_pos, const Eigen::MatrixXd& j_rot,
                                              double scale, double sigma_max = 10.0,
                                              double relative_tolerance = 1e-12);

/// Inflates a position-fix covariance while the extrinsic yaw is still unobservable.
Eigen::Matrix3d gateGnss(double extrinsic_yaw_variance, const Eigen::Matrix3d& sigma,
                         double threshold = deg2rad(5.0) * deg2rad(5.0), double inflation = 1e4);

/// Throws std::invalid_argument unless `m` is finite, symmetric and positive definite.
void requireSpd(const Eigen::MatrixXd& m, const char* what);

struct FusionParams {
  double window = 5.0;                        ///< smoother lag [s]
  double extrinsic_period = 1.0;              ///< one extrinsic node per period [s]
  double random_walk_translation = 0.01;      ///< [m/sqrt(s)]
  double random_walk_rotation = deg2rad(0.1); ///< [rad/sqrt(s)]
  double yaw_variance_threshold = deg2rad(5.0) * deg2rad(5.0);
  double gnss_inflation = 1e4;
  double initial_yaw_sigma = kPi;             ///< [rad]
  double initial_tilt_sigma = deg2rad(1.0);   ///< roll and pitch [rad]
  double initial_translation_sigma = 10.0;    ///< [m]
  double attach_tolerance = 0.025;            ///< [s]
  int max_iterations = 50;
  double cost_tolerance = 1e-9;

  void validate() const;
  /// Identity-factor covariance for an extrinsic step of `dt` seconds.
  Matrix6d randomWalkCovariance(double dt) const;
};

struct OdometryMeasurement {
  double timestamp = 0.0;
  RigidTransform delta;
  Matrix6d covariance = Matrix6d::Identity();
};

struct PositionMeasurement {
  double timestamp = 0.0;
  Vec3 position = Vec3::Zero();
  Eigen::Matrix3d covariance = Eigen::Matrix3d::Identity();
};

struct BetweenFactor {
  int from = 0;
  int to = 0;
  RigidTransform measurement;
  Matrix6d sqrt_information;
};

struct PositionFactor {
  int state = 0;
  int extrinsic = 0;
  Vec3 lever_arm = Vec3::Zero();
  Vec3 measurement = Vec3::Zero();
  Eigen::Matrix3d sqrt_information;
  bool gated = false;
};

struct PriorFactor {
  int variable = 0;
  RigidTransform mean;
  Matrix6d sqrt_information;
};

/// Dense Gaussian over several variables left behind by marginalization.
struct LinearizedPrior {
  std::vector<int> variables;
  std::vector<RigidTransform> linearization;
  Eigen::MatrixXd sqrt_information;  ///< rows x 6n
  Eigen::VectorXd offset;            ///< residual at the linearization point
};

using Factor = std::variant<BetweenFactor, PositionFactor, PriorFactor, LinearizedPrior>;

struct OptimizationReport {
  int iterations = 0;
  double initial_cost = 0.0;
  double final_cost = 0.0;
  bool converged = false;
  bool solver_failure = false;  ///< damping exhausted without a cost decrease
  std::size_t marginalized = 0;
};

/**
 * @brief Fixed-lag smoother over body poses and time-varying odometry-to-inertial
 * extrinsics.
 *
 * State nodes are body poses T_OB in the odometry frame at odometry
 * timestamps. Extrinsic nodes T_OI map inertial coordinates into the odometry
 * frame; consecutive ones are joined by identity factors. A position fix
 * constrains T_OI^-1 T_OB p_lever. Variables older than the window are
 * marginalized into a linearized prior on their neighbours.
 */
class FusionGraph {
 public:
  explicit FusionGraph(FusionParams params = {});

  /// First state node with a prior; also sets the time origin.
  int initialize(double timestamp, const RigidTransform& pose, const Matrix6d& prior_covariance);
  /// Appends a state predicted from the latest estimate; throws on non-SPD covariance or time reversal.
  int addOdometry(const OdometryMeasurement& odometry);
  /// Attaches a fix to the nearest state within tolerance and the current extrinsic.
  /// Returns the factor index, or nothing when the fix is dropped.
  std::optional<int> addPositionFix(const PositionMeasurement& fix, const Vec3& lever_arm);
  /// Appends an extrinsic node linked by an identity factor with the given covariance.
  int advanceExtrinsic(double timestamp, const Matrix6d& random_walk_covariance);
  /// Solves the window, refreshes marginals and marginalizes expired variables.
  OptimizationReport optimize();

  bool initialized() const { return !states_.empty(); }
  bool hasExtrinsic() const { return !extrinsics_.empty(); }
  const FusionParams& params() const { return params_; }

  int latestState() const { return states_.back(); }
  const std::vector<int>& stateNodes() const { return states_; }
  const std::vector<int>& extrinsicNodes() const { return extrinsics_; }
  int latestExtrinsic() const { return extrinsics_.back(); }
  double timestamp(int variable) const { return variables_.at(variable).timestamp; }
  const RigidTransform& estimate(int variable) const { return variables_.at(variable).value; }
  bool active(int variable) const { return variables_.at(variable).active; }
  /// Latest marginal covariance of the newest extrinsic (tangent space).
  const Matrix6d& extrinsicCovariance() const { return extrinsic_covariance_; }
  /// Yaw variance of the newest extrinsic in the inertial-aligned frame [rad^2].
  double extrinsicYawVariance() const;
  /// Marginal covariance of any active variable.
  Matrix6d marginalCovariance(int variable) const;

  std::size_t activeStateCount() const;
  std::size_t activeVariableCount() const;
  std::size_t factorCount() const { return factors_.size(); }
  const std::vector<Factor>& factors() const { return factors_; }
  std::size_t droppedFixes() const { return dropped_fixes_; }
  const std::vector<std::string>& diagnostics() const { return diagnostics_; }
  /// States that left the window since the last call, oldest first.
  std::vector<int> takeRetiredStates();

  /// Copy with every position factor removed (used to check that gated fixes are inert).
  FusionGraph withoutPositionFactors() const;
  /// Total weighted squared error of the active factors.
  double cost() const;

 private:
  enum class Kind { kState, kExtrinsic };
  struct Variable {
    Kind kind;
    double timestamp;
    RigidTransform value;
    bool active;
  };

  int addVariable(Kind kind, double timestamp, const RigidTransform& value);
  void marginalize(const std::vector<int>& expired);
  void refreshExtrinsicCovariance();

  FusionParams params_;
  std::vector<Variable> variables_;
  std::vector<Factor> factors_;
  std::vector<int> states_;
  std::vector<int> extrinsics_;
  std::vector<int> retired_;
  Matrix6d extrinsic_covariance_ = Matrix6d::Identity();
  std::size_t dropped_fixes_ = 0;
  std::vector<std::string> diagnostics_;
};

// ---------------------------------------------------------------------------
// Synthetic streams and the estimation driver.

struct TimeInterval {
  double begin = 0.0;
  double end = 0.0;
  bool contains(double t) const { return t >= begin && t <= end; }
};

struct FusionScenario {
  std::string name = "fusion";
  std::vector<Vec3> waypoints{Vec3(0, 0, 0), Vec3(5, 0, 0)};  ///< inertial frame [m]
  double speed = 1.0;                   ///< [m/s]
  double odometry_rate = 20.0;          ///< [Hz]
  double gnss_rate = 5.0;               ///< [Hz]
  double optimize_rate = 5.0;           ///< [Hz]
  double odometry_sigma_translation = 2e-4;       ///< per step [m]
  double odometry_sigma_rotation = deg2rad(0.01); ///< per step [rad]
  double degenerate_sigma = 1.0;        ///< sigma_max along unconstrained axes [m]
  std::vector<TimeInterval> degenerate; ///< segments with an unconstrained axis
  Vec3 degenerate_axis = Vec3::UnitX(); ///< odometry-frame direction of the degeneracy
  double drift_per_meter = 0.0;         ///< drift along the axis on degenerate segments
  double gnss_sigma = 0.02;             ///< [m]
  double sigma_floor = 1e-5;            ///< lower bound on supplied standard deviations
  std::vector<TimeInterval> dropouts;
  Vec3 lever_arm = Vec3(0.0, 0.0, 0.3); ///< receiver in the body frame [m]
  double extrinsic_yaw = 0.0;           ///< true T_OI yaw [rad]
  Vec3 extrinsic_translation = Vec3::Zero();
  FusionParams params;

  void validate() const;
  double duration() const;
};

/// Ground-truth body pose in the inertial frame at time t.
RigidTransform truthPose(const FusionScenario& scenario, double t);

struct MeasurementStreams {
  std::vector<OdometryMeasurement> odometry;
  std::vector<PositionMeasurement> gnss;
  RigidTransform initial_pose;  ///< first odometry-frame pose (T_OB at t = 0)
};

/// Seeded odometry deltas and position fixes for the scenario.
MeasurementStreams simulateStreams(const FusionScenario& scenario, std::uint64_t seed);

void writeStreamsCsv(std::ostream& os, const MeasurementStreams& streams);
/// Throws std::runtime_error on malformed rows.
MeasurementStreams readStreamsCsv(std::istream& is);

struct EstimateRecord {
  double timestamp = 0.0;
  RigidTransform pose;       ///< body pose in the inertial frame
  double yaw_variance = 0.0; ///< extrinsic yaw variance at export [rad^2]
};

struct FusionRun {
  std::vector<EstimateRecord> online;        ///< latest state after each odometry step
  std::vector<EstimateRecord> smoothed;      ///< per state when it leaves the window
  std::vector<EstimateRecord> dead_reckoning; ///< odometry only, mapped with the true extrinsic
  std::vector<EstimateRecord> truth;
  std::vector<double> extrinsic_yaw;         ///< estimated T_OI yaw after each optimization
  std::vector<double> extrinsic_yaw_time;
  std::optional<double> yaw_observable_time; ///< first time the yaw variance fell below the threshold
  std::size_t dropped_fixes = 0;
  std::size_t solver_failures = 0;
  std::size_t max_active_states = 0;
};

/// Optional per-optimization hook, called with the graph after each solve.
using FusionObserver = std::function<void(const FusionGraph&, double time)>;

FusionRun runFusion(const FusionScenario& scenario, const MeasurementStreams& streams,
                    const FusionObserver& observer = {});

/// CSV `timestamp,x,y,z,qw,qx,qy,qz,yaw_var_extrinsic`.
void writeEstimatesCsv(std::ostream& os, const std::vector<EstimateRecord>& estimates);

}  // namespace mdsurvey
