// SPDX-License-Identifier: Apache-2.0
// Copyright (c) 2026 The mdsurvey Authors

#include "mdsurvey/fusion.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <Eigen/SparseCholesky>

namespace mdsurvey {

// ---------------------------------------------------------------------------
// Lie group helpers

Eigen::Matrix3d skew(const Vec3& v) {
  Eigen::Matrix3d m;
  m << 0.0, -v.z(), v.y(), v.z(), 0.0, -v.x(), -v.y(), v.x(), 0.0;
  return m;
}

Eigen::Matrix3d expSO3(const Vec3& phi) {
  const double theta = phi.norm();
  const Eigen::Matrix3d k = skew(phi);
  if (theta < 1e-8) return Eigen::Matrix3d::Identity() + k + 0.5 * k * k;
  return Eigen::AngleAxisd(theta, phi / theta).toRotationMatrix();
}

Vec3 logSO3(const Eigen::Matrix3d& rotation) {
  const Eigen::AngleAxisd aa(Eigen::Quaterniond(rotation).normalized());
  double angle = aa.angle();
  Vec3 axis = aa.axis();
  if (angle > kPi) {
    angle = 2.0 * kPi - angle;
    axis = -axis;
  }
  return axis * angle;
}

RigidTransform RigidTransform::fromYaw(double yaw, const Vec3& translation) {
  RigidTransform t;
  t.rotation = Eigen::Quaterniond(Eigen::AngleAxisd(yaw, Vec3::UnitZ()));
  t.translation = translation;
  return t;
}

RigidTransform RigidTransform::inverse() const {
  RigidTransform inv;
  inv.rotation = rotation.conjugate();
  inv.translation = -(inv.rotation * translation);
  return inv;
}

RigidTransform RigidTransform::operator*(const RigidTransform& other) const {
  RigidTransform out;
  out.rotation = (rotation * other.rotation).normalized();
  out.translation = rotation * other.translation + translation;
  return out;
}

RigidTransform RigidTransform::retract(const Vector6d& delta) const {
  RigidTransform out;
  out.rotation = (rotation * Eigen::Quaterniond(expSO3(delta.head<3>()))).normalized();
  out.translation = translation + delta.tail<3>();
  return out;
}

Vector6d RigidTransform::localCoordinates(const RigidTransform& other) const {
  Vector6d d;
  d.head<3>() = logSO3((rotation.conjugate() * other.rotation).toRotationMatrix());
  d.tail<3>() = other.translation - translation;
  return d;
}

double RigidTransform::yaw() const {
  const Eigen::Matrix3d r = matrix();
  return std::atan2(r(1, 0), r(0, 0));
}

bool RigidTransform::isNormalized(double tolerance) const {
  return std::abs(rotation.norm() - 1.0) <= tolerance;
}

RigidTransform odometryDelta(const RigidTransform& prev, const RigidTransform& curr) {
  return prev.inverse() * curr;
}

namespace {

Eigen::Matrix3d blockCovariance(const Eigen::MatrixXd& j, double scale, double sigma_max,
                                double relative_tolerance) {
  if (j.cols() != 3) throw std::invalid_argument("registration Jacobian blocks need 3 columns");
  const Eigen::Matrix3d info = j.transpose() * j;
  const Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> es(info);
  const Vec3 ev = es.eigenvalues();
  const double largest = std::max(ev.maxCoeff(), 0.0);
  Vec3 var;
  for (int i = 0; i < 3; ++i) {
    const bool degenerate = ev(i) <= 0.0 || ev(i) <= relative_tolerance * largest;
    var(i) = degenerate ? sigma_max * sigma_max : scale / ev(i);
  }
  return es.eigenvectors() * var.asDiagonal() * es.eigenvectors().transpose();
}

}  // namespace

RegistrationCovariance registrationCovariance(const Eigen::MatrixXd& j_pos, const Eigen::MatrixXd& j_rot,
                                              double scale, double sigma_max, double relative_tolerance) {
  if (!(scale > 0.0) || !(sigma_max > 0.0)) {
    throw std::invalid_argument("registration covariance scale and sigma_max must be positive");
  }
  return {blockCovariance(j_pos, scale, sigma_max, relative_tolerance),
          blockCovariance(j_rot, scale, sigma_max, relative_tolerance)};
}

Eigen::Matrix3d gateGnss(double extrinsic_yaw_variance, const Eigen::Matrix3d& sigma, double threshold,
                         double inflation) {
  if (!(extrinsic_yaw_variance >= 0.0)) throw std::invalid_argument("yaw variance must be non-negative");
  return extrinsic_yaw_variance > threshold ? Eigen::Matrix3d(sigma * inflation) : sigma;
}

void requireSpd(const Eigen::MatrixXd& m, const char* what) {
  if (m.rows() != m.cols() || !m.allFinite()) {
    throw std::invalid_argument(std::string(what) + ": covariance must be square and finite");
  }
  if (!m.isApprox(m.transpose(), 1e-9)) {
    throw std::invalid_argument(std::string(what) + ": covariance must be symmetric");
  }
  const Eigen::LLT<Eigen::MatrixXd> llt(m);
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m, Eigen::EigenvaluesOnly);
  if (llt.info() != Eigen::Success || es.eigenvalues().minCoeff() <= 0.0) {
    throw std::invalid_argument(std::string(what) + ": covariance must be positive definite");
  }
}

void FusionParams::validate() const {
  if (!(window > 0.0)) throw std::invalid_argument("fusion window must be positive");
  if (!(extrinsic_period > 0.0)) throw std::invalid_argument("extrinsic period must be positive");
  if (!(random_walk_translation > 0.0) || !(random_walk_rotation > 0.0)) {
    throw std::invalid_argument("extrinsic random walk must be positive");
  }
  if (!(yaw_variance_threshold > 0.0) || !(gnss_inflation >= 1.0)) {
    throw std::invalid_argument("invalid gating parameters");
  }
  if (!(initial_yaw_sigma > 0.0) || !(initial_tilt_sigma > 0.0) || !(initial_translation_sigma > 0.0)) {
    throw std::invalid_argument("initial extrinsic sigmas must be positive");
  }
  if (!(attach_tolerance >= 0.0)) throw std::invalid_argument("attach tolerance must be non-negative");
  if (max_iterations < 1 || !(cost_tolerance > 0.0)) throw std::invalid_argument("invalid solver limits");
}

Matrix6d FusionParams::randomWalkCovariance(double dt) const {
  Vector6d var;
  const double r = random_walk_rotation * random_walk_rotation * dt;
  const double t = random_walk_translation * random_walk_translation * dt;
  var << r, r, r, t, t, t;
  return var.asDiagonal();
}

// ---------------------------------------------------------------------------
// Factor evaluation

namespace {

Eigen::MatrixXd sqrtInformation(const Eigen::MatrixXd& covariance) {
  const Eigen::LLT<Eigen::MatrixXd> llt(covariance);
  // cov = L L^T, info = L^-T L^-1, so L^-1 whitens residuals.
  const Eigen::MatrixXd l = llt.matrixL();
  return l.triangularView<Eigen::Lower>().solve(Eigen::MatrixXd::Identity(covariance.rows(), covariance.cols()));
}

std::vector<int> factorVariables(const Factor& f) {
  return std::visit(
      [](const auto& x) -> std::vector<int> {
        using T = std::decay_t<decltype(x)>;
        if constexpr (std::is_same_v<T, BetweenFactor>) return {x.from, x.to};
        else if constexpr (std::is_same_v<T, PositionFactor>) return {x.state, x.extrinsic};
        else if constexpr (std::is_same_v<T, PriorFactor>) return {x.variable};
        else return x.variables;
      },
      f);
}

/// Whitened residual given the values of the factor's variables (in factorVariables order).
Eigen::VectorXd whitenedResidual(const Factor& f, const std::vector<RigidTransform>& v) {
  return std::visit(
      [&](const auto& x) -> Eigen::VectorXd {
        using T = std::decay_t<decltype(x)>;
        if constexpr (std::is_same_v<T, BetweenFactor>) {
          const RigidTransform rel = v[0].inverse() * v[1];
          return x.sqrt_information * x.measurement.localCoordinates(rel);
        } else if constexpr (std::is_same_v<T, PositionFactor>) {
          const Vec3 in_odom = v[0] * x.lever_arm;
          const Vec3 predicted = v[1].rotation.conjugate() * (in_odom - v[1].translation);
          return x.sqrt_information * (predicted - x.measurement);
        } else if constexpr (std::is_same_v<T, PriorFactor>) {
          return x.sqrt_information * x.mean.localCoordinates(v[0]);
        } else {
          Eigen::VectorXd delta(6 * static_cast<Eigen::Index>(v.size()));
          for (std::size_t i = 0; i < v.size(); ++i) {
            delta.segment<6>(6 * static_cast<Eigen::Index>(i)) = x.linearization[i].localCoordinates(v[i]);
          }
          return x.offset + x.sqrt_information * delta;
        }
      },
      f);
}

struct Linearization {
  std::vector<int> variables;
  Eigen::VectorXd residual;
  Eigen::MatrixXd jacobian;  ///< rows x 6*variables
};

Linearization linearizeFactor(const Factor& f, const std::vector<RigidTransform>& values) {
  constexpr double kStep = 1e-6;
  Linearization lin;
  lin.variables = factorVariables(f);
  std::vector<RigidTransform> v;
  v.reserve(lin.variables.size());
  for (int id : lin.variables) v.push_back(values[static_cast<std::size_t>(id)]);
  lin.residual = whitenedResidual(f, v);
  lin.jacobian.resize(lin.residual.size(), 6 * static_cast<Eigen::Index>(v.size()));
  // A linearized prior is exactly linear in translation; only the rotation
  // columns need differencing.
  int perturbed = 6;
  if (const auto* prior = std::get_if<LinearizedPrior>(&f)) {
    lin.jacobian = prior->sqrt_information;
    perturbed = 3;
  }
  for (std::size_t i = 0; i < v.size(); ++i) {
    const RigidTransform base = v[i];
    for (int k = 0; k < perturbed; ++k) {
      Vector6d d = Vector6d::Zero();
      d(k) = kStep;
      v[i] = base.retract(d);
      const Eigen::VectorXd plus = whitenedResidual(f, v);
      v[i] = base.retract(-d);
      const Eigen::VectorXd minus = whitenedResidual(f, v);
      lin.jacobian.col(6 * static_cast<Eigen::Index>(i) + k) = (plus - minus) / (2.0 * kStep);
    }
    v[i] = base;
  }
  return lin;
}

/// Normal equations over a set of variables; `column` maps variable id to block index.
struct NormalEquations {
  Eigen::SparseMatrix<double> hessian;
  Eigen::VectorXd gradient;
  double cost = 0.0;
};

NormalEquations buildNormalEquations(const std::vector<Factor>& factors, const std::vector<RigidTransform>& values,
                                     const std::vector<int>& column, Eigen::Index blocks) {
  std::map<std::pair<int, int>, Matrix6d> h;
  NormalEquations ne;
  ne.gradient = Eigen::VectorXd::Zero(6 * blocks);
  for (const Factor& f : factors) {
    const Linearization lin = linearizeFactor(f, values);
    ne.cost += 0.5 * lin.residual.squaredNorm();
    const int n = static_cast<int>(lin.variables.size());
    for (int a = 0; a < n; ++a) {
      const int ca = column[static_cast<std::size_t>(lin.variables[static_cast<std::size_t>(a)])];
      const auto ja = lin.jacobian.middleCols<6>(6 * a);
      ne.gradient.segment<6>(6 * ca) += ja.transpose() * lin.residual;
      for (int b = 0; b < n; ++b) {
        const int cb = column[static_cast<std::size_t>(lin.variables[static_cast<std::size_t>(b)])];
        const Matrix6d block = ja.transpose() * lin.jacobian.middleCols<6>(6 * b);
        auto [it, inserted] = h.try_emplace({ca, cb}, block);
        if (!inserted) it->second += block;
      }
    }
  }
  std::vector<Eigen::Triplet<double>> triplets;
  triplets.reserve(h.size() * 36);
  for (const auto& [key, block] : h) {
    for (int r = 0; r < 6; ++r) {
      for (int c = 0; c < 6; ++c) {
        if (block(r, c) != 0.0) triplets.emplace_back(6 * key.first + r, 6 * key.second + c, block(r, c));
      }
    }
  }
  ne.hessian.resize(6 * blocks, 6 * blocks);
  ne.hessian.setFromTriplets(triplets.begin(), triplets.end());
  return ne;
}

double totalCost(const std::vector<Factor>& factors, const std::vector<RigidTransform>& values) {
  double cost = 0.0;
  for (const Factor& f : factors) {
    std::vector<RigidTransform> v;
    for (int id : factorVariables(f)) v.push_back(values[static_cast<std::size_t>(id)]);
    cost += 0.5 * whitenedResidual(f, v).squaredNorm();
  }
  return cost;
}

}  // namespace

// ---------------------------------------------------------------------------
// FusionGraph

FusionGraph::FusionGraph(FusionParams params) : params_(params) { params_.validate(); }

int FusionGraph::addVariable(Kind kind, double timestamp, const RigidTransform& value) {
  variables_.push_back({kind, timestamp, value, true});
  return static_cast<int>(variables_.size()) - 1;
}

int FusionGraph::initialize(double timestamp, const RigidTransform& pose, const Matrix6d& prior_covariance) {
  if (initialized()) throw std::logic_error("fusion graph already initialized");
  requireSpd(prior_covariance, "state prior");
  if (!pose.isNormalized()) throw std::invalid_argument("initial pose rotation is not normalized");
  const int id = addVariable(Kind::kState, timestamp, pose);
  states_.push_back(id);
  factors_.emplace_back(PriorFactor{id, pose, sqrtInformation(prior_covariance)});
  return id;
}

int FusionGraph::addOdometry(const OdometryMeasurement& odometry) {
  if (!initialized()) throw std::logic_error("fusion graph has no state node");
  requireSpd(odometry.covariance, "odometry");
  const int prev = states_.back();
  if (!(odometry.timestamp > variables_[static_cast<std::size_t>(prev)].timestamp)) {
    throw std::invalid_argument("odometry timestamps must be strictly increasing");
  }
  RigidTransform delta = odometry.delta;
  delta.rotation.normalize();
  const RigidTransform predicted = variables_[static_cast<std::size_t>(prev)].value * delta;
  const int id = addVariable(Kind::kState, odometry.timestamp, predicted);
  states_.push_back(id);
  factors_.emplace_back(BetweenFactor{prev, id, delta, sqrtInformation(odometry.covariance)});
  return id;
}

std::optional<int> FusionGraph::addPositionFix(const PositionMeasurement& fix, const Vec3& lever_arm) {
  requireSpd(fix.covariance, "position fix");
  int nearest = -1;
  double best = std::numeric_limits<double>::infinity();
  for (auto it = states_.rbegin(); it != states_.rend(); ++it) {
    const Variable& v = variables_[static_cast<std::size_t>(*it)];
    if (!v.active) break;
    const double gap = std::abs(v.timestamp - fix.timestamp);
    if (gap < best) {
      best = gap;
      nearest = *it;
    }
  }
  if (nearest < 0 || best > params_.attach_tolerance) {
    ++dropped_fixes_;
    std::ostringstream msg;
    msg << "dropped position fix at t=" << fix.timestamp << ": no state node within "
        << params_.attach_tolerance << " s";
    diagnostics_.push_back(msg.str());
    return std::nullopt;
  }
  const RigidTransform& state = variables_[static_cast<std::size_t>(nearest)].value;
  if (extrinsics_.empty()) {
    // Yaw is unknown: start at zero yaw with a wide prior, translation from this fix.
    const RigidTransform init = RigidTransform::fromYaw(0.0, state * lever_arm - fix.position);
    const int e = addVariable(Kind::kExtrinsic, fix.timestamp, init);
    extrinsics_.push_back(e);
    Vector6d var;
    const double tilt = params_.initial_tilt_sigma * params_.initial_tilt_sigma;
    const double trans = params_.initial_translation_sigma * params_.initial_translation_sigma;
    var << tilt, tilt, params_.initial_yaw_sigma * params_.initial_yaw_sigma, trans, trans, trans;
    extrinsic_covariance_ = var.asDiagonal();
    factors_.emplace_back(PriorFactor{e, init, sqrtInformation(extrinsic_covariance_)});
  }
  PositionFactor pf;
  pf.state = nearest;
  pf.extrinsic = extrinsics_.back();
  pf.lever_arm = lever_arm;
  pf.measurement = fix.position;
  pf.gated = extrinsicYawVariance() > params_.yaw_variance_threshold;
  const Eigen::Matrix3d sigma = gateGnss(extrinsicYawVariance(), fix.covariance, params_.yaw_variance_threshold,
                                         params_.gnss_inflation);
  pf.sqrt_information = sqrtInformation(sigma);
  factors_.emplace_back(pf);
  return static_cast<int>(factors_.size()) - 1;
}

int FusionGraph::advanceExtrinsic(double timestamp, const Matrix6d& random_walk_covariance) {
  if (extrinsics_.empty()) throw std::logic_error("no extrinsic node to advance");
  requireSpd(random_walk_covariance, "extrinsic random walk");
  const int prev = extrinsics_.back();
  if (!(timestamp > variables_[static_cast<std::size_t>(prev)].timestamp)) {
    throw std::invalid_argument("extrinsic timestamps must be strictly increasing");
  }
  const int id = addVariable(Kind::kExtrinsic, timestamp, variables_[static_cast<std::size_t>(prev)].value);
  extrinsics_.push_back(id);
  factors_.emplace_back(
      BetweenFactor{prev, id, RigidTransform::identity(), sqrtInformation(random_walk_covariance)});
  extrinsic_covariance_ += random_walk_covariance;
  return id;
}

double FusionGraph::extrinsicYawVariance() const {
  if (extrinsics_.empty()) return params_.initial_yaw_sigma * params_.initial_yaw_sigma;
  const Eigen::Matrix3d r = variables_[static_cast<std::size_t>(extrinsics_.back())].value.matrix();
  const Eigen::Matrix3d world = r * extrinsic_covariance_.topLeftCorner<3, 3>() * r.transpose();
  return std::max(0.0, world(2, 2));
}

std::size_t FusionGraph::activeStateCount() const {
  return static_cast<std::size_t>(std::count_if(states_.begin(), states_.end(), [&](int id) {
    return variables_[static_cast<std::size_t>(id)].active;
  }));
}

std::size_t FusionGraph::activeVariableCount() const {
  return static_cast<std::size_t>(
      std::count_if(variables_.begin(), variables_.end(), [](const Variable& v) { return v.active; }));
}

std::vector<int> FusionGraph::takeRetiredStates() {
  std::vector<int> out;
  out.swap(retired_);
  return out;
}

FusionGraph FusionGraph::withoutPositionFactors() const {
  FusionGraph copy = *this;
  std::erase_if(copy.factors_, [](const Factor& f) { return std::holds_alternative<PositionFactor>(f); });
  return copy;
}

double FusionGraph::cost() const {
  std::vector<RigidTransform> values;
  values.reserve(variables_.size());
  for (const Variable& v : variables_) values.push_back(v.value);
  return totalCost(factors_, values);
}

namespace {

struct ActiveIndex {
  std::vector<int> column;  ///< variable id -> block, -1 when inactive
  std::vector<int> ids;     ///< block -> variable id
};

}  // namespace

OptimizationReport FusionGraph::optimize() {
  OptimizationReport report;
  if (!initialized()) throw std::logic_error("fusion graph is empty");

  ActiveIndex index;
  index.column.assign(variables_.size(), -1);
  for (std::size_t i = 0; i < variables_.size(); ++i) {
    if (variables_[i].active) {
      index.column[i] = static_cast<int>(index.ids.size());
      index.ids.push_back(static_cast<int>(i));
    }
  }
  const auto blocks = static_cast<Eigen::Index>(index.ids.size());
  std::vector<RigidTransform> values;
  values.reserve(variables_.size());
  for (const Variable& v : variables_) values.push_back(v.value);

  double cost = totalCost(factors_, values);
  report.initial_cost = cost;
  double lambda = 1e-6;
  Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> solver;
  for (int iter = 0; iter < params_.max_iterations; ++iter) {
    report.iterations = iter + 1;
    const NormalEquations ne = buildNormalEquations(factors_, values, index.column, blocks);
    bool accepted = false;
    while (!accepted) {
      Eigen::SparseMatrix<double> damped = ne.hessian;
      for (Eigen::Index k = 0; k < damped.rows(); ++k) {
        damped.coeffRef(k, k) += lambda * std::max(ne.hessian.coeff(k, k), 1e-9);
      }
      solver.compute(damped);
      if (solver.info() != Eigen::Success) {
        lambda *= 10.0;
        if (lambda > 1e12) break;
        continue;
      }
      const Eigen::VectorXd step = -solver.solve(ne.gradient);
      const double predicted = -(ne.gradient.dot(step) + 0.5 * step.dot(ne.hessian * step));
      if (!(predicted > params_.cost_tolerance)) {
        report.converged = true;
        break;
      }
      std::vector<RigidTransform> trial = values;
      for (Eigen::Index b = 0; b < blocks; ++b) {
        const auto id = static_cast<std::size_t>(index.ids[static_cast<std::size_t>(b)]);
        trial[id] = values[id].retract(step.segment<6>(6 * b));
      }
      const double trial_cost = totalCost(factors_, trial);
      if (trial_cost <= cost) {
        const double decrease = cost - trial_cost;
        values = std::move(trial);
        cost = trial_cost;
        lambda = std::max(lambda * 0.1, 1e-12);
        accepted = true;
        if (decrease < params_.cost_tolerance) report.converged = true;
      } else {
        lambda *= 10.0;
        if (lambda > 1e12) break;
      }
    }
    if (report.converged) break;
    if (!accepted) {
      report.solver_failure = true;
      std::ostringstream msg;
      msg << "solver failure at t=" << variables_[static_cast<std::size_t>(states_.back())].timestamp
          << ": damping exhausted, keeping last iterate";
      diagnostics_.push_back(msg.str());
      break;
    }
  }
  report.final_cost = cost;
  for (Eigen::Index b = 0; b < blocks; ++b) {
    const auto id = static_cast<std::size_t>(index.ids[static_cast<std::size_t>(b)]);
    variables_[id].value = values[id];
  }
  refreshExtrinsicCovariance();

  // Expire variables outside the window, keeping the newest of each kind.
  const double horizon = variables_[static_cast<std::size_t>(states_.back())].timestamp - params_.window;
  std::vector<int> expired;
  for (int id : states_) {
    const Variable& v = variables_[static_cast<std::size_t>(id)];
    if (v.active && v.timestamp < horizon && id != states_.back()) expired.push_back(id);
  }
  for (int id : extrinsics_) {
    const Variable& v = variables_[static_cast<std::size_t>(id)];
    if (v.active && v.timestamp < horizon && id != extrinsics_.back()) expired.push_back(id);
  }
  if (!expired.empty()) {
    marginalize(expired);
    report.marginalized = expired.size();
  }
  return report;
}

Matrix6d FusionGraph::marginalCovariance(int variable) const {
  if (!variables_.at(static_cast<std::size_t>(variable)).active) {
    throw std::invalid_argument("marginal covariance requested for an inactive variable");
  }
  std::vector<int> column(variables_.size(), -1);
  Eigen::Index blocks = 0;
  for (std::size_t i = 0; i < variables_.size(); ++i) {
    if (variables_[i].active) column[i] = static_cast<int>(blocks++);
  }
  std::vector<RigidTransform> values;
  for (const Variable& v : variables_) values.push_back(v.value);
  const NormalEquations ne = buildNormalEquations(factors_, values, column, blocks);
  Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> solver(ne.hessian);
  if (solver.info() != Eigen::Success) throw std::runtime_error("information matrix is not invertible");
  Eigen::MatrixXd rhs = Eigen::MatrixXd::Zero(6 * blocks, 6);
  rhs.middleRows<6>(6 * column[static_cast<std::size_t>(variable)]).setIdentity();
  const Eigen::MatrixXd sol = solver.solve(rhs);
  Matrix6d cov = sol.middleRows<6>(6 * column[static_cast<std::size_t>(variable)]);
  return 0.5 * (cov + cov.transpose());
}

void FusionGraph::refreshExtrinsicCovariance() {
  if (extrinsics_.empty()) return;
  try {
    extrinsic_covariance_ = marginalCovariance(extrinsics_.back());
  } catch (const std::runtime_error& e) {
    diagnostics_.push_back(std::string("extrinsic covariance unavailable: ") + e.what());
  }
}

void FusionGraph::marginalize(const std::vector<int>& expired) {
  const std::set<int> gone(expired.begin(), expired.end());
  std::vector<Factor> touching;
  std::vector<Factor> kept;
  std::set<int> separator;
  for (Factor& f : factors_) {
    const std::vector<int> vars = factorVariables(f);
    const bool hits = std::any_of(vars.begin(), vars.end(), [&](int v) { return gone.count(v) > 0; });
    if (hits) {
      for (int v : vars) {
        if (!gone.count(v)) separator.insert(v);
      }
      touching.push_back(std::move(f));
    } else {
      kept.push_back(std::move(f));
    }
  }

  // Dense system over [expired | separator].
  std::vector<int> order(expired.begin(), expired.end());
  std::sort(order.begin(), order.end());
  const auto m = static_cast<Eigen::Index>(order.size());
  order.insert(order.end(), separator.begin(), separator.end());
  std::vector<int> column(variables_.size(), -1);
  for (std::size_t i = 0; i < order.size(); ++i) column[static_cast<std::size_t>(order[i])] = static_cast<int>(i);
  std::vector<RigidTransform> values;
  for (const Variable& v : variables_) values.push_back(v.value);
  const NormalEquations ne =
      buildNormalEquations(touching, values, column, static_cast<Eigen::Index>(order.size()));
  const Eigen::MatrixXd h = Eigen::MatrixXd(ne.hessian);
  const auto s = static_cast<Eigen::Index>(separator.size());

  for (int id : expired) {
    variables_[static_cast<std::size_t>(id)].active = false;
    if (variables_[static_cast<std::size_t>(id)].kind == Kind::kState) retired_.push_back(id);
  }
  std::sort(retired_.begin(), retired_.end());
  factors_ = std::move(kept);
  if (s == 0) return;

  const Eigen::MatrixXd hmm = h.topLeftCorner(6 * m, 6 * m);
  const Eigen::MatrixXd hms = h.topRightCorner(6 * m, 6 * s);
  const Eigen::MatrixXd hss = h.bottomRightCorner(6 * s, 6 * s);
  const Eigen::VectorXd bm = ne.gradient.head(6 * m);
  const Eigen::VectorXd bs = ne.gradient.tail(6 * s);

  // Pseudo-inverse of the expired block; unconstrained directions carry no information.
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> em(hmm);
  const double mmax = std::max(em.eigenvalues().maxCoeff(), 0.0);
  Eigen::VectorXd inv = Eigen::VectorXd::Zero(em.eigenvalues().size());
  for (Eigen::Index i = 0; i < inv.size(); ++i) {
    if (em.eigenvalues()(i) > 1e-12 * mmax) inv(i) = 1.0 / em.eigenvalues()(i);
  }
  const Eigen::MatrixXd hmm_inv = em.eigenvectors() * inv.asDiagonal() * em.eigenvectors().transpose();
  Eigen::MatrixXd schur = hss - hms.transpose() * hmm_inv * hms;
  schur = 0.5 * (schur + schur.transpose());
  const Eigen::VectorXd bschur = bs - hms.transpose() * hmm_inv * bm;

  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(schur);
  const double smax = std::max(es.eigenvalues().maxCoeff(), 0.0);
  std::vector<Eigen::Index> keep;
  for (Eigen::Index i = 0; i < es.eigenvalues().size(); ++i) {
    if (es.eigenvalues()(i) > 1e-12 * smax) keep.push_back(i);
  }
  if (keep.empty()) return;
  LinearizedPrior prior;
  prior.variables.assign(separator.begin(), separator.end());
  for (int id : prior.variables) prior.linearization.push_back(variables_[static_cast<std::size_t>(id)].value);
  prior.sqrt_information.resize(static_cast<Eigen::Index>(keep.size()), 6 * s);
  prior.offset.resize(static_cast<Eigen::Index>(keep.size()));
  for (std::size_t r = 0; r < keep.size(); ++r) {
    const double d = es.eigenvalues()(keep[r]);
    const Eigen::VectorXd u = es.eigenvectors().col(keep[r]);
    prior.sqrt_information.row(static_cast<Eigen::Index>(r)) = std::sqrt(d) * u.transpose();
    prior.offset(static_cast<Eigen::Index>(r)) = u.dot(bschur) / std::sqrt(d);
  }
  factors_.emplace_back(std::move(prior));
}

}  // namespace mdsurvey
