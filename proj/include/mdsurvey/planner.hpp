// SPDX-License-Identifier: Apache-2.0
// Copyright (c) 2026 The mdsurvey Authors

#pragma once

#include <limits>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <vector>

#include "mdsurvey/coverage.hpp"
#include "mdsurvey/gridmap.hpp"
#include "mdsurvey/vehicle.hpp"

namespace mdsurvey {

struct PlannerParams {
  double horizon = 1.8;                         ///< look-ahead along the path [m]
  double sample_spacing = 0.3;                  ///< [m]
  double yaw_resolution = deg2rad(3.0);         ///< must divide 2*pi
  double max_alignment = deg2rad(7.5);          ///< residual alignment limit
  double max_lane_deviation = deg2rad(120.0);   ///< forward-visibility half-width
  double exploration_sector = deg2rad(30.0);    ///< preferred half-width around next-lane heading
  double max_yaw_step = deg2rad(30.0);          ///< per-edge kinematic cap
  double standoff = 0.15;                       ///< detector distance to the surface [m]
  double body_radius = 0.6;                     ///< collision disc [m]
  double vertical_clearance = 0.1;              ///< [m]
  double avoidance_margin = 0.15;               ///< extra clearance demanded of reference samples [m]
  int max_avoidance_steps = 10;                 ///< lateral probes per side
  double slope_max = deg2rad(45.0);             ///< traversability threshold

  int layerCount() const;
  int yawBins() const;
  /// Throws std::invalid_argument on non-positive values or a resolution that does not divide 2*pi.
  void validate() const;
};

/// Immutable view of the terrain used for one planning tick.
struct TerrainSnapshot {
  ElevationMap map;
  TraversabilityMask mask;
  ClearanceField clearance;

  static TerrainSnapshot capture(const ElevationMap& map, double slope_max);
};

class PlannerStall : public std::runtime_error {
 public:
  enum class Reason { kNoLayer, kNoPath };
  PlannerStall(Reason reason, const std::string& what) : std::runtime_error(what), reason_(reason) {}
  Reason reason() const { return reason_; }

 private:
  Reason reason_;
};

struct LatticeNode {
  static constexpr int kUnreachable = std::numeric_limits<int>::max();

  Vec3 position = Vec3::Zero();
  int yaw_index = 0;   ///< yaw = yaw_index * 2*pi / bins
  double yaw = 0.0;
  double pitch = 0.0;
  bool preferred = false;
  std::vector<int> parents;  ///< feasible edges into the previous layer, ascending
};

struct LatticeLayer {
  std::size_t sample_index = 0;
  Vec2 reference = Vec2::Zero();
  bool shifted = false;
  double lane_yaw = 0.0;
  std::optional<double> next_lane_yaw;
  std::vector<LatticeNode> nodes;
};

/**
 * @brief Layered multitree of yaw candidates along the reference path.
 *
 * Layer 0 holds the committed root. Edges only join consecutive layers and
 * are stored on the child as parent indices, so the expensive feasibility
 * checks survive a re-root; only the cost labels are recomputed.
 */
class LatticeTree {
 public:
  explicit LatticeTree(int yaw_bins) : yaw_bins_(yaw_bins) {}

  int yawBins() const { return yaw_bins_; }
  double yawResolution() const { return 2.0 * kPi / yaw_bins_; }
  std::vector<LatticeLayer>& layers() { return layers_; }
  const std::vector<LatticeLayer>& layers() const { return layers_; }
  std::size_t depth() const { return layers_.size(); }
  bool empty() const { return layers_.empty(); }
  std::size_t nodeCount() const;

  /// Yaw change between two grid indices, in grid steps.
  int stepDistance(int a, int b) const;

  /// Promotes node `index` of layer 1 to the root and prunes what it cannot reach.
  void reroot(int index);
  void clear() { layers_.clear(); }

  /// Whether the root may rotate freely into layer 1 (hover turn after a stall).
  bool free_root_rotation = false;

 private:
  int yaw_bins_;
  std::vector<LatticeLayer> layers_;
};

struct SearchResult {
  std::vector<int> nodes;  ///< node index per layer, root first
  int cost_steps = 0;
  double cost = 0.0;       ///< sum of |yaw change| [rad]
  bool preferred = false;  ///< terminal node lies in the exploration sector
};

/**
 * Layered dynamic program for the minimum total yaw change from the root to
 * the frontier. Paths ending in a preferred node win whenever one exists.
 * Ties go to the terminal yaw closest to the lane direction, then to the lower
 * yaw index; inner ties go to the lower parent index.
 * Throws PlannerStall if no frontier node is reachable.
 */
SearchResult searchBest(const LatticeTree& tree);

/// Detector position `standoff` along the surface normal above the reference.
std::optional<Vec3> liftSample(const ElevationMap& map, const Vec2& xy, double standoff);

/// Observed, traversable and at least `clearance` away from non-traversable cells and the map edge.
bool positionFeasible(const TerrainSnapshot& terrain, const Vec2& xy, double clearance);

/// Straight-line motion check against the clearance disc and the vertical band.
bool motionClear(const TerrainSnapshot& terrain, const Vec3& from, const Vec3& to,
                 const PlannerParams& params);

bool edgeFeasible(const LatticeNode& from, const LatticeNode& to, const TerrainSnapshot& terrain,
                  const PlannerParams& params);

struct Avoidance {
  std::optional<Vec2> position;  ///< empty when blocked
  int offset_steps = 0;          ///< signed lateral offset in map cells
};

/// Probes +k, -k lateral offsets (k = 1..max) until a sample is feasible.
Avoidance avoidObstacle(const TerrainSnapshot& terrain, const Vec2& sample, const Vec2& lane_dir,
                        const PlannerParams& params);

enum class LayerStatus {
  kAdded,
  kDeferred,  ///< terrain not yet observed or not connectable; retry later
  kBlocked    ///< observed and no feasible avoidance position
};

struct LayerExpansion {
  LayerStatus status = LayerStatus::kDeferred;
  std::size_t new_nodes = 0;
  std::size_t candidates = 0;  ///< yaw samples generated before filtering
};

/// Appends the layer for `sample_index` to the tree.
LayerExpansion expandLayer(LatticeTree& tree, const TerrainSnapshot& terrain,
                           const CoveragePath& path, std::size_t sample_index,
                           const PlannerParams& params);

struct PlanStep {
  PoseCommand command;
  std::size_t sample_index = 0;
  double cost = 0.0;
  bool preferred = false;
  bool shifted = false;
  std::size_t nodes_added = 0;
};

/// Receding-horizon yaw planner that reuses its lattice between ticks.
class YawLatticePlanner {
 public:
  YawLatticePlanner(CoveragePath path, PlannerParams params, std::size_t first_sample = 1);

  /// Next commitment, or std::nullopt when the path is exhausted. Throws PlannerStall.
  std::optional<PlanStep> tick(const VehicleState& state, const TerrainSnapshot& terrain);

  /// Drops the lattice after a stall; the next tick re-roots at `state` and may turn in place.
  void recover();

  const LatticeTree& tree() const { return tree_; }
  const PlannerParams& params() const { return params_; }
  const CoveragePath& path() const { return path_; }
  std::size_t nextSample() const { return next_sample_; }
  const std::vector<std::size_t>& skippedSamples() const { return skipped_; }

 private:
  CoveragePath path_;
  PlannerParams params_;
  LatticeTree tree_;
  std::size_t next_sample_;
  std::size_t root_sample_;
  std::optional<PlannerStall::Reason> last_stall_;
  int consecutive_stalls_ = 0;
  bool hovering_ = true;  ///< at takeoff or after a stall the root may turn in place
  std::vector<std::size_t> skipped_;
};

/// CSV header of the planner trace.
inline constexpr const char* kPlannerTraceHeader =
    "tick,x,y,z,yaw_deg,pitch_deg,cost_deg,preferred,shifted,stalled";

}  // namespace mdsurvey
