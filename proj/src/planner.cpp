// SPDX-License-Identifier: Apache-2.0
// Copyright (c) 2026 The mdsurvey Authors

#include "mdsurvey/planner.hpp"

#include <algorithm>
#include <cmath>

#include "mdsurvey/alignment.hpp"

namespace mdsurvey {

int PlannerParams::layerCount() const {
  return std::max(1, static_cast<int>(std::lround(horizon / sample_spacing)));
}

int PlannerParams::yawBins() const { return static_cast<int>(std::lround(2.0 * kPi / yaw_resolution)); }

void PlannerParams::validate() const {
  const double positives[] = {horizon,        sample_spacing,     yaw_resolution,
                              max_alignment,  max_lane_deviation, exploration_sector,
                              max_yaw_step,   standoff,           body_radius,
                              vertical_clearance, slope_max};
  for (double v : positives) {
    if (!(v > 0.0) || !std::isfinite(v)) {
      throw std::invalid_argument("PlannerParams: all parameters must be positive and finite");
    }
  }
  if (avoidance_margin < 0.0 || max_avoidance_steps < 0) {
    throw std::invalid_argument("PlannerParams: negative avoidance settings");
  }
  const double bins = 2.0 * kPi / yaw_resolution;
  if (std::abs(bins - std::round(bins)) > 1e-6) {
    throw std::invalid_argument("PlannerParams: yaw resolution must divide a full turn");
  }
}

TerrainSnapshot TerrainSnapshot::capture(const ElevationMap& map, double slope_max) {
  TraversabilityMask mask = traversableMask(map, slope_max);
  ClearanceField clearance(map, mask);
  return TerrainSnapshot{map, std::move(mask), std::move(clearance)};
}

// ---------------------------------------------------------------------------

std::size_t LatticeTree::nodeCount() const {
  std::size_t n = 0;
  for (const auto& layer : layers_) n += layer.nodes.size();
  return n;
}

int LatticeTree::stepDistance(int a, int b) const {
  int d = (a - b) % yaw_bins_;
  if (d < 0) d += yaw_bins_;
  return std::min(d, yaw_bins_ - d);
}

void LatticeTree::reroot(int index) {
  if (layers_.size() < 2 || index < 0 || index >= static_cast<int>(layers_[1].nodes.size())) {
    throw std::invalid_argument("LatticeTree::reroot: invalid layer-1 node");
  }
  LatticeNode root = layers_[1].nodes[index];
  root.parents.clear();
  layers_[1].nodes = {root};
  layers_.erase(layers_.begin());

  // old index -> new index (or -1) in the previous layer
  std::vector<int> previous_map(static_cast<std::size_t>(index) + 1, -1);
  previous_map[index] = 0;
  for (std::size_t l = 1; l < layers_.size(); ++l) {
    auto& nodes = layers_[l].nodes;
    std::vector<int> current_map(nodes.size(), -1);
    std::vector<LatticeNode> kept;
    kept.reserve(nodes.size());
    for (std::size_t i = 0; i < nodes.size(); ++i) {
      std::vector<int> parents;
      for (int p : nodes[i].parents) {
        if (p < static_cast<int>(previous_map.size()) && previous_map[p] >= 0) {
          parents.push_back(previous_map[p]);
        }
      }
      if (parents.empty()) continue;
      current_map[i] = static_cast<int>(kept.size());
      kept.push_back(nodes[i]);
      kept.back().parents = std::move(parents);
    }
    nodes = std::move(kept);
    previous_map = std::move(current_map);
  }
  free_root_rotation = false;
}

// ---------------------------------------------------------------------------

SearchResult searchBest(const LatticeTree& tree) {
  const auto& layers = tree.layers();
  if (layers.size() < 2 || layers.front().nodes.empty()) {
    throw PlannerStall(PlannerStall::Reason::kNoLayer, "searchBest: lattice has no layer beyond the root");
  }
  constexpr int kInf = LatticeNode::kUnreachable;
  std::vector<std::vector<int>> cost(layers.size());
  std::vector<std::vector<int>> parent(layers.size());
  cost[0].assign(layers[0].nodes.size(), kInf);
  parent[0].assign(layers[0].nodes.size(), -1);
  cost[0][0] = 0;

  for (std::size_t l = 1; l < layers.size(); ++l) {
    const auto& nodes = layers[l].nodes;
    const auto& prev = layers[l - 1].nodes;
    cost[l].assign(nodes.size(), kInf);
    parent[l].assign(nodes.size(), -1);
    for (std::size_t i = 0; i < nodes.size(); ++i) {
      for (int p : nodes[i].parents) {
        if (p < 0 || p >= static_cast<int>(prev.size()) || cost[l - 1][p] == kInf) continue;
        const int c = cost[l - 1][p] + tree.stepDistance(prev[p].yaw_index, nodes[i].yaw_index);
        if (c < cost[l][i]) {
          cost[l][i] = c;
          parent[l][i] = p;
        }
      }
    }
  }

  const auto& frontier = layers.back();
  const std::size_t last = layers.size() - 1;
  auto pick = [&](bool preferred_only) {
    int best = -1;
    double best_dev = 0.0;
    for (std::size_t i = 0; i < frontier.nodes.size(); ++i) {
      if (cost[last][i] == kInf) continue;
      if (preferred_only && !frontier.nodes[i].preferred) continue;
      const double dev = std::abs(wrapAngle(frontier.nodes[i].yaw - frontier.lane_yaw));
      const bool better =
          best < 0 || cost[last][i] < cost[last][best] ||
          (cost[last][i] == cost[last][best] &&
           (dev < best_dev - 1e-12 ||
            (dev <= best_dev + 1e-12 && frontier.nodes[i].yaw_index < frontier.nodes[best].yaw_index)));
      if (better) {
        best = static_cast<int>(i);
        best_dev = dev;
      }
    }
    return best;
  };

  int terminal = pick(true);
  if (terminal < 0) terminal = pick(false);
  if (terminal < 0) {
    throw PlannerStall(PlannerStall::Reason::kNoPath, "searchBest: frontier unreachable");
  }

  SearchResult result;
  result.nodes.assign(layers.size(), 0);
  int node = terminal;
  for (std::size_t l = last; l > 0; --l) {
    result.nodes[l] = node;
    node = parent[l][node];
  }
  result.nodes[0] = node;
  result.cost_steps = cost[last][terminal];
  result.cost = result.cost_steps * tree.yawResolution();
  result.preferred = frontier.nodes[terminal].preferred;
  return result;
}

// ---------------------------------------------------------------------------

std::optional<Vec3> liftSample(const ElevationMap& map, const Vec2& xy, double standoff) {
  const auto cell = map.cellAt(xy);
  if (!cell) return std::nullopt;
  const auto z = map.elevation(*cell);
  if (!z) return std::nullopt;
  const auto normal = map.surfaceNormal(*cell);
  if (!normal) return std::nullopt;
  return Vec3(xy.x(), xy.y(), *z) + standoff * *normal;
}

bool positionFeasible(const TerrainSnapshot& terrain, const Vec2& xy, double clearance) {
  const auto cell = terrain.map.cellAt(xy);
  if (!cell || !terrain.map.observed(*cell) || !terrain.mask.traversable(*cell)) return false;
  // space beyond the map edge is unknown, so the disc has to fit inside the map
  const Vec2 lo = terrain.map.origin();
  const Vec2 hi = lo + terrain.map.resolution() * Vec2(terrain.map.width(), terrain.map.height());
  const Vec2 c = terrain.map.cellCenter(*cell);
  const double edge = std::min({c.x() - lo.x(), c.y() - lo.y(), hi.x() - c.x(), hi.y() - c.y()});
  if (edge < clearance) return false;
  return terrain.clearance.distance(*cell) >= clearance;
}

bool motionClear(const TerrainSnapshot& terrain, const Vec3& from, const Vec3& to,
                 const PlannerParams& params) {
  const double spacing = 0.5 * terrain.map.resolution();
  const double length = (to - from).head<2>().norm();
  const int steps = std::max(1, static_cast<int>(std::ceil(length / spacing)));
  for (int i = 0; i <= steps; ++i) {
    const Vec3 p = from + (to - from) * (static_cast<double>(i) / steps);
    const auto cell = terrain.map.cellAt(p.head<2>());
    if (!cell) return false;
    const auto z = terrain.map.elevation(*cell);
    if (!z) return false;
    if (p.z() - *z < params.vertical_clearance) return false;
    if (terrain.clearance.distance(*cell) < params.body_radius) return false;
  }
  return true;
}

namespace {

bool yawStepFeasible(int from_index, int to_index, int bins, const PlannerParams& params) {
  int d = (from_index - to_index) % bins;
  if (d < 0) d += bins;
  d = std::min(d, bins - d);
  return d * (2.0 * kPi / bins) <= params.max_yaw_step + 1e-9;
}

}  // namespace

bool edgeFeasible(const LatticeNode& from, const LatticeNode& to, const TerrainSnapshot& terrain,
                  const PlannerParams& params) {
  return yawStepFeasible(from.yaw_index, to.yaw_index, params.yawBins(), params) &&
         motionClear(terrain, from.position, to.position, params);
}

Avoidance avoidObstacle(const TerrainSnapshot& terrain, const Vec2& sample, const Vec2& lane_dir,
                        const PlannerParams& params) {
  const double required = params.body_radius + params.avoidance_margin;
  if (positionFeasible(terrain, sample, required)) return {sample, 0};
  const Vec2 lateral(-lane_dir.y(), lane_dir.x());
  const double step = terrain.map.resolution();
  for (int k = 1; k <= params.max_avoidance_steps; ++k) {
    for (int sign : {1, -1}) {
      const Vec2 candidate = sample + sign * k * step * lateral.normalized();
      if (positionFeasible(terrain, candidate, required)) return {candidate, sign * k};
    }
  }
  return {std::nullopt, 0};
}

namespace {

bool discObserved(const ElevationMap& map, const Vec2& center, double radius) {
  const double res = map.resolution();
  const int reach = static_cast<int>(std::ceil(radius / res));
  const auto c = map.cellAt(center);
  if (!c) return false;
  for (int dr = -reach; dr <= reach; ++dr) {
    for (int dc = -reach; dc <= reach; ++dc) {
      const CellIndex n{c->col + dc, c->row + dr};
      if (!map.contains(n)) continue;
      if ((map.cellCenter(n) - map.cellCenter(*c)).norm() > radius) continue;
      if (!map.observed(n)) return false;
    }
  }
  return true;
}

}  // namespace

LayerExpansion expandLayer(LatticeTree& tree, const TerrainSnapshot& terrain,
                           const CoveragePath& path, std::size_t sample_index,
                           const PlannerParams& params) {
  LayerExpansion out;
  if (tree.empty()) throw std::invalid_argument("expandLayer: lattice has no root");
  if (sample_index >= path.size()) throw std::invalid_argument("expandLayer: sample out of range");
  const PathSample& sample = path[sample_index];

  const Avoidance avoid = avoidObstacle(terrain, sample.position, sample.lane_dir, params);
  if (!avoid.position) {
    const double radius = params.body_radius + params.avoidance_margin;
    out.status = discObserved(terrain.map, sample.position, radius) ? LayerStatus::kBlocked
                                                                     : LayerStatus::kDeferred;
    return out;
  }
  const auto lifted = liftSample(terrain.map, *avoid.position, params.standoff);
  if (!lifted) return out;
  const auto normal = terrain.map.surfaceNormal(*terrain.map.cellAt(*avoid.position));
  if (!normal || normal->z() <= 0.0) return out;
  if (!positionFeasible(terrain, lifted->head<2>(), params.body_radius)) return out;

  const LatticeLayer& previous = tree.layers().back();
  // every node of a layer shares one position, so the motion check is per layer
  if (!motionClear(terrain, previous.nodes.front().position, *lifted, params)) return out;

  LatticeLayer layer;
  layer.sample_index = sample_index;
  layer.reference = *avoid.position;
  layer.shifted = avoid.offset_steps != 0;
  layer.lane_yaw = headingOf(sample.lane_dir);
  if (sample.next_lane_dir) layer.next_lane_yaw = headingOf(*sample.next_lane_dir);

  const int bins = tree.yawBins();
  const double res = tree.yawResolution();
  const bool free_rotation = tree.free_root_rotation && tree.depth() == 1;
  const int lo = static_cast<int>(std::ceil((layer.lane_yaw - params.max_lane_deviation) / res - 1e-9));
  const int hi = static_cast<int>(std::floor((layer.lane_yaw + params.max_lane_deviation) / res + 1e-9));
  for (int k = lo; k <= hi; ++k) {
    ++out.candidates;
    LatticeNode node;
    node.yaw_index = ((k % bins) + bins) % bins;
    node.yaw = wrapAngle(node.yaw_index * res);
    if (residualAlignment(*normal, node.yaw) > params.max_alignment) continue;
    node.position = *lifted;
    node.pitch = optimalPitch(*normal, node.yaw);
    node.preferred = layer.next_lane_yaw &&
                     std::abs(wrapAngle(node.yaw - *layer.next_lane_yaw)) < params.exploration_sector;
    for (std::size_t p = 0; p < previous.nodes.size(); ++p) {
      if (free_rotation || yawStepFeasible(previous.nodes[p].yaw_index, node.yaw_index, bins, params)) {
        node.parents.push_back(static_cast<int>(p));
      }
    }
    if (node.parents.empty()) continue;
    layer.nodes.push_back(std::move(node));
  }
  if (layer.nodes.empty()) return out;

  out.new_nodes = layer.nodes.size();
  out.status = LayerStatus::kAdded;
  tree.layers().push_back(std::move(layer));
  return out;
}

// ---------------------------------------------------------------------------

YawLatticePlanner::YawLatticePlanner(CoveragePath path, PlannerParams params, std::size_t first_sample)
    : path_(std::move(path)),
      params_(params),
      tree_(params.yawBins()),
      next_sample_(first_sample),
      root_sample_(first_sample == 0 ? 0 : first_sample - 1) {
  params_.validate();
}

std::optional<PlanStep> YawLatticePlanner::tick(const VehicleState& state, const TerrainSnapshot& terrain) {
  if (tree_.empty()) {
    LatticeLayer root;
    root.sample_index = root_sample_;
    root.reference = state.position.head<2>();
    root.lane_yaw = headingOf(path_[std::min(root_sample_, path_.size() - 1)].lane_dir);
    LatticeNode node;
    node.position = state.position;
    const int bins = tree_.yawBins();
    node.yaw_index = static_cast<int>(std::lround(state.yaw / tree_.yawResolution())) % bins;
    if (node.yaw_index < 0) node.yaw_index += bins;
    node.yaw = wrapAngle(node.yaw_index * tree_.yawResolution());
    node.pitch = state.pitch;
    root.nodes.push_back(node);
    tree_.layers().push_back(std::move(root));
    tree_.free_root_rotation = hovering_;
  }

  auto is_skipped = [this](std::size_t i) {
    return std::binary_search(skipped_.begin(), skipped_.end(), i);
  };
  std::size_t added = 0;
  while (static_cast<int>(tree_.depth()) - 1 < params_.layerCount() && next_sample_ < path_.size()) {
    if (is_skipped(next_sample_)) {
      ++next_sample_;
      continue;
    }
    const LayerExpansion e = expandLayer(tree_, terrain, path_, next_sample_, params_);
    if (e.status == LayerStatus::kBlocked) {
      skipped_.insert(std::upper_bound(skipped_.begin(), skipped_.end(), next_sample_), next_sample_);
      ++next_sample_;
      continue;
    }
    if (e.status == LayerStatus::kDeferred) break;
    added += e.new_nodes;
    ++next_sample_;
  }

  if (tree_.depth() == 1) {
    if (next_sample_ >= path_.size()) return std::nullopt;
    last_stall_ = PlannerStall::Reason::kNoLayer;
    throw PlannerStall(PlannerStall::Reason::kNoLayer, "planner: next sample not expandable");
  }

  SearchResult best;
  try {
    best = searchBest(tree_);
  } catch (const PlannerStall& stall) {
    last_stall_ = stall.reason();
    throw;
  }

  const LatticeLayer& first = tree_.layers()[1];
  const LatticeNode& commit = first.nodes[best.nodes[1]];
  PlanStep step;
  step.command = {commit.position, commit.yaw, commit.pitch};
  step.sample_index = first.sample_index;
  step.cost = best.cost;
  step.preferred = commit.preferred;
  step.shifted = first.shifted;
  step.nodes_added = added;

  root_sample_ = first.sample_index;
  tree_.reroot(best.nodes[1]);
  consecutive_stalls_ = 0;
  hovering_ = false;
  last_stall_.reset();
  return step;
}

void YawLatticePlanner::recover() {
  ++consecutive_stalls_;
  hovering_ = true;
  tree_.clear();
  next_sample_ = root_sample_ + 1;
  if (consecutive_stalls_ >= 2) {
    std::size_t s = next_sample_;
    while (std::binary_search(skipped_.begin(), skipped_.end(), s)) ++s;
    if (s < path_.size()) skipped_.insert(std::upper_bound(skipped_.begin(), skipped_.end(), s), s);
  }
}

}  // namespace mdsurvey
