// SPDX-License-Identifier: Apache-2.0
// Copyright (c) 2026 The mdsurvey Authors

#include "mdsurvey/gridmap.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

#include "mdsurvey/alignment.hpp"

namespace mdsurvey {

namespace {

int cellCount(double extent, double resolution) {
  // tolerate representation error, e.g. 3.0 / 0.15 = 20.000000000000004
  return static_cast<int>(std::ceil(extent / resolution - 1e-9));
}

}  // namespace

ElevationMap::ElevationMap(const Vec2& origin, const Vec2& size, double resolution,
                           ElevationFusion fusion, double average_weight)
    : origin_(origin), resolution_(resolution), fusion_(fusion), average_weight_(average_weight) {
  if (!(resolution > 0.0) || !std::isfinite(resolution)) {
    throw std::invalid_argument("ElevationMap: resolution must be positive");
  }
  if (!(size.x() > 0.0) || !(size.y() > 0.0) || !size.allFinite()) {
    throw std::invalid_argument("ElevationMap: size must be positive");
  }
  if (!(average_weight > 0.0) || average_weight > 1.0) {
    throw std::invalid_argument("ElevationMap: average weight must be in (0, 1]");
  }
  width_ = std::max(1, cellCount(size.x(), resolution));
  height_ = std::max(1, cellCount(size.y(), resolution));
  const auto n = static_cast<std::size_t>(width_) * height_;
  elevation_.assign(n, 0.0);
  observed_.assign(n, 0);
  signal_sum_.assign(n, 0.0);
  signal_count_.assign(n, 0);
  normal_cache_.assign(n, Vec3::UnitZ());
  normal_state_.assign(n, 0);
}

std::optional<CellIndex> ElevationMap::cellAt(const Vec2& xy) const {
  if (!xy.allFinite()) return std::nullopt;
  const double fx = (xy.x() - origin_.x()) / resolution_;
  const double fy = (xy.y() - origin_.y()) / resolution_;
  if (fx < 0.0 || fy < 0.0 || fx >= width_ || fy >= height_) return std::nullopt;
  return CellIndex{static_cast<int>(fx), static_cast<int>(fy)};
}

Vec2 ElevationMap::cellCenter(CellIndex cell) const {
  return origin_ + resolution_ * Vec2(cell.col + 0.5, cell.row + 0.5);
}

void ElevationMap::requireInBounds(CellIndex cell) const {
  if (!contains(cell)) {
    throw std::invalid_argument("ElevationMap: cell (" + std::to_string(cell.col) + ", " +
                                std::to_string(cell.row) + ") out of bounds");
  }
}

bool ElevationMap::observed(CellIndex cell) const {
  requireInBounds(cell);
  return observed_[linear(cell)] != 0;
}

std::optional<double> ElevationMap::elevation(CellIndex cell) const {
  requireInBounds(cell);
  const auto i = linear(cell);
  if (!observed_[i]) return std::nullopt;
  return elevation_[i];
}

std::optional<double> ElevationMap::elevationAt(const Vec2& xy) const {
  const auto cell = cellAt(xy);
  if (!cell) return std::nullopt;
  return elevation(*cell);
}

void ElevationMap::setElevation(CellIndex cell, double z) {
  requireInBounds(cell);
  const auto i = linear(cell);
  elevation_[i] = z;
  observed_[i] = 1;
  invalidateNormals(cell);
}

void ElevationMap::invalidateNormals(CellIndex cell) {
  for (int dr = -1; dr <= 1; ++dr) {
    for (int dc = -1; dc <= 1; ++dc) {
      const CellIndex c{cell.col + dc, cell.row + dr};
      if (contains(c)) normal_state_[linear(c)] = 0;
    }
  }
}

IntegrationResult ElevationMap::integratePoints(std::span<const Vec3> points) {
  IntegrationResult result;
  std::vector<std::size_t> touched;
  touched.reserve(points.size());
  for (const Vec3& p : points) {
    const auto cell = cellAt(p.head<2>());
    if (!cell || !std::isfinite(p.z())) {
      ++result.out_of_bounds;
      continue;
    }
    const auto i = linear(*cell);
    const double before = elevation_[i];
    const bool was_observed = observed_[i] != 0;
    if (!was_observed) {
      elevation_[i] = p.z();
      observed_[i] = 1;
    } else if (fusion_ == ElevationFusion::kMaximum) {
      elevation_[i] = std::max(elevation_[i], p.z());
    } else {
      elevation_[i] += average_weight_ * (p.z() - elevation_[i]);
    }
    if (!was_observed || elevation_[i] != before) invalidateNormals(*cell);
    touched.push_back(i);
  }
  std::sort(touched.begin(), touched.end());
  result.updated_cells = static_cast<std::size_t>(
      std::unique(touched.begin(), touched.end()) - touched.begin());
  return result;
}

std::optional<Vec3> ElevationMap::surfaceNormal(CellIndex cell, int window) const {
  requireInBounds(cell);
  if (window < 1) throw std::invalid_argument("surfaceNormal: window must be >= 1");
  if (window != 1) return fitNormal(cell, window);
  const auto i = linear(cell);
  if (normal_state_[i] == 0) {
    const auto n = fitNormal(cell, 1);
    normal_state_[i] = n ? 1 : 2;
    if (n) normal_cache_[i] = *n;
  }
  if (normal_state_[i] == 2) return std::nullopt;
  return normal_cache_[i];
}

std::optional<Vec3> ElevationMap::fitNormal(CellIndex cell, int window) const {

  // z = a*dx + b*dy + c in coordinates relative to the query cell center
  Eigen::Matrix3d ata = Eigen::Matrix3d::Zero();
  Eigen::Vector3d atb = Eigen::Vector3d::Zero();
  int samples = 0;
  for (int dr = -window; dr <= window; ++dr) {
    for (int dc = -window; dc <= window; ++dc) {
      const CellIndex c{cell.col + dc, cell.row + dr};
      if (!contains(c) || !observed_[linear(c)]) continue;
      const Eigen::Vector3d row(dc * resolution_, dr * resolution_, 1.0);
      ata += row * row.transpose();
      atb += row * elevation_[linear(c)];
      ++samples;
    }
  }
  if (samples < 3) return std::nullopt;
  const Eigen::ColPivHouseholderQR<Eigen::Matrix3d> qr(ata);
  if (qr.rank() < 3) return std::nullopt;
  const Eigen::Vector3d coeffs = qr.solve(atb);
  return Vec3(-coeffs.x(), -coeffs.y(), 1.0).normalized();
}

void ElevationMap::accumulateSignal(std::span<const CellIndex> cells, double signal) {
  for (const CellIndex& c : cells) requireInBounds(c);
  for (const CellIndex& c : cells) {
    signal_sum_[linear(c)] += signal;
    signal_count_[linear(c)] += 1;
  }
}

int ElevationMap::signalCount(CellIndex cell) const {
  requireInBounds(cell);
  return signal_count_[linear(cell)];
}

double ElevationMap::signalSum(CellIndex cell) const {
  requireInBounds(cell);
  return signal_sum_[linear(cell)];
}

std::optional<double> ElevationMap::signalMean(CellIndex cell) const {
  requireInBounds(cell);
  const auto i = linear(cell);
  if (signal_count_[i] == 0) return std::nullopt;
  return signal_sum_[i] / signal_count_[i];
}

std::size_t ElevationMap::observedCount() const {
  return static_cast<std::size_t>(std::count(observed_.begin(), observed_.end(), 1));
}

// ---------------------------------------------------------------------------

TraversabilityMask::TraversabilityMask(int width, int height, std::vector<std::uint8_t> cells)
    : width_(width), height_(height), cells_(std::move(cells)) {
  if (cells_.size() != static_cast<std::size_t>(width) * height) {
    throw std::invalid_argument("TraversabilityMask: size mismatch");
  }
}

std::size_t TraversabilityMask::blockedCount() const {
  return static_cast<std::size_t>(std::count(cells_.begin(), cells_.end(), 0));
}

TraversabilityMask traversableMask(const ElevationMap& map, double slope_max, int window) {
  std::vector<std::uint8_t> cells(static_cast<std::size_t>(map.width()) * map.height(), 0);
  for (int row = 0; row < map.height(); ++row) {
    for (int col = 0; col < map.width(); ++col) {
      const CellIndex c{col, row};
      if (!map.observed(c)) continue;
      const auto normal = map.surfaceNormal(c, window);
      if (!normal) continue;
      const double slope = std::acos(std::clamp(normal->z(), -1.0, 1.0));
      if (slope > slope_max) continue;
      // step gradient to each observed neighbour
      const double z = *map.elevation(c);
      const double max_grad = std::tan(std::min(slope_max, kPi / 2.0 - 1e-9)) + 1e-9;
      bool step_ok = true;
      for (int dr = -1; dr <= 1 && step_ok; ++dr) {
        for (int dc = -1; dc <= 1 && step_ok; ++dc) {
          const CellIndex n{col + dc, row + dr};
          if ((dr == 0 && dc == 0) || !map.contains(n) || !map.observed(n)) continue;
          const double run = map.resolution() * std::hypot(dc, dr);
          step_ok = std::abs(*map.elevation(n) - z) / run <= max_grad;
        }
      }
      if (step_ok) cells[static_cast<std::size_t>(row) * map.width() + col] = 1;
    }
  }
  return TraversabilityMask(map.width(), map.height(), std::move(cells));
}

// ---------------------------------------------------------------------------

std::vector<double> squaredDistanceTransform(const TraversabilityMask& mask) {
  const int w = mask.width();
  const int h = mask.height();
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> grid(static_cast<std::size_t>(w) * h);
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c)
      grid[static_cast<std::size_t>(r) * w + c] = mask.traversable({c, r}) ? inf : 0.0;

  // Felzenszwalb & Huttenlocher lower envelope of parabolas, one axis at a time
  auto transform1d = [inf](std::vector<double>& f) {
    const int n = static_cast<int>(f.size());
    std::vector<double> d(n);
    std::vector<int> v(n);
    std::vector<double> z(n + 1);
    int k = -1;
    auto intersect = [&](int q, int p) {
      return ((f[q] + q * q) - (f[p] + p * p)) / (2.0 * q - 2.0 * p);
    };
    for (int q = 0; q < n; ++q) {
      if (f[q] == inf) continue;
      if (k < 0) {
        k = 0;
        v[0] = q;
        z[0] = -inf;
        z[1] = inf;
        continue;
      }
      double s = intersect(q, v[k]);
      while (s <= z[k]) {
        --k;
        s = intersect(q, v[k]);
      }
      ++k;
      v[k] = q;
      z[k] = s;
      z[k + 1] = inf;
    }
    if (k < 0) return;  // no finite samples in this line
    int j = 0;
    for (int q = 0; q < n; ++q) {
      while (z[j + 1] < q) ++j;
      const double dq = q - v[j];
      d[q] = dq * dq + f[v[j]];
    }
    f = std::move(d);
  };

  std::vector<double> line;
  for (int r = 0; r < h; ++r) {
    line.assign(grid.begin() + static_cast<std::ptrdiff_t>(r) * w,
                grid.begin() + static_cast<std::ptrdiff_t>(r + 1) * w);
    transform1d(line);
    std::copy(line.begin(), line.end(), grid.begin() + static_cast<std::ptrdiff_t>(r) * w);
  }
  for (int c = 0; c < w; ++c) {
    line.resize(h);
    for (int r = 0; r < h; ++r) line[r] = grid[static_cast<std::size_t>(r) * w + c];
    transform1d(line);
    for (int r = 0; r < h; ++r) grid[static_cast<std::size_t>(r) * w + c] = line[r];
  }
  return grid;
}

ClearanceField::ClearanceField(const ElevationMap& map, const TraversabilityMask& mask)
    : origin_(map.origin()),
      resolution_(map.resolution()),
      width_(map.width()),
      height_(map.height()) {
  if (mask.width() != width_ || mask.height() != height_) {
    throw std::invalid_argument("ClearanceField: mask does not match map geometry");
  }
  if (static_cast<long>(width_) * height_ > kBruteForceCellLimit) {
    grid_ = squaredDistanceTransform(mask);
  } else {
    for (int r = 0; r < height_; ++r)
      for (int c = 0; c < width_; ++c)
        if (!mask.traversable({c, r})) blocked_.push_back({c, r});
  }
}

double ClearanceField::bruteForce(CellIndex cell) const {
  long best = -1;
  for (const CellIndex& b : blocked_) {
    const long dc = b.col - cell.col;
    const long dr = b.row - cell.row;
    const long d2 = dc * dc + dr * dr;
    if (best < 0 || d2 < best) best = d2;
  }
  if (best < 0) return kNoObstacle;
  return resolution_ * std::sqrt(static_cast<double>(best));
}

double ClearanceField::distance(CellIndex cell) const {
  if (cell.col < 0 || cell.col >= width_ || cell.row < 0 || cell.row >= height_) {
    throw std::invalid_argument("ClearanceField: query out of bounds");
  }
  if (!precomputed()) return bruteForce(cell);
  const double d2 = grid_[static_cast<std::size_t>(cell.row) * width_ + cell.col];
  if (std::isinf(d2)) return kNoObstacle;
  return resolution_ * std::sqrt(d2);
}

double ClearanceField::distance(const Vec2& xy) const {
  const double fx = (xy.x() - origin_.x()) / resolution_;
  const double fy = (xy.y() - origin_.y()) / resolution_;
  if (!(fx >= 0.0 && fy >= 0.0 && fx < width_ && fy < height_)) {
    throw std::invalid_argument("ClearanceField: query out of bounds");
  }
  return distance(CellIndex{static_cast<int>(fx), static_cast<int>(fy)});
}

// ---------------------------------------------------------------------------

std::vector<CellIndex> raytraceFootprint(const ElevationMap& map, const DetectorPose& pose,
                                         const Ellipse& ellipse, int boundary_rays,
                                         double max_range) {
  if (!(ellipse.semi_x > 0.0) || !(ellipse.semi_y > 0.0)) {
    throw std::invalid_argument("raytraceFootprint: ellipse semi-axes must be positive");
  }
  if (boundary_rays < 0) throw std::invalid_argument("raytraceFootprint: negative ray count");
  std::vector<CellIndex> hits;
  if (!pose.position.allFinite() || !std::isfinite(pose.yaw) || !std::isfinite(pose.pitch)) {
    return hits;
  }
  const Eigen::Matrix3d rotation = yawPitchRotation({pose.yaw, pose.pitch});
  const Vec3 direction = -rotation.col(2);
  const double step = map.resolution() / 4.0;

  auto cast = [&](const Vec3& start) {
    for (double s = 0.0; s <= max_range; s += step) {
      const Vec3 p = start + s * direction;
      const auto cell = map.cellAt(p.head<2>());
      if (!cell) continue;
      const auto z = map.elevation(*cell);
      if (z && p.z() <= *z) {
        hits.push_back(*cell);
        return;
      }
    }
  };

  cast(pose.position);
  for (int i = 0; i < boundary_rays; ++i) {
    const double phi = 2.0 * kPi * i / boundary_rays;
    const Vec3 local(ellipse.semi_x * std::cos(phi), ellipse.semi_y * std::sin(phi), 0.0);
    cast(pose.position + rotation * local);
  }
  std::sort(hits.begin(), hits.end());
  hits.erase(std::unique(hits.begin(), hits.end()), hits.end());
  return hits;
}

// ---------------------------------------------------------------------------

void writeMapCsv(std::ostream& os, const ElevationMap& map, const TraversabilityMask& mask) {
  os << "col,row,x,y,elevation,observed,traversable,signal_mean,signal_count\n";
  os << std::fixed << std::setprecision(6);
  for (int row = 0; row < map.height(); ++row) {
    for (int col = 0; col < map.width(); ++col) {
      const CellIndex c{col, row};
      const Vec2 xy = map.cellCenter(c);
      const auto z = map.elevation(c);
      const auto mean = map.signalMean(c);
      os << col << ',' << row << ',' << xy.x() << ',' << xy.y() << ',';
      if (z) os << *z;
      os << ',' << (z ? 1 : 0) << ',' << (mask.traversable(c) ? 1 : 0) << ',';
      if (mean) os << *mean;
      os << ',' << map.signalCount(c) << '\n';
    }
  }
}

void writeSignalHeatmap(const std::filesystem::path& stem, const ElevationMap& map) {
  double hi = 0.0;
  for (int row = 0; row < map.height(); ++row)
    for (int col = 0; col < map.width(); ++col)
      if (const auto m = map.signalMean({col, row})) hi = std::max(hi, *m);
  const double lo = 0.0;
  const double span = hi > lo ? hi - lo : 1.0;

  const int w = map.width();
  const int h = map.height();
  std::vector<unsigned char> rgb(static_cast<std::size_t>(w) * h * 3);
  std::vector<unsigned char> gray(static_cast<std::size_t>(w) * h);
  auto channel = [](double v) {
    return static_cast<unsigned char>(std::lround(255.0 * std::clamp(v, 0.0, 1.0)));
  };
  for (int row = 0; row < h; ++row) {
    const int image_row = h - 1 - row;  // north up
    for (int col = 0; col < w; ++col) {
      const auto px = static_cast<std::size_t>(image_row) * w + col;
      const auto mean = map.signalMean({col, row});
      if (!mean) {
        rgb[3 * px] = rgb[3 * px + 1] = rgb[3 * px + 2] = 32;
        gray[px] = 0;
        continue;
      }
      const double t = std::clamp((*mean - lo) / span, 0.0, 1.0);
      rgb[3 * px] = channel(3.0 * t);
      rgb[3 * px + 1] = channel(3.0 * t - 1.0);
      rgb[3 * px + 2] = channel(3.0 * t - 2.0);
      gray[px] = channel(t);
    }
  }

  auto open = [](const std::filesystem::path& p) {
    std::ofstream out(p, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + p.string());
    return out;
  };
  {
    auto out = open(std::filesystem::path(stem).concat(".ppm"));
    out << "P6\n" << w << ' ' << h << "\n255\n";
    out.write(reinterpret_cast<const char*>(rgb.data()), static_cast<std::streamsize>(rgb.size()));
  }
  {
    auto out = open(std::filesystem::path(stem).concat(".pgm"));
    out << "P5\n" << w << ' ' << h << "\n255\n";
    out.write(reinterpret_cast<const char*>(gray.data()),
              static_cast<std::streamsize>(gray.size()));
  }
  {
    auto out = open(std::filesystem::path(stem).concat(".scale.txt"));
    out << std::setprecision(9);
    out << "quantity: mean detector signal per cell\n"
        << "scale: linear\n"
        << "min: " << lo << "\n"
        << "max: " << hi << "\n"
        << "ppm_colormap: t=(v-min)/(max-min); r=3t, g=3t-1, b=3t-2, each clamped to [0,1]\n"
        << "pgm_gray: 255*t\n"
        << "uncovered_ppm: 32,32,32\n"
        << "uncovered_pgm: 0\n"
        << "orientation: first image row is the highest map row (+y up), first column is col 0\n"
        << "resolution_m: " << map.resolution() << "\n"
        << "origin_m: " << map.origin().x() << "," << map.origin().y() << "\n";
  }
}

}  // namespace mdsurvey
