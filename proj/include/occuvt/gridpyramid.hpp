// Copyright 2026 The OccuVT Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "occuvt/error.hpp"
#include "occuvt/geometry.hpp"

namespace occuvt {

/// Occupancy label set: 0 = empty, 1..16 semantic classes.
inline constexpr std::size_t kNumClasses = 17;

struct AxisRange {
  double min = 0.0;
  double max = 0.0;
};

using GridDims = std::array<std::size_t, 3>;
using VoxelIndex = std::array<std::size_t, 3>;

/// Axis-aligned metric voxel grid in the ego frame.
class GridSpec {
 public:
  GridSpec(AxisRange x, AxisRange y, AxisRange z, GridDims dims) : ranges_{x, y, z}, dims_(dims) {
    static constexpr const char* kAxis[] = {"x", "y", "z"};
    for (int a = 0; a < 3; ++a) {
      const auto& r = ranges_[a];
      detail::require(std::isfinite(r.min) && std::isfinite(r.max) && r.max > r.min,
                      std::string("grid: ") + kAxis[a] + " range must satisfy max > min");
      detail::require(dims_[a] >= 1, std::string("grid: ") + kAxis[a] + " dim must be >= 1");
      const double size = voxel_size(a);
      detail::require(std::isfinite(size) && size > 0.0, "grid: degenerate voxel size");
    }
  }

  const AxisRange& range(int axis) const { return ranges_[axis]; }
  const GridDims& dims() const { return dims_; }
  std::size_t num_voxels() const { return dims_[0] * dims_[1] * dims_[2]; }
  std::size_t num_cells() const { return dims_[0] * dims_[1]; }
  double voxel_size(int axis) const { return (ranges_[axis].max - ranges_[axis].min) / double(dims_[axis]); }

  /// Same metric extents, different resolution.
  GridSpec with_dims(GridDims dims) const { return GridSpec(ranges_[0], ranges_[1], ranges_[2], dims); }

  /// Canonical column order of the local projection matrix: x slowest, z fastest.
  std::size_t linear_index(const VoxelIndex& i) const { return (i[0] * dims_[1] + i[1]) * dims_[2] + i[2]; }
  std::size_t cell_index(std::size_t ix, std::size_t iy) const { return ix * dims_[1] + iy; }

  VoxelIndex unravel(std::size_t linear) const {
    const std::size_t iz = linear % dims_[2];
    const std::size_t rest = linear / dims_[2];
    return {rest / dims_[1], rest % dims_[1], iz};
  }

  bool contains(const VoxelIndex& i) const { return i[0] < dims_[0] && i[1] < dims_[1] && i[2] < dims_[2]; }

 private:
  std::array<AxisRange, 3> ranges_;
  GridDims dims_;
};

/// One level of the volume pyramid. `projected` levels own projection
/// matrices fed by a feature map at `feature_scale`; the rest are produced
/// purely by upsampling.
struct LevelConfig {
  int level = 0;
  GridSpec grid;
  int subdivision = 1;
  double feature_scale = 1.0;
  std::size_t channels = 1;
  bool projected = true;

  void validate() const {
    detail::require(subdivision >= 1, "level: subdivision must be >= 1");
    detail::require(feature_scale > 0.0 && feature_scale <= 1.0, "level: feature_scale must be in (0,1]");
    detail::require(channels >= 1, "level: channels must be >= 1");
  }
};

/// Levels ordered finest first; levels[l].level == l.
struct PyramidConfig {
  std::vector<LevelConfig> levels;

  std::size_t size() const { return levels.size(); }
  const LevelConfig& operator[](std::size_t l) const { return levels[l]; }
  const GridDims& base_dims() const { return levels.front().grid.dims(); }

  void validate() const {
    detail::require(!levels.empty(), "pyramid: needs at least one level");
    for (std::size_t l = 0; l < levels.size(); ++l) {
      levels[l].validate();
      detail::require(levels[l].level == static_cast<int>(l), "pyramid: level ids must be 0..L-1 in order");
      if (l > 0) {
        const auto& fine = levels[l - 1].grid.dims();
        const auto& coarse = levels[l].grid.dims();
        for (int a = 0; a < 3; ++a) {
          detail::require(coarse[a] == std::max<std::size_t>(1, fine[a] / 2),
                          "pyramid: each level's dims must be the halved (floor, min 1) dims of the finer level");
        }
      }
    }
  }
};

/// Halving rule between adjacent pyramid levels.
inline std::size_t halve_dim(std::size_t d) { return std::max<std::size_t>(1, d / 2); }
inline GridDims halve_dims(const GridDims& d) { return {halve_dim(d[0]), halve_dim(d[1]), halve_dim(d[2])}; }

inline void check_index(const GridSpec& grid, const VoxelIndex& index) {
  if (!grid.contains(index)) throw InvalidArgument("voxel index out of range");
}

inline Vec3 voxel_center(const GridSpec& grid, const VoxelIndex& index) {
  check_index(grid, index);
  Vec3 p;
  for (int a = 0; a < 3; ++a) p[a] = grid.range(a).min + (double(index[a]) + 0.5) * grid.voxel_size(a);
  return p;
}

/// Appends the n^3 subspace centers of a voxel, x slowest and z fastest.
inline void append_subspace_points(const GridSpec& grid, const VoxelIndex& index, int n, std::vector<Vec3>& out) {
  if (n < 1) throw InvalidArgument("subdivision must be >= 1");
  check_index(grid, index);
  std::array<std::vector<double>, 3> coords;
  for (int a = 0; a < 3; ++a) {
    const double lo = grid.range(a).min + double(index[a]) * grid.voxel_size(a);
    const double step = grid.voxel_size(a) / n;
    coords[a].resize(n);
    for (int k = 0; k < n; ++k) coords[a][k] = lo + (k + 0.5) * step;
  }
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      for (int k = 0; k < n; ++k) out.emplace_back(coords[0][i], coords[1][j], coords[2][k]);
}

inline std::vector<Vec3> subspace_sample_points(const GridSpec& grid, const VoxelIndex& index, int n) {
  std::vector<Vec3> points;
  if (n >= 1) points.reserve(std::size_t(n) * n * n);
  append_subspace_points(grid, index, n, points);
  return points;
}

/// Sample points of the whole (ix, iy) column, bottom voxel first.
inline std::vector<Vec3> pillar_sample_points(const GridSpec& grid, std::size_t ix, std::size_t iy, int n) {
  std::vector<Vec3> points;
  if (n >= 1) points.reserve(grid.dims()[2] * n * n * n);
  for (std::size_t iz = 0; iz < grid.dims()[2]; ++iz) append_subspace_points(grid, {ix, iy, iz}, n, points);
  return points;
}

inline GridSpec default_grid() {
  return GridSpec({-50.0, 50.0}, {-50.0, 50.0}, {-5.0, 3.0}, {200, 200, 16});
}

/// Four-level pyramid over the default grid. Level 0 (200x200x16) is built
/// only by upsampling; levels 1..3 take the 1/8, 1/16, 1/32 feature maps with
/// subdivisions 3, 4, 5 (coarser volumes sample more densely).
inline PyramidConfig default_pyramid(std::size_t channels = 32) {
  PyramidConfig pyramid;
  const GridSpec base = default_grid();
  GridDims dims = base.dims();
  constexpr int kSubdivision[] = {1, 3, 4, 5};
  constexpr double kScale[] = {1.0 / 8, 1.0 / 8, 1.0 / 16, 1.0 / 32};
  for (int l = 0; l < 4; ++l) {
    pyramid.levels.push_back(LevelConfig{l, base.with_dims(dims), kSubdivision[l], kScale[l], channels, l > 0});
    dims = halve_dims(dims);
  }
  return pyramid;
}

}  // namespace occuvt
