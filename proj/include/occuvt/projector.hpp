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

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include "occuvt/error.hpp"
#include "occuvt/geometry.hpp"
#include "occuvt/gridpyramid.hpp"
#include "occuvt/parallel.hpp"
#include "occuvt/sparse.hpp"

namespace occuvt {

enum class Aggregation { kMean, kSum };
enum class HitRule { kNearest, kBilinear };
enum class MatrixKind { kLocal, kGlobal };

/// Multi-camera feature maps of one level, flattened to (C, Nc*H*W) with pixel
/// row index n*(H*W) + v*W + u.
struct FeatureMaps {
  std::size_t num_cameras = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  DenseMatrix data;

  FeatureMaps() = default;
  FeatureMaps(std::size_t nc, std::size_t h, std::size_t w, DenseMatrix d)
      : num_cameras(nc), height(h), width(w), data(std::move(d)) {
    if (data.cols != nc * h * w) throw ShapeError("feature maps: data cols != Nc*H*W");
    if (!data.all_finite()) throw InvalidArgument("feature maps: non-finite value");
  }
  FeatureMaps(std::size_t channels, std::size_t nc, std::size_t h, std::size_t w)
      : FeatureMaps(nc, h, w, DenseMatrix(channels, nc * h * w)) {}

  std::size_t channels() const { return data.rows; }
  std::size_t pixels() const { return num_cameras * height * width; }
  std::size_t pixel_index(std::size_t n, std::size_t v, std::size_t u) const { return (n * height + v) * width + u; }
  float& at(std::size_t c, std::size_t n, std::size_t v, std::size_t u) { return data(c, pixel_index(n, v, u)); }
  float at(std::size_t c, std::size_t n, std::size_t v, std::size_t u) const { return data(c, pixel_index(n, v, u)); }
};

/// Dense (C, X, Y, Z) volume, channel-major then canonical voxel order.
struct Volume {
  std::size_t channels = 0;
  GridDims dims{0, 0, 0};
  std::vector<float> data;

  Volume() = default;
  Volume(std::size_t c, GridDims d, float fill = 0.0f) : channels(c), dims(d), data(c * d[0] * d[1] * d[2], fill) {}
  Volume(std::size_t c, GridDims d, std::vector<float> values) : channels(c), dims(d), data(std::move(values)) {
    if (data.size() != c * voxels()) throw ShapeError("volume: data length != C*X*Y*Z");
  }

  std::size_t voxels() const { return dims[0] * dims[1] * dims[2]; }
  std::size_t index(std::size_t x, std::size_t y, std::size_t z) const { return (x * dims[1] + y) * dims[2] + z; }
  float& at(std::size_t c, std::size_t x, std::size_t y, std::size_t z) { return data[c * voxels() + index(x, y, z)]; }
  float at(std::size_t c, std::size_t x, std::size_t y, std::size_t z) const {
    return data[c * voxels() + index(x, y, z)];
  }
  bool same_shape(const Volume& o) const { return channels == o.channels && dims == o.dims; }
};

/// Dense (C, X, Y) bird's-eye-view plane.
struct BevFeature {
  std::size_t channels = 0;
  std::array<std::size_t, 2> dims{0, 0};
  std::vector<float> data;

  BevFeature() = default;
  BevFeature(std::size_t c, std::array<std::size_t, 2> d, float fill = 0.0f)
      : channels(c), dims(d), data(c * d[0] * d[1], fill) {}
  BevFeature(std::size_t c, std::array<std::size_t, 2> d, std::vector<float> values)
      : channels(c), dims(d), data(std::move(values)) {
    if (data.size() != c * cells()) throw ShapeError("bev: data length != C*X*Y");
  }

  std::size_t cells() const { return dims[0] * dims[1]; }
  float& at(std::size_t c, std::size_t x, std::size_t y) { return data[c * cells() + x * dims[1] + y]; }
  float at(std::size_t c, std::size_t x, std::size_t y) const { return data[c * cells() + x * dims[1] + y]; }
  bool same_shape(const BevFeature& o) const { return channels == o.channels && dims == o.dims; }
};

/// Static sampling maps of one pyramid level.
struct ProjectionSet {
  CsrMatrix local;
  CsrMatrix global;
  LevelConfig level;
  Aggregation aggregation = Aggregation::kMean;
  HitRule hit_rule = HitRule::kNearest;
};

/// Feature-map geometry implied by a rig at a level's feature scale.
struct FeatureLayout {
  CameraRig rig;  // scaled to feature-map resolution
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t rows() const { return rig.size() * height * width; }
};

inline FeatureLayout feature_layout(const CameraRig& rig, double feature_scale) {
  if (rig.empty()) throw InvalidArgument("empty camera rig");
  FeatureLayout layout{scale_rig(rig, feature_scale), 0, 0};
  const ImageSize size = layout.rig.common_image_size();
  layout.height = static_cast<std::size_t>(size.height);
  layout.width = static_cast<std::size_t>(size.width);
  return layout;
}

namespace detail {

struct ColumnChunk {
  std::vector<std::uint32_t> column_nnz;
  std::vector<std::uint32_t> rows;
  std::vector<float> values;
};

struct PixelWeight {
  std::uint32_t row;
  double weight;
};

/// Pixel rows and weights touched by one projected hit.
inline void emit_hit(const PixelHit& hit, std::size_t height, std::size_t width, HitRule rule,
                     std::vector<PixelWeight>& out) {
  const std::size_t base = hit.camera_index * height * width;
  if (rule == HitRule::kNearest) {
    const auto iu = std::min(static_cast<std::size_t>(hit.u), width - 1);
    const auto iv = std::min(static_cast<std::size_t>(hit.v), height - 1);
    out.push_back({static_cast<std::uint32_t>(base + iv * width + iu), 1.0});
    return;
  }
  // Bilinear over pixel centers at (i + 0.5); corners off the map are dropped.
  const double x = hit.u - 0.5;
  const double y = hit.v - 0.5;
  const double x0 = std::floor(x);
  const double y0 = std::floor(y);
  const double fx = x - x0;
  const double fy = y - y0;
  const double wx[2] = {1.0 - fx, fx};
  const double wy[2] = {1.0 - fy, fy};
  for (int dy = 0; dy < 2; ++dy) {
    for (int dx = 0; dx < 2; ++dx) {
      const double px = x0 + dx;
      const double py = y0 + dy;
      const double w = wx[dx] * wy[dy];
      if (w <= 0.0 || px < 0.0 || py < 0.0 || px >= double(width) || py >= double(height)) continue;
      out.push_back({static_cast<std::uint32_t>(base + std::size_t(py) * width + std::size_t(px)), w});
    }
  }
}

struct BuildResult {
  CsrMatrix matrix;
  std::vector<std::uint32_t> hits_per_column;
};

/// Column-parallel assembly: each column's entries are produced independently,
/// merged by pixel row, optionally normalized, then scattered into CSR in
/// column order so every row's indices come out strictly increasing.
inline BuildResult build_matrix(const FeatureLayout& layout, std::size_t num_columns, Aggregation mode, HitRule rule,
                                const std::function<void(std::size_t, std::vector<Vec3>&)>& sample_points) {
  const std::uint64_t rows = layout.rows();
  if (rows > std::numeric_limits<std::uint32_t>::max()) throw InvalidArgument("too many feature pixels");
  if (num_columns > std::numeric_limits<std::uint32_t>::max()) throw InvalidArgument("too many matrix columns");

  const std::size_t workers = std::max(1, num_threads());
  const std::size_t num_chunks = std::min<std::size_t>(num_columns, workers * 8);
  std::vector<ColumnChunk> chunks(num_chunks);
  std::vector<std::uint32_t> hits(num_columns, 0);
  const std::size_t per_chunk = num_chunks ? (num_columns + num_chunks - 1) / num_chunks : 0;

  parallel_for(num_chunks, [&](std::size_t cbegin, std::size_t cend) {
    std::vector<Vec3> points;
    std::vector<PixelWeight> entries;
    for (std::size_t ci = cbegin; ci < cend; ++ci) {
      ColumnChunk& chunk = chunks[ci];
      const std::size_t kbegin = ci * per_chunk;
      const std::size_t kend = std::min(num_columns, kbegin + per_chunk);
      for (std::size_t k = kbegin; k < kend; ++k) {
        points.clear();
        entries.clear();
        sample_points(k, points);
        std::uint32_t accepted = 0;
        for (const Vec3& p : points) {
          for (std::size_t n = 0; n < layout.rig.size(); ++n) {
            const Projection proj = project_point(p, layout.rig[n], n);
            if (!proj) continue;
            ++accepted;
            emit_hit(proj.hit(), layout.height, layout.width, rule, entries);
          }
        }
        hits[k] = accepted;
        std::sort(entries.begin(), entries.end(), [](const PixelWeight& a, const PixelWeight& b) {
          return a.row < b.row;
        });
        double total = 0.0;
        for (const auto& e : entries) total += e.weight;
        std::uint32_t count = 0;
        for (std::size_t i = 0; i < entries.size();) {
          std::size_t j = i;
          double w = 0.0;
          while (j < entries.size() && entries[j].row == entries[i].row) w += entries[j++].weight;
          if (mode == Aggregation::kMean) w /= total;
          chunk.rows.push_back(entries[i].row);
          chunk.values.push_back(static_cast<float>(w));
          ++count;
          i = j;
        }
        chunk.column_nnz.push_back(count);
      }
    }
  });

  std::vector<std::uint64_t> indptr(rows + 1, 0);
  for (const auto& chunk : chunks)
    for (auto r : chunk.rows) ++indptr[r + 1];
  std::partial_sum(indptr.begin(), indptr.end(), indptr.begin());
  const std::uint64_t nnz = indptr.back();
  std::vector<std::uint32_t> indices(nnz);
  std::vector<float> values(nnz);
  std::vector<std::uint64_t> cursor(indptr.begin(), indptr.end() - 1);
  std::size_t column = 0;
  for (auto& chunk : chunks) {
    std::size_t e = 0;
    for (auto count : chunk.column_nnz) {
      for (std::uint32_t i = 0; i < count; ++i, ++e) {
        const std::uint64_t dst = cursor[chunk.rows[e]]++;
        indices[dst] = static_cast<std::uint32_t>(column);
        values[dst] = chunk.values[e];
      }
      ++column;
    }
    chunk = ColumnChunk{};
  }
  return {CsrMatrix(rows, num_columns, std::move(indptr), std::move(indices), std::move(values)), std::move(hits)};
}

inline BuildResult build_level_matrix(const CameraRig& rig, const LevelConfig& level, MatrixKind kind,
                                      Aggregation mode, HitRule rule) {
  level.validate();
  const FeatureLayout layout = feature_layout(rig, level.feature_scale);
  const GridSpec& grid = level.grid;
  const int n = level.subdivision;
  if (kind == MatrixKind::kLocal) {
    return build_matrix(layout, grid.num_voxels(), mode, rule, [&](std::size_t k, std::vector<Vec3>& pts) {
      append_subspace_points(grid, grid.unravel(k), n, pts);
    });
  }
  return build_matrix(layout, grid.num_cells(), mode, rule, [&](std::size_t k, std::vector<Vec3>& pts) {
    const std::size_t ix = k / grid.dims()[1];
    const std::size_t iy = k % grid.dims()[1];
    for (std::size_t iz = 0; iz < grid.dims()[2]; ++iz) append_subspace_points(grid, {ix, iy, iz}, n, pts);
  });
}

}  // namespace detail

/// VT_XYZ: (Nc*H*W) x (X*Y*Z) map from feature pixels to voxels.
inline CsrMatrix build_local_matrix(const CameraRig& rig, const LevelConfig& level,
                                    Aggregation mode = Aggregation::kMean, HitRule rule = HitRule::kNearest) {
  return detail::build_level_matrix(rig, level, MatrixKind::kLocal, mode, rule).matrix;
}

/// VT_XY: (Nc*H*W) x (X*Y) map from feature pixels to BEV cells, sampling the
/// whole pillar of each cell.
inline CsrMatrix build_global_matrix(const CameraRig& rig, const LevelConfig& level,
                                     Aggregation mode = Aggregation::kMean, HitRule rule = HitRule::kNearest) {
  return detail::build_level_matrix(rig, level, MatrixKind::kGlobal, mode, rule).matrix;
}

inline ProjectionSet build_projection_set(const CameraRig& rig, const LevelConfig& level,
                                          Aggregation mode = Aggregation::kMean, HitRule rule = HitRule::kNearest) {
  return {build_local_matrix(rig, level, mode, rule), build_global_matrix(rig, level, mode, rule), level, mode, rule};
}

inline Volume transform_local(const FeatureMaps& features, const CsrMatrix& vt, const GridDims& dims) {
  if (vt.cols() != dims[0] * dims[1] * dims[2]) throw ShapeError("transform_local: matrix cols != X*Y*Z");
  DenseMatrix out = spmm(features.data, vt);
  return Volume(out.rows, dims, std::move(out.data));
}

inline BevFeature transform_global(const FeatureMaps& features, const CsrMatrix& vt,
                                   const std::array<std::size_t, 2>& dims) {
  if (vt.cols() != dims[0] * dims[1]) throw ShapeError("transform_global: matrix cols != X*Y");
  DenseMatrix out = spmm(features.data, vt);
  return BevFeature(out.rows, dims, std::move(out.data));
}

inline Volume transform_local(const FeatureMaps& features, const ProjectionSet& set) {
  return transform_local(features, set.local, set.level.grid.dims());
}

inline BevFeature transform_global(const FeatureMaps& features, const ProjectionSet& set) {
  const auto& d = set.level.grid.dims();
  return transform_global(features, set.global, {d[0], d[1]});
}

namespace detail {

/// Direct feature read at a continuous pixel position, accumulating weighted
/// channel values. Kept separate from the matrix emission path.
inline void oracle_sample(const FeatureMaps& f, std::size_t cam, double u, double v, HitRule rule,
                          std::vector<double>& acc, double& weight) {
  const std::size_t channels = f.channels();
  if (rule == HitRule::kNearest) {
    const auto iu = static_cast<std::size_t>(std::floor(u));
    const auto iv = static_cast<std::size_t>(std::floor(v));
    for (std::size_t c = 0; c < channels; ++c) acc[c] += f.at(c, cam, iv, iu);
    weight += 1.0;
    return;
  }
  const double x = u - 0.5;
  const double y = v - 0.5;
  const long x0 = static_cast<long>(std::floor(x));
  const long y0 = static_cast<long>(std::floor(y));
  for (long py = y0; py <= y0 + 1; ++py) {
    for (long px = x0; px <= x0 + 1; ++px) {
      if (px < 0 || py < 0 || px >= long(f.width) || py >= long(f.height)) continue;
      const double w = (1.0 - std::abs(x - double(px))) * (1.0 - std::abs(y - double(py)));
      if (w <= 0.0) continue;
      for (std::size_t c = 0; c < channels; ++c) acc[c] += w * f.at(c, cam, std::size_t(py), std::size_t(px));
      weight += w;
    }
  }
}

inline void check_oracle_inputs(const FeatureMaps& features, const FeatureLayout& layout) {
  if (features.num_cameras != layout.rig.size() || features.height != layout.height ||
      features.width != layout.width) {
    throw ShapeError("oracle: feature map dims do not match the rig at this feature scale");
  }
}

}  // namespace detail

/// Brute-force view transform: loops voxels, sample points and cameras and
/// reads features directly, with no projection matrix involved.
inline Volume oracle_transform(const FeatureMaps& features, const CameraRig& rig, const LevelConfig& level,
                               Aggregation mode = Aggregation::kMean, HitRule rule = HitRule::kNearest) {
  level.validate();
  const FeatureLayout layout = feature_layout(rig, level.feature_scale);
  detail::check_oracle_inputs(features, layout);
  const GridSpec& grid = level.grid;
  const std::size_t channels = features.channels();
  Volume out(channels, grid.dims());
  std::vector<double> acc(channels);
  for (std::size_t ix = 0; ix < grid.dims()[0]; ++ix) {
    for (std::size_t iy = 0; iy < grid.dims()[1]; ++iy) {
      for (std::size_t iz = 0; iz < grid.dims()[2]; ++iz) {
        std::fill(acc.begin(), acc.end(), 0.0);
        double weight = 0.0;
        for (const Vec3& p : subspace_sample_points(grid, {ix, iy, iz}, level.subdivision)) {
          for (std::size_t n = 0; n < layout.rig.size(); ++n) {
            const Projection proj = project_point(p, layout.rig[n], n);
            if (proj) detail::oracle_sample(features, n, proj->u, proj->v, rule, acc, weight);
          }
        }
        if (weight == 0.0) continue;
        const double norm = mode == Aggregation::kMean ? weight : 1.0;
        for (std::size_t c = 0; c < channels; ++c) out.at(c, ix, iy, iz) = static_cast<float>(acc[c] / norm);
      }
    }
  }
  return out;
}

/// Brute-force counterpart of transform_global over whole pillars.
inline BevFeature oracle_transform_global(const FeatureMaps& features, const CameraRig& rig, const LevelConfig& level,
                                          Aggregation mode = Aggregation::kMean, HitRule rule = HitRule::kNearest) {
  level.validate();
  const FeatureLayout layout = feature_layout(rig, level.feature_scale);
  detail::check_oracle_inputs(features, layout);
  const GridSpec& grid = level.grid;
  const std::size_t channels = features.channels();
  BevFeature out(channels, {grid.dims()[0], grid.dims()[1]});
  std::vector<double> acc(channels);
  for (std::size_t ix = 0; ix < grid.dims()[0]; ++ix) {
    for (std::size_t iy = 0; iy < grid.dims()[1]; ++iy) {
      std::fill(acc.begin(), acc.end(), 0.0);
      double weight = 0.0;
      for (const Vec3& p : pillar_sample_points(grid, ix, iy, level.subdivision)) {
        for (std::size_t n = 0; n < layout.rig.size(); ++n) {
          const Projection proj = project_point(p, layout.rig[n], n);
          if (proj) detail::oracle_sample(features, n, proj->u, proj->v, rule, acc, weight);
        }
      }
      if (weight == 0.0) continue;
      const double norm = mode == Aggregation::kMean ? weight : 1.0;
      for (std::size_t c = 0; c < channels; ++c) out.at(c, ix, iy) = static_cast<float>(acc[c] / norm);
    }
  }
  return out;
}

struct MemoryReport {
  MemoryStats stats;
  std::uint64_t rows = 0;
  std::uint64_t cols = 0;
  std::uint64_t nnz = 0;
  double build_ms = 0.0;
  /// accepted sample-point projections per voxel -> number of voxels
  std::map<std::uint32_t, std::uint64_t> hits_histogram;
};

inline MemoryReport memory_report(const CameraRig& rig, const LevelConfig& level,
                                  Aggregation mode = Aggregation::kMean, HitRule rule = HitRule::kNearest) {
  const auto start = std::chrono::steady_clock::now();
  detail::BuildResult built = detail::build_level_matrix(rig, level, MatrixKind::kLocal, mode, rule);
  const auto stop = std::chrono::steady_clock::now();
  MemoryReport report;
  report.build_ms = std::chrono::duration<double, std::milli>(stop - start).count();
  report.stats = memory_stats(built.matrix);
  report.rows = built.matrix.rows();
  report.cols = built.matrix.cols();
  report.nnz = built.matrix.nnz();
  for (auto h : built.hits_per_column) ++report.hits_histogram[h];
  return report;
}

}  // namespace occuvt
