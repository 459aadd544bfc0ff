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
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <span>
#include <vector>

#include "occuvt/occuvt.hpp"

namespace occuvt::testing {

/// max|a - b| / max|b|; zero when both are identically zero.
inline double max_relative_error(std::span<const float> actual, std::span<const float> expected) {
  if (actual.size() != expected.size()) return std::numeric_limits<double>::infinity();
  double diff = 0.0, scale = 0.0;
  for (std::size_t i = 0; i < actual.size(); ++i) {
    diff = std::max(diff, std::abs(double(actual[i]) - double(expected[i])));
    scale = std::max(scale, std::abs(double(expected[i])));
  }
  if (scale == 0.0) return diff;
  return diff / scale;
}

/// ||a - b||_F / ||b||_F; the absolute norm when b is identically zero.
inline double frobenius_relative_error(std::span<const float> actual, std::span<const float> expected) {
  if (actual.size() != expected.size()) return std::numeric_limits<double>::infinity();
  double diff = 0.0, norm = 0.0;
  for (std::size_t i = 0; i < actual.size(); ++i) {
    const double d = double(actual[i]) - double(expected[i]);
    diff += d * d;
    norm += double(expected[i]) * double(expected[i]);
  }
  return norm == 0.0 ? std::sqrt(diff) : std::sqrt(diff / norm);
}

/// Naive dense product of C x R features with the densified R x K matrix.
inline DenseMatrix naive_product(const DenseMatrix& dense, const CsrMatrix& csr) {
  std::vector<double> full(csr.rows() * csr.cols(), 0.0);
  for (std::uint64_t r = 0; r < csr.rows(); ++r) {
    auto idx = csr.row_indices(r);
    auto val = csr.row_values(r);
    for (std::size_t e = 0; e < idx.size(); ++e) full[r * csr.cols() + idx[e]] = val[e];
  }
  DenseMatrix out(dense.rows, csr.cols());
  for (std::size_t c = 0; c < dense.rows; ++c) {
    for (std::size_t k = 0; k < csr.cols(); ++k) {
      double acc = 0.0;
      for (std::size_t r = 0; r < dense.cols; ++r) acc += double(dense(c, r)) * full[r * csr.cols() + k];
      out(c, k) = static_cast<float>(acc);
    }
  }
  return out;
}

inline CsrMatrix random_csr(std::mt19937_64& rng, std::uint64_t rows, std::uint64_t cols, double density) {
  std::uniform_real_distribution<float> value(-2.0f, 2.0f);
  std::bernoulli_distribution keep(density);
  std::vector<Triplet> t;
  for (std::uint64_t r = 0; r < rows; ++r)
    for (std::uint64_t c = 0; c < cols; ++c)
      if (keep(rng)) t.push_back({r, c, value(rng)});
  return from_triplets(rows, cols, t);
}

inline DenseMatrix random_dense(std::mt19937_64& rng, std::size_t rows, std::size_t cols) {
  std::uniform_real_distribution<float> value(-1.0f, 1.0f);
  DenseMatrix m(rows, cols);
  for (auto& v : m.data) v = value(rng);
  return m;
}

/// A randomized view-transform problem: cameras around a small grid, all
/// looking roughly at its center.
struct RandomInstance {
  CameraRig rig;
  LevelConfig level;
  FeatureMaps features;
  Aggregation mode;
  HitRule rule;
};

inline RandomInstance random_instance(std::mt19937_64& rng, std::size_t max_cameras = 4) {
  auto uni = [&](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };
  auto pick = [&](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); };

  const double half_x = uni(3.0, 12.0), half_y = uni(3.0, 12.0);
  const GridDims dims{std::size_t(pick(1, 20)), std::size_t(pick(1, 20)), std::size_t(pick(1, 8))};
  const GridSpec grid({-half_x, half_x}, {-half_y, half_y}, {-2.0, uni(1.0, 4.0)}, dims);

  const std::size_t nc = std::size_t(pick(1, int(max_cameras)));
  const double scale = pick(0, 1) ? 1.0 : 0.5;
  const int w = pick(8, 40), h = pick(6, 30);
  const ImageSize full{int(std::lround(w / scale)), int(std::lround(h / scale))};
  std::vector<CameraModel> cams;
  for (std::size_t n = 0; n < nc; ++n) {
    const double yaw = uni(0.0, 2.0 * std::numbers::pi);
    const double radius = uni(1.2, 2.0) * std::max(half_x, half_y);
    const Vec3 pos(radius * std::cos(yaw), radius * std::sin(yaw), uni(2.0, 10.0));
    const Vec3 target(uni(-2.0, 2.0), uni(-2.0, 2.0), 0.0);
    const double fov = uni(50.0, 100.0) * std::numbers::pi / 180.0;
    const double f = full.width / 2.0 / std::tan(fov / 2.0);
    cams.push_back(look_at_camera("cam" + std::to_string(n), pos, target, f, f * uni(0.9, 1.1), full));
  }
  CameraRig rig(std::move(cams));
  LevelConfig level{0, grid, pick(1, 3), scale, std::size_t(pick(1, 16)), true};
  const FeatureLayout layout = feature_layout(rig, scale);
  FeatureMaps features(layout.rig.size(), layout.height, layout.width,
                       random_dense(rng, level.channels, layout.rows()));
  const Aggregation mode = pick(0, 1) ? Aggregation::kMean : Aggregation::kSum;
  const HitRule rule = pick(0, 1) ? HitRule::kNearest : HitRule::kBilinear;
  return {std::move(rig), level, std::move(features), mode, rule};
}

/// Z-sum of a volume into a BEV plane, accumulated in double.
inline BevFeature sum_over_z(const Volume& vol) {
  BevFeature out(vol.channels, {vol.dims[0], vol.dims[1]});
  for (std::size_t c = 0; c < vol.channels; ++c)
    for (std::size_t x = 0; x < vol.dims[0]; ++x)
      for (std::size_t y = 0; y < vol.dims[1]; ++y) {
        double acc = 0.0;
        for (std::size_t z = 0; z < vol.dims[2]; ++z) acc += vol.at(c, x, y, z);
        out.at(c, x, y) = static_cast<float>(acc);
      }
  return out;
}

}  // namespace occuvt::testing
