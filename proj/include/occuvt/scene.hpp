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
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numbers>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "occuvt/error.hpp"
#include "occuvt/evalloss.hpp"
#include "occuvt/geometry.hpp"
#include "occuvt/gridpyramid.hpp"
#include "occuvt/projector.hpp"

namespace occuvt {

/// Camera at `position` looking at `target`, ego z up.
inline CameraModel look_at_camera(std::string name, const Vec3& position, const Vec3& target, double fx, double fy,
                                  ImageSize size) {
  const Vec3 forward = (target - position).normalized();
  Vec3 up(0.0, 0.0, 1.0);
  if (std::abs(forward.dot(up)) > 0.999) up = Vec3(1.0, 0.0, 0.0);
  const Vec3 right = forward.cross(up).normalized();
  const Vec3 down = forward.cross(right);
  Mat3 r;
  r.row(0) = right.transpose();
  r.row(1) = down.transpose();
  r.row(2) = forward.transpose();
  Mat4 extrinsics = Mat4::Identity();
  extrinsics.topLeftCorner<3, 3>() = r;
  extrinsics.topRightCorner<3, 1>() = -r * position;
  Mat3 k = Mat3::Identity();
  k(0, 0) = fx;
  k(1, 1) = fy;
  k(0, 2) = size.width / 2.0;
  k(1, 2) = size.height / 2.0;
  return CameraModel(std::move(name), k, extrinsics, size);
}

/// Ring of horizontally-looking cameras around the ego origin, evenly spaced
/// in yaw, like a surround-view vehicle rig.
inline CameraRig surround_rig(std::size_t num_cameras = 6, ImageSize size = {1600, 900}, double hfov_deg = 70.0,
                              double mount_height = 1.5, double mount_radius = 1.0) {
  std::vector<CameraModel> cams;
  const double f = size.width / 2.0 / std::tan(hfov_deg * std::numbers::pi / 360.0);
  for (std::size_t i = 0; i < num_cameras; ++i) {
    const double yaw = 2.0 * std::numbers::pi * double(i) / double(num_cameras);
    const Vec3 dir(std::cos(yaw), std::sin(yaw), 0.0);
    const Vec3 pos = mount_radius * dir + Vec3(0.0, 0.0, mount_height);
    cams.push_back(look_at_camera("cam" + std::to_string(i), pos, pos + dir, f, f, size));
  }
  return CameraRig(std::move(cams));
}

struct SceneObject {
  Vec3 min;
  Vec3 max;
  std::uint8_t cls = 1;
};

/// Axis-aligned boxes with semantic classes inside a metric grid.
struct SyntheticScene {
  GridSpec grid;
  std::vector<SceneObject> objects;
  std::uint8_t background_class = 0;
  std::uint64_t seed = 0;

  void validate() const {
    for (const auto& o : objects) {
      detail::require(o.cls >= 1 && o.cls < kNumClasses, "scene: object class must be in 1..16");
      for (int a = 0; a < 3; ++a) {
        detail::require(o.min[a] < o.max[a], "scene: box min must be below max");
        detail::require(o.min[a] >= grid.range(a).min && o.max[a] <= grid.range(a).max,
                        "scene: box outside grid extents");
      }
    }
    detail::require(background_class < kNumClasses, "scene: background class out of range");
  }
};

/// Scene with `count` random boxes drawn from `seed`.
inline SyntheticScene random_scene(const GridSpec& grid, std::size_t count, std::uint64_t seed) {
  SyntheticScene scene{grid, {}, 0, seed};
  std::mt19937_64 rng(seed);
  for (std::size_t i = 0; i < count; ++i) {
    SceneObject o;
    for (int a = 0; a < 3; ++a) {
      const double lo = grid.range(a).min, hi = grid.range(a).max;
      std::uniform_real_distribution<double> extent(0.05 * (hi - lo), 0.25 * (hi - lo));
      const double size = extent(rng);
      std::uniform_real_distribution<double> start(lo, hi - size);
      o.min[a] = start(rng);
      o.max[a] = o.min[a] + size;
    }
    o.cls = static_cast<std::uint8_t>(std::uniform_int_distribution<int>(1, int(kNumClasses) - 1)(rng));
    scene.objects.push_back(o);
  }
  return scene;
}

/// Ground-truth labels at `dims`: a voxel takes the class of the first box
/// containing its center, else the background class.
inline LabelVolume scene_labels(const SyntheticScene& scene, const GridDims& dims) {
  scene.validate();
  const GridSpec grid = scene.grid.with_dims(dims);
  LabelVolume out(dims, scene.background_class);
  for (std::size_t x = 0; x < dims[0]; ++x)
    for (std::size_t y = 0; y < dims[1]; ++y)
      for (std::size_t z = 0; z < dims[2]; ++z) {
        const Vec3 c = voxel_center(grid, {x, y, z});
        for (const auto& o : scene.objects) {
          if ((c.array() >= o.min.array()).all() && (c.array() < o.max.array()).all()) {
            out.at(x, y, z) = o.cls;
            break;
          }
        }
      }
  return out;
}

/// Entry distance of a ray into a box (slab test), if it hits in front.
inline std::optional<double> ray_box_entry(const Vec3& origin, const Vec3& dir, const SceneObject& box) {
  double t_near = -std::numeric_limits<double>::infinity();
  double t_far = std::numeric_limits<double>::infinity();
  for (int a = 0; a < 3; ++a) {
    if (dir[a] == 0.0) {
      if (origin[a] < box.min[a] || origin[a] > box.max[a]) return std::nullopt;
      continue;
    }
    double t0 = (box.min[a] - origin[a]) / dir[a];
    double t1 = (box.max[a] - origin[a]) / dir[a];
    if (t0 > t1) std::swap(t0, t1);
    t_near = std::max(t_near, t0);
    t_far = std::min(t_far, t1);
  }
  if (t_near > t_far || t_far <= 0.0) return std::nullopt;
  return std::max(t_near, 0.0);
}

/// Renders one-hot class features: each pixel-center ray takes the class of
/// the nearest box it enters, else the background class.
inline FeatureMaps render_scene_features(const SyntheticScene& scene, const CameraRig& rig, double feature_scale,
                                         std::size_t channels = kNumClasses) {
  scene.validate();
  if (channels < kNumClasses) throw InvalidArgument("render: need at least one channel per class");
  const FeatureLayout layout = feature_layout(rig, feature_scale);
  FeatureMaps out(channels, layout.rig.size(), layout.height, layout.width);
  for (std::size_t n = 0; n < layout.rig.size(); ++n) {
    const CameraModel& cam = layout.rig[n];
    const Mat3 r = cam.extrinsics().topLeftCorner<3, 3>();
    const Vec3 origin = -r.transpose() * cam.extrinsics().topRightCorner<3, 1>();
    const Mat3 k_inv = cam.intrinsics().inverse();
    for (std::size_t v = 0; v < layout.height; ++v) {
      for (std::size_t u = 0; u < layout.width; ++u) {
        const Vec3 dir = r.transpose() * (k_inv * Vec3(double(u) + 0.5, double(v) + 0.5, 1.0));
        std::uint8_t cls = scene.background_class;
        double best = std::numeric_limits<double>::infinity();
        for (const auto& o : scene.objects) {
          if (auto t = ray_box_entry(origin, dir, o); t && *t < best) {
            best = *t;
            cls = o.cls;
          }
        }
        out.at(cls, n, v, u) = 1.0f;
      }
    }
  }
  return out;
}

}  // namespace occuvt
