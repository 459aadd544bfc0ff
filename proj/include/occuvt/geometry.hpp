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

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <Eigen/LU>

#include <cmath>
#include <cstddef>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "occuvt/error.hpp"

namespace occuvt {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Mat4 = Eigen::Matrix4d;

/// Points closer to the image plane than this (camera-frame z, metres) are
/// treated as behind the camera.
inline constexpr double kDepthEpsilon = 1e-6;

struct ImageSize {
  int width = 0;
  int height = 0;
  friend bool operator==(const ImageSize&, const ImageSize&) = default;
};

/// Pinhole camera. `extrinsics` maps ego-frame homogeneous points into the
/// camera frame (x right, y down, z forward). Intrinsics are in pixel units of
/// `image_size`, with the pixel origin at the top-left corner of the image.
class CameraModel {
 public:
  CameraModel(std::string name, const Mat3& intrinsics, const Mat4& extrinsics, ImageSize image_size)
      : name_(std::move(name)), intrinsics_(intrinsics), extrinsics_(extrinsics), image_size_(image_size) {
    validate();
  }

  const std::string& name() const { return name_; }
  const Mat3& intrinsics() const { return intrinsics_; }
  const Mat4& extrinsics() const { return extrinsics_; }
  ImageSize image_size() const { return image_size_; }

  double fx() const { return intrinsics_(0, 0); }
  double fy() const { return intrinsics_(1, 1); }
  double cx() const { return intrinsics_(0, 2); }
  double cy() const { return intrinsics_(1, 2); }
  double skew() const { return intrinsics_(0, 1); }

  /// Builds a camera from a camera-to-ego pose by inverting it.
  static CameraModel from_cam_to_ego(std::string name, const Mat3& intrinsics, const Mat4& cam_to_ego,
                                     ImageSize image_size) {
    if (!cam_to_ego.allFinite()) throw InvalidArgument("camera '" + name + "': extrinsics not finite");
    Mat4 inv = Mat4::Identity();
    const Mat3 r = cam_to_ego.topLeftCorner<3, 3>();
    inv.topLeftCorner<3, 3>() = r.transpose();
    inv.topRightCorner<3, 1>() = -r.transpose() * cam_to_ego.topRightCorner<3, 1>();
    // Keep the bottom row as given so validation still sees a malformed input.
    inv.row(3) = cam_to_ego.row(3);
    return CameraModel(std::move(name), intrinsics, inv, image_size);
  }

 private:
  void validate() const {
    const std::string who = "camera '" + name_ + "': ";
    detail::require(intrinsics_.allFinite(), who + "intrinsics not finite");
    detail::require(intrinsics_(2, 2) == 1.0, who + "intrinsics[2][2] must be 1");
    detail::require(intrinsics_(2, 0) == 0.0 && intrinsics_(2, 1) == 0.0 && intrinsics_(1, 0) == 0.0,
                    who + "intrinsics must be upper triangular");
    detail::require(fx() > 0.0 && fy() > 0.0, who + "focal lengths must be positive");
    detail::require(extrinsics_.allFinite(), who + "extrinsics not finite");
    detail::require(extrinsics_(3, 0) == 0.0 && extrinsics_(3, 1) == 0.0 && extrinsics_(3, 2) == 0.0 &&
                        extrinsics_(3, 3) == 1.0,
                    who + "extrinsics bottom row must be (0,0,0,1)");
    const Mat3 r = extrinsics_.topLeftCorner<3, 3>();
    detail::require((r.transpose() * r - Mat3::Identity()).norm() < 1e-6, who + "rotation not orthonormal");
    detail::require(r.determinant() > 0.0, who + "rotation must have det=+1");
    detail::require(image_size_.width >= 1 && image_size_.height >= 1, who + "image size must be >= 1");
  }

  std::string name_;
  Mat3 intrinsics_;
  Mat4 extrinsics_;
  ImageSize image_size_;
};

/// Ordered camera list; a camera's position is its canonical index.
class CameraRig {
 public:
  CameraRig() = default;
  explicit CameraRig(std::vector<CameraModel> cameras) : cameras_(std::move(cameras)) {
    std::set<std::string> names;
    for (const auto& cam : cameras_) {
      if (!names.insert(cam.name()).second) throw InvalidArgument("duplicate camera name '" + cam.name() + "'");
    }
  }

  std::size_t size() const { return cameras_.size(); }
  bool empty() const { return cameras_.empty(); }
  const CameraModel& operator[](std::size_t i) const { return cameras_[i]; }
  std::span<const CameraModel> cameras() const { return cameras_; }
  auto begin() const { return cameras_.begin(); }
  auto end() const { return cameras_.end(); }

  /// Common image size of every camera; throws if they differ.
  ImageSize common_image_size() const {
    if (cameras_.empty()) throw InvalidArgument("empty camera rig");
    const ImageSize size = cameras_.front().image_size();
    for (const auto& cam : cameras_) {
      if (cam.image_size() != size) throw ShapeError("cameras in rig have different image sizes");
    }
    return size;
  }

 private:
  std::vector<CameraModel> cameras_;
};

struct PixelHit {
  std::size_t camera_index = 0;
  double u = 0.0;  // column, feature-map pixels
  double v = 0.0;  // row
  double depth = 0.0;
};

enum class Rejection { kBehindCamera, kOutOfBounds };

/// Result of projecting a point: a hit, or the reason it was dropped.
class Projection {
 public:
  Projection(PixelHit hit) : hit_(hit) {}  // NOLINT(google-explicit-constructor)
  Projection(Rejection why) : rejection_(why) {}  // NOLINT(google-explicit-constructor)

  bool accepted() const { return hit_.has_value(); }
  explicit operator bool() const { return accepted(); }
  const PixelHit& hit() const { return *hit_; }
  const PixelHit* operator->() const { return &*hit_; }
  Rejection rejection() const { return *rejection_; }

 private:
  std::optional<PixelHit> hit_;
  std::optional<Rejection> rejection_;
};

/// Rescales a camera to a feature map `scale` times the input resolution.
inline CameraModel scale_intrinsics(const CameraModel& cam, double scale) {
  if (!(scale > 0.0) || !std::isfinite(scale)) throw InvalidArgument("scale must be positive");
  Mat3 k = cam.intrinsics();
  k.topRows<2>() *= scale;
  const ImageSize size{static_cast<int>(std::floor(cam.image_size().width * scale)),
                       static_cast<int>(std::floor(cam.image_size().height * scale))};
  return CameraModel(cam.name(), k, cam.extrinsics(), size);
}

inline CameraRig scale_rig(const CameraRig& rig, double scale) {
  std::vector<CameraModel> scaled;
  scaled.reserve(rig.size());
  for (const auto& cam : rig) scaled.push_back(scale_intrinsics(cam, scale));
  return CameraRig(std::move(scaled));
}

/// Projects an ego-frame point. Rejections are normal outcomes; only non-finite
/// input throws.
inline Projection project_point(const Vec3& point, const CameraModel& cam, std::size_t camera_index = 0) {
  if (!point.allFinite()) throw InvalidArgument("project_point: non-finite point");
  const Mat4& t = cam.extrinsics();
  const Vec3 pc = t.topLeftCorner<3, 3>() * point + t.topRightCorner<3, 1>();
  const double z = pc.z();
  if (z <= kDepthEpsilon) return Rejection::kBehindCamera;
  const double u = (cam.fx() * pc.x() + cam.skew() * pc.y()) / z + cam.cx();
  const double v = cam.fy() * pc.y() / z + cam.cy();
  const ImageSize size = cam.image_size();
  if (!(u >= 0.0 && u < size.width && v >= 0.0 && v < size.height)) return Rejection::kOutOfBounds;
  return PixelHit{camera_index, u, v, z};
}

}  // namespace occuvt
