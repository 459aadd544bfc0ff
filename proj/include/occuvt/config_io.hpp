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

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "occuvt/error.hpp"
#include "occuvt/fusion.hpp"
#include "occuvt/geometry.hpp"
#include "occuvt/gridpyramid.hpp"
#include "occuvt/scene.hpp"
#include "occuvt/serialization.hpp"

namespace occuvt {

using json = nlohmann::json;

namespace detail {

inline json parse_json(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  try {
    return json::parse(bytes.begin(), bytes.end());
  } catch (const json::exception& e) {
    throw FormatError("'" + path.string() + "': " + e.what());
  }
}

/// Runs a field accessor and turns json type/key errors into FormatError.
template <typename Fn>
auto json_field(const std::string& context, Fn&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const json::exception& e) {
    throw FormatError(context + ": " + e.what());
  }
}

inline AxisRange axis_range(const json& j) {
  const auto v = j.get<std::vector<double>>();
  if (v.size() != 2) throw FormatError("range must be [min, max]");
  return {v[0], v[1]};
}

inline GridDims grid_dims(const json& j) {
  const auto v = j.get<std::vector<std::int64_t>>();
  if (v.size() != 3) throw FormatError("dims must be [X, Y, Z]");
  for (auto d : v) {
    if (d < 1) throw FormatError("dims must be >= 1");
  }
  return {std::size_t(v[0]), std::size_t(v[1]), std::size_t(v[2])};
}

}  // namespace detail

// ---- calibration ----------------------------------------------------------

/// Parses a calibration array of {name, intrinsics[9], extrinsics[16],
/// convention: "ego_to_cam" | "cam_to_ego", image_width, image_height}.
inline CameraRig rig_from_json(const json& j) {
  if (!j.is_array()) throw FormatError("calibration: expected an array of cameras");
  std::vector<CameraModel> cams;
  for (const auto& c : j) {
    cams.push_back(detail::json_field("calibration", [&] {
      const auto name = c.at("name").get<std::string>();
      const auto k = c.at("intrinsics").get<std::vector<double>>();
      const auto e = c.at("extrinsics").get<std::vector<double>>();
      if (k.size() != 9 || e.size() != 16) throw FormatError("camera '" + name + "': wrong matrix sizes");
      const std::string convention = c.value("convention", std::string("ego_to_cam"));
      const ImageSize size{c.at("image_width").get<int>(), c.at("image_height").get<int>()};
      const Mat3 km = Eigen::Map<const Eigen::Matrix<double, 3, 3, Eigen::RowMajor>>(k.data());
      const Mat4 em = Eigen::Map<const Eigen::Matrix<double, 4, 4, Eigen::RowMajor>>(e.data());
      if (convention == "ego_to_cam") return CameraModel(name, km, em, size);
      if (convention == "cam_to_ego") return CameraModel::from_cam_to_ego(name, km, em, size);
      throw FormatError("camera '" + name + "': unknown convention '" + convention + "'");
    }));
  }
  return CameraRig(std::move(cams));
}

inline json rig_to_json(const CameraRig& rig) {
  json arr = json::array();
  for (const auto& cam : rig) {
    std::vector<double> k(9), e(16);
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) k[r * 3 + c] = cam.intrinsics()(r, c);
    for (int r = 0; r < 4; ++r)
      for (int c = 0; c < 4; ++c) e[r * 4 + c] = cam.extrinsics()(r, c);
    arr.push_back({{"name", cam.name()},
                   {"intrinsics", k},
                   {"extrinsics", e},
                   {"convention", "ego_to_cam"},
                   {"image_width", cam.image_size().width},
                   {"image_height", cam.image_size().height}});
  }
  return arr;
}

inline CameraRig load_rig(const std::filesystem::path& path) { return rig_from_json(detail::parse_json(path)); }

// ---- grid and pyramid -----------------------------------------------------

inline GridSpec grid_from_json(const json& j) {
  return detail::json_field("grid", [&] {
    return GridSpec(detail::axis_range(j.at("x_range")), detail::axis_range(j.at("y_range")),
                    detail::axis_range(j.at("z_range")), detail::grid_dims(j.at("dims")));
  });
}

inline json grid_to_json(const GridSpec& g) {
  return {{"x_range", {g.range(0).min, g.range(0).max}},
          {"y_range", {g.range(1).min, g.range(1).max}},
          {"z_range", {g.range(2).min, g.range(2).max}},
          {"dims", {g.dims()[0], g.dims()[1], g.dims()[2]}}};
}

inline GridSpec load_grid(const std::filesystem::path& path) { return grid_from_json(detail::parse_json(path)); }

/// Pyramid JSON is a list of {dims, subdivision, feature_scale, channels[, projected]},
/// finest first; metric extents come from `extents`.
inline PyramidConfig pyramid_from_json(const json& j, const GridSpec& extents) {
  if (!j.is_array()) throw FormatError("pyramid: expected an array of levels");
  PyramidConfig p;
  for (std::size_t l = 0; l < j.size(); ++l) {
    const json& lv = j[l];
    p.levels.push_back(detail::json_field("pyramid level " + std::to_string(l), [&] {
      return LevelConfig{static_cast<int>(l), extents.with_dims(detail::grid_dims(lv.at("dims"))),
                         lv.at("subdivision").get<int>(), lv.at("feature_scale").get<double>(),
                         lv.at("channels").get<std::size_t>(), lv.value("projected", true)};
    }));
  }
  p.validate();
  return p;
}

inline json pyramid_to_json(const PyramidConfig& p) {
  json arr = json::array();
  for (const auto& l : p.levels) {
    const auto& d = l.grid.dims();
    arr.push_back({{"dims", {d[0], d[1], d[2]}},
                   {"subdivision", l.subdivision},
                   {"feature_scale", l.feature_scale},
                   {"channels", l.channels},
                   {"projected", l.projected}});
  }
  return arr;
}

// ---- synthetic scene ------------------------------------------------------

inline SyntheticScene scene_from_json(const json& j) {
  return detail::json_field("scene", [&] {
    SyntheticScene scene{grid_from_json(j.at("grid")), {}, j.value("background_class", std::uint8_t{0}),
                         j.value("seed", std::uint64_t{0})};
    for (const auto& o : j.value("objects", json::array())) {
      const auto lo = o.at("min").get<std::vector<double>>();
      const auto hi = o.at("max").get<std::vector<double>>();
      if (lo.size() != 3 || hi.size() != 3) throw FormatError("scene object bounds must have 3 components");
      scene.objects.push_back({Vec3(lo[0], lo[1], lo[2]), Vec3(hi[0], hi[1], hi[2]), o.at("class").get<std::uint8_t>()});
    }
    scene.validate();
    return scene;
  });
}

inline json scene_to_json(const SyntheticScene& s) {
  json objects = json::array();
  for (const auto& o : s.objects) {
    objects.push_back({{"min", {o.min.x(), o.min.y(), o.min.z()}},
                       {"max", {o.max.x(), o.max.y(), o.max.z()}},
                       {"class", o.cls}});
  }
  return {{"grid", grid_to_json(s.grid)},
          {"objects", objects},
          {"background_class", s.background_class},
          {"seed", s.seed}};
}

// ---- weight bundles -------------------------------------------------------

namespace detail {

struct NamedTensor {
  std::string name;
  std::string role;
  std::vector<std::uint64_t> shape;
  std::vector<float>* data;
};

inline std::vector<NamedTensor> named_tensors(FusionWeights& w, const std::string& prefix) {
  std::vector<NamedTensor> out;
  auto linear = [&](const std::string& name, const std::string& role, Linear& l) {
    out.push_back({prefix + name + ".weight", role, {l.out, l.in}, &l.weight});
    out.push_back({prefix + name + ".bias", role, {l.out}, &l.bias});
  };
  const std::uint64_t c = w.channels;
  out.push_back({prefix + "local_conv.weight", "refine_local", {c, c, 3, 3, 3}, &w.local_conv.weight});
  out.push_back({prefix + "local_conv.bias", "refine_local", {c}, &w.local_conv.bias});
  out.push_back({prefix + "global_conv.weight", "refine_global", {c, c, 3, 3}, &w.global_conv.weight});
  out.push_back({prefix + "global_conv.bias", "refine_global", {c}, &w.global_conv.bias});
  linear("attention.qkv", "window_attention", w.attention.qkv);
  linear("attention.proj", "window_attention", w.attention.proj);
  linear("aspp.reduce", "aspp", w.aspp.reduce);
  for (std::size_t b = 0; b < w.aspp.branches.size(); ++b) {
    auto& k = w.aspp.branches[b];
    const std::string n = prefix + "aspp.branch" + std::to_string(b);
    out.push_back({n + ".weight", "aspp", {k.out, k.in, 3, 3}, &k.weight});
    out.push_back({n + ".bias", "aspp", {k.out}, &k.bias});
  }
  linear("aspp.restore", "aspp", w.aspp.restore);
  linear("ffn1", "gate_ffn", w.ffn1);
  linear("ffn2", "gate_ffn", w.ffn2);
  out.push_back({prefix + "deconv.weight", "upsample", {c, c, 2, 2, 2}, &w.deconv.weight});
  out.push_back({prefix + "deconv.bias", "upsample", {c}, &w.deconv.bias});
  linear("head", "class_head", w.head);
  return out;
}

}  // namespace detail

/// Writes one OVTF file per tensor plus manifest.json into `dir`.
inline void save_weight_bundle(const std::filesystem::path& dir, std::vector<FusionWeights> levels) {
  std::filesystem::create_directories(dir);
  json manifest = {{"format", "occuvt-weights"}, {"version", 1}, {"levels", json::array()}, {"tensors", json::object()}};
  for (std::size_t l = 0; l < levels.size(); ++l) {
    auto& w = levels[l];
    w.validate();
    manifest["levels"].push_back({{"channels", w.channels},
                                  {"hidden", w.ffn1.out},
                                  {"num_classes", w.head.out},
                                  {"window", w.attention.window},
                                  {"heads", w.attention.heads},
                                  {"dilations", w.aspp.dilations}});
    for (const auto& t : detail::named_tensors(w, "level" + std::to_string(l) + ".")) {
      const std::string file = t.name + ".ovtf";
      save_tensor(dir / file, TensorFile::from_f32(t.shape, *t.data));
      manifest["tensors"][t.name] = {{"shape", t.shape}, {"role", t.role}, {"file", file}};
    }
  }
  write_file_atomic(dir / "manifest.json", manifest.dump(2) + "\n");
}

inline std::vector<FusionWeights> load_weight_bundle(const std::filesystem::path& dir) {
  const json manifest = detail::parse_json(dir / "manifest.json");
  return detail::json_field("weight manifest", [&] {
    if (manifest.at("format") != "occuvt-weights") throw FormatError("not an occuvt weight bundle");
    std::vector<FusionWeights> levels;
    const json& tensors = manifest.at("tensors");
    for (std::size_t l = 0; l < manifest.at("levels").size(); ++l) {
      const json& p = manifest["levels"][l];
      FusionWeights::Options opt;
      opt.hidden = p.at("hidden").get<std::size_t>();
      opt.num_classes = p.at("num_classes").get<std::size_t>();
      opt.window = p.at("window").get<std::size_t>();
      opt.heads = p.at("heads").get<std::size_t>();
      opt.dilations = p.at("dilations").get<std::vector<int>>();
      FusionWeights w = FusionWeights::zeros(p.at("channels").get<std::size_t>(), opt);
      for (auto& t : detail::named_tensors(w, "level" + std::to_string(l) + ".")) {
        if (!tensors.contains(t.name)) throw FormatError("weight bundle: missing tensor '" + t.name + "'");
        const TensorFile f = load_tensor(dir / tensors[t.name].at("file").get<std::string>());
        if (f.dtype != DType::kF32 || f.dims != t.shape)
          throw FormatError("weight bundle: tensor '" + t.name + "' has the wrong shape or dtype");
        *t.data = f.f32;
      }
      w.validate();
      levels.push_back(std::move(w));
    }
    return levels;
  });
}

}  // namespace occuvt
