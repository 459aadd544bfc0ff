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

#include <filesystem>

#include <gtest/gtest.h>

#include "occuvt/config_io.hpp"

namespace occuvt {
namespace {

class TempDir {
 public:
  TempDir() : path_(std::filesystem::temp_directory_path() / ("occuvt_cfg_" + std::to_string(::getpid()) + "_" +
                                                              std::to_string(counter_++))) {
    std::filesystem::create_directories(path_);
  }
  ~TempDir() { std::filesystem::remove_all(path_); }
  const std::filesystem::path& path() const { return path_; }

 private:
  static inline int counter_ = 0;
  std::filesystem::path path_;
};

TEST(RigJson, RoundTrip) {
  const CameraRig rig = surround_rig(3, {160, 90});
  const CameraRig back = rig_from_json(rig_to_json(rig));
  ASSERT_EQ(back.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(back[i].name(), rig[i].name());
    EXPECT_TRUE(back[i].intrinsics().isApprox(rig[i].intrinsics(), 0.0));
    EXPECT_TRUE(back[i].extrinsics().isApprox(rig[i].extrinsics(), 1e-15));
    EXPECT_EQ(back[i].image_size().width, 160);
  }
}

TEST(RigJson, CamToEgoConventionInverts) {
  const CameraRig rig = surround_rig(1, {160, 90});
  json j = rig_to_json(rig);
  const Mat4 inv = rig[0].extrinsics().inverse();
  std::vector<double> e(16);
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 4; ++c) e[r * 4 + c] = inv(r, c);
  j[0]["extrinsics"] = e;
  j[0]["convention"] = "cam_to_ego";
  EXPECT_TRUE(rig_from_json(j)[0].extrinsics().isApprox(rig[0].extrinsics(), 1e-12));
}

TEST(RigJson, MalformedInputIsFormatError) {
  EXPECT_THROW(rig_from_json(json::object()), FormatError);
  json j = rig_to_json(surround_rig(1, {16, 9}));
  j[0].erase("intrinsics");
  EXPECT_THROW(rig_from_json(j), FormatError);
  j = rig_to_json(surround_rig(1, {16, 9}));
  j[0]["convention"] = "sideways";
  EXPECT_THROW(rig_from_json(j), FormatError);
  j = rig_to_json(surround_rig(1, {16, 9}));
  j[0]["intrinsics"] = std::vector<double>(8, 1.0);
  EXPECT_THROW(rig_from_json(j), FormatError);
}

TEST(RigJson, InvalidGeometryIsInvalidArgument) {
  json j = rig_to_json(surround_rig(1, {16, 9}));
  j[0]["intrinsics"][0] = -5.0;
  EXPECT_THROW(rig_from_json(j), InvalidArgument);
}

TEST(GridJson, RoundTripAndErrors) {
  const GridSpec g = default_grid();
  const GridSpec back = grid_from_json(grid_to_json(g));
  EXPECT_EQ(back.dims(), g.dims());
  EXPECT_EQ(back.range(2).min, -5.0);
  json bad = grid_to_json(g);
  bad["dims"] = {1, 0, 1};
  EXPECT_THROW(grid_from_json(bad), FormatError);
  bad = grid_to_json(g);
  bad["x_range"] = {1.0};
  EXPECT_THROW(grid_from_json(bad), FormatError);
}

TEST(PyramidJson, RoundTripDefault) {
  const PyramidConfig p = default_pyramid(8);
  const PyramidConfig back = pyramid_from_json(pyramid_to_json(p), default_grid());
  ASSERT_EQ(back.size(), 4u);
  for (std::size_t l = 0; l < 4; ++l) {
    EXPECT_EQ(back[l].grid.dims(), p[l].grid.dims());
    EXPECT_EQ(back[l].subdivision, p[l].subdivision);
    EXPECT_EQ(back[l].feature_scale, p[l].feature_scale);
    EXPECT_EQ(back[l].channels, 8u);
    EXPECT_EQ(back[l].projected, p[l].projected);
  }
}

TEST(SceneJson, RoundTrip) {
  const SyntheticScene s = random_scene(GridSpec({-4, 4}, {-4, 4}, {-1, 1}, {8, 8, 2}), 3, 5);
  const SyntheticScene back = scene_from_json(scene_to_json(s));
  ASSERT_EQ(back.objects.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(back.objects[i].cls, s.objects[i].cls);
    EXPECT_EQ(back.objects[i].min, s.objects[i].min);
  }
  EXPECT_EQ(scene_labels(back, {8, 8, 2}).labels, scene_labels(s, {8, 8, 2}).labels);
}

TEST(SceneJson, BoxOutsideGridRejected) {
  json j = scene_to_json(random_scene(GridSpec({-4, 4}, {-4, 4}, {-1, 1}, {8, 8, 2}), 1, 5));
  j["objects"][0]["max"][0] = 10.0;
  EXPECT_THROW(scene_from_json(j), InvalidArgument);
}

TEST(WeightBundle, RoundTripSeeded) {
  TempDir dir;
  const std::vector<FusionWeights> levels{FusionWeights::seeded(8, 1), FusionWeights::seeded(4, 2, {.heads = 2})};
  save_weight_bundle(dir.path(), levels);
  const json manifest = json::parse(std::ifstream(dir.path() / "manifest.json"));
  EXPECT_EQ(manifest["tensors"]["level0.local_conv.weight"]["shape"], json({8, 8, 3, 3, 3}));
  EXPECT_EQ(manifest["tensors"]["level1.head.weight"]["role"], "class_head");
  const auto back = load_weight_bundle(dir.path());
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[0].local_conv.weight, levels[0].local_conv.weight);
  EXPECT_EQ(back[1].attention.qkv.weight, levels[1].attention.qkv.weight);
  EXPECT_EQ(back[1].aspp.branches[2].weight, levels[1].aspp.branches[2].weight);
  EXPECT_EQ(back[1].head.out, kNumClasses);
}

TEST(WeightBundle, WrongShapeRejected) {
  TempDir dir;
  save_weight_bundle(dir.path(), {FusionWeights::seeded(4, 1, {.heads = 2})});
  save_tensor(dir.path() / "level0.ffn1.bias.ovtf", TensorFile::from_f32({3}, {1, 2, 3}));
  EXPECT_THROW(load_weight_bundle(dir.path()), FormatError);
  std::filesystem::remove(dir.path() / "level0.ffn1.bias.ovtf");
  EXPECT_THROW(load_weight_bundle(dir.path()), IoError);
}

TEST(Files, MissingAndMalformedJson) {
  TempDir dir;
  EXPECT_THROW(load_grid(dir.path() / "nope.json"), IoError);
  write_file_atomic(dir.path() / "bad.json", std::string_view("{not json"));
  EXPECT_THROW(load_grid(dir.path() / "bad.json"), FormatError);
}

}  // namespace
}  // namespace occuvt
