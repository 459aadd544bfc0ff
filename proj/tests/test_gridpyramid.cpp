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

#include <algorithm>
#include <random>
#include <set>
#include <tuple>

#include <gtest/gtest.h>

#include "occuvt/gridpyramid.hpp"

namespace occuvt {
namespace {

GridSpec UnitGrid() { return GridSpec({-0.5, 0.5}, {-0.5, 0.5}, {-0.5, 0.5}, {1, 1, 1}); }

TEST(VoxelCenter, DefaultGridFirstCell) {
  const GridSpec grid = default_grid();
  EXPECT_DOUBLE_EQ(voxel_center(grid, {0, 0, 0}).x(), -49.75);
}

TEST(VoxelCenter, SymmetricCells) {
  const GridSpec two({-1, 1}, {-1, 1}, {-1, 1}, {2, 2, 2});
  EXPECT_DOUBLE_EQ(voxel_center(two, {0, 0, 0}).x(), -0.5);
  const GridSpec one({-1, 1}, {-1, 1}, {-1, 1}, {1, 1, 1});
  EXPECT_DOUBLE_EQ(voxel_center(one, {0, 0, 0}).x(), 0.0);
}

TEST(VoxelCenter, OutOfRangeThrows) {
  EXPECT_THROW(voxel_center(UnitGrid(), {1, 0, 0}), InvalidArgument);
}

TEST(GridSpec, RejectsDegenerateRanges) {
  EXPECT_THROW(GridSpec({1, 1}, {0, 1}, {0, 1}, {1, 1, 1}), InvalidArgument);
  EXPECT_THROW(GridSpec({0, 1}, {0, 1}, {0, 1}, {1, 0, 1}), InvalidArgument);
}

TEST(GridSpec, LinearIndexRoundTrip) {
  const GridSpec g({0, 1}, {0, 1}, {0, 1}, {3, 4, 5});
  for (std::size_t i = 0; i < g.num_voxels(); ++i) EXPECT_EQ(g.linear_index(g.unravel(i)), i);
  EXPECT_EQ(g.linear_index({1, 2, 3}), 1u * 20 + 2 * 5 + 3);
  EXPECT_EQ(g.cell_index(2, 3), 2u * 4 + 3);
}

TEST(SubspaceSamples, SingleSubdivisionIsCenter) {
  const GridSpec g({-3, 5}, {0, 2}, {1, 4}, {4, 2, 3});
  const auto pts = subspace_sample_points(g, {2, 1, 0}, 1);
  ASSERT_EQ(pts.size(), 1u);
  EXPECT_EQ(pts[0], voxel_center(g, {2, 1, 0}));
}

TEST(SubspaceSamples, TwoWaySplitQuarterOffsets) {
  const auto pts = subspace_sample_points(UnitGrid(), {0, 0, 0}, 2);
  ASSERT_EQ(pts.size(), 8u);
  std::set<std::tuple<double, double, double>> got;
  for (const auto& p : pts) got.insert({p.x(), p.y(), p.z()});
  for (double x : {-0.25, 0.25})
    for (double y : {-0.25, 0.25})
      for (double z : {-0.25, 0.25}) EXPECT_TRUE(got.count({x, y, z}));
  // x slowest, z fastest
  EXPECT_DOUBLE_EQ(pts[0].z(), -0.25);
  EXPECT_DOUBLE_EQ(pts[1].z(), 0.25);
  EXPECT_DOUBLE_EQ(pts[4].x(), 0.25);
}

TEST(SubspaceSamples, ThreeWaySplitMatchesEnumeration) {
  const auto pts = subspace_sample_points(UnitGrid(), {0, 0, 0}, 3);
  ASSERT_EQ(pts.size(), 27u);
  const double coords[] = {-1.0 / 3, 0.0, 1.0 / 3};
  std::size_t i = 0;
  for (double x : coords)
    for (double y : coords)
      for (double z : coords) {
        EXPECT_NEAR(pts[i].x(), x, 1e-15);
        EXPECT_NEAR(pts[i].y(), y, 1e-15);
        EXPECT_NEAR(pts[i].z(), z, 1e-15);
        ++i;
      }
}

TEST(SubspaceSamples, ZeroSubdivisionThrows) {
  EXPECT_THROW(subspace_sample_points(UnitGrid(), {0, 0, 0}, 0), InvalidArgument);
}

TEST(PillarSamples, SingleLayerMatchesVoxel) {
  const GridSpec g({0, 2}, {0, 2}, {0, 1}, {2, 2, 1});
  EXPECT_EQ(pillar_sample_points(g, 1, 0, 3), subspace_sample_points(g, {1, 0, 0}, 3));
}

TEST(PillarSamples, UnitSubdivisionGivesColumnCenters) {
  const GridSpec g({0, 2}, {0, 2}, {0, 4}, {2, 2, 4});
  const auto pts = pillar_sample_points(g, 0, 1, 1);
  ASSERT_EQ(pts.size(), 4u);
  for (std::size_t z = 0; z < 4; ++z) EXPECT_EQ(pts[z], voxel_center(g, {0, 1, z}));
}

TEST(PillarSamples, UnionOfVoxelSamples) {
  const GridSpec g({0, 2}, {0, 2}, {0, 2}, {2, 2, 2});
  const auto pillar = pillar_sample_points(g, 1, 1, 2);
  ASSERT_EQ(pillar.size(), 16u);
  std::set<std::tuple<double, double, double>> a, b;
  for (const auto& p : pillar) a.insert({p.x(), p.y(), p.z()});
  for (std::size_t z = 0; z < 2; ++z)
    for (const auto& p : subspace_sample_points(g, {1, 1, z}, 2)) b.insert({p.x(), p.y(), p.z()});
  EXPECT_EQ(a, b);
}

TEST(DefaultPyramid, LevelsAndRanges) {
  const PyramidConfig p = default_pyramid();
  ASSERT_EQ(p.size(), 4u);
  EXPECT_NO_THROW(p.validate());
  const GridDims expected[] = {{200, 200, 16}, {100, 100, 8}, {50, 50, 4}, {25, 25, 2}};
  for (int l = 0; l < 4; ++l) EXPECT_EQ(p[l].grid.dims(), expected[l]);
  EXPECT_EQ(p.base_dims(), expected[0]);
  EXPECT_FALSE(p[0].projected);
  EXPECT_EQ(p[1].subdivision, 3);
  EXPECT_EQ(p[2].subdivision, 4);
  EXPECT_EQ(p[3].subdivision, 5);
  EXPECT_DOUBLE_EQ(p[1].feature_scale, 1.0 / 8);
  EXPECT_DOUBLE_EQ(p[2].feature_scale, 1.0 / 16);
  EXPECT_DOUBLE_EQ(p[3].feature_scale, 1.0 / 32);
  for (const auto& l : p.levels) {
    EXPECT_DOUBLE_EQ(l.grid.range(0).min, -50.0);
    EXPECT_DOUBLE_EQ(l.grid.range(1).max, 50.0);
    EXPECT_DOUBLE_EQ(l.grid.range(2).min, -5.0);
    EXPECT_DOUBLE_EQ(l.grid.range(2).max, 3.0);
  }
}

TEST(DefaultPyramid, FinestVoxelSize) {
  const GridSpec g = default_pyramid()[0].grid;
  for (int a = 0; a < 3; ++a) EXPECT_DOUBLE_EQ(g.voxel_size(a), 0.5);
}

TEST(PyramidConfig, RejectsGrowingDims) {
  PyramidConfig p = default_pyramid();
  std::swap(p.levels[1].grid, p.levels[2].grid);
  EXPECT_THROW(p.validate(), InvalidArgument);
}

TEST(PyramidConfig, RejectsDimsThatAreNotHalved) {
  PyramidConfig p = default_pyramid();
  p.levels[2].grid = p.levels[2].grid.with_dims({40, 50, 4});
  EXPECT_THROW(p.validate(), InvalidArgument);
  p.levels[2].grid = p.levels[2].grid.with_dims({50, 50, 4});
  EXPECT_NO_THROW(p.validate());
}

TEST(HalveDims, FloorsWithMinimumOne) {
  EXPECT_EQ(halve_dims({25, 3, 1}), (GridDims{12, 1, 1}));
}

class SampleProperty : public ::testing::TestWithParam<int> {};

TEST_P(SampleProperty, SamplesStrictlyInsideVoxel) {
  const int n = GetParam();
  std::mt19937_64 rng(n);
  std::uniform_real_distribution<double> lo(-10, 0), span(0.1, 5);
  for (int trial = 0; trial < 50; ++trial) {
    const double x0 = lo(rng), y0 = lo(rng), z0 = lo(rng);
    const GridSpec g({x0, x0 + span(rng)}, {y0, y0 + span(rng)}, {z0, z0 + span(rng)}, {3, 4, 2});
    for (std::size_t v = 0; v < g.num_voxels(); ++v) {
      const VoxelIndex idx = g.unravel(v);
      for (const auto& p : subspace_sample_points(g, idx, n)) {
        for (int a = 0; a < 3; ++a) {
          const double vmin = g.range(a).min + idx[a] * g.voxel_size(a);
          EXPECT_GT(p[a], vmin);
          EXPECT_LT(p[a], vmin + g.voxel_size(a));
        }
      }
    }
  }
}

TEST_P(SampleProperty, SubspacesTileTheVoxel) {
  // Each sample point owns a box of side size/n centered on it; the boxes
  // must be pairwise disjoint and their volumes must sum to the voxel volume.
  const int n = GetParam();
  const GridSpec g({0, 1.5}, {-1, 1}, {2, 2.75}, {1, 1, 1});
  const auto pts = subspace_sample_points(g, {0, 0, 0}, n);
  double half[3], volume = 1.0;
  for (int a = 0; a < 3; ++a) {
    half[a] = g.voxel_size(a) / n / 2;
    volume *= g.voxel_size(a);
  }
  EXPECT_NEAR(double(pts.size()) * 8 * half[0] * half[1] * half[2], volume, 1e-12);
  for (std::size_t i = 0; i < pts.size(); ++i) {
    for (std::size_t j = i + 1; j < pts.size(); ++j) {
      bool separated = false;
      for (int a = 0; a < 3; ++a) separated |= std::abs(pts[i][a] - pts[j][a]) >= 2 * half[a] - 1e-12;
      EXPECT_TRUE(separated);
    }
    for (int a = 0; a < 3; ++a) {
      EXPECT_GE(pts[i][a] - half[a], g.range(a).min - 1e-12);
      EXPECT_LE(pts[i][a] + half[a], g.range(a).max + 1e-12);
    }
  }
}

TEST_P(SampleProperty, GenerationIsDeterministic) {
  const GridSpec g = default_grid();
  const auto a = subspace_sample_points(g, {17, 3, 9}, GetParam());
  const auto b = subspace_sample_points(g, {17, 3, 9}, GetParam());
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i)
    for (int k = 0; k < 3; ++k) EXPECT_EQ(std::bit_cast<std::uint64_t>(a[i][k]), std::bit_cast<std::uint64_t>(b[i][k]));
}

INSTANTIATE_TEST_SUITE_P(Subdivisions, SampleProperty, ::testing::Values(1, 2, 3, 4, 5));

}  // namespace
}  // namespace occuvt
