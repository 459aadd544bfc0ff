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
#include <random>

#include <gtest/gtest.h>

#include "occuvt/serialization.hpp"
#include "test_support.hpp"

namespace occuvt {
namespace {

void PutU64(std::vector<std::uint8_t>& bytes, std::size_t offset, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) bytes[offset + i] = static_cast<std::uint8_t>(v >> (8 * i));
}

TEST(CsrFormat, RoundTripRandomMatrix) {
  std::mt19937_64 rng(21);
  for (int trial = 0; trial < 10; ++trial) {
    const CsrMatrix m = testing::random_csr(rng, 1 + trial * 3, 2 + trial * 5, 0.25);
    const auto bytes = serialize(m);
    const CsrMatrix back = deserialize_csr(bytes);
    EXPECT_EQ(back, m);
    EXPECT_EQ(serialize(back), bytes);
  }
}

TEST(CsrFormat, EmptyMatrixRoundTrips) {
  for (const CsrMatrix& m : {CsrMatrix(), CsrMatrix::zeros(5, 0), CsrMatrix::zeros(0, 5), CsrMatrix::zeros(3, 3)}) {
    EXPECT_EQ(deserialize_csr(serialize(m)), m);
  }
}

TEST(CsrFormat, LayoutIsLittleEndian) {
  const std::vector<Triplet> t{{1, 2, 1.5f}};
  const auto bytes = serialize(from_triplets(2, 3, t));
  ASSERT_EQ(bytes.size(), 32u + 3 * 8 + 4 + 4);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "OVTC");
  EXPECT_EQ(bytes[4], 1);  // version
  EXPECT_EQ(bytes[8], 2);  // rows
  EXPECT_EQ(bytes[16], 3);  // cols
  EXPECT_EQ(bytes[24], 1);  // nnz
  EXPECT_EQ(bytes[32 + 16], 1);  // indptr[2]
  EXPECT_EQ(bytes[56], 2);       // column index
  EXPECT_EQ(bytes[63], 0x3f);    // 1.5f = 0x3fc00000
  EXPECT_EQ(bytes[62], 0xc0);
}

TEST(CsrFormat, DecreasingIndptrRejected) {
  const std::vector<Triplet> t{{0, 0, 1.0f}, {1, 1, 1.0f}, {2, 0, 1.0f}};
  auto bytes = serialize(from_triplets(3, 2, t));
  PutU64(bytes, 32 + 8 * 2, 0);  // indptr = {0,1,0,3}
  EXPECT_THROW(deserialize_csr(bytes), FormatError);
}

TEST(CsrFormat, BadMagicRejected) {
  auto bytes = serialize(CsrMatrix::identity(2));
  bytes[0] = 'X';
  EXPECT_THROW(deserialize_csr(bytes), FormatError);
}

TEST(CsrFormat, BadVersionRejected) {
  auto bytes = serialize(CsrMatrix::identity(2));
  bytes[4] = 2;
  EXPECT_THROW(deserialize_csr(bytes), FormatError);
}

TEST(CsrFormat, EveryTruncationRejected) {
  const auto bytes = serialize(CsrMatrix::identity(3));
  for (std::size_t n = 0; n < bytes.size(); ++n) {
    EXPECT_THROW(deserialize_csr(std::span(bytes.data(), n)), FormatError) << n;
  }
}

TEST(CsrFormat, TrailingBytesRejected) {
  auto bytes = serialize(CsrMatrix::identity(2));
  bytes.push_back(0);
  EXPECT_THROW(deserialize_csr(bytes), FormatError);
}

TEST(CsrFormat, HugeCountsDoNotAllocate) {
  auto bytes = serialize(CsrMatrix::identity(1));
  PutU64(bytes, 8, std::uint64_t{1} << 60);  // rows
  EXPECT_THROW(deserialize_csr(bytes), FormatError);
}

TEST(CsrFormat, NonFiniteValueRejected) {
  auto bytes = serialize(CsrMatrix::identity(1));
  const float nan = std::numeric_limits<float>::quiet_NaN();
  std::memcpy(bytes.data() + bytes.size() - 4, &nan, 4);
  EXPECT_THROW(deserialize_csr(bytes), FormatError);
}

TEST(TensorFormat, F32RoundTrip) {
  const TensorFile t = TensorFile::from_f32({2, 3, 1}, {1, 2, 3, 4, 5, -6.5f});
  const auto bytes = serialize(t);
  EXPECT_EQ(bytes.size(), 16u + 3 * 8 + 6 * 4);
  const TensorFile back = deserialize_tensor(bytes);
  EXPECT_EQ(back.dtype, DType::kF32);
  EXPECT_EQ(back.dims, t.dims);
  EXPECT_EQ(back.f32, t.f32);
  EXPECT_EQ(serialize(back), bytes);
}

TEST(TensorFormat, U8RoundTrip) {
  const TensorFile t = TensorFile::from_u8({4}, {0, 16, 255, 3});
  const TensorFile back = deserialize_tensor(serialize(t));
  EXPECT_EQ(back.dtype, DType::kU8);
  EXPECT_EQ(back.u8, t.u8);
}

TEST(TensorFormat, ScalarAndEmpty) {
  EXPECT_EQ(deserialize_tensor(serialize(TensorFile::from_f32({}, {7.0f}))).f32, std::vector<float>{7.0f});
  EXPECT_EQ(deserialize_tensor(serialize(TensorFile::from_f32({0, 5}, {}))).dims,
            (std::vector<std::uint64_t>{0, 5}));
}

TEST(TensorFormat, ShapeMismatchRejected) {
  EXPECT_THROW(TensorFile::from_f32({2, 2}, {1, 2, 3}), ShapeError);
}

TEST(TensorFormat, CorruptionsRejected) {
  const auto good = serialize(TensorFile::from_f32({2}, {1, 2}));
  auto bad_magic = good;
  bad_magic[1] = 'X';
  EXPECT_THROW(deserialize_tensor(bad_magic), FormatError);
  auto bad_dtype = good;
  bad_dtype[8] = 9;
  EXPECT_THROW(deserialize_tensor(bad_dtype), FormatError);
  for (std::size_t n = 0; n < good.size(); ++n)
    EXPECT_THROW(deserialize_tensor(std::span(good.data(), n)), FormatError) << n;
}

TEST(Files, AtomicWriteAndLoad) {
  const auto dir = std::filesystem::temp_directory_path() / ("occuvt_ser_" + std::to_string(::getpid()));
  std::filesystem::create_directories(dir);
  const auto path = dir / "m.ovtc";
  const CsrMatrix m = CsrMatrix::identity(4);
  save_csr(path, m);
  EXPECT_EQ(load_csr(path), m);
  save_csr(path, CsrMatrix::zeros(2, 2));  // overwrite in place
  EXPECT_EQ(load_csr(path), CsrMatrix::zeros(2, 2));
  std::size_t entries = 0;
  for ([[maybe_unused]] auto& e : std::filesystem::directory_iterator(dir)) ++entries;
  EXPECT_EQ(entries, 1u);  // no temp files left behind
  EXPECT_THROW(load_csr(dir / "missing.ovtc"), IoError);
  std::filesystem::remove_all(dir);
}

}  // namespace
}  // namespace occuvt
