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

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <unistd.h>

#include "occuvt/error.hpp"
#include "occuvt/sparse.hpp"

namespace occuvt {

// Binary layouts, all little-endian:
//   OVTC: "OVTC" u32 version=1, u64 rows, u64 cols, u64 nnz,
//         u64 indptr[rows+1], u32 indices[nnz], f32 values[nnz]
//   OVTF: "OVTF" u32 version=1, u32 dtype (0=f32, 1=u8), u32 ndim,
//         u64 dims[ndim], payload in row-major order (last dim fastest)
inline constexpr std::string_view kCsrMagic = "OVTC";
inline constexpr std::string_view kTensorMagic = "OVTF";
inline constexpr std::uint32_t kFormatVersion = 1;

enum class DType : std::uint32_t { kF32 = 0, kU8 = 1 };

/// In-memory form of an OVTF file. Exactly one of f32/u8 is populated.
struct TensorFile {
  DType dtype = DType::kF32;
  std::vector<std::uint64_t> dims;
  std::vector<float> f32;
  std::vector<std::uint8_t> u8;

  std::uint64_t numel() const {
    std::uint64_t n = 1;
    for (auto d : dims) n *= d;
    return n;
  }

  static TensorFile from_f32(std::vector<std::uint64_t> dims, std::vector<float> data) {
    TensorFile t{DType::kF32, std::move(dims), std::move(data), {}};
    if (t.f32.size() != t.numel()) throw ShapeError("tensor: data length does not match dims");
    return t;
  }
  static TensorFile from_u8(std::vector<std::uint64_t> dims, std::vector<std::uint8_t> data) {
    TensorFile t{DType::kU8, std::move(dims), {}, std::move(data)};
    if (t.u8.size() != t.numel()) throw ShapeError("tensor: data length does not match dims");
    return t;
  }

  friend bool operator==(const TensorFile&, const TensorFile&) = default;
};

namespace detail {

class ByteWriter {
 public:
  void magic(std::string_view m) { bytes_.insert(bytes_.end(), m.begin(), m.end()); }
  void u32(std::uint32_t v) { put(v, 4); }
  void u64(std::uint64_t v) { put(v, 8); }
  void f32(float v) { put(std::bit_cast<std::uint32_t>(v), 4); }
  void u8(std::uint8_t v) { bytes_.push_back(v); }
  std::vector<std::uint8_t> take() { return std::move(bytes_); }
  void reserve(std::size_t n) { bytes_.reserve(n); }

 private:
  void put(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  std::vector<std::uint8_t> bytes_;
};

class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  void expect_magic(std::string_view m) {
    need(m.size());
    if (std::memcmp(bytes_.data() + pos_, m.data(), m.size()) != 0)
      throw FormatError("bad magic, expected '" + std::string(m) + "'");
    pos_ += m.size();
  }
  std::uint32_t u32() { return static_cast<std::uint32_t>(get(4)); }
  std::uint64_t u64() { return get(8); }
  float f32() { return std::bit_cast<float>(static_cast<std::uint32_t>(get(4))); }
  std::uint8_t u8() {
    need(1);
    return bytes_[pos_++];
  }
  std::size_t remaining() const { return bytes_.size() - pos_; }

  /// Fails early when a declared element count cannot fit in the rest of the stream.
  void need_elements(std::uint64_t count, std::uint64_t width) {
    if (width != 0 && count > remaining() / width) throw FormatError("truncated stream");
  }

 private:
  void need(std::size_t n) const {
    if (remaining() < n) throw FormatError("truncated stream");
  }
  std::uint64_t get(int n) {
    need(n);
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= std::uint64_t(bytes_[pos_ + i]) << (8 * i);
    pos_ += n;
    return v;
  }

  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::vector<std::uint8_t> serialize(const CsrMatrix& csr) {
  detail::ByteWriter w;
  w.reserve(memory_stats(csr).csr_bytes);
  w.magic(kCsrMagic);
  w.u32(kFormatVersion);
  w.u64(csr.rows());
  w.u64(csr.cols());
  w.u64(csr.nnz());
  for (auto p : csr.indptr()) w.u64(p);
  for (auto i : csr.indices()) w.u32(i);
  for (auto v : csr.values()) w.f32(v);
  return w.take();
}

inline CsrMatrix deserialize_csr(std::span<const std::uint8_t> bytes) {
  detail::ByteReader r(bytes);
  r.expect_magic(kCsrMagic);
  if (auto version = r.u32(); version != kFormatVersion)
    throw FormatError("unsupported OVTC version " + std::to_string(version));
  const std::uint64_t rows = r.u64();
  const std::uint64_t cols = r.u64();
  const std::uint64_t nnz = r.u64();
  r.need_elements(rows, 8);
  std::vector<std::uint64_t> indptr(rows + 1);
  for (auto& p : indptr) p = r.u64();
  r.need_elements(nnz, 8);
  std::vector<std::uint32_t> indices(nnz);
  for (auto& i : indices) i = r.u32();
  std::vector<float> values(nnz);
  for (auto& v : values) v = r.f32();
  if (r.remaining() != 0) throw FormatError("trailing bytes after OVTC payload");
  try {
    return CsrMatrix(rows, cols, std::move(indptr), std::move(indices), std::move(values));
  } catch (const InvalidArgument& e) {
    throw FormatError(std::string("invalid OVTC matrix: ") + e.what());
  }
}

inline std::vector<std::uint8_t> serialize(const TensorFile& t) {
  const std::size_t payload = t.dtype == DType::kF32 ? t.f32.size() * 4 : t.u8.size();
  if ((t.dtype == DType::kF32 ? t.f32.size() : t.u8.size()) != t.numel())
    throw ShapeError("tensor: data length does not match dims");
  detail::ByteWriter w;
  w.reserve(16 + t.dims.size() * 8 + payload);
  w.magic(kTensorMagic);
  w.u32(kFormatVersion);
  w.u32(static_cast<std::uint32_t>(t.dtype));
  w.u32(static_cast<std::uint32_t>(t.dims.size()));
  for (auto d : t.dims) w.u64(d);
  if (t.dtype == DType::kF32) {
    for (float v : t.f32) w.f32(v);
  } else {
    for (auto v : t.u8) w.u8(v);
  }
  return w.take();
}

inline TensorFile deserialize_tensor(std::span<const std::uint8_t> bytes) {
  detail::ByteReader r(bytes);
  r.expect_magic(kTensorMagic);
  if (auto version = r.u32(); version != kFormatVersion)
    throw FormatError("unsupported OVTF version " + std::to_string(version));
  const std::uint32_t dtype = r.u32();
  if (dtype > 1) throw FormatError("unsupported OVTF dtype " + std::to_string(dtype));
  const std::uint32_t ndim = r.u32();
  r.need_elements(ndim, 8);
  TensorFile t;
  t.dtype = static_cast<DType>(dtype);
  t.dims.resize(ndim);
  for (auto& d : t.dims) d = r.u64();
  std::uint64_t numel = 1;
  for (auto d : t.dims) {
    if (d != 0 && numel > std::numeric_limits<std::uint64_t>::max() / d) throw FormatError("OVTF dims overflow");
    numel *= d;
  }
  if (t.dtype == DType::kF32) {
    r.need_elements(numel, 4);
    t.f32.resize(numel);
    for (auto& v : t.f32) v = r.f32();
  } else {
    r.need_elements(numel, 1);
    t.u8.resize(numel);
    for (auto& v : t.u8) v = r.u8();
  }
  if (r.remaining() != 0) throw FormatError("trailing bytes after OVTF payload");
  return t;
}

inline std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("read failed for '" + path.string() + "'");
  return bytes;
}

/// Writes to a sibling temp file and renames it into place, so readers never
/// observe a partial file.
inline void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::filesystem::path tmp = path;
  tmp += ".tmp." + std::to_string(::getpid());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot create '" + tmp.string() + "'");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) {
      std::error_code ec;
      std::filesystem::remove(tmp, ec);
      throw IoError("write failed for '" + path.string() + "'");
    }
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp, ec);
    throw IoError("cannot rename into '" + path.string() + "'");
  }
}

inline void write_file_atomic(const std::filesystem::path& path, std::string_view text) {
  write_file_atomic(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

inline void save_csr(const std::filesystem::path& path, const CsrMatrix& csr) {
  write_file_atomic(path, serialize(csr));
}
inline CsrMatrix load_csr(const std::filesystem::path& path) { return deserialize_csr(read_file(path)); }

inline void save_tensor(const std::filesystem::path& path, const TensorFile& t) {
  write_file_atomic(path, serialize(t));
}
inline TensorFile load_tensor(const std::filesystem::path& path) { return deserialize_tensor(read_file(path)); }

}  // namespace occuvt
