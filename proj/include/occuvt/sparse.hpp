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
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "occuvt/error.hpp"
#include "occuvt/parallel.hpp"

namespace occuvt {

/// Row-major float matrix.
struct DenseMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<float> data;

  DenseMatrix() = default;
  DenseMatrix(std::size_t r, std::size_t c, float fill = 0.0f) : rows(r), cols(c), data(r * c, fill) {}
  DenseMatrix(std::size_t r, std::size_t c, std::vector<float> values) : rows(r), cols(c), data(std::move(values)) {
    if (data.size() != rows * cols) throw ShapeError("dense matrix: data length != rows*cols");
  }

  float& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  float operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
  std::span<const float> row(std::size_t r) const { return {data.data() + r * cols, cols}; }

  bool all_finite() const {
    return std::all_of(data.begin(), data.end(), [](float v) { return std::isfinite(v); });
  }
};

struct Triplet {
  std::uint64_t row = 0;
  std::uint64_t col = 0;
  float value = 0.0f;
};

/// Compressed sparse row matrix with float values, 64-bit row pointers and
/// 32-bit column indices. Column indices are strictly increasing per row.
class CsrMatrix {
 public:
  CsrMatrix() : indptr_(1, 0) {}

  /// Takes ownership of raw arrays and checks every structural invariant.
  CsrMatrix(std::uint64_t rows, std::uint64_t cols, std::vector<std::uint64_t> indptr,
            std::vector<std::uint32_t> indices, std::vector<float> values)
      : rows_(rows), cols_(cols), indptr_(std::move(indptr)), indices_(std::move(indices)), values_(std::move(values)) {
    if (auto err = check(); !err.empty()) throw InvalidArgument("csr: " + err);
  }

  static CsrMatrix zeros(std::uint64_t rows, std::uint64_t cols) {
    return CsrMatrix(rows, cols, std::vector<std::uint64_t>(rows + 1, 0), {}, {});
  }

  static CsrMatrix identity(std::uint64_t n) {
    std::vector<std::uint64_t> indptr(n + 1);
    std::iota(indptr.begin(), indptr.end(), std::uint64_t{0});
    std::vector<std::uint32_t> indices(n);
    std::iota(indices.begin(), indices.end(), std::uint32_t{0});
    return CsrMatrix(n, n, std::move(indptr), std::move(indices), std::vector<float>(n, 1.0f));
  }

  std::uint64_t rows() const { return rows_; }
  std::uint64_t cols() const { return cols_; }
  std::uint64_t nnz() const { return values_.size(); }
  std::span<const std::uint64_t> indptr() const { return indptr_; }
  std::span<const std::uint32_t> indices() const { return indices_; }
  std::span<const float> values() const { return values_; }

  std::span<const std::uint32_t> row_indices(std::uint64_t r) const {
    return std::span(indices_).subspan(indptr_[r], indptr_[r + 1] - indptr_[r]);
  }
  std::span<const float> row_values(std::uint64_t r) const {
    return std::span(values_).subspan(indptr_[r], indptr_[r + 1] - indptr_[r]);
  }

  /// Entry lookup by binary search; absent entries read as zero.
  float at(std::uint64_t r, std::uint64_t c) const {
    if (r >= rows_ || c >= cols_) throw InvalidArgument("csr: index out of range");
    auto idx = row_indices(r);
    auto it = std::lower_bound(idx.begin(), idx.end(), c);
    if (it == idx.end() || *it != c) return 0.0f;
    return values_[indptr_[r] + static_cast<std::uint64_t>(it - idx.begin())];
  }

  /// Empty string when valid, otherwise a description of the first violation.
  std::string check() const {
    if (cols_ > std::numeric_limits<std::uint32_t>::max() + std::uint64_t{1})
      return "cols exceed 32-bit column index range";
    if (indptr_.size() != rows_ + 1) return "indptr length != rows+1";
    if (indptr_.front() != 0) return "indptr[0] != 0";
    for (std::uint64_t r = 0; r < rows_; ++r) {
      if (indptr_[r + 1] < indptr_[r]) return "indptr decreasing at row " + std::to_string(r);
    }
    if (indptr_.back() != indices_.size()) return "indptr[rows] != nnz";
    if (indices_.size() != values_.size()) return "indices/values length mismatch";
    for (std::uint64_t r = 0; r < rows_; ++r) {
      for (std::uint64_t k = indptr_[r]; k < indptr_[r + 1]; ++k) {
        if (indices_[k] >= cols_) return "column index out of range in row " + std::to_string(r);
        if (k > indptr_[r] && indices_[k] <= indices_[k - 1])
          return "column indices not strictly increasing in row " + std::to_string(r);
      }
    }
    for (float v : values_) {
      if (!std::isfinite(v)) return "non-finite value";
    }
    return {};
  }

  /// Transposed matrix, still in CSR form. Entries of each output row keep
  /// increasing source-row order.
  CsrMatrix transpose() const {
    if (rows_ > std::numeric_limits<std::uint32_t>::max() + std::uint64_t{1})
      throw InvalidArgument("csr: too many rows to transpose");
    std::vector<std::uint64_t> indptr(cols_ + 1, 0);
    for (auto c : indices_) ++indptr[c + 1];
    std::partial_sum(indptr.begin(), indptr.end(), indptr.begin());
    std::vector<std::uint64_t> cursor(indptr.begin(), indptr.end() - 1);
    std::vector<std::uint32_t> indices(nnz());
    std::vector<float> values(nnz());
    for (std::uint64_t r = 0; r < rows_; ++r) {
      for (std::uint64_t k = indptr_[r]; k < indptr_[r + 1]; ++k) {
        const std::uint64_t dst = cursor[indices_[k]]++;
        indices[dst] = static_cast<std::uint32_t>(r);
        values[dst] = values_[k];
      }
    }
    CsrMatrix t;
    t.rows_ = cols_;
    t.cols_ = rows_;
    t.indptr_ = std::move(indptr);
    t.indices_ = std::move(indices);
    t.values_ = std::move(values);
    return t;
  }

  friend bool operator==(const CsrMatrix&, const CsrMatrix&) = default;

 private:
  std::uint64_t rows_ = 0;
  std::uint64_t cols_ = 0;
  std::vector<std::uint64_t> indptr_;
  std::vector<std::uint32_t> indices_;
  std::vector<float> values_;
};

/// Builds a CSR matrix from (row, col, value) triplets. Duplicates are summed
/// in double precision; the result does not depend on triplet order.
inline CsrMatrix from_triplets(std::uint64_t rows, std::uint64_t cols, std::span<const Triplet> triplets) {
  if (cols > std::numeric_limits<std::uint32_t>::max() + std::uint64_t{1})
    throw InvalidArgument("from_triplets: cols exceed 32-bit column index range");
  for (const auto& t : triplets) {
    if (t.row >= rows || t.col >= cols) throw InvalidArgument("from_triplets: triplet out of bounds");
    if (!std::isfinite(t.value)) throw InvalidArgument("from_triplets: non-finite value");
  }
  // Sorting by value as the last key makes duplicate summation order-independent.
  std::vector<Triplet> sorted(triplets.begin(), triplets.end());
  std::sort(sorted.begin(), sorted.end(), [](const Triplet& a, const Triplet& b) {
    if (a.row != b.row) return a.row < b.row;
    if (a.col != b.col) return a.col < b.col;
    return a.value < b.value;
  });
  std::vector<std::uint64_t> indptr(rows + 1, 0);
  std::vector<std::uint32_t> indices;
  std::vector<float> values;
  for (std::size_t i = 0; i < sorted.size();) {
    std::size_t j = i;
    double sum = 0.0;
    while (j < sorted.size() && sorted[j].row == sorted[i].row && sorted[j].col == sorted[i].col) {
      sum += sorted[j].value;
      ++j;
    }
    const auto value = static_cast<float>(sum);
    if (!std::isfinite(value)) throw InvalidArgument("from_triplets: duplicate sum overflows float");
    indices.push_back(static_cast<std::uint32_t>(sorted[i].col));
    values.push_back(value);
    ++indptr[sorted[i].row + 1];
    i = j;
  }
  std::partial_sum(indptr.begin(), indptr.end(), indptr.begin());
  return CsrMatrix(rows, cols, std::move(indptr), std::move(indices), std::move(values));
}

/// Dense (C x R) times sparse (R x K). Each output element is reduced in
/// increasing r order in double precision, so results are bit-identical for
/// any thread count.
inline DenseMatrix spmm(const DenseMatrix& dense, const CsrMatrix& csr, int threads = 0) {
  if (dense.cols != csr.rows()) {
    throw ShapeError("spmm: dense cols (" + std::to_string(dense.cols) + ") != csr rows (" +
                     std::to_string(csr.rows()) + ")");
  }
  const std::size_t channels = dense.rows;
  const std::size_t k_cols = csr.cols();
  DenseMatrix out(channels, k_cols);
  if (channels == 0 || k_cols == 0) return out;

  const CsrMatrix by_col = csr.transpose();
  // Pixel-major copy of the features so one sparse entry touches contiguous memory.
  std::vector<float> pixel_major(dense.cols * channels);
  for (std::size_t c = 0; c < channels; ++c)
    for (std::size_t r = 0; r < dense.cols; ++r) pixel_major[r * channels + c] = dense(c, r);

  parallel_for(
      k_cols,
      [&](std::size_t begin, std::size_t end) {
        std::vector<double> acc(channels);
        for (std::size_t k = begin; k < end; ++k) {
          std::fill(acc.begin(), acc.end(), 0.0);
          auto rows = by_col.row_indices(k);
          auto vals = by_col.row_values(k);
          for (std::size_t e = 0; e < rows.size(); ++e) {
            const float* src = pixel_major.data() + std::size_t(rows[e]) * channels;
            const double w = vals[e];
            for (std::size_t c = 0; c < channels; ++c) acc[c] += double(src[c]) * w;
          }
          for (std::size_t c = 0; c < channels; ++c) out(c, k) = static_cast<float>(acc[c]);
        }
      },
      threads);
  return out;
}

struct MemoryStats {
  double dense_bytes = 0.0;  // may exceed 2^64 in principle; the full-scale config is ~3.4e11
  std::uint64_t csr_bytes = 0;
  double ratio = 0.0;
};

/// Size of the fixed CSR file header: magic, version, rows, cols, nnz.
inline constexpr std::uint64_t kCsrHeaderBytes = 4 + 4 + 8 + 8 + 8;

/// Dense float32 footprint against the exact serialized CSR size.
inline MemoryStats memory_stats(const CsrMatrix& csr) {
  MemoryStats s;
  s.dense_bytes = double(csr.rows()) * double(csr.cols()) * 4.0;
  s.csr_bytes = kCsrHeaderBytes + (csr.rows() + 1) * 8 + csr.nnz() * (4 + 4);
  s.ratio = s.dense_bytes > 0.0 ? double(s.csr_bytes) / s.dense_bytes : 0.0;
  return s;
}

}  // namespace occuvt
