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
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <limits>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "occuvt/error.hpp"
#include "occuvt/gridpyramid.hpp"
#include "occuvt/parallel.hpp"
#include "occuvt/projector.hpp"

namespace occuvt {


/// Per-position affine channel map, weight (out, in) row-major.
struct Linear {
  std::size_t in = 0;
  std::size_t out = 0;
  std::vector<float> weight;
  std::vector<float> bias;

  Linear() = default;
  Linear(std::size_t in_ch, std::size_t out_ch) : in(in_ch), out(out_ch), weight(in_ch * out_ch), bias(out_ch) {}
  float& w(std::size_t o, std::size_t i) { return weight[o * in + i]; }
  float w(std::size_t o, std::size_t i) const { return weight[o * in + i]; }

  static Linear identity(std::size_t c) {
    Linear l(c, c);
    for (std::size_t i = 0; i < c; ++i) l.w(i, i) = 1.0f;
    return l;
  }
};

/// 3x3 2D convolution, weight (out, in, 3, 3).
struct Conv2d {
  std::size_t in = 0;
  std::size_t out = 0;
  std::vector<float> weight;
  std::vector<float> bias;

  Conv2d() = default;
  Conv2d(std::size_t in_ch, std::size_t out_ch) : in(in_ch), out(out_ch), weight(in_ch * out_ch * 9), bias(out_ch) {}
  float& w(std::size_t o, std::size_t i, int kx, int ky) { return weight[((o * in + i) * 3 + kx) * 3 + ky]; }
  float w(std::size_t o, std::size_t i, int kx, int ky) const { return weight[((o * in + i) * 3 + kx) * 3 + ky]; }

  static Conv2d identity(std::size_t c) {
    Conv2d k(c, c);
    for (std::size_t i = 0; i < c; ++i) k.w(i, i, 1, 1) = 1.0f;
    return k;
  }
};

/// 3x3x3 3D convolution, weight (out, in, 3, 3, 3).
struct Conv3d {
  std::size_t in = 0;
  std::size_t out = 0;
  std::vector<float> weight;
  std::vector<float> bias;

  Conv3d() = default;
  Conv3d(std::size_t in_ch, std::size_t out_ch) : in(in_ch), out(out_ch), weight(in_ch * out_ch * 27), bias(out_ch) {}
  std::size_t offset(std::size_t o, std::size_t i, int kx, int ky, int kz) const {
    return (((o * in + i) * 3 + kx) * 3 + ky) * 3 + kz;
  }
  float& w(std::size_t o, std::size_t i, int kx, int ky, int kz) { return weight[offset(o, i, kx, ky, kz)]; }
  float w(std::size_t o, std::size_t i, int kx, int ky, int kz) const { return weight[offset(o, i, kx, ky, kz)]; }

  static Conv3d identity(std::size_t c) {
    Conv3d k(c, c);
    for (std::size_t i = 0; i < c; ++i) k.w(i, i, 1, 1, 1) = 1.0f;
    return k;
  }
};

/// Stride-2 transposed 3D convolution with a 2x2x2 kernel, weight (in, out, 2, 2, 2).
struct Deconv3d {
  std::size_t in = 0;
  std::size_t out = 0;
  std::vector<float> weight;
  std::vector<float> bias;

  Deconv3d() = default;
  Deconv3d(std::size_t in_ch, std::size_t out_ch) : in(in_ch), out(out_ch), weight(in_ch * out_ch * 8), bias(out_ch) {}
  float& w(std::size_t i, std::size_t o, int ox, int oy, int oz) { return weight[(((i * out + o) * 2 + ox) * 2 + oy) * 2 + oz]; }
  float w(std::size_t i, std::size_t o, int ox, int oy, int oz) const {
    return weight[(((i * out + o) * 2 + ox) * 2 + oy) * 2 + oz];
  }

  /// Kernel that copies each coarse voxel into its 2x2x2 children.
  static Deconv3d nearest(std::size_t c) {
    Deconv3d k(c, c);
    for (std::size_t i = 0; i < c; ++i)
      for (int a = 0; a < 8; ++a) k.weight[(i * c + i) * 8 + a] = 1.0f;
    return k;
  }
};

/// Non-overlapping window multi-head self-attention over the BEV plane.
struct WindowAttention {
  std::size_t window = 5;
  std::size_t heads = 4;
  Linear qkv;   // C -> 3C, rows ordered [q; k; v]
  Linear proj;  // C -> C
};

/// 1x1 reduce, parallel dilated 3x3 branches summed, 1x1 restore, residual.
struct BottleneckAspp {
  std::vector<int> dilations{1, 2, 3};
  Linear reduce;                  // C -> C/4
  std::vector<Conv2d> branches;   // one per dilation, C/4 -> C/4
  Linear restore;                 // C/4 -> C
};

struct FusionWeights {
  std::size_t channels = 0;
  Conv3d local_conv;
  Conv2d global_conv;
  WindowAttention attention;
  BottleneckAspp aspp;
  Linear ffn1;  // C -> hidden
  Linear ffn2;  // hidden -> C
  Deconv3d deconv;
  Linear head;  // C -> num_classes

  struct Options {
    std::size_t hidden = 0;  // 0 -> 2C
    std::size_t num_classes = kNumClasses;
    std::size_t window = 5;
    std::size_t heads = 4;
    std::vector<int> dilations{1, 2, 3};
  };

  /// All-zero weights of the right shapes (every residual path then passes through).
  static FusionWeights zeros(std::size_t c, const Options& opt) {
    FusionWeights w;
    w.channels = c;
    const std::size_t hidden = opt.hidden ? opt.hidden : 2 * c;
    const std::size_t reduced = std::max<std::size_t>(1, c / 4);
    w.local_conv = Conv3d(c, c);
    w.global_conv = Conv2d(c, c);
    w.attention.window = opt.window;
    w.attention.heads = opt.heads;
    w.attention.qkv = Linear(c, 3 * c);
    w.attention.proj = Linear(c, c);
    w.aspp.dilations = opt.dilations;
    w.aspp.reduce = Linear(c, reduced);
    w.aspp.branches.assign(opt.dilations.size(), Conv2d(reduced, reduced));
    w.aspp.restore = Linear(reduced, c);
    w.ffn1 = Linear(c, hidden);
    w.ffn2 = Linear(hidden, c);
    w.deconv = Deconv3d(c, c);
    w.head = Linear(c, opt.num_classes);
    w.validate();
    return w;
  }
  static FusionWeights zeros(std::size_t c) { return zeros(c, Options{}); }

  /// Weights drawn from N(0, 0.02^2) with a fixed seed; biases are zero.
  static FusionWeights seeded(std::size_t c, std::uint64_t seed, const Options& opt) {
    FusionWeights w = zeros(c, opt);
    std::mt19937_64 rng(seed);
    std::normal_distribution<float> normal(0.0f, 0.02f);
    w.for_each_weight([&](std::vector<float>& t) {
      for (auto& v : t) v = normal(rng);
    });
    return w;
  }
  static FusionWeights seeded(std::size_t c, std::uint64_t seed) { return seeded(c, seed, Options{}); }

  /// Identity refiners, closed gate and identity class head: the fused
  /// volume is the raw lifted volume. Requires num_classes == c.
  static FusionWeights routing(std::size_t c, const Options& opt) {
    if (opt.num_classes != c) throw InvalidArgument("routing weights need channels == num_classes");
    FusionWeights w = zeros(c, opt);
    w.local_conv = Conv3d::identity(c);
    w.global_conv = Conv2d::identity(c);
    std::fill(w.ffn2.bias.begin(), w.ffn2.bias.end(), -1e4f);
    w.head = Linear::identity(c);
    return w;
  }

  /// Visits the kernel tensors (not biases) in a fixed order.
  template <typename Fn>
  void for_each_weight(Fn&& fn) {
    fn(local_conv.weight);
    fn(global_conv.weight);
    fn(attention.qkv.weight);
    fn(attention.proj.weight);
    fn(aspp.reduce.weight);
    for (auto& b : aspp.branches) fn(b.weight);
    fn(aspp.restore.weight);
    fn(ffn1.weight);
    fn(ffn2.weight);
    fn(deconv.weight);
    fn(head.weight);
  }

  void validate() const {
    const std::size_t c = channels;
    auto check = [](bool ok, const char* what) {
      if (!ok) throw ShapeError(std::string("fusion weights: ") + what);
    };
    auto linear_ok = [](const Linear& l, std::size_t in, std::size_t out) {
      return l.in == in && l.out == out && l.weight.size() == in * out && l.bias.size() == out;
    };
    check(c >= 1, "channels must be >= 1");
    check(local_conv.in == c && local_conv.out == c && local_conv.weight.size() == c * c * 27 &&
              local_conv.bias.size() == c,
          "local conv shape");
    check(global_conv.in == c && global_conv.out == c && global_conv.weight.size() == c * c * 9 &&
              global_conv.bias.size() == c,
          "global conv shape");
    check(attention.window >= 1, "window must be >= 1");
    check(attention.heads >= 1 && c % attention.heads == 0, "heads must divide channels");
    check(linear_ok(attention.qkv, c, 3 * c), "qkv shape");
    check(linear_ok(attention.proj, c, c), "attention projection shape");
    const std::size_t r = aspp.reduce.out;
    check(r >= 1 && linear_ok(aspp.reduce, c, r), "aspp reduce shape");
    check(aspp.branches.size() == aspp.dilations.size(), "aspp branch count != dilation count");
    for (std::size_t b = 0; b < aspp.branches.size(); ++b) {
      const auto& k = aspp.branches[b];
      check(aspp.dilations[b] >= 1, "aspp dilation must be >= 1");
      check(k.in == r && k.out == r && k.weight.size() == r * r * 9 && k.bias.size() == r, "aspp branch shape");
    }
    check(linear_ok(aspp.restore, r, c), "aspp restore shape");
    check(ffn1.out >= 1 && linear_ok(ffn1, c, ffn1.out), "ffn1 shape");
    check(linear_ok(ffn2, ffn1.out, c), "ffn2 shape");
    check(deconv.in == c && deconv.out == c && deconv.weight.size() == c * c * 8 && deconv.bias.size() == c,
          "deconv shape");
    check(head.out >= 1 && linear_ok(head, c, head.out), "head shape");
  }
};

namespace detail {

/// out[o][p] = b[o] + sum_i W[o][i] * in[i][p] over `positions` columns.
inline std::vector<float> apply_linear(const Linear& l, std::span<const float> in, std::size_t positions,
                                       int threads = 0) {
  if (in.size() != l.in * positions) throw ShapeError("linear: input channel mismatch");
  std::vector<float> out(l.out * positions);
  parallel_for(l.out, [&](std::size_t begin, std::size_t end) {
    std::vector<double> acc(positions);
    for (std::size_t o = begin; o < end; ++o) {
      std::fill(acc.begin(), acc.end(), double(l.bias[o]));
      for (std::size_t i = 0; i < l.in; ++i) {
        const double w = l.w(o, i);
        if (w == 0.0) continue;
        const float* src = in.data() + i * positions;
        for (std::size_t p = 0; p < positions; ++p) acc[p] += w * src[p];
      }
      for (std::size_t p = 0; p < positions; ++p) out[o * positions + p] = static_cast<float>(acc[p]);
    }
  }, threads);
  return out;
}

inline std::vector<float> conv2d_same(const Conv2d& k, std::span<const float> in, std::size_t nx, std::size_t ny,
                                      int dilation) {
  if (in.size() != k.in * nx * ny) throw ShapeError("conv2d: input channel mismatch");
  const std::size_t plane = nx * ny;
  std::vector<float> out(k.out * plane);
  parallel_for(k.out, [&](std::size_t begin, std::size_t end) {
    std::vector<double> acc(plane);
    for (std::size_t o = begin; o < end; ++o) {
      std::fill(acc.begin(), acc.end(), double(k.bias[o]));
      for (std::size_t i = 0; i < k.in; ++i) {
        const float* src = in.data() + i * plane;
        for (int kx = 0; kx < 3; ++kx) {
          for (int ky = 0; ky < 3; ++ky) {
            const double w = k.w(o, i, kx, ky);
            if (w == 0.0) continue;
            const long dx = long(kx - 1) * dilation;
            const long dy = long(ky - 1) * dilation;
            for (long x = std::max(0L, -dx); x < std::min(long(nx), long(nx) - dx); ++x) {
              for (long y = std::max(0L, -dy); y < std::min(long(ny), long(ny) - dy); ++y) {
                acc[x * ny + y] += w * src[(x + dx) * long(ny) + (y + dy)];
              }
            }
          }
        }
      }
      for (std::size_t p = 0; p < plane; ++p) out[o * plane + p] = static_cast<float>(acc[p]);
    }
  });
  return out;
}

inline float sigmoid(double x) { return static_cast<float>(1.0 / (1.0 + std::exp(-x))); }

}  // namespace detail

/// 3x3x3 convolution with zero padding; shape preserved, no activation.
inline Volume refine_local(const Volume& vol, const FusionWeights& w) {
  const Conv3d& k = w.local_conv;
  if (vol.channels != k.in) throw ShapeError("refine_local: channel mismatch");
  const auto [nx, ny, nz] = vol.dims;
  const std::size_t v = vol.voxels();
  Volume out(k.out, vol.dims);
  parallel_for(k.out, [&](std::size_t begin, std::size_t end) {
    std::vector<double> acc(v);
    for (std::size_t o = begin; o < end; ++o) {
      std::fill(acc.begin(), acc.end(), double(k.bias[o]));
      for (std::size_t i = 0; i < k.in; ++i) {
        const float* src = vol.data.data() + i * v;
        for (int kx = 0; kx < 3; ++kx) {
          for (int ky = 0; ky < 3; ++ky) {
            for (int kz = 0; kz < 3; ++kz) {
              const double wt = k.w(o, i, kx, ky, kz);
              if (wt == 0.0) continue;
              const long dx = kx - 1, dy = ky - 1, dz = kz - 1;
              for (long x = std::max(0L, -dx); x < std::min(long(nx), long(nx) - dx); ++x) {
                for (long y = std::max(0L, -dy); y < std::min(long(ny), long(ny) - dy); ++y) {
                  const std::size_t dst_row = (x * ny + y) * nz;
                  const std::size_t src_row = ((x + dx) * ny + (y + dy)) * nz;
                  for (long z = std::max(0L, -dz); z < std::min(long(nz), long(nz) - dz); ++z) {
                    acc[dst_row + z] += wt * src[src_row + z + dz];
                  }
                }
              }
            }
          }
        }
      }
      for (std::size_t p = 0; p < v; ++p) out.data[o * v + p] = static_cast<float>(acc[p]);
    }
  });
  return out;
}

/// Residual window attention: x + proj(MHSA(x)) inside each w x w window.
/// The plane is zero-padded up to a multiple of w and cropped afterwards;
/// padded positions take part in attention as zero tokens. When `rows` is
/// given, every attention row (softmax weights over the window) is appended.
inline BevFeature window_attention(const BevFeature& bev, const WindowAttention& attn,
                                   std::vector<double>* rows = nullptr) {
  const std::size_t c = bev.channels;
  if (attn.qkv.in != c || attn.qkv.out != 3 * c || attn.proj.in != c || attn.proj.out != c)
    throw ShapeError("window_attention: channel mismatch");
  if (attn.heads == 0 || c % attn.heads != 0) throw ShapeError("window_attention: heads must divide channels");
  const std::size_t w = attn.window;
  const std::size_t nx = bev.dims[0], ny = bev.dims[1];
  const std::size_t px = (nx + w - 1) / w * w, py = (ny + w - 1) / w * w;
  const std::size_t tokens = w * w;
  const std::size_t head_dim = c / attn.heads;
  const double scale = 1.0 / std::sqrt(double(head_dim));
  const std::size_t wins_x = px / w, wins_y = py / w;
  BevFeature out = bev;
  std::vector<std::vector<double>> window_rows(rows ? wins_x * wins_y : 0);

  parallel_for(wins_x * wins_y, [&](std::size_t begin, std::size_t end) {
    std::vector<float> x(c * tokens);
    std::vector<double> scores(tokens), mixed(c * tokens);
    for (std::size_t win = begin; win < end; ++win) {
      const std::size_t wx = win / wins_y, wy = win % wins_y;
      std::fill(x.begin(), x.end(), 0.0f);
      for (std::size_t t = 0; t < tokens; ++t) {
        const std::size_t gx = wx * w + t / w, gy = wy * w + t % w;
        if (gx >= nx || gy >= ny) continue;
        for (std::size_t ch = 0; ch < c; ++ch) x[ch * tokens + t] = bev.at(ch, gx, gy);
      }
      // Channel-major (3C, tokens).
      const std::vector<float> qkv = detail::apply_linear(attn.qkv, x, tokens, 1);
      for (std::size_t h = 0; h < attn.heads; ++h) {
        for (std::size_t t = 0; t < tokens; ++t) {
          double max_score = -std::numeric_limits<double>::infinity();
          for (std::size_t s = 0; s < tokens; ++s) {
            double dot = 0.0;
            for (std::size_t d = 0; d < head_dim; ++d) {
              const std::size_t ch = h * head_dim + d;
              dot += double(qkv[ch * tokens + t]) * qkv[(c + ch) * tokens + s];
            }
            scores[s] = dot * scale;
            max_score = std::max(max_score, scores[s]);
          }
          double total = 0.0;
          for (auto& s : scores) total += (s = std::exp(s - max_score));
          for (auto& s : scores) s /= total;
          if (rows) window_rows[win].insert(window_rows[win].end(), scores.begin(), scores.end());
          for (std::size_t d = 0; d < head_dim; ++d) {
            const std::size_t ch = h * head_dim + d;
            double acc = 0.0;
            for (std::size_t s = 0; s < tokens; ++s) acc += scores[s] * qkv[(2 * c + ch) * tokens + s];
            mixed[ch * tokens + t] = acc;
          }
        }
      }
      const std::vector<float> mixed_f(mixed.begin(), mixed.end());
      const std::vector<float> projected = detail::apply_linear(attn.proj, mixed_f, tokens, 1);
      for (std::size_t t = 0; t < tokens; ++t) {
        const std::size_t gx = wx * w + t / w, gy = wy * w + t % w;
        if (gx >= nx || gy >= ny) continue;
        for (std::size_t ch = 0; ch < c; ++ch) out.at(ch, gx, gy) += projected[ch * tokens + t];
      }
    }
  });
  if (rows) {
    for (auto& r : window_rows) rows->insert(rows->end(), r.begin(), r.end());
  }
  return out;
}

inline BevFeature bottleneck_aspp(const BevFeature& bev, const BottleneckAspp& aspp) {
  if (aspp.reduce.in != bev.channels) throw ShapeError("aspp: channel mismatch");
  const std::size_t nx = bev.dims[0], ny = bev.dims[1], plane = nx * ny;
  const std::vector<float> reduced = detail::apply_linear(aspp.reduce, bev.data, plane);
  std::vector<float> branch_sum(aspp.reduce.out * plane, 0.0f);
  {
    std::vector<double> acc(branch_sum.size(), 0.0);
    for (std::size_t b = 0; b < aspp.branches.size(); ++b) {
      const auto branch = detail::conv2d_same(aspp.branches[b], reduced, nx, ny, aspp.dilations[b]);
      for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += branch[i];
    }
    for (std::size_t i = 0; i < acc.size(); ++i) branch_sum[i] = static_cast<float>(acc[i]);
  }
  const std::vector<float> restored = detail::apply_linear(aspp.restore, branch_sum, plane);
  BevFeature out = bev;
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] += restored[i];
  return out;
}

/// 3x3 conv, then window attention, then bottleneck ASPP.
inline BevFeature refine_global(const BevFeature& bev, const FusionWeights& w) {
  if (bev.channels != w.global_conv.in) throw ShapeError("refine_global: channel mismatch");
  BevFeature conv(w.global_conv.out, bev.dims,
                  detail::conv2d_same(w.global_conv, bev.data, bev.dims[0], bev.dims[1], 1));
  return bottleneck_aspp(window_attention(conv, w.attention), w.aspp);
}

/// Per-voxel attention weights in (0, 1): sigmoid(FFN(x)).
inline Volume fusion_gate(const Volume& refined_local, const FusionWeights& w) {
  const std::size_t v = refined_local.voxels();
  std::vector<float> hidden = detail::apply_linear(w.ffn1, refined_local.data, v);
  for (auto& h : hidden) h = std::max(h, 0.0f);
  std::vector<float> gate = detail::apply_linear(w.ffn2, hidden, v);
  for (auto& g : gate) g = detail::sigmoid(g);
  return Volume(w.ffn2.out, refined_local.dims, std::move(gate));
}

/// Global-local attention fusion:
///   out = L + sigmoid(FFN(L)) * expand_z(G),  L = refine_local(local), G = refine_global(global)
inline Volume fuse(const Volume& local, const BevFeature& global, const FusionWeights& w) {
  if (local.channels != w.channels || global.channels != w.channels) throw ShapeError("fuse: channel mismatch");
  if (global.dims[0] != local.dims[0] || global.dims[1] != local.dims[1])
    throw ShapeError("fuse: BEV dims do not match the volume's x/y dims");
  Volume out = refine_local(local, w);
  const BevFeature g = refine_global(global, w);
  const Volume gate = fusion_gate(out, w);
  const std::size_t nz = local.dims[2];
  const std::size_t v = out.voxels();
  for (std::size_t ch = 0; ch < out.channels; ++ch) {
    for (std::size_t cell = 0; cell < g.cells(); ++cell) {
      const double gv = g.data[ch * g.cells() + cell];
      for (std::size_t z = 0; z < nz; ++z) {
        const std::size_t i = ch * v + cell * nz + z;
        out.data[i] = static_cast<float>(out.data[i] + double(gate.data[i]) * gv);
      }
    }
  }
  return out;
}

/// Replicates a BEV plane along z.
inline Volume broadcast_z(const BevFeature& bev, std::size_t nz) {
  Volume out(bev.channels, {bev.dims[0], bev.dims[1], nz});
  for (std::size_t ch = 0; ch < bev.channels; ++ch)
    for (std::size_t cell = 0; cell < bev.cells(); ++cell)
      for (std::size_t z = 0; z < nz; ++z) out.data[ch * out.voxels() + cell * nz + z] = bev.data[ch * bev.cells() + cell];
  return out;
}

enum class UpsampleMode { kDeconv, kNearest };

/// Coarse-level index feeding fine index i along one axis, and the kernel tap.
/// Odd tails (fine = 2*coarse + 1) reuse the last coarse cell's second tap.
inline std::pair<std::size_t, int> upsample_source(std::size_t i, std::size_t coarse_dim) {
  const std::size_t j = std::min(i / 2, coarse_dim - 1);
  return {j, static_cast<int>(std::min<std::size_t>(i - 2 * j, 1))};
}

/// fine + up(coarse), where up is the stride-2 deconvolution (or nearest x2).
inline Volume upsample_skip(const Volume& coarse, const Volume& fine, const FusionWeights& w,
                            UpsampleMode mode = UpsampleMode::kDeconv) {
  if (coarse.channels != fine.channels) throw ShapeError("upsample_skip: channel mismatch");
  for (int a = 0; a < 3; ++a) {
    if (halve_dim(fine.dims[a]) != coarse.dims[a]) throw ShapeError("upsample_skip: fine dims are not 2x coarse dims");
  }
  if (mode == UpsampleMode::kDeconv && (w.deconv.in != coarse.channels || w.deconv.out != fine.channels))
    throw ShapeError("upsample_skip: deconv channel mismatch");
  Volume out = fine;
  const std::size_t c = fine.channels;
  const std::size_t fv = fine.voxels(), cv = coarse.voxels();
  parallel_for(fine.dims[0], [&](std::size_t xb, std::size_t xe) {
    std::vector<double> acc(c);
    for (std::size_t x = xb; x < xe; ++x) {
      const auto [jx, ox] = upsample_source(x, coarse.dims[0]);
      for (std::size_t y = 0; y < fine.dims[1]; ++y) {
        const auto [jy, oy] = upsample_source(y, coarse.dims[1]);
        for (std::size_t z = 0; z < fine.dims[2]; ++z) {
          const auto [jz, oz] = upsample_source(z, coarse.dims[2]);
          const std::size_t src = coarse.index(jx, jy, jz);
          const std::size_t dst = fine.index(x, y, z);
          if (mode == UpsampleMode::kNearest) {
            for (std::size_t o = 0; o < c; ++o) out.data[o * fv + dst] += coarse.data[o * cv + src];
            continue;
          }
          for (std::size_t o = 0; o < c; ++o) acc[o] = w.deconv.bias[o];
          for (std::size_t i = 0; i < c; ++i) {
            const double in = coarse.data[i * cv + src];
            if (in == 0.0) continue;
            for (std::size_t o = 0; o < c; ++o) acc[o] += double(w.deconv.w(i, o, ox, oy, oz)) * in;
          }
          for (std::size_t o = 0; o < c; ++o)
            out.data[o * fv + dst] = static_cast<float>(double(out.data[o * fv + dst]) + acc[o]);
        }
      }
    }
  });
  return out;
}

/// Per-voxel affine class scores.
inline Volume class_head(const Volume& vol, const Linear& head) {
  if (vol.channels != head.in) throw ShapeError("class_head: channel mismatch");
  return Volume(head.out, vol.dims, detail::apply_linear(head, vol.data, vol.voxels()));
}

struct LevelInputs {
  FeatureMaps features;
  ProjectionSet projections;
};

/// Per-level outputs indexed by level id (0 = finest).
struct PipelineOutput {
  std::vector<Volume> volumes;
  std::vector<Volume> logits;
};

/// Multi-scale forward pass. Coarsest level first: lift and fuse every
/// projected level, add the upsampled coarser result, then score each level.
/// Upsampling from level l+1 uses that level's deconvolution weights.
inline PipelineOutput run_pipeline(const std::vector<std::optional<LevelInputs>>& inputs,
                                   const std::vector<FusionWeights>& weights, const PyramidConfig& pyramid,
                                   UpsampleMode upsample = UpsampleMode::kDeconv) {
  pyramid.validate();
  const std::size_t levels = pyramid.size();
  if (inputs.size() != levels || weights.size() != levels)
    throw ShapeError("run_pipeline: need one input slot and one weight set per level");
  PipelineOutput result;
  result.volumes.resize(levels);
  result.logits.resize(levels);
  std::optional<Volume> coarser;
  for (std::size_t l = levels; l-- > 0;) {
    const LevelConfig& cfg = pyramid[l];
    const FusionWeights& w = weights[l];
    w.validate();
    Volume vol;
    if (cfg.projected) {
      if (!inputs[l]) throw InvalidArgument("run_pipeline: missing inputs for projected level " + std::to_string(l));
      const auto& in = *inputs[l];
      if (in.projections.level.grid.dims() != cfg.grid.dims())
        throw ShapeError("run_pipeline: projection grid does not match level " + std::to_string(l));
      vol = fuse(transform_local(in.features, in.projections), transform_global(in.features, in.projections), w);
    } else {
      vol = Volume(w.channels, cfg.grid.dims());
    }
    if (coarser) vol = upsample_skip(*coarser, vol, weights[l + 1], upsample);
    result.logits[l] = class_head(vol, w.head);
    result.volumes[l] = vol;
    coarser = std::move(vol);
  }
  return result;
}

}  // namespace occuvt
