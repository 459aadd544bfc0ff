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
#include <optional>
#include <string>
#include <vector>

#include "occuvt/error.hpp"
#include "occuvt/gridpyramid.hpp"
#include "occuvt/projector.hpp"

namespace occuvt {

/// Probabilities are clamped into [kProbEpsilon, 1 - kProbEpsilon] before logs.
inline constexpr double kProbEpsilon = 1e-7;

/// Per-voxel semantic labels in canonical voxel order; 0 means empty.
struct LabelVolume {
  GridDims dims{0, 0, 0};
  std::vector<std::uint8_t> labels;

  LabelVolume() = default;
  explicit LabelVolume(GridDims d, std::uint8_t fill = 0) : dims(d), labels(d[0] * d[1] * d[2], fill) {}
  LabelVolume(GridDims d, std::vector<std::uint8_t> values) : dims(d), labels(std::move(values)) {
    if (labels.size() != voxels()) throw ShapeError("label volume: length != X*Y*Z");
  }

  std::size_t voxels() const { return dims[0] * dims[1] * dims[2]; }
  std::size_t index(std::size_t x, std::size_t y, std::size_t z) const { return (x * dims[1] + y) * dims[2] + z; }
  std::uint8_t& at(std::size_t x, std::size_t y, std::size_t z) { return labels[index(x, y, z)]; }
  std::uint8_t at(std::size_t x, std::size_t y, std::size_t z) const { return labels[index(x, y, z)]; }

  void validate(std::size_t num_classes) const {
    for (auto l : labels) {
      if (l >= num_classes) throw InvalidArgument("label " + std::to_string(l) + " out of range");
    }
  }
};

struct ConfusionCounts {
  std::size_t num_classes = 0;
  bool ignore_empty_in_miou = true;
  std::vector<std::uint64_t> tp, fp, fn;
  // occupied (label != 0) versus empty
  std::uint64_t geo_tp = 0, geo_fp = 0, geo_fn = 0;
};

inline ConfusionCounts confusion(const LabelVolume& pred, const LabelVolume& gt, std::size_t num_classes = kNumClasses,
                                 bool ignore_empty_in_miou = true) {
  if (pred.dims != gt.dims) throw ShapeError("confusion: prediction and ground truth dims differ");
  pred.validate(num_classes);
  gt.validate(num_classes);
  ConfusionCounts counts;
  counts.num_classes = num_classes;
  counts.ignore_empty_in_miou = ignore_empty_in_miou;
  counts.tp.assign(num_classes, 0);
  counts.fp.assign(num_classes, 0);
  counts.fn.assign(num_classes, 0);
  for (std::size_t i = 0; i < gt.labels.size(); ++i) {
    const auto p = pred.labels[i], g = gt.labels[i];
    if (p == g) {
      ++counts.tp[g];
    } else {
      ++counts.fp[p];
      ++counts.fn[g];
    }
    const bool po = p != 0, go = g != 0;
    counts.geo_tp += po && go;
    counts.geo_fp += po && !go;
    counts.geo_fn += !po && go;
  }
  return counts;
}

/// TP / (TP + FP + FN); nullopt when the class is absent from both inputs.
inline std::optional<double> iou(std::uint64_t tp, std::uint64_t fp, std::uint64_t fn) {
  const std::uint64_t denom = tp + fp + fn;
  if (denom == 0) return std::nullopt;
  return double(tp) / double(denom);
}

inline std::optional<double> iou(const ConfusionCounts& counts, std::size_t cls) {
  if (cls >= counts.num_classes) throw InvalidArgument("iou: class out of range");
  return iou(counts.tp[cls], counts.fp[cls], counts.fn[cls]);
}

/// Occupied-versus-empty IoU.
inline std::optional<double> geometric_iou(const ConfusionCounts& counts) {
  return iou(counts.geo_tp, counts.geo_fp, counts.geo_fn);
}

/// Mean IoU over the classes with a defined IoU (class 0 skipped when
/// ignore_empty_in_miou). NaN when no class qualifies.
inline double miou(const ConfusionCounts& counts) {
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t c = counts.ignore_empty_in_miou ? 1 : 0; c < counts.num_classes; ++c) {
    if (auto v = iou(counts, c)) {
      sum += *v;
      ++n;
    }
  }
  return n ? sum / double(n) : std::numeric_limits<double>::quiet_NaN();
}

/// Channel-wise softmax of (K, X, Y, Z) logits.
inline Volume softmax(const Volume& logits) {
  Volume probs(logits.channels, logits.dims);
  const std::size_t v = logits.voxels(), k = logits.channels;
  std::vector<double> e(k);
  for (std::size_t i = 0; i < v; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < k; ++c) mx = std::max(mx, double(logits.data[c * v + i]));
    double total = 0.0;
    for (std::size_t c = 0; c < k; ++c) total += (e[c] = std::exp(double(logits.data[c * v + i]) - mx));
    for (std::size_t c = 0; c < k; ++c) probs.data[c * v + i] = static_cast<float>(e[c] / total);
  }
  return probs;
}

/// Per-voxel argmax, ties resolved to the lowest class id.
inline LabelVolume argmax_labels(const Volume& scores) {
  if (scores.channels == 0 || scores.channels > 256) throw InvalidArgument("argmax: unsupported class count");
  LabelVolume out(scores.dims);
  const std::size_t v = scores.voxels();
  for (std::size_t i = 0; i < v; ++i) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < scores.channels; ++c) {
      if (scores.data[c * v + i] > scores.data[best * v + i]) best = c;
    }
    out.labels[i] = static_cast<std::uint8_t>(best);
  }
  return out;
}

namespace detail {

inline void check_scores(const Volume& scores, const LabelVolume& gt, const char* who) {
  if (scores.dims != gt.dims) throw ShapeError(std::string(who) + ": score and label dims differ");
  gt.validate(scores.channels);
}

inline double clamped_log(double p) { return std::log(std::clamp(p, kProbEpsilon, 1.0 - kProbEpsilon)); }

/// Log of a ratio that may legitimately be 1: only the lower end is clamped.
inline double ratio_log(double r) { return std::log(std::max(r, kProbEpsilon)); }

}  // namespace detail

/// Mean over voxels of -alpha * (1 - p_t)^gamma * log(p_t), p_t the softmax
/// probability of the true class.
inline double focal_loss(const Volume& logits, const LabelVolume& gt, double gamma = 2.0, double alpha = 1.0) {
  detail::check_scores(logits, gt, "focal_loss");
  const std::size_t v = logits.voxels(), k = logits.channels;
  if (v == 0) return 0.0;
  double total = 0.0;
  for (std::size_t i = 0; i < v; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < k; ++c) mx = std::max(mx, double(logits.data[c * v + i]));
    double z = 0.0;
    for (std::size_t c = 0; c < k; ++c) z += std::exp(double(logits.data[c * v + i]) - mx);
    const double log_pt_raw = double(logits.data[gt.labels[i] * v + i]) - mx - std::log(z);
    const double pt = std::clamp(std::exp(log_pt_raw), kProbEpsilon, 1.0 - kProbEpsilon);
    total += -alpha * std::pow(1.0 - pt, gamma) * std::log(pt);
  }
  return total / double(v);
}

namespace detail {

inline void check_simplex(const Volume& probs) {
  const std::size_t v = probs.voxels();
  for (std::size_t i = 0; i < v; ++i) {
    double s = 0.0;
    for (std::size_t c = 0; c < probs.channels; ++c) {
      const double p = probs.data[c * v + i];
      if (!(p >= 0.0)) throw InvalidArgument("probabilities must be non-negative");
      s += p;
    }
    if (std::abs(s - 1.0) > 1e-5) throw InvalidArgument("probability rows must sum to 1");
  }
}

}  // namespace detail

/// Lovasz extension of the Jaccard loss for one class, given per-voxel errors
/// and foreground flags.
inline double lovasz_class_loss(std::vector<double> errors, const std::vector<std::uint8_t>& foreground) {
  const std::size_t n = errors.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return errors[a] > errors[b]; });
  double gts = 0.0;
  for (auto f : foreground) gts += f;
  double cum_fg = 0.0, cum_bg = 0.0, prev_jaccard = 0.0, loss = 0.0;
  for (std::size_t r = 0; r < n; ++r) {
    const std::size_t i = order[r];
    cum_fg += foreground[i];
    cum_bg += 1 - foreground[i];
    const double intersection = gts - cum_fg;
    const double uni = gts + cum_bg;
    const double jaccard = uni > 0.0 ? 1.0 - intersection / uni : 0.0;
    loss += errors[i] * (jaccard - prev_jaccard);
    prev_jaccard = jaccard;
  }
  return loss;
}

/// Multi-class Lovasz-softmax averaged over the classes present in gt.
inline double lovasz_softmax(const Volume& probs, const LabelVolume& gt) {
  detail::check_scores(probs, gt, "lovasz_softmax");
  detail::check_simplex(probs);
  const std::size_t v = probs.voxels();
  double total = 0.0;
  std::size_t present = 0;
  std::vector<std::uint8_t> fg(v);
  std::vector<double> errors(v);
  for (std::size_t c = 0; c < probs.channels; ++c) {
    bool any = false;
    for (std::size_t i = 0; i < v; ++i) any |= (fg[i] = gt.labels[i] == c);
    if (!any) continue;
    for (std::size_t i = 0; i < v; ++i) errors[i] = std::abs(double(fg[i]) - double(probs.data[c * v + i]));
    total += lovasz_class_loss(errors, fg);
    ++present;
  }
  return present ? total / double(present) : 0.0;
}

enum class ScalKind { kGeometric, kSemantic };

/// Soft precision/recall/specificity affinity for one binary problem:
/// -(log P + log R + log S) / 3, terms with a zero denominator omitted.
inline double scal_term(const std::vector<double>& prob, const std::vector<std::uint8_t>& target) {
  double tp = 0.0, psum = 0.0, tsum = 0.0, tn = 0.0, nsum = 0.0;
  for (std::size_t i = 0; i < prob.size(); ++i) {
    tp += prob[i] * target[i];
    psum += prob[i];
    tsum += target[i];
    tn += (1.0 - prob[i]) * (1 - target[i]);
    nsum += 1 - target[i];
  }
  double acc = 0.0;
  if (psum > 0.0) acc += detail::ratio_log(tp / psum);
  if (tsum > 0.0) acc += detail::ratio_log(tp / tsum);
  if (nsum > 0.0) acc += detail::ratio_log(tn / nsum);
  return -acc / 3.0;
}

/// Scene-class affinity loss. Geometric: occupied (1 - p_empty) versus empty.
/// Semantic: one binary problem per class (including empty), averaged.
inline double scal_loss(const Volume& probs, const LabelVolume& gt, ScalKind kind) {
  detail::check_scores(probs, gt, "scal_loss");
  const std::size_t v = probs.voxels();
  std::vector<double> p(v);
  std::vector<std::uint8_t> t(v);
  if (kind == ScalKind::kGeometric) {
    for (std::size_t i = 0; i < v; ++i) {
      p[i] = 1.0 - double(probs.data[i]);
      t[i] = gt.labels[i] != 0;
    }
    return scal_term(p, t);
  }
  double total = 0.0;
  for (std::size_t c = 0; c < probs.channels; ++c) {
    for (std::size_t i = 0; i < v; ++i) {
      p[i] = probs.data[c * v + i];
      t[i] = gt.labels[i] == c;
    }
    total += scal_term(p, t);
  }
  return probs.channels ? total / double(probs.channels) : 0.0;
}

struct LossTerms {
  double focal = 0.0;
  double lovasz = 0.0;
  double scal_geo = 0.0;
  double scal_sem = 0.0;
  double sum() const { return focal + lovasz + scal_geo + scal_sem; }
};

inline LossTerms loss_terms(const Volume& logits, const LabelVolume& gt) {
  const Volume probs = softmax(logits);
  return {focal_loss(logits, gt), lovasz_softmax(probs, gt), scal_loss(probs, gt, ScalKind::kGeometric),
          scal_loss(probs, gt, ScalKind::kSemantic)};
}

/// Majority vote over the fine voxels feeding each coarse voxel (the same
/// index map as upsampling); ties go to the lowest class id.
inline LabelVolume downsample_labels(const LabelVolume& fine, const GridDims& coarse_dims,
                                     std::size_t num_classes = kNumClasses) {
  for (int a = 0; a < 3; ++a) {
    if (halve_dim(fine.dims[a]) != coarse_dims[a]) throw ShapeError("downsample_labels: coarse dims must halve fine dims");
  }
  fine.validate(num_classes);
  const std::size_t cv = coarse_dims[0] * coarse_dims[1] * coarse_dims[2];
  std::vector<std::uint32_t> votes(cv * num_classes, 0);
  auto src = [](std::size_t i, std::size_t cd) { return std::min(i / 2, cd - 1); };
  for (std::size_t x = 0; x < fine.dims[0]; ++x)
    for (std::size_t y = 0; y < fine.dims[1]; ++y)
      for (std::size_t z = 0; z < fine.dims[2]; ++z) {
        const std::size_t j = (src(x, coarse_dims[0]) * coarse_dims[1] + src(y, coarse_dims[1])) * coarse_dims[2] +
                              src(z, coarse_dims[2]);
        ++votes[j * num_classes + fine.at(x, y, z)];
      }
  LabelVolume out(coarse_dims);
  for (std::size_t j = 0; j < cv; ++j) {
    const auto* row = votes.data() + j * num_classes;
    out.labels[j] = static_cast<std::uint8_t>(std::max_element(row, row + num_classes) - row);
  }
  return out;
}

/// Ground truth for every level, finest first.
inline std::vector<LabelVolume> label_pyramid(const LabelVolume& finest, const std::vector<GridDims>& level_dims,
                                              std::size_t num_classes = kNumClasses) {
  if (level_dims.empty() || level_dims.front() != finest.dims)
    throw ShapeError("label_pyramid: level 0 dims must match the ground truth");
  std::vector<LabelVolume> out{finest};
  for (std::size_t l = 1; l < level_dims.size(); ++l) out.push_back(downsample_labels(out.back(), level_dims[l], num_classes));
  return out;
}

/// sum_l decay^l * (focal + lovasz + scal_geo + scal_sem), level 0 finest.
inline double total_loss(const std::vector<Volume>& level_logits, const std::vector<LabelVolume>& gt_levels,
                         double decay = 0.5) {
  if (level_logits.size() != gt_levels.size()) throw ShapeError("total_loss: one ground truth per level required");
  double total = 0.0, weight = 1.0;
  for (std::size_t l = 0; l < level_logits.size(); ++l) {
    if (weight != 0.0) total += weight * loss_terms(level_logits[l], gt_levels[l]).sum();
    weight *= decay;
  }
  return total;
}

/// Convenience overload that derives the per-level ground truth by majority vote.
inline double total_loss(const std::vector<Volume>& level_logits, const LabelVolume& gt, double decay = 0.5) {
  std::vector<GridDims> dims;
  for (const auto& l : level_logits) dims.push_back(l.dims);
  return total_loss(level_logits, label_pyramid(gt, dims, level_logits.empty() ? kNumClasses : level_logits[0].channels),
                    decay);
}

}  // namespace occuvt
