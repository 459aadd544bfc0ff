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

// occuvt: build, apply and evaluate static view-transform matrices from the
// command line. Exit codes: 0 ok, 2 input error, 3 shape error, 4 internal
// invariant violation.

#include <openssl/evp.h>

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iostream>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "occuvt/occuvt.hpp"

namespace fs = std::filesystem;
using occuvt::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitInput = 2;
constexpr int kExitShape = 3;
constexpr int kExitInvariant = 4;

// ---- small helpers ---------------------------------------------------------

std::string sha256_hex(std::span<const std::uint8_t> bytes) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr) != 1)
    throw occuvt::InvariantError("sha256 digest failed");
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(kHex[md[i] >> 4]);
    out.push_back(kHex[md[i] & 15]);
  }
  return out;
}

std::string sha256_hex(std::string_view text) {
  return sha256_hex(std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

/// Digest of a JSON value in canonical form (sorted keys, compact).
std::string json_digest(const json& j) { return sha256_hex(j.dump()); }

class Stopwatch {
 public:
  double ms() const {
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

void write_json(const fs::path& path, const json& j) { occuvt::write_file_atomic(path, j.dump(2) + "\n"); }

occuvt::Aggregation parse_mode(const std::string& s) {
  if (s == "mean") return occuvt::Aggregation::kMean;
  if (s == "sum") return occuvt::Aggregation::kSum;
  throw occuvt::InvalidArgument("unknown aggregation mode '" + s + "' (expected mean|sum)");
}

occuvt::HitRule parse_hit(const std::string& s) {
  if (s == "nearest") return occuvt::HitRule::kNearest;
  if (s == "bilinear") return occuvt::HitRule::kBilinear;
  throw occuvt::InvalidArgument("unknown hit rule '" + s + "' (expected nearest|bilinear)");
}

/// Attention heads for a channel count: 4 when it divides C, else 1.
std::size_t default_heads(std::size_t channels) { return channels % 4 == 0 ? 4 : 1; }

template <typename T>
double median(std::vector<T> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? double(v[n / 2]) : 0.5 * (double(v[n / 2 - 1]) + double(v[n / 2]));
}

json timing_summary(const std::vector<double>& samples) {
  return {{"samples", samples},
          {"min", samples.empty() ? 0.0 : *std::min_element(samples.begin(), samples.end())},
          {"median", median(samples)}};
}

json memory_json(const occuvt::MemoryStats& s) {
  return {{"dense_bytes", s.dense_bytes}, {"csr_bytes", s.csr_bytes}, {"ratio", s.ratio}};
}

// ---- level selection shared by build / oracle / bench ----------------------

struct LevelOptions {
  std::string calib;
  std::string grid;
  std::string pyramid;
  int level = -1;
  int subdivision = 3;
  double scale = 0.125;
  std::string mode = "mean";
  std::string hit = "nearest";
  bool bev = false;
};

void add_level_options(CLI::App* cmd, LevelOptions& o, bool with_bev = true) {
  cmd->add_option("--calib", o.calib, "Camera calibration JSON")->required();
  cmd->add_option("--grid", o.grid, "Grid JSON (extents and dims)")->required();
  cmd->add_option("--pyramid", o.pyramid, "Pyramid JSON; with --level, overrides dims/--n/--scale");
  cmd->add_option("--level", o.level, "Pyramid level id to use");
  cmd->add_option("--n", o.subdivision, "Subspace subdivisions per axis")->check(CLI::PositiveNumber);
  cmd->add_option("--scale", o.scale, "Feature-map scale relative to the calibrated image")
      ->check(CLI::Range(1e-9, 1.0));
  cmd->add_option("--mode", o.mode, "Aggregation: mean|sum")->check(CLI::IsMember({"mean", "sum"}));
  cmd->add_option("--hit", o.hit, "Hit rule: nearest|bilinear")->check(CLI::IsMember({"nearest", "bilinear"}));
  if (with_bev) cmd->add_flag("--bev", o.bev, "Build the pillar (BEV) matrix instead of the voxel matrix");
}

struct ResolvedLevel {
  occuvt::CameraRig rig;
  occuvt::LevelConfig level;
  occuvt::Aggregation mode;
  occuvt::HitRule rule;
  json config;  // canonical description used for the config digest
};

occuvt::LevelConfig select_level(const LevelOptions& o) {
  const occuvt::GridSpec grid = occuvt::load_grid(o.grid);
  if (o.pyramid.empty()) return occuvt::LevelConfig{o.level < 0 ? 0 : o.level, grid, o.subdivision, o.scale, 1, true};
  if (o.level < 0) throw occuvt::InvalidArgument("--pyramid requires --level");
  const occuvt::PyramidConfig p = occuvt::pyramid_from_json(occuvt::detail::parse_json(o.pyramid), grid);
  if (o.level >= int(p.size())) throw occuvt::InvalidArgument("--level out of range for the pyramid");
  return p[o.level];
}

ResolvedLevel resolve_level(const LevelOptions& o) {
  ResolvedLevel r{occuvt::load_rig(o.calib), select_level(o), parse_mode(o.mode), parse_hit(o.hit), {}};
  r.level.validate();
  const auto& d = r.level.grid.dims();
  r.config = {{"calibration", occuvt::rig_to_json(r.rig)},
              {"grid", occuvt::grid_to_json(r.level.grid)},
              {"subdivision", r.level.subdivision},
              {"feature_scale", r.level.feature_scale},
              {"mode", o.mode},
              {"hit", o.hit},
              {"kind", o.bev ? "global" : "local"},
              {"dims", {d[0], d[1], d[2]}}};
  return r;
}

json sidecar_for(const ResolvedLevel& r, const occuvt::CsrMatrix& m, bool bev, double build_ms,
                 const std::vector<std::uint8_t>& bytes) {
  const occuvt::FeatureLayout layout = occuvt::feature_layout(r.rig, r.level.feature_scale);
  const auto& d = r.level.grid.dims();
  json output_dims = bev ? json{d[0], d[1]} : json{d[0], d[1], d[2]};
  return {{"format", "OVTC"},
          {"format_version", occuvt::kFormatVersion},
          {"kind", bev ? "global" : "local"},
          {"rows", m.rows()},
          {"cols", m.cols()},
          {"nnz", m.nnz()},
          {"feature_maps", {{"cameras", layout.rig.size()}, {"height", layout.height}, {"width", layout.width}}},
          {"output_dims", output_dims},
          {"build_ms", build_ms},
          {"memory", memory_json(occuvt::memory_stats(m))},
          {"matrix_digest", sha256_hex(bytes)},
          {"config_digest", json_digest(r.config)},
          {"config", r.config}};
}

fs::path sidecar_path(const fs::path& matrix) {
  fs::path p = matrix;
  p += ".json";
  return p;
}

// ---- build ---------------------------------------------------------------

int cmd_build(const LevelOptions& o, const std::string& out) {
  const ResolvedLevel r = resolve_level(o);
  Stopwatch sw;
  const occuvt::CsrMatrix m = o.bev ? occuvt::build_global_matrix(r.rig, r.level, r.mode, r.rule)
                                    : occuvt::build_local_matrix(r.rig, r.level, r.mode, r.rule);
  const double build_ms = sw.ms();
  if (auto err = m.check(); !err.empty()) throw occuvt::InvariantError("built matrix is invalid: " + err);
  const auto bytes = occuvt::serialize(m);
  occuvt::write_file_atomic(out, bytes);
  const json side = sidecar_for(r, m, o.bev, build_ms, bytes);
  write_json(sidecar_path(out), side);
  if (m.nnz() == 0) std::cerr << "warning: no sample point is visible in any camera; the matrix is empty\n";
  std::cout << json{{"command", "build"},
                    {"out", out},
                    {"rows", m.rows()},
                    {"cols", m.cols()},
                    {"nnz", m.nnz()},
                    {"build_ms", build_ms},
                    {"memory", side["memory"]},
                    {"matrix_digest", side["matrix_digest"]},
                    {"config_digest", side["config_digest"]}}
                   .dump(2)
            << "\n";
  return kExitOk;
}

// ---- transform / oracle ----------------------------------------------------

/// Loads an OVTF f32 tensor of dims [C, ...] and flattens it to C x rest.
occuvt::DenseMatrix load_feature_matrix(const fs::path& path) {
  occuvt::TensorFile t = occuvt::load_tensor(path);
  if (t.dtype != occuvt::DType::kF32) throw occuvt::InvalidArgument("features must be f32");
  if (t.dims.size() < 2) throw occuvt::ShapeError("features must have dims [C, ...] with at least 2 axes");
  const std::size_t c = t.dims[0];
  const std::size_t rest = c ? t.f32.size() / c : 0;
  occuvt::DenseMatrix d(c, rest, std::move(t.f32));
  if (!d.all_finite()) throw occuvt::InvalidArgument("features contain non-finite values");
  return d;
}

void save_volume_like(const fs::path& path, std::size_t channels, const std::vector<std::uint64_t>& spatial,
                      std::vector<float> data) {
  std::vector<std::uint64_t> dims{channels};
  dims.insert(dims.end(), spatial.begin(), spatial.end());
  occuvt::save_tensor(path, occuvt::TensorFile::from_f32(std::move(dims), std::move(data)));
}

int cmd_transform(const std::string& features, const std::string& matrix, const std::string& out) {
  const occuvt::DenseMatrix f = load_feature_matrix(features);
  const occuvt::CsrMatrix m = occuvt::load_csr(matrix);
  if (f.cols != m.rows())
    throw occuvt::ShapeError("feature pixels (" + std::to_string(f.cols) + ") != matrix rows (" +
                             std::to_string(m.rows()) + ")");
  Stopwatch sw;
  occuvt::DenseMatrix result = occuvt::spmm(f, m);
  const double ms = sw.ms();
  std::vector<std::uint64_t> spatial{m.cols()};
  if (fs::exists(sidecar_path(matrix))) {
    const json side = occuvt::detail::parse_json(sidecar_path(matrix));
    auto dims = occuvt::detail::json_field("matrix sidecar", [&] { return side.at("output_dims").get<std::vector<std::uint64_t>>(); });
    std::uint64_t prod = 1;
    for (auto d : dims) prod *= d;
    if (prod != m.cols()) throw occuvt::FormatError("matrix sidecar output_dims do not match the matrix");
    spatial = dims;
  }
  save_volume_like(out, result.rows, spatial, std::move(result.data));
  std::cout << json{{"command", "transform"}, {"out", out}, {"transform_ms", ms}, {"channels", f.rows}, {"dims", spatial}}
                   .dump(2)
            << "\n";
  return kExitOk;
}

int cmd_oracle(const LevelOptions& o, const std::string& features, const std::string& out) {
  const ResolvedLevel r = resolve_level(o);
  const occuvt::FeatureLayout layout = occuvt::feature_layout(r.rig, r.level.feature_scale);
  occuvt::DenseMatrix f = load_feature_matrix(features);
  if (f.cols != layout.rows())
    throw occuvt::ShapeError("feature pixels (" + std::to_string(f.cols) + ") != Nc*H*W (" +
                             std::to_string(layout.rows()) + ") for this rig and scale");
  const occuvt::FeatureMaps maps(layout.rig.size(), layout.height, layout.width, std::move(f));
  Stopwatch sw;
  const auto& d = r.level.grid.dims();
  if (o.bev) {
    occuvt::BevFeature bev = occuvt::oracle_transform_global(maps, r.rig, r.level, r.mode, r.rule);
    save_volume_like(out, bev.channels, {d[0], d[1]}, std::move(bev.data));
  } else {
    occuvt::Volume vol = occuvt::oracle_transform(maps, r.rig, r.level, r.mode, r.rule);
    save_volume_like(out, vol.channels, {d[0], d[1], d[2]}, std::move(vol.data));
  }
  std::cout << json{{"command", "oracle"}, {"out", out}, {"oracle_ms", sw.ms()}, {"config_digest", json_digest(r.config)}}
                   .dump(2)
            << "\n";
  return kExitOk;
}

// ---- pipeline --------------------------------------------------------------

struct PipelineOptions {
  std::string scene;
  std::string calib;
  std::string pyramid;
  std::string weights;
  std::optional<std::uint64_t> seed;
  bool analytic = false;
  int subdivision = 2;
  double scale = 1.0;
  std::string mode = "mean";
  std::string hit = "nearest";
  std::string upsample = "deconv";
  std::string out_dir;
};

int cmd_pipeline(const PipelineOptions& o) {
  Stopwatch total;
  const json scene_json = occuvt::detail::parse_json(o.scene);
  const occuvt::SyntheticScene scene = occuvt::scene_from_json(scene_json);
  occuvt::CameraRig rig;
  if (!o.calib.empty()) {
    rig = occuvt::load_rig(o.calib);
  } else if (scene_json.contains("cameras")) {
    rig = occuvt::rig_from_json(scene_json["cameras"]);
  } else {
    throw occuvt::InvalidArgument("pipeline needs cameras: pass --calib or add a \"cameras\" array to the scene");
  }
  occuvt::PyramidConfig pyramid;
  if (!o.pyramid.empty()) {
    pyramid = occuvt::pyramid_from_json(occuvt::detail::parse_json(o.pyramid), scene.grid);
  } else {
    pyramid.levels.push_back({0, scene.grid, o.subdivision, o.scale, occuvt::kNumClasses, true});
  }
  pyramid.validate();
  const std::size_t channels = pyramid[0].channels;
  for (const auto& l : pyramid.levels) {
    if (l.channels != channels) throw occuvt::InvalidArgument("pipeline: all pyramid levels must share one channel count");
  }
  if (channels < occuvt::kNumClasses)
    throw occuvt::InvalidArgument("pipeline: one-hot scene features need at least 17 channels");
  const occuvt::Aggregation mode = parse_mode(o.mode);
  const occuvt::HitRule rule = parse_hit(o.hit);
  const occuvt::UpsampleMode up = o.upsample == "nearest" ? occuvt::UpsampleMode::kNearest : occuvt::UpsampleMode::kDeconv;

  // Weights.
  std::vector<occuvt::FusionWeights> weights;
  std::string weight_source;
  occuvt::FusionWeights::Options opt;
  opt.heads = default_heads(channels);
  if (!o.weights.empty()) {
    weights = occuvt::load_weight_bundle(o.weights);
    if (weights.size() != pyramid.size())
      throw occuvt::ShapeError("weight bundle has " + std::to_string(weights.size()) + " levels, pyramid has " +
                               std::to_string(pyramid.size()));
    weight_source = "bundle:" + o.weights;
  } else if (o.analytic) {
    for (std::size_t l = 0; l < pyramid.size(); ++l) weights.push_back(occuvt::FusionWeights::routing(channels, opt));
    weight_source = "analytic-routing";
  } else {
    const std::uint64_t seed = o.seed.value_or(0);
    for (std::size_t l = 0; l < pyramid.size(); ++l)
      weights.push_back(occuvt::FusionWeights::seeded(channels, seed + l, opt));
    weight_source = "seeded:" + std::to_string(seed);
  }
  for (std::size_t l = 0; l < weights.size(); ++l) {
    if (weights[l].channels != channels) throw occuvt::ShapeError("weights channel count does not match the pyramid");
  }

  // Render features and build matrices per projected level.
  double render_ms = 0.0, build_ms = 0.0;
  std::vector<std::optional<occuvt::LevelInputs>> inputs(pyramid.size());
  for (std::size_t l = 0; l < pyramid.size(); ++l) {
    if (!pyramid[l].projected) continue;
    Stopwatch r;
    occuvt::FeatureMaps f = occuvt::render_scene_features(scene, rig, pyramid[l].feature_scale, channels);
    render_ms += r.ms();
    Stopwatch b;
    occuvt::ProjectionSet set = occuvt::build_projection_set(rig, pyramid[l], mode, rule);
    build_ms += b.ms();
    inputs[l] = occuvt::LevelInputs{std::move(f), std::move(set)};
  }

  Stopwatch run;
  const occuvt::PipelineOutput result = occuvt::run_pipeline(inputs, weights, pyramid, up);
  const double run_ms = run.ms();
  for (const auto& lg : result.logits) {
    for (float v : lg.data) {
      if (!std::isfinite(v)) throw occuvt::InvariantError("pipeline produced non-finite logits");
    }
  }

  // Evaluation at the finest level.
  Stopwatch ev;
  const occuvt::LabelVolume pred = occuvt::argmax_labels(result.logits[0]);
  const occuvt::LabelVolume gt = occuvt::scene_labels(scene, pyramid[0].grid.dims());
  const std::size_t num_classes = result.logits[0].channels;
  const occuvt::ConfusionCounts counts = occuvt::confusion(pred, gt, num_classes);
  json per_class = json::object();
  for (std::size_t c = 0; c < num_classes; ++c) {
    if (auto v = occuvt::iou(counts, c)) per_class[std::to_string(c)] = *v;
  }
  const double m = occuvt::miou(counts);
  const auto geo = occuvt::geometric_iou(counts);
  std::vector<occuvt::LabelVolume> gt_levels{gt};
  for (std::size_t l = 1; l < pyramid.size(); ++l)
    gt_levels.push_back(occuvt::downsample_labels(gt_levels.back(), pyramid[l].grid.dims(), num_classes));
  const double loss = occuvt::total_loss(result.logits, gt_levels);

  json visible = nullptr;
  if (inputs[0]) {
    // Object voxels seen by at least one camera at the finest level.
    const occuvt::CsrMatrix by_voxel = inputs[0]->projections.local.transpose();
    std::uint64_t seen = 0, correct = 0;
    for (std::size_t k = 0; k < gt.voxels(); ++k) {
      if (gt.labels[k] == 0 || by_voxel.row_indices(k).empty()) continue;
      ++seen;
      correct += pred.labels[k] == gt.labels[k];
    }
    visible = {{"object_voxels", seen}, {"correct", correct},
               {"accuracy", seen ? json(double(correct) / double(seen)) : json(nullptr)}};
  }
  const double eval_ms = ev.ms();

  fs::create_directories(o.out_dir);
  const fs::path dir(o.out_dir);
  std::vector<std::string> files;
  for (std::size_t l = 0; l < result.logits.size(); ++l) {
    const auto& lg = result.logits[l];
    const std::string name = "logits_level" + std::to_string(l) + ".ovtf";
    save_volume_like(dir / name, lg.channels, {lg.dims[0], lg.dims[1], lg.dims[2]}, lg.data);
    files.push_back(name);
  }
  auto save_labels = [&](const std::string& name, const occuvt::LabelVolume& lv) {
    occuvt::save_tensor(dir / name, occuvt::TensorFile::from_u8({lv.dims[0], lv.dims[1], lv.dims[2]}, lv.labels));
    files.push_back(name);
  };
  save_labels("labels.ovtf", pred);
  save_labels("gt.ovtf", gt);

  const json metrics = {{"per_class_iou", per_class},
                        {"miou", std::isnan(m) ? json(nullptr) : json(m)},
                        {"geometric_iou", geo ? json(*geo) : json(nullptr)},
                        {"total_loss", loss},
                        {"visible_object_recovery", visible}};
  write_json(dir / "metrics.json", metrics);
  files.push_back("metrics.json");

  const json config = {{"scene", occuvt::scene_to_json(scene)},
                       {"calibration", occuvt::rig_to_json(rig)},
                       {"pyramid", occuvt::pyramid_to_json(pyramid)},
                       {"weights", weight_source},
                       {"mode", o.mode},
                       {"hit", o.hit},
                       {"upsample", o.upsample}};
  std::vector<std::uint8_t> logit_bytes;
  for (const auto& lg : result.logits) {
    const auto b = occuvt::serialize(occuvt::TensorFile::from_f32({lg.channels, lg.dims[0], lg.dims[1], lg.dims[2]}, lg.data));
    logit_bytes.insert(logit_bytes.end(), b.begin(), b.end());
  }
  const json report = {{"command", "pipeline"},
                       {"config_digest", json_digest(config)},
                       {"output_digest", sha256_hex(logit_bytes)},
                       {"timings_ms",
                        {{"render", render_ms}, {"build", build_ms}, {"run", run_ms}, {"evaluate", eval_ms},
                         {"total", total.ms()}}},
                       {"metrics", metrics},
                       {"files", files},
                       {"config", config}};
  write_json(dir / "report.json", report);
  json summary = report;
  summary.erase("config");
  std::cout << summary.dump(2) << "\n";
  return kExitOk;
}

// ---- bench -----------------------------------------------------------------

int cmd_bench(const LevelOptions& o, int repeat, const std::string& prefix_dir, std::size_t channels,
              std::uint64_t seed, const std::string& out) {
  const ResolvedLevel r = resolve_level(o);
  const occuvt::FeatureLayout layout = occuvt::feature_layout(r.rig, r.level.feature_scale);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> uni(-1.0f, 1.0f);
  occuvt::DenseMatrix features(channels, layout.rows());
  for (auto& v : features.data) v = uni(rng);
  const auto& d = r.level.grid.dims();

  const bool fixed = !prefix_dir.empty();
  json prefix = nullptr;
  fs::path local_path, global_path;
  if (fixed) {
    const std::string tag = json_digest(r.config).substr(0, 16);
    local_path = fs::path(prefix_dir) / ("local_" + tag + ".ovtc");
    global_path = fs::path(prefix_dir) / ("global_" + tag + ".ovtc");
    if (!fs::exists(local_path) || !fs::exists(global_path)) {
      // Build once ahead of the timed runs, as a pre-fix step.
      fs::create_directories(prefix_dir);
      Stopwatch sw;
      const occuvt::ProjectionSet set = occuvt::build_projection_set(r.rig, r.level, r.mode, r.rule);
      occuvt::save_csr(local_path, set.local);
      occuvt::save_csr(global_path, set.global);
      prefix = {{"prefix_build_ms", sw.ms()}, {"created", true}};
    } else {
      prefix = {{"prefix_build_ms", 0.0}, {"created", false}};
    }
    prefix["local"] = local_path.string();
    prefix["global"] = global_path.string();
  }

  std::vector<double> build_ms, load_ms, transform_ms, total_ms;
  occuvt::MemoryStats stats;
  std::uint64_t nnz = 0;
  std::string digest;
  for (int i = 0; i < repeat; ++i) {
    Stopwatch all;
    occuvt::CsrMatrix local, global;
    if (fixed) {
      Stopwatch sw;
      local = occuvt::load_csr(local_path);
      global = occuvt::load_csr(global_path);
      load_ms.push_back(sw.ms());
      build_ms.push_back(0.0);
    } else {
      Stopwatch sw;
      local = occuvt::build_local_matrix(r.rig, r.level, r.mode, r.rule);
      global = occuvt::build_global_matrix(r.rig, r.level, r.mode, r.rule);
      build_ms.push_back(sw.ms());
      load_ms.push_back(0.0);
    }
    if (local.rows() != layout.rows() || local.cols() != r.level.grid.num_voxels() ||
        global.cols() != r.level.grid.num_cells())
      throw occuvt::ShapeError("prefix matrices do not match the configuration");
    Stopwatch tw;
    const occuvt::FeatureMaps maps(layout.rig.size(), layout.height, layout.width, features);
    const occuvt::Volume vol = occuvt::transform_local(maps, local, d);
    const occuvt::BevFeature bev = occuvt::transform_global(maps, global, {d[0], d[1]});
    transform_ms.push_back(tw.ms());
    total_ms.push_back(all.ms());
    if (i == 0) {
      stats = occuvt::memory_stats(local);
      nnz = local.nnz();
      digest = sha256_hex(occuvt::serialize(local));
    }
  }
  const json report = {{"command", "bench"},
                       {"variant", fixed ? "fixed" : "base"},
                       {"repeat", repeat},
                       {"config_digest", json_digest(r.config)},
                       {"matrix_digest", digest},
                       {"threads", occuvt::num_threads()},
                       {"channels", channels},
                       {"rows", layout.rows()},
                       {"cols", r.level.grid.num_voxels()},
                       {"nnz", nnz},
                       {"memory", memory_json(stats)},
                       {"prefix", prefix},
                       {"timings_ms",
                        {{"build", timing_summary(build_ms)},
                         {"load", timing_summary(load_ms)},
                         {"transform", timing_summary(transform_ms)},
                         {"total", timing_summary(total_ms)}}}};
  if (!out.empty()) write_json(out, report);
  std::cout << report.dump(2) << "\n";
  return kExitOk;
}

// ---- metrics ---------------------------------------------------------------

occuvt::LabelVolume load_labels(const fs::path& path) {
  const occuvt::TensorFile t = occuvt::load_tensor(path);
  if (t.dtype != occuvt::DType::kU8 || t.dims.size() != 3)
    throw occuvt::InvalidArgument("'" + path.string() + "': labels must be u8 with dims [X, Y, Z]");
  return occuvt::LabelVolume({t.dims[0], t.dims[1], t.dims[2]}, t.u8);
}

int cmd_metrics(const std::string& pred_path, const std::string& gt_path, std::size_t num_classes, bool include_empty,
                const std::string& out) {
  const occuvt::LabelVolume pred = load_labels(pred_path), gt = load_labels(gt_path);
  const occuvt::ConfusionCounts c = occuvt::confusion(pred, gt, num_classes, !include_empty);
  json classes = json::array();
  for (std::size_t k = 0; k < num_classes; ++k) {
    const auto v = occuvt::iou(c, k);
    classes.push_back({{"class", k}, {"tp", c.tp[k]}, {"fp", c.fp[k]}, {"fn", c.fn[k]},
                       {"iou", v ? json(*v) : json(nullptr)}});
  }
  const double m = occuvt::miou(c);
  const auto geo = occuvt::geometric_iou(c);
  const json report = {{"command", "metrics"},
                       {"num_classes", num_classes},
                       {"ignore_empty_in_miou", !include_empty},
                       {"classes", classes},
                       {"miou", std::isnan(m) ? json(nullptr) : json(m)},
                       {"geometric_iou", geo ? json(*geo) : json(nullptr)}};
  if (!out.empty()) write_json(out, report);
  std::cout << report.dump(2) << "\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"occuvt: static view-transform matrices for multi-camera 3D occupancy"};
  app.require_subcommand(1);
  int threads = 0;
  app.add_option("--threads", threads, "Worker threads (default: $OCCUVT_THREADS, else all cores)")
      ->check(CLI::NonNegativeNumber);
  app.set_version_flag("--version",
                       std::string("occuvt ") + occuvt::kVersion + "\nOVTC matrix format version " +
                           std::to_string(occuvt::kFormatVersion) + "\nOVTF tensor format version " +
                           std::to_string(occuvt::kFormatVersion));

  std::function<int()> action;

  LevelOptions build_opt;
  std::string build_out;
  auto* build = app.add_subcommand("build", "Build a projection matrix and write it as OVTC plus a JSON sidecar");
  add_level_options(build, build_opt);
  build->add_option("--out", build_out, "Output matrix path")->required();
  build->callback([&] { action = [&] { return cmd_build(build_opt, build_out); }; });

  std::string tf_features, tf_matrix, tf_out;
  auto* transform = app.add_subcommand("transform", "Apply a projection matrix to feature maps");
  transform->add_option("--features", tf_features, "OVTF f32 features [C, Nc, H, W] or [C, Nc*H*W]")->required();
  transform->add_option("--matrix", tf_matrix, "OVTC matrix from `build`")->required();
  transform->add_option("--out", tf_out, "Output OVTF volume")->required();
  transform->callback([&] { action = [&] { return cmd_transform(tf_features, tf_matrix, tf_out); }; });

  LevelOptions oracle_opt;
  std::string or_features, or_out;
  auto* oracle = app.add_subcommand("oracle", "Brute-force view transform without matrices");
  add_level_options(oracle, oracle_opt);
  oracle->add_option("--features", or_features, "OVTF f32 features")->required();
  oracle->add_option("--out", or_out, "Output OVTF volume")->required();
  oracle->callback([&] { action = [&] { return cmd_oracle(oracle_opt, or_features, or_out); }; });

  PipelineOptions pipe_opt;
  std::uint64_t pipe_seed = 0;
  auto* pipeline = app.add_subcommand("pipeline", "Render a synthetic scene and run the fusion pipeline");
  pipeline->add_option("--scene", pipe_opt.scene, "Scene JSON (grid, objects, optional cameras)")->required();
  pipeline->add_option("--calib", pipe_opt.calib, "Calibration JSON (overrides scene cameras)");
  pipeline->add_option("--pyramid", pipe_opt.pyramid, "Pyramid JSON (default: one level at the scene grid)");
  auto* w_opt = pipeline->add_option("--weights", pipe_opt.weights, "Weight bundle directory");
  auto* s_opt = pipeline->add_option("--seed", pipe_seed, "Seed for random weights (default 0)");
  auto* a_opt = pipeline->add_flag("--analytic", pipe_opt.analytic,
                                   "Routing weights: identity refiners, closed gate, identity head");
  w_opt->excludes(s_opt)->excludes(a_opt);
  s_opt->excludes(a_opt);
  pipeline->add_option("--n", pipe_opt.subdivision, "Subdivisions for the default single level")
      ->check(CLI::PositiveNumber);
  pipeline->add_option("--scale", pipe_opt.scale, "Feature scale for the default single level")
      ->check(CLI::Range(1e-9, 1.0));
  pipeline->add_option("--mode", pipe_opt.mode, "Aggregation: mean|sum")->check(CLI::IsMember({"mean", "sum"}));
  pipeline->add_option("--hit", pipe_opt.hit, "Hit rule: nearest|bilinear")->check(CLI::IsMember({"nearest", "bilinear"}));
  pipeline->add_option("--upsample", pipe_opt.upsample, "deconv|nearest")->check(CLI::IsMember({"deconv", "nearest"}));
  pipeline->add_option("--out-dir", pipe_opt.out_dir, "Output directory")->required();
  pipeline->callback([&] {
    if (s_opt->count()) pipe_opt.seed = pipe_seed;
    action = [&] { return cmd_pipeline(pipe_opt); };
  });

  LevelOptions bench_opt;
  int repeat = 3;
  std::string prefix_dir, bench_out;
  std::size_t bench_channels = 32;
  std::uint64_t bench_seed = 0;
  auto* bench = app.add_subcommand("bench", "Time matrix build and transform (base) or load and transform (fixed)");
  add_level_options(bench, bench_opt, false);
  bench->add_option("--repeat", repeat, "Timed repetitions")->check(CLI::PositiveNumber);
  bench->add_option("--prefix-matrices", prefix_dir, "Directory of pre-built matrices (created on first use)");
  bench->add_option("--channels", bench_channels, "Feature channels")->check(CLI::PositiveNumber);
  bench->add_option("--seed", bench_seed, "Seed for random features");
  bench->add_option("--out", bench_out, "Also write the report to this JSON file");
  bench->callback([&] {
    action = [&] { return cmd_bench(bench_opt, repeat, prefix_dir, bench_channels, bench_seed, bench_out); };
  });

  std::string m_pred, m_gt, m_out;
  std::size_t m_classes = occuvt::kNumClasses;
  bool include_empty = false;
  auto* metrics = app.add_subcommand("metrics", "Per-class IoU and mIoU of two label volumes");
  metrics->add_option("--pred", m_pred, "Predicted labels (OVTF u8 [X, Y, Z])")->required();
  metrics->add_option("--gt", m_gt, "Ground-truth labels (OVTF u8 [X, Y, Z])")->required();
  metrics->add_option("--num-classes", m_classes, "Number of classes including empty")->check(CLI::Range(1, 256));
  metrics->add_flag("--include-empty", include_empty, "Count class 0 in the mIoU average");
  metrics->add_option("--out", m_out, "Also write the report to this JSON file");
  metrics->callback([&] { action = [&] { return cmd_metrics(m_pred, m_gt, m_classes, include_empty, m_out); }; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitInput;
  }

  try {
    occuvt::set_num_threads(threads);
    return action();
  } catch (const occuvt::ShapeError& e) {
    std::cerr << "shape error: " << e.what() << "\n";
    return kExitShape;
  } catch (const occuvt::InvalidArgument& e) {
    std::cerr << "input error: " << e.what() << "\n";
    return kExitInput;
  } catch (const occuvt::FormatError& e) {
    std::cerr << "format error: " << e.what() << "\n";
    return kExitInput;
  } catch (const occuvt::IoError& e) {
    std::cerr << "i/o error: " << e.what() << "\n";
    return kExitInput;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "i/o error: " << e.what() << "\n";
    return kExitInput;
  } catch (const occuvt::InvariantError& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return kExitInvariant;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return kExitInvariant;
  }
}
