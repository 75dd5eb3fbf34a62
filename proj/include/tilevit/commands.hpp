// Copyright 2026 The tilevit Authors
// SPDX-License-Identifier: Apache-2.0
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Pipelines behind the `tilevit` command-line tool. Every command validates the
// paths it references before doing any work.
//
// Exit codes: 0 success, 1 usage/config error, 2 data error, 3 internal
// invariant violation.

#pragma once

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <ostream>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "tilevit/bench.hpp"
#include "tilevit/checkpoint.hpp"
#include "tilevit/config.hpp"
#include "tilevit/distill.hpp"
#include "tilevit/feature_store.hpp"
#include "tilevit/image_io.hpp"
#include "tilevit/inference.hpp"
#include "tilevit/segment.hpp"

namespace tilevit {

enum ExitCode : int { kOk = 0, kUsage = 1, kData = 2, kInternal = 3 };

struct CommandContext {
  RunConfig config;
  std::optional<std::uint64_t> seed;  // --seed, overrides train.seed
  std::size_t threads = 1;
  std::ostream* out = nullptr;
  std::ostream* err = nullptr;

  std::uint64_t effective_seed() const { return seed.value_or(config.train.seed); }
  TrainConfig train_config() const {
    TrainConfig t = config.train;
    t.seed = effective_seed();
    return t;
  }
};

namespace detail {

namespace fs = std::filesystem;

inline void need_file(const std::string& path, const std::string& key) {
  require(!path.empty(), key + " is not set");
  require(fs::is_regular_file(path), key + ": no such file '" + path + "'");
}

inline void need_dir(const std::string& path, const std::string& key) {
  require(!path.empty(), key + " is not set");
  require(fs::is_directory(path), key + ": no such directory '" + path + "'");
}

inline void need_output(const std::string& path, const std::string& key) {
  require(!path.empty(), key + " is not set");
  const fs::path parent = fs::path(path).parent_path();
  require(parent.empty() || fs::is_directory(parent),
          key + ": directory of '" + path + "' does not exist");
}

// *.ppm / *.pgm files, sorted by name. The position in this listing keys the
// augmentation RNG.
inline std::vector<fs::path> list_images(const std::string& dir) {
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    const auto ext = e.path().extension().string();
    if (ext == ".ppm" || ext == ".pgm") out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

inline std::vector<DatasetImage> load_dataset(const std::string& dir,
                                              std::ostream& err,
                                              std::size_t* listed = nullptr) {
  const auto files = list_images(dir);
  if (listed) *listed = files.size();
  std::vector<DatasetImage> items;
  for (std::size_t i = 0; i < files.size(); ++i) {
    try {
      items.push_back({files[i].filename().string(), i, read_image(files[i].string())});
    } catch (const DataError& e) {
      err << "warning: skipping " << files[i].string() << ": " << e.what() << '\n';
    }
  }
  return items;
}

// model.* keys given in the config must agree with the checkpoint.
inline void check_model_keys(const RunConfig& cfg, const ViTConfig& ckpt) {
  auto check = [&](const char* key, bool same) {
    require(!cfg.has(key) || same,
            std::string(key) + " in the config disagrees with the checkpoint");
  };
  check("model.patch_size", cfg.model.patch_size == ckpt.patch_size);
  check("model.native_side", cfg.model.native_side == ckpt.native_side);
  check("model.channels", cfg.model.channels == ckpt.channels);
  check("model.num_blocks", cfg.model.num_blocks == ckpt.num_blocks);
  check("model.num_heads", cfg.model.num_heads == ckpt.num_heads);
  check("model.mlp_ratio", cfg.model.mlp_ratio == ckpt.mlp_ratio);
  check("model.last_attention_identity",
        cfg.model.last_attention_identity == ckpt.last_attention_identity);
  require(cfg.window() == ckpt.native_side,
          "teacher.window must equal the checkpoint's native side");
  require(cfg.teacher_stride <= ckpt.native_side,
          "teacher.stride exceeds the checkpoint's native side");
}

inline std::pair<ViTConfig, ModelParams> load_model(const CommandContext& ctx,
                                                    const std::string& path) {
  auto loaded = load_checkpoint(path);
  check_model_keys(ctx.config, loaded.first);
  return loaded;
}

}  // namespace detail

inline int cmd_init_params(const CommandContext& ctx,
                           const std::string& output_override = {}) {
  const RunConfig& cfg = ctx.config;
  const std::string path = output_override.empty() ? cfg.checkpoint : output_override;
  detail::need_output(path, "model.checkpoint");
  const ModelParams params = init_params(cfg.model, ctx.effective_seed());
  save_checkpoint(path, cfg.model, params);
  *ctx.out << "wrote " << path << '\n';
  return kOk;
}

inline int cmd_precompute(const CommandContext& ctx) {
  const RunConfig& cfg = ctx.config;
  detail::need_file(cfg.checkpoint, "model.checkpoint");
  detail::need_dir(cfg.dataset, "train.dataset");
  detail::need_output(cfg.store, "train.store");

  const auto [vcfg, teacher] = detail::load_model(ctx, cfg.checkpoint);
  std::size_t listed = 0;
  const auto items = detail::load_dataset(cfg.dataset, *ctx.err, &listed);
  if (listed == 0)
    *ctx.err << "warning: no images in " << cfg.dataset << "; writing an empty store\n";
  else if (items.empty())
    throw DataError("none of the " + std::to_string(listed) + " images in " +
                    cfg.dataset + " could be read");

  PrecomputeOptions opt;
  opt.stride = cfg.teacher_stride;
  opt.dtype = cfg.store_dtype;
  opt.threads = ctx.threads;
  const auto n = precompute_teacher(items, teacher, vcfg, ctx.train_config(),
                                    cfg.store, opt);
  *ctx.out << n << " records, " << std::filesystem::file_size(cfg.store)
           << " bytes\n";
  return kOk;
}

inline int cmd_train(const CommandContext& ctx) {
  const RunConfig& cfg = ctx.config;
  detail::need_file(cfg.checkpoint, "model.checkpoint");
  detail::need_dir(cfg.dataset, "train.dataset");
  detail::need_file(cfg.store, "train.store");
  detail::need_output(cfg.train_output, "train.output");
  const std::string log_path =
      cfg.train_log.empty() ? cfg.train_output + ".log" : cfg.train_log;
  detail::need_output(log_path, "train.log");

  const auto [vcfg, student] = detail::load_model(ctx, cfg.checkpoint);
  const auto items = detail::load_dataset(cfg.dataset, *ctx.err);
  const auto store = read_feature_store(cfg.store);

  std::set<std::string> image_ids, record_ids;
  for (const auto& it : items) image_ids.insert(it.id);
  for (const auto& r : store) record_ids.insert(r.image_id);
  std::string missing, extra;
  for (const auto& id : image_ids)
    if (!record_ids.count(id)) missing += " " + id;
  for (const auto& id : record_ids)
    if (!image_ids.count(id)) extra += " " + id;
  if (!missing.empty() || !extra.empty())
    throw DataError("feature store does not match the dataset;" +
                    (missing.empty() ? "" : " no record for:" + missing + ";") +
                    (extra.empty() ? "" : " no image for:" + extra));

  const TrainResult result = train(ctx.train_config(), vcfg, items, store, student);
  save_checkpoint(cfg.train_output, vcfg, result.params);
  std::ofstream log(log_path, std::ios::trunc);
  if (!log) throw DataError("cannot write training log " + log_path);
  log << std::setprecision(17);
  for (const auto& s : result.log) log << s << '\n';

  *ctx.out << result.log.size() << " steps";
  if (!result.log.empty()) *ctx.out << ", final loss " << result.log.back().loss;
  *ctx.out << "; wrote " << cfg.train_output << '\n';
  return kOk;
}

inline void print_report(std::ostream& os, const EvalReport& r,
                         const ClassEmbeddings& classes) {
  std::size_t width = 5;
  for (const auto& n : classes.names) width = std::max(width, n.size());
  os << std::left << std::setw(static_cast<int>(width)) << "class" << "  IoU\n";
  for (std::size_t i = 0; i < classes.classes(); ++i) {
    os << std::left << std::setw(static_cast<int>(width)) << classes.names[i] << "  ";
    if (r.class_iou[i])
      os << std::fixed << std::setprecision(4) << *r.class_iou[i] << '\n';
    else
      os << "n/a\n";
    os.unsetf(std::ios::fixed);
  }
  os << std::left << std::setw(static_cast<int>(width)) << "mean" << "  "
     << std::fixed << std::setprecision(4) << r.mean_iou << '\n';
  os.unsetf(std::ios::fixed);
}

inline void write_report_csv(std::ostream& os, const EvalReport& r,
                             const ClassEmbeddings& classes) {
  os << "class,iou\n" << std::setprecision(17);
  for (std::size_t i = 0; i < classes.classes(); ++i) {
    os << classes.names[i] << ',';
    if (r.class_iou[i]) os << *r.class_iou[i];
    os << '\n';
  }
  os << "mean," << r.mean_iou << '\n';
}

inline EvalReport run_eval(const CommandContext& ctx, InferenceMode mode) {
  const RunConfig& cfg = ctx.config;
  const std::string ckpt =
      cfg.eval_checkpoint.empty() ? cfg.checkpoint : cfg.eval_checkpoint;
  detail::need_file(ckpt, cfg.eval_checkpoint.empty() ? "model.checkpoint"
                                                      : "eval.checkpoint");
  detail::need_dir(cfg.eval_images, "eval.images");
  detail::need_dir(cfg.eval_masks, "eval.masks");
  detail::need_file(cfg.class_embeddings, "eval.class_embeddings");
  if (!cfg.eval_output.empty()) detail::need_output(cfg.eval_output, "eval.output");

  const auto [vcfg, params] = detail::load_model(ctx, ckpt);
  const ClassEmbeddings classes = load_class_embeddings(cfg.class_embeddings);
  if (classes.dim() != vcfg.channels)
    throw DataError("class embeddings have dimension " +
                    std::to_string(classes.dim()) + ", model has " +
                    std::to_string(vcfg.channels));

  const auto files = detail::list_images(cfg.eval_images);
  std::vector<std::filesystem::path> masks;
  std::string missing;
  for (const auto& f : files) {
    const auto m = std::filesystem::path(cfg.eval_masks) / f.stem().concat(".pgm");
    if (!std::filesystem::is_regular_file(m)) missing += " " + f.filename().string();
    masks.push_back(m);
  }
  if (!missing.empty()) throw DataError("no mask for:" + missing);

  std::vector<SegMask> preds, gts;
  std::vector<double> seconds;
  for (std::size_t i = 0; i < files.size(); ++i) {
    const FeatureGrid image = read_image(files[i].string());
    SegMask gt = read_mask(masks[i].string());
    if (gt.height != image.height() || gt.width != image.width())
      throw DataError(masks[i].string() + " does not match the size of " +
                      files[i].string());
    const auto t0 = std::chrono::steady_clock::now();
    preds.push_back(segment_image(image, params, vcfg, classes, mode,
                                  cfg.stride_for_eval(), ctx.threads));
    seconds.push_back(std::chrono::duration<double>(
                          std::chrono::steady_clock::now() - t0)
                          .count());
    gts.push_back(std::move(gt));
  }
  EvalReport report;
  try {
    report = miou(preds, gts, classes.classes(), cfg.ignore_index);
  } catch (const InvalidArgument& e) {
    throw DataError(e.what());
  }
  report.forward_seconds = std::move(seconds);
  return report;
}

inline int cmd_eval(const CommandContext& ctx, InferenceMode mode) {
  const RunConfig& cfg = ctx.config;
  const EvalReport report = run_eval(ctx, mode);
  const ClassEmbeddings classes = load_class_embeddings(cfg.class_embeddings);
  *ctx.out << "mode: " << to_string(mode) << ", images: "
           << report.forward_seconds.size() << '\n';
  print_report(*ctx.out, report, classes);
  if (!cfg.eval_output.empty()) {
    std::ofstream os(cfg.eval_output, std::ios::trunc);
    if (!os) throw DataError("cannot write " + cfg.eval_output);
    write_report_csv(os, report, classes);
  }
  return kOk;
}

inline int cmd_bench(const CommandContext& ctx) {
  const RunConfig& cfg = ctx.config;
  detail::need_file(cfg.checkpoint, "model.checkpoint");
  if (!cfg.bench_image.empty()) detail::need_file(cfg.bench_image, "bench.image");
  if (!cfg.bench_output.empty()) detail::need_output(cfg.bench_output, "bench.output");
  if (!cfg.bench_svg.empty()) {
    detail::need_output(cfg.bench_svg, "bench.svg");
    require(cfg.bench_metric.size() == cfg.bench_strides.size() + 1,
            "bench.metric needs one value for the single pass plus one per stride");
  }

  const auto [vcfg, params] = detail::load_model(ctx, cfg.checkpoint);
  FeatureGrid image;
  if (!cfg.bench_image.empty()) {
    image = fit_to_patches(read_image(cfg.bench_image), vcfg.patch_size);
  } else {
    require(cfg.bench_height % vcfg.patch_size == 0 &&
                cfg.bench_width % vcfg.patch_size == 0,
            "bench.height and bench.width must be multiples of the patch size");
    image = FeatureGrid(cfg.bench_height, cfg.bench_width, 3);
    std::mt19937_64 rng(ctx.effective_seed());
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (double& v : image.values()) v = u(rng);
  }
  BenchOptions opt = cfg.bench;
  opt.threads = ctx.threads;
  const auto records = sweep(params, vcfg, image, cfg.bench_strides, opt);
  if (cfg.bench_output.empty()) {
    write_timing_csv(*ctx.out, records);
  } else {
    std::ofstream os(cfg.bench_output, std::ios::trunc);
    if (!os) throw DataError("cannot write " + cfg.bench_output);
    write_timing_csv(os, records);
    *ctx.out << records.size() << " timing records -> " << cfg.bench_output << '\n';
  }
  if (!cfg.bench_svg.empty()) {
    std::ofstream os(cfg.bench_svg, std::ios::trunc);
    if (!os) throw DataError("cannot write " + cfg.bench_svg);
    write_tradeoff_svg(os, records, cfg.bench_metric, cfg.bench_metric_name);
  }
  return kOk;
}

// Writes <prefix>_teacher.ppm and <prefix>_single.ppm: sliding-window and
// single-pass features projected on the teacher's top-3 PCA basis.
inline int cmd_pca_viz(const CommandContext& ctx, const std::string& image_path,
                       const std::string& prefix) {
  const RunConfig& cfg = ctx.config;
  detail::need_file(cfg.checkpoint, "model.checkpoint");
  detail::need_file(image_path, "--image");
  detail::need_output(prefix + "_teacher.ppm", "--output");

  const auto [vcfg, params] = detail::load_model(ctx, cfg.checkpoint);
  const FeatureGrid x = ensure_min_side(
      fit_to_patches(read_image(image_path), vcfg.patch_size), vcfg.native_side,
      vcfg.patch_size);
  const FeatureGrid teacher =
      teacher_features(x, params, vcfg, cfg.teacher_stride, ctx.threads);
  const FeatureGrid single = encode(x, params, vcfg);
  write_ppm(prefix + "_teacher.ppm",
            replicate_upsample(pca_project(teacher, teacher), vcfg.patch_size));
  write_ppm(prefix + "_single.ppm",
            replicate_upsample(pca_project(single, teacher), vcfg.patch_size));
  *ctx.out << "wrote " << prefix << "_teacher.ppm and " << prefix << "_single.ppm\n";
  return kOk;
}

// Runs `fn`, reporting errors on ctx.err and mapping them to exit codes.
template <class Fn>
int run_guarded(const CommandContext& ctx, Fn&& fn) {
  try {
    return fn();
  } catch (const InvalidArgument& e) {
    *ctx.err << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const DataError& e) {
    *ctx.err << "error: " << e.what() << '\n';
    return kData;
  } catch (const std::filesystem::filesystem_error& e) {
    *ctx.err << "error: " << e.what() << '\n';
    return kData;
  } catch (const std::exception& e) {
    *ctx.err << "internal error: " << e.what() << '\n';
    return kInternal;
  }
}

}  // namespace tilevit
