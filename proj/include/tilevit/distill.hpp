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

// Sliding-window teacher to single-pass student feature distillation.
//
// The teacher's stitched feature maps are computed once per (augmented)
// training image and stored. Augmentation randomness is keyed by
// (seed, image index), so training re-derives exactly the geometry the
// teacher saw without storing augmented pixels. Training runs with batch
// size 1 and AdamW over the trainable subset of the student.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include "tilevit/errors.hpp"
#include "tilevit/feature_store.hpp"
#include "tilevit/parallel.hpp"
#include "tilevit/tensor.hpp"
#include "tilevit/vit.hpp"
#include "tilevit/window.hpp"

namespace tilevit {

// Which student tensors are optimised. `blocks` counts trailing blocks for
// last_n_blocks, mlp_only and qkv_only.
struct TrainableSet {
  enum class Kind {
    last_n_blocks,
    all,
    patch_projection,
    pos_encodings,
    mlp_only,
    qkv_only
  };
  Kind kind = Kind::last_n_blocks;
  std::size_t blocks = 2;

  static TrainableSet parse(const std::string& text) {
    std::string name = text;
    std::size_t n = 2;
    if (const auto colon = text.find(':'); colon != std::string::npos) {
      name = text.substr(0, colon);
      const std::string num = text.substr(colon + 1);
      std::size_t used = 0;
      unsigned long v = 0;
      try {
        v = std::stoul(num, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      require(used == num.size() && !num.empty() && v > 0,
              "trainable: bad block count in '" + text + "'");
      n = v;
    }
    if (name == "last_n_blocks") return {Kind::last_n_blocks, n};
    if (name == "mlp_only") return {Kind::mlp_only, n};
    if (name == "qkv_only") return {Kind::qkv_only, n};
    require(name == text, "trainable: '" + name + "' takes no block count");
    if (name == "all") return {Kind::all, 0};
    if (name == "patch_projection") return {Kind::patch_projection, 0};
    if (name == "pos_encodings") return {Kind::pos_encodings, 0};
    throw InvalidArgument("trainable: unknown set '" + text + "'");
  }

  // Row names of the ablation table over trainable subsets.
  static TrainableSet from_table_name(const std::string& row) {
    if (row == "Last block") return {Kind::last_n_blocks, 1};
    if (row == "Last 2 blocks") return {Kind::last_n_blocks, 2};
    if (row == "Patch projection") return {Kind::patch_projection, 0};
    if (row == "Positional encoding") return {Kind::pos_encodings, 0};
    if (row == "Last 2 blocks - MLP") return {Kind::mlp_only, 2};
    if (row == "Last 2 blocks - QKV") return {Kind::qkv_only, 2};
    if (row == "ALL params") return {Kind::all, 0};
    throw InvalidArgument("unknown trainable configuration '" + row + "'");
  }

  std::string to_string() const {
    switch (kind) {
      case Kind::last_n_blocks: return "last_n_blocks:" + std::to_string(blocks);
      case Kind::all: return "all";
      case Kind::patch_projection: return "patch_projection";
      case Kind::pos_encodings: return "pos_encodings";
      case Kind::mlp_only: return "mlp_only:" + std::to_string(blocks);
      case Kind::qkv_only: return "qkv_only:" + std::to_string(blocks);
    }
    return "?";
  }
};

inline void apply_trainable(ModelParams& p, const TrainableSet& set) {
  using Kind = TrainableSet::Kind;
  set_all_trainable(p, false);
  const std::size_t nb = p.blocks.size();
  const std::size_t first_tail = nb > set.blocks ? nb - set.blocks : 0;
  switch (set.kind) {
    case Kind::all:
      set_all_trainable(p, true);
      break;
    case Kind::patch_projection:
      p.patch_weight.trainable = p.patch_bias.trainable = true;
      break;
    case Kind::pos_encodings:
      p.pos_encodings.trainable = true;
      break;
    case Kind::last_n_blocks:
      for (std::size_t b = first_tail; b < nb; ++b)
        for_each_block_param(p.blocks[b], "",
                             [](const std::string&, Param& t) { t.trainable = true; });
      break;
    case Kind::mlp_only:
      for (std::size_t b = first_tail; b < nb; ++b) {
        auto& bp = p.blocks[b];
        bp.fc1_weight.trainable = bp.fc1_bias.trainable = true;
        bp.fc2_weight.trainable = bp.fc2_bias.trainable = true;
      }
      break;
    case Kind::qkv_only:
      for (std::size_t b = first_tail; b < nb; ++b)
        p.blocks[b].qkv_weight.trainable = p.blocks[b].qkv_bias.trainable = true;
      break;
  }
}

struct TrainConfig {
  std::size_t epochs = 10;
  double learning_rate = 2e-5;
  double weight_decay = 1e-4;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_epsilon = 1e-8;
  TrainableSet trainable{};
  std::uint64_t seed = 0;
  std::size_t resize_short_min = 512;
  std::size_t resize_short_max = 2048;  // 2560 for the extended-range setting
  std::size_t crop_min = 512;
  double flip_prob = 0.5;
  double crop_prob = 0.5;

  void validate() const {
    require(flip_prob >= 0.0 && flip_prob <= 1.0,
            "train: flip_prob must lie in [0, 1]");
    require(crop_prob >= 0.0 && crop_prob <= 1.0,
            "train: crop_prob must lie in [0, 1]");
    require(resize_short_min >= 1 && resize_short_min <= resize_short_max,
            "train: need 1 <= resize_short_min <= resize_short_max");
    require(crop_min <= resize_short_min,
            "train: crop_min must not exceed resize_short_min");
    require(learning_rate >= 0.0 && weight_decay >= 0.0,
            "train: learning_rate and weight_decay must be non-negative");
    require(adam_beta1 >= 0.0 && adam_beta1 < 1.0 && adam_beta2 >= 0.0 &&
                adam_beta2 < 1.0 && adam_epsilon > 0.0,
            "train: invalid Adam hyper-parameters");
  }
};

// ---------------------------------------------------------------------------
// Augmentation

struct AugmentPlan {
  std::size_t resized_h = 0, resized_w = 0;
  bool cropped = false;
  std::size_t crop_row = 0, crop_col = 0, crop_h = 0, crop_w = 0;
  bool flipped = false;
  std::size_t out_h = 0, out_w = 0;
};

inline std::mt19937_64 augment_rng(std::uint64_t seed, std::uint64_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed),
                    static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(index),
                    static_cast<std::uint32_t>(index >> 32)};
  return std::mt19937_64(seq);
}

// Draws the geometry of one augmentation without touching pixels.
inline AugmentPlan plan_augment(std::size_t h, std::size_t w,
                                std::mt19937_64& rng, const TrainConfig& cfg,
                                std::size_t patch) {
  require(h >= 1 && w >= 1, "augment: empty image");
  require(patch >= 1, "augment: patch size must be positive");
  AugmentPlan a;

  // Shorter side to a uniform length, aspect ratio kept.
  const std::size_t target = std::uniform_int_distribution<std::size_t>(
      cfg.resize_short_min, cfg.resize_short_max)(rng);
  const double scale = static_cast<double>(target) /
                       static_cast<double>(std::min(h, w));
  if (h <= w) {
    a.resized_h = target;
    a.resized_w = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::llround(static_cast<double>(w) * scale)));
  } else {
    a.resized_w = target;
    a.resized_h = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::llround(static_cast<double>(h) * scale)));
  }

  std::size_t cur_h = a.resized_h, cur_w = a.resized_w;
  if (std::bernoulli_distribution(cfg.crop_prob)(rng)) {
    auto axis = [&](std::size_t dim, std::size_t& side, std::size_t& origin) {
      if (dim < cfg.crop_min) {
        side = dim;
        origin = 0;
        return;
      }
      side = std::uniform_int_distribution<std::size_t>(cfg.crop_min, dim)(rng);
      origin = std::uniform_int_distribution<std::size_t>(0, dim - side)(rng);
    };
    a.cropped = true;
    axis(cur_h, a.crop_h, a.crop_row);
    axis(cur_w, a.crop_w, a.crop_col);
    cur_h = a.crop_h;
    cur_w = a.crop_w;
  }
  a.flipped = std::bernoulli_distribution(cfg.flip_prob)(rng);

  auto round_down = [&](std::size_t v) {
    return std::max(patch, v - v % patch);
  };
  a.out_h = round_down(cur_h);
  a.out_w = round_down(cur_w);
  return a;
}

inline FeatureGrid apply_augment(const FeatureGrid& image,
                                 const AugmentPlan& a) {
  FeatureGrid x = bilinear_resize(image, a.resized_h, a.resized_w);
  if (a.cropped) x = crop(x, a.crop_row, a.crop_col, a.crop_h, a.crop_w);
  if (a.flipped) x = flip_horizontal(x);
  return bilinear_resize(x, a.out_h, a.out_w);
}

inline FeatureGrid augment(const FeatureGrid& image, std::mt19937_64& rng,
                           const TrainConfig& cfg, std::size_t patch) {
  return apply_augment(image,
                       plan_augment(image.height(), image.width(), rng, cfg, patch));
}

// Upscales so the shorter side is at least `window`, keeping both sides
// multiples of the patch size.
inline FeatureGrid ensure_min_side(const FeatureGrid& image, std::size_t window,
                                   std::size_t patch) {
  const std::size_t shortest = std::min(image.height(), image.width());
  if (shortest >= window) return image;
  const double scale =
      static_cast<double>(window) / static_cast<double>(shortest);
  auto grow = [&](std::size_t v) {
    if (v == shortest) return window;
    auto s = static_cast<std::size_t>(std::llround(static_cast<double>(v) * scale));
    return std::max(window, s - s % patch);
  };
  return bilinear_resize(image, grow(image.height()), grow(image.width()));
}

// The exact image both the teacher and the student see for dataset entry
// `index`.
inline FeatureGrid prepare_training_image(const FeatureGrid& image,
                                          std::uint64_t index,
                                          const TrainConfig& cfg,
                                          std::size_t patch,
                                          std::size_t window) {
  auto rng = augment_rng(cfg.seed, index);
  return ensure_min_side(augment(image, rng, cfg, patch), window, patch);
}

// ---------------------------------------------------------------------------
// Teacher

struct DatasetImage {
  std::string id;
  std::uint64_t index = 0;  // position in the dataset listing; keys the RNG
  FeatureGrid image;
};

// Sliding-window teacher: plan, per-window forward, feature stitching.
inline FeatureGrid teacher_features(const FeatureGrid& image,
                                    const ModelParams& teacher,
                                    const ViTConfig& cfg, std::size_t stride,
                                    std::size_t threads = 1,
                                    StitchUpsample mode = StitchUpsample::replicate) {
  const WindowPlan plan = plan_windows(image.height(), image.width(),
                                       cfg.native_side, stride, cfg.patch_size);
  const auto crops = extract_windows(image, plan);
  std::vector<FeatureGrid> feats(crops.size());
  parallel_for(crops.size(), threads, [&](std::size_t i) {
    feats[i] = forward_window(crops[i], teacher, cfg);
  });
  return stitch_features(feats, plan, mode);
}

struct PrecomputeOptions {
  std::size_t stride = 24;
  StoreDtype dtype = StoreDtype::f32;
  std::size_t threads = 1;
  StitchUpsample upsample = StitchUpsample::replicate;
};

// Augments each image once, stitches teacher features and appends one record
// per image in dataset order. Returns the number of records written.
inline std::uint64_t precompute_teacher(const std::vector<DatasetImage>& dataset,
                                        const ModelParams& teacher,
                                        const ViTConfig& vcfg,
                                        const TrainConfig& tcfg,
                                        const std::string& store_path,
                                        const PrecomputeOptions& opt = {}) {
  vcfg.validate();
  tcfg.validate();
  FeatureStoreWriter writer(store_path);
  const std::size_t chunk = std::max<std::size_t>(1, opt.threads);
  for (std::size_t begin = 0; begin < dataset.size(); begin += chunk) {
    const std::size_t n = std::min(chunk, dataset.size() - begin);
    std::vector<FeatureGrid> feats(n);
    parallel_for(n, opt.threads, [&](std::size_t j) {
      const DatasetImage& item = dataset[begin + j];
      const FeatureGrid x = prepare_training_image(
          item.image, item.index, tcfg, vcfg.patch_size, vcfg.native_side);
      feats[j] = teacher_features(x, teacher, vcfg, opt.stride, 1, opt.upsample);
    });
    for (std::size_t j = 0; j < n; ++j) {
      try {
        writer.append({dataset[begin + j].id, opt.dtype, std::move(feats[j])});
      } catch (const DataError& e) {
        throw DataError("image '" + dataset[begin + j].id + "': " + e.what());
      }
    }
  }
  writer.finish();
  return writer.count();
}

// ---------------------------------------------------------------------------
// Optimiser

struct OptimizerState {
  struct Moments {
    std::vector<double> m, v;
  };
  std::map<std::string, Moments> moments;
  std::uint64_t step = 0;
};

// Decoupled weight decay AdamW with bias correction:
//   p <- p (1 - lr wd) - lr m_hat / (sqrt(v_hat) + eps)
inline void adamw_update(ModelParams& params, const ParamGrads& grads,
                         OptimizerState& state, const TrainConfig& cfg) {
  std::size_t matched = 0;
  for_each_param(params, [&](const std::string& name, const Param& t) {
    const bool has = grads.count(name) != 0;
    require(has == t.trainable,
            "adamw_update: gradient coverage mismatch for " + name);
    if (has) {
      require(grads.at(name).size() == t.size(),
              "adamw_update: gradient size mismatch for " + name);
      ++matched;
    }
  });
  require(matched == grads.size(), "adamw_update: gradient for unknown tensor");

  ++state.step;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(cfg.adam_beta1, t);
  const double bc2 = 1.0 - std::pow(cfg.adam_beta2, t);
  const double decay = 1.0 - cfg.learning_rate * cfg.weight_decay;
  for_each_param(params, [&](const std::string& name, Param& p) {
    if (!p.trainable) return;
    const auto& g = grads.at(name);
    auto& mom = state.moments[name];
    if (mom.m.empty()) {
      mom.m.assign(p.size(), 0.0);
      mom.v.assign(p.size(), 0.0);
    }
    require(mom.m.size() == p.size(), "adamw_update: state shape mismatch for " + name);
    for (std::size_t i = 0; i < p.size(); ++i) {
      mom.m[i] = cfg.adam_beta1 * mom.m[i] + (1.0 - cfg.adam_beta1) * g[i];
      mom.v[i] = cfg.adam_beta2 * mom.v[i] + (1.0 - cfg.adam_beta2) * g[i] * g[i];
      const double m_hat = mom.m[i] / bc1;
      const double v_hat = mom.v[i] / bc2;
      p.value[i] = p.value[i] * decay -
                   cfg.learning_rate * m_hat / (std::sqrt(v_hat) + cfg.adam_epsilon);
    }
  });
}

// ---------------------------------------------------------------------------
// Training

// One batch-size-1 step; returns the loss before the update.
inline double train_step(ModelParams& student, const FeatureGrid& image,
                         const FeatureGrid& teacher, OptimizerState& state,
                         const ViTConfig& vcfg, const TrainConfig& tcfg) {
  ForwardResult fwd = forward(image, student, vcfg);
  if (!fwd.features.same_shape(teacher))
    throw DataError("teacher features " + teacher.shape_string() +
                    " do not match student output " +
                    fwd.features.shape_string() +
                    " (store and augmentation out of sync)");
  const double loss = mse(fwd.features, teacher);
  const ParamGrads grads = backward_tail(
      fwd.cache, mse_gradient(fwd.features, teacher), student, vcfg);
  adamw_update(student, grads, state, tcfg);
  return loss;
}

struct StepLog {
  std::size_t epoch = 0;
  std::size_t step = 0;
  std::string image_id;
  double loss = 0.0;
};

inline std::ostream& operator<<(std::ostream& os, const StepLog& s) {
  return os << s.epoch << ' ' << s.step << ' ' << s.image_id << ' ' << s.loss;
}

struct TrainResult {
  ModelParams params;
  std::vector<StepLog> log;
};

// cfg.epochs passes over the dataset in its given order; only the tensors
// selected by cfg.trainable change.
inline TrainResult train(const TrainConfig& cfg, const ViTConfig& vcfg,
                         const std::vector<DatasetImage>& dataset,
                         const std::vector<FeatureStoreRecord>& store,
                         const ModelParams& student_init) {
  cfg.validate();
  vcfg.validate();
  std::map<std::string, const FeatureStoreRecord*> by_id;
  for (const auto& rec : store) by_id[rec.image_id] = &rec;

  std::vector<FeatureGrid> images;
  std::vector<const FeatureGrid*> targets;
  if (cfg.epochs > 0) {
    for (const auto& item : dataset) {
      const auto it = by_id.find(item.id);
      if (it == by_id.end())
        throw DataError("no teacher record for image '" + item.id + "'");
      images.push_back(prepare_training_image(item.image, item.index, cfg,
                                              vcfg.patch_size, vcfg.native_side));
      targets.push_back(&it->second->features);
    }
  }

  TrainResult out{student_init, {}};
  apply_trainable(out.params, cfg.trainable);
  OptimizerState state;
  std::size_t step = 0;
  for (std::size_t e = 0; e < cfg.epochs; ++e) {
    for (std::size_t i = 0; i < images.size(); ++i) {
      double loss = 0.0;
      try {
        loss = train_step(out.params, images[i], *targets[i], state, vcfg, cfg);
      } catch (const DataError& err) {
        throw DataError("image '" + dataset[i].id + "': " + err.what());
      }
      ensure(std::isfinite(loss) && loss >= 0.0,
             "non-finite loss at step " + std::to_string(step));
      out.log.push_back({e, step++, dataset[i].id, loss});
    }
  }
  return out;
}

}  // namespace tilevit
