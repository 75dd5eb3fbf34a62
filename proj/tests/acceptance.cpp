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

// Acceptance checks. Prints one PASS/FAIL line per criterion and exits
// non-zero if any criterion fails.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include "oracles.hpp"
#include "tilevit/bench.hpp"
#include "tilevit/checkpoint.hpp"
#include "tilevit/distill.hpp"
#include "tilevit/feature_store.hpp"
#include "tilevit/segment.hpp"
#include "tilevit/window.hpp"

namespace fs = std::filesystem;
using namespace tilevit;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

int failures = 0;

void run(int id, const std::string& name, const std::function<Outcome()>& body) {
  const auto t0 = std::chrono::steady_clock::now();
  Outcome o;
  try {
    o = body();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (!o.pass) ++failures;
  std::printf("%s %d %-22s %s (%.2f s)\n", o.pass ? "PASS" : "FAIL", id, name.c_str(),
              o.detail.c_str(), secs);
  std::fflush(stdout);
}

std::string fmt(const char* f, double a) {
  char buf[128];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

ViTConfig micro_vit(std::size_t blocks, std::size_t side, std::size_t channels = 8) {
  ViTConfig cfg;
  cfg.patch_size = 16;
  cfg.native_side = side;
  cfg.channels = channels;
  cfg.num_heads = 2;
  cfg.num_blocks = blocks;
  cfg.mlp_ratio = 4;
  return cfg;
}

std::uint64_t fnv1a(const std::string& bytes) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

std::vector<DatasetImage> random_dataset(std::size_t n, std::size_t side,
                                         std::uint64_t seed) {
  std::vector<DatasetImage> out;
  for (std::size_t i = 0; i < n; ++i)
    out.push_back({"img" + std::to_string(i), i,
                   oracle::random_grid(side, side, 3, seed + i, 0, 1)});
  return out;
}

std::vector<FeatureStoreRecord> teacher_records(const std::vector<DatasetImage>& data,
                                                const ModelParams& teacher,
                                                const ViTConfig& v, const TrainConfig& t,
                                                std::size_t stride) {
  std::vector<FeatureStoreRecord> out;
  for (const auto& item : data) {
    const FeatureGrid x =
        prepare_training_image(item.image, item.index, t, v.patch_size, v.native_side);
    out.push_back({item.id, StoreDtype::f64, teacher_features(x, teacher, v, stride)});
  }
  return out;
}

// ---------------------------------------------------------------------------

Outcome stitch_identity() {
  const ViTConfig v = micro_vit(4, 64);
  const ModelParams p = init_params(v, 3);
  double worst = 0;
  for (std::size_t s : {8u, 16u, 24u, 40u, 64u}) {
    const FeatureGrid img = oracle::random_grid(64, 64, 3, 10 + s, 0, 1);
    worst = std::max(worst, max_abs_diff(teacher_features(img, p, v, s),
                                         forward_window(img, p, v)));
  }
  return {worst <= 1e-6, fmt("max|diff|=%.3g over s in {8,16,24,40,64}", worst)};
}

Outcome fractional_stride() {
  const WindowPlan plan = plan_windows(128, 128, 64, 24, 16);
  if (plan.upsample != 2) return {false, "r != 2"};
  std::vector<FeatureGrid> feats;
  for (std::size_t i = 0; i < plan.count(); ++i)
    feats.push_back(oracle::random_grid(4, 4, 6, 1000 + i));
  const double d =
      max_abs_diff(stitch_features(feats, plan), oracle::stitch_features(feats, plan));
  return {d <= 1e-9, "m=" + std::to_string(plan.count()) + fmt(" max|diff|=%.3g", d)};
}

Outcome gradient_probes() {
  const ViTConfig v = micro_vit(1, 32);
  ModelParams p = init_params(v, 5);
  // Widen the initialisation so every tensor carries a visible gradient.
  std::mt19937_64 rng(6);
  std::normal_distribution<double> n(0.0, 0.3);
  for_each_param(p, [&](const std::string& name, Param& t) {
    for (double& x : t.value) x = (name.ends_with("gamma") ? 1.0 : 0.0) + n(rng);
  });
  set_all_trainable(p, true);
  const FeatureGrid img = oracle::random_grid(48, 64, 3, 7, 0, 1);
  const FeatureGrid w = oracle::random_grid(3, 4, v.channels, 8);
  const ParamGrads g = backward_tail(forward(img, p, v).cache, w, p, v);

  std::vector<Param*> tensors;
  std::vector<std::string> names;
  for_each_param(p, [&](const std::string& name, Param& t) {
    tensors.push_back(&t);
    names.push_back(name);
  });
  double worst = 0;
  std::string where;
  for (std::size_t k = 0; k < 100; ++k) {
    const std::size_t ti = k % tensors.size();
    Param& t = *tensors[ti];
    const std::size_t i = std::uniform_int_distribution<std::size_t>(0, t.size() - 1)(rng);
    const double fd = oracle::central_difference(
        [&] { return oracle::weighted_output(img, p, v, w); }, t.value[i], 1e-5);
    const double e = oracle::relative_error(g.at(names[ti])[i], fd);
    if (e > worst) {
      worst = e;
      where = names[ti] + "[" + std::to_string(i) + "]";
    }
  }
  return {worst <= 1e-4, "100 probes over " + std::to_string(tensors.size()) +
                             " tensors" + fmt(", worst rel=%.3g", worst) + " at " + where};
}

Outcome distillation_direction() {
  const ViTConfig v = micro_vit(4, 32);
  const ModelParams teacher = init_params(v, 1);
  TrainConfig t;
  t.learning_rate = 1e-3;
  t.weight_decay = 1e-4;
  t.resize_short_min = t.resize_short_max = 64;
  t.crop_min = 32;
  t.crop_prob = 0.0;
  t.flip_prob = 0.5;
  t.epochs = 25;  // 8 images x 25 epochs = 200 steps
  t.trainable = TrainableSet::parse("last_n_blocks:2");
  const std::size_t stride = 24;

  const auto train_set = random_dataset(8, 64, 100);
  const auto store = teacher_records(train_set, teacher, v, t, stride);
  // The student starts from the teacher's weights.
  const TrainResult r = train(t, v, train_set, store, teacher);

  double before = 0, after = 0;
  for (const auto& item : random_dataset(4, 64, 900)) {
    const FeatureGrid target = teacher_features(item.image, teacher, v, stride);
    before += mse(encode(item.image, teacher, v), target);
    after += mse(encode(item.image, r.params, v), target);
  }
  const double ratio = after / before;
  return {r.log.size() == 200 && ratio <= 0.5,
          std::to_string(r.log.size()) + fmt(" steps, held-out MSE %.4g", before) +
              fmt(" -> %.4g", after) + fmt(" (ratio %.3f)", ratio)};
}

Outcome freeze_integrity() {
  const ViTConfig v = micro_vit(4, 32, 4);
  const ModelParams init = init_params(v, 11);
  TrainConfig t;
  t.learning_rate = 1e-3;
  t.weight_decay = 1e-2;
  t.resize_short_min = t.resize_short_max = 64;
  t.crop_min = 32;
  t.epochs = 2;
  const auto data = random_dataset(3, 64, 200);
  const auto store = teacher_records(data, init, v, t, 24);
  std::size_t rows = 0;
  std::string bad;
  for (const char* row : {"Last block", "Last 2 blocks", "Patch projection",
                          "Positional encoding", "Last 2 blocks - MLP",
                          "Last 2 blocks - QKV", "ALL params"}) {
    t.trainable = TrainableSet::from_table_name(row);
    ModelParams mask = init;
    apply_trainable(mask, t.trainable);
    const TrainResult r = train(t, v, data, store, init);
    std::map<std::string, const Param*> after;
    for_each_param(r.params, [&](const std::string& n, const Param& q) { after[n] = &q; });
    bool frozen_ok = true, moved = false;
    for_each_param(mask, [&](const std::string& n, const Param& m) {
      std::vector<double> orig;
      for_each_param(init, [&](const std::string& n2, const Param& q) {
        if (n2 == n) orig = q.value;
      });
      const bool same = after.at(n)->value == orig;
      if (!m.trainable && !same) frozen_ok = false;
      if (m.trainable && !same) moved = true;
    });
    if (frozen_ok && moved)
      ++rows;
    else
      bad += std::string(" '") + row + "'";
  }
  return {rows == 7, std::to_string(rows) + "/7 rows frozen complement bit-identical" +
                         (bad.empty() ? "" : ", failing:" + bad)};
}

Outcome miou_oracle() {
  std::mt19937 rng(21);
  std::uniform_int_distribution<int> label(0, 2);
  std::bernoulli_distribution ignored(0.1);
  std::vector<SegMask> preds, gts;
  std::vector<std::vector<int>> op, og;
  std::size_t exact = 0;
  for (int f = 0; f < 50; ++f) {
    SegMask p(16, 16), g(16, 16);
    std::vector<int> vp, vg;
    for (std::size_t i = 0; i < 256; ++i) {
      p.labels[i] = label(rng);
      g.labels[i] = ignored(rng) ? 255 : label(rng);
      vp.push_back(p.labels[i]);
      vg.push_back(g.labels[i]);
    }
    const EvalReport r = miou({p}, {g}, 3, 255);
    const oracle::IouResult o = oracle::confusion_iou({vp}, {vg}, 3, 255);
    bool same = r.mean_iou == o.mean;
    for (std::size_t c = 0; c < 3; ++c)
      same = same && (o.iou[c] < 0 ? !r.class_iou[c] : *r.class_iou[c] == o.iou[c]);
    exact += same;
    preds.push_back(p);
    gts.push_back(g);
    op.push_back(vp);
    og.push_back(vg);
  }
  const bool pooled = miou(preds, gts, 3, 255).mean_iou ==
                      oracle::confusion_iou(op, og, 3, 255).mean;
  return {exact == 50 && pooled,
          std::to_string(exact) + "/50 fixtures exact, pooled " + (pooled ? "exact" : "differs")};
}

Outcome timing_protocol() {
  // One head keeps the 1024-token softmax within the time budget.
  ViTConfig v = micro_vit(1, 512, 8);
  v.num_heads = 1;
  const ModelParams p = init_params(v, 13);
  const FeatureGrid img = oracle::random_grid(1024, 1024, 3, 14, 0, 1);
  BenchOptions quick;
  quick.warmup = 0;
  quick.sub_batch = 60;
  const std::size_t m24 = time_sliding_window(p, v, img, 24, quick).windows;
  const std::size_t m256 = time_sliding_window(p, v, img, 256, quick).windows;
  const bool counts = m24 == 529 && m256 == 9 &&
                      m24 == plan_windows(1024, 1024, 512, 24, 16).count() &&
                      m256 == plan_windows(1024, 1024, 512, 256, 16).count();

  BenchOptions o;
  o.warmup = 1;
  o.sub_batch = 60;
  o.trials = 3;
  std::string ladder;
  bool decreasing = true;
  double prev = 0;
  for (std::size_t s : {32u, 64u, 128u, 256u, 512u}) {
    const TimingRecord r = time_sliding_window(p, v, img, s, o);
    if (!ladder.empty()) {
      ladder += " > ";
      decreasing = decreasing && r.seconds < prev;
    }
    ladder += fmt("%.3gs", r.seconds) + "(s=" + std::to_string(s) + ")";
    prev = r.seconds;
  }
  return {counts && decreasing, "m=" + std::to_string(m24) + "/" + std::to_string(m256) +
                                    ", " + ladder};
}

Outcome r_factor() {
  const std::size_t r = min_upsample_factor(24, 16);
  return {r == 2, "min_upsample_factor(24,16)=" + std::to_string(r)};
}

Outcome determinism() {
  const ViTConfig v = micro_vit(3, 32);
  TrainConfig t;
  t.learning_rate = 1e-3;
  t.resize_short_min = 48;
  t.resize_short_max = 96;
  t.crop_min = 32;
  t.epochs = 2;
  t.seed = 42;
  const auto data = random_dataset(4, 80, 300);
  const fs::path dir = fs::temp_directory_path() / ("tilevit_accept_" + std::to_string(::getpid()));
  fs::create_directories(dir);

  std::vector<std::uint64_t> store_hash, ckpt_hash;
  for (int rep = 0; rep < 2; ++rep) {
    const ModelParams teacher = init_params(v, 42);
    const fs::path store = dir / ("store" + std::to_string(rep) + ".bin");
    precompute_teacher(data, teacher, v, t, store.string());
    const TrainResult r = train(t, v, data, read_feature_store(store.string()), teacher);
    std::ostringstream ck;
    write_checkpoint(ck, v, r.params);
    store_hash.push_back(fnv1a(slurp(store)));
    ckpt_hash.push_back(fnv1a(ck.str()));
  }
  fs::remove_all(dir);
  char buf[96];
  std::snprintf(buf, sizeof buf, "store %016llx, checkpoint %016llx",
                static_cast<unsigned long long>(store_hash[0]),
                static_cast<unsigned long long>(ckpt_hash[0]));
  return {store_hash[0] == store_hash[1] && ckpt_hash[0] == ckpt_hash[1],
          std::string(buf) +
              (store_hash[0] == store_hash[1] && ckpt_hash[0] == ckpt_hash[1] ? " (both runs)"
                                                                              : " (runs differ)")};
}

}  // namespace

int main() {
  run(1, "stitch-identity", stitch_identity);
  run(2, "fractional-stride", fractional_stride);
  run(3, "gradient-check", gradient_probes);
  run(4, "distillation-direction", distillation_direction);
  run(5, "freeze-integrity", freeze_integrity);
  run(6, "miou-oracle", miou_oracle);
  run(7, "timing-protocol", timing_protocol);
  run(8, "r-factor", r_factor);
  run(9, "determinism", determinism);
  std::printf("%s: %d of 9 criteria failed\n", failures ? "FAIL" : "PASS", failures);
  return failures ? 1 : 0;
}
