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

// Flat `section.key = value` run configuration. Blank lines and lines
// starting with '#' are skipped; unknown and repeated keys are rejected.

#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <istream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "tilevit/bench.hpp"
#include "tilevit/distill.hpp"
#include "tilevit/errors.hpp"
#include "tilevit/feature_store.hpp"
#include "tilevit/vit.hpp"

namespace tilevit {

struct RunConfig {
  ViTConfig model;
  std::string checkpoint;

  TrainConfig train;
  std::string dataset;
  std::string store;
  std::string train_output;
  std::string train_log;
  StoreDtype store_dtype = StoreDtype::f32;

  std::size_t teacher_window = 0;  // 0: model.native_side
  std::size_t teacher_stride = 24;

  std::string eval_images;
  std::string eval_masks;
  std::string class_embeddings;
  std::optional<std::int32_t> ignore_index;
  std::string eval_output;
  std::string eval_checkpoint;
  std::size_t eval_stride = 0;  // 0: teacher.stride

  std::vector<std::size_t> bench_strides{16, 32, 64, 128, 256, 512};
  BenchOptions bench;
  std::size_t bench_height = 1024;
  std::size_t bench_width = 2048;
  std::string bench_image;
  std::string bench_output;
  std::string bench_svg;
  std::vector<double> bench_metric;
  std::string bench_metric_name = "metric";

  std::set<std::string> keys;  // keys present in the file

  bool has(const std::string& key) const { return keys.count(key) != 0; }
  std::size_t window() const {
    return teacher_window ? teacher_window : model.native_side;
  }
  std::size_t stride_for_eval() const {
    return eval_stride ? eval_stride : teacher_stride;
  }

  void validate() const {
    model.validate();
    train.validate();
    require(window() == model.native_side,
            "teacher.window " + std::to_string(window()) +
                " must equal model.native_side " +
                std::to_string(model.native_side));
    require(teacher_stride >= 1 && teacher_stride <= window(),
            "teacher.stride must lie in [1, teacher.window]");
    require(eval_stride <= window(), "eval.stride must not exceed teacher.window");
    for (auto s : bench_strides)
      require(s >= 1 && s <= window(),
              "bench.strides: " + std::to_string(s) + " outside [1, window]");
    require(bench.sub_batch >= 1 && bench.trials >= 1,
            "bench.sub_batch and bench.trials must be positive");
  }
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline std::uint64_t parse_uint(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  unsigned long long x = 0;
  try {
    if (!v.empty() && v[0] == '-') throw std::invalid_argument("negative");
    x = std::stoull(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  require(used == v.size() && !v.empty(),
          key + ": expected a non-negative integer, got '" + v + "'");
  return x;
}

inline double parse_real(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  double x = 0.0;
  try {
    x = std::stod(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  require(used == v.size() && !v.empty() && std::isfinite(x),
          key + ": expected a real number, got '" + v + "'");
  return x;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw InvalidArgument(key + ": expected true/false, got '" + v + "'");
}

template <class T, class Fn>
std::vector<T> parse_list(const std::string& v, Fn&& one) {
  std::vector<T> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(one(trim(item)));
  return out;
}

using Setter = std::function<void(RunConfig&, const std::string&, const std::string&)>;

inline const std::map<std::string, Setter>& config_setters() {
  auto sz = [](std::size_t RunConfig::*f) -> Setter {
    return [f](RunConfig& c, const std::string& k, const std::string& v) {
      c.*f = parse_uint(k, v);
    };
  };
  auto str = [](std::string RunConfig::*f) -> Setter {
    return [f](RunConfig& c, const std::string&, const std::string& v) { c.*f = v; };
  };
  static const std::map<std::string, Setter> table = {
      {"model.patch_size", [](RunConfig& c, auto& k, auto& v) { c.model.patch_size = parse_uint(k, v); }},
      {"model.native_side", [](RunConfig& c, auto& k, auto& v) { c.model.native_side = parse_uint(k, v); }},
      {"model.channels", [](RunConfig& c, auto& k, auto& v) { c.model.channels = parse_uint(k, v); }},
      {"model.num_blocks", [](RunConfig& c, auto& k, auto& v) { c.model.num_blocks = parse_uint(k, v); }},
      {"model.num_heads", [](RunConfig& c, auto& k, auto& v) { c.model.num_heads = parse_uint(k, v); }},
      {"model.mlp_ratio", [](RunConfig& c, auto& k, auto& v) { c.model.mlp_ratio = parse_real(k, v); }},
      {"model.last_attention_identity", [](RunConfig& c, auto& k, auto& v) { c.model.last_attention_identity = parse_bool(k, v); }},
      {"model.checkpoint", str(&RunConfig::checkpoint)},

      {"train.epochs", [](RunConfig& c, auto& k, auto& v) { c.train.epochs = parse_uint(k, v); }},
      {"train.learning_rate", [](RunConfig& c, auto& k, auto& v) { c.train.learning_rate = parse_real(k, v); }},
      {"train.weight_decay", [](RunConfig& c, auto& k, auto& v) { c.train.weight_decay = parse_real(k, v); }},
      {"train.adam_beta1", [](RunConfig& c, auto& k, auto& v) { c.train.adam_beta1 = parse_real(k, v); }},
      {"train.adam_beta2", [](RunConfig& c, auto& k, auto& v) { c.train.adam_beta2 = parse_real(k, v); }},
      {"train.adam_epsilon", [](RunConfig& c, auto& k, auto& v) { c.train.adam_epsilon = parse_real(k, v); }},
      {"train.trainable", [](RunConfig& c, auto&, auto& v) { c.train.trainable = TrainableSet::parse(v); }},
      {"train.seed", [](RunConfig& c, auto& k, auto& v) { c.train.seed = parse_uint(k, v); }},
      {"train.resize_short_min", [](RunConfig& c, auto& k, auto& v) { c.train.resize_short_min = parse_uint(k, v); }},
      {"train.resize_short_max", [](RunConfig& c, auto& k, auto& v) { c.train.resize_short_max = parse_uint(k, v); }},
      {"train.crop_min", [](RunConfig& c, auto& k, auto& v) { c.train.crop_min = parse_uint(k, v); }},
      {"train.flip_prob", [](RunConfig& c, auto& k, auto& v) { c.train.flip_prob = parse_real(k, v); }},
      {"train.crop_prob", [](RunConfig& c, auto& k, auto& v) { c.train.crop_prob = parse_real(k, v); }},
      {"train.dataset", str(&RunConfig::dataset)},
      {"train.store", str(&RunConfig::store)},
      {"train.output", str(&RunConfig::train_output)},
      {"train.log", str(&RunConfig::train_log)},
      {"train.store_dtype", [](RunConfig& c, auto& k, auto& v) {
         if (v == "f32") c.store_dtype = StoreDtype::f32;
         else if (v == "f64") c.store_dtype = StoreDtype::f64;
         else throw InvalidArgument(k + ": expected f32 or f64, got '" + v + "'");
       }},

      {"teacher.window", sz(&RunConfig::teacher_window)},
      {"teacher.stride", sz(&RunConfig::teacher_stride)},

      {"eval.images", str(&RunConfig::eval_images)},
      {"eval.masks", str(&RunConfig::eval_masks)},
      {"eval.class_embeddings", str(&RunConfig::class_embeddings)},
      {"eval.ignore_index", [](RunConfig& c, auto& k, auto& v) {
         if (v == "none") c.ignore_index.reset();
         else c.ignore_index = static_cast<std::int32_t>(parse_uint(k, v));
       }},
      {"eval.output", str(&RunConfig::eval_output)},
      {"eval.checkpoint", str(&RunConfig::eval_checkpoint)},
      {"eval.stride", sz(&RunConfig::eval_stride)},

      {"bench.strides", [](RunConfig& c, auto& k, auto& v) {
         c.bench_strides = parse_list<std::size_t>(v, [&](const std::string& s) { return parse_uint(k, s); });
       }},
      {"bench.sub_batch", [](RunConfig& c, auto& k, auto& v) { c.bench.sub_batch = parse_uint(k, v); }},
      {"bench.warmup", [](RunConfig& c, auto& k, auto& v) { c.bench.warmup = parse_uint(k, v); }},
      {"bench.trials", [](RunConfig& c, auto& k, auto& v) { c.bench.trials = parse_uint(k, v); }},
      {"bench.height", sz(&RunConfig::bench_height)},
      {"bench.width", sz(&RunConfig::bench_width)},
      {"bench.image", str(&RunConfig::bench_image)},
      {"bench.output", str(&RunConfig::bench_output)},
      {"bench.svg", str(&RunConfig::bench_svg)},
      {"bench.metric", [](RunConfig& c, auto& k, auto& v) {
         c.bench_metric = parse_list<double>(v, [&](const std::string& s) { return parse_real(k, s); });
       }},
      {"bench.metric_name", str(&RunConfig::bench_metric_name)},
  };
  return table;
}

}  // namespace detail

inline RunConfig parse_run_config(std::istream& is) {
  RunConfig cfg;
  const auto& setters = detail::config_setters();
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const std::string t = detail::trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    const std::string where = "config line " + std::to_string(lineno) + ": ";
    require(eq != std::string::npos, where + "expected 'section.key = value'");
    const std::string key = detail::trim(t.substr(0, eq));
    const std::string value = detail::trim(t.substr(eq + 1));
    const auto it = setters.find(key);
    require(it != setters.end(), where + "unknown key '" + key + "'");
    require(cfg.keys.insert(key).second, where + "duplicate key '" + key + "'");
    try {
      it->second(cfg, key, value);
    } catch (const InvalidArgument& e) {
      throw InvalidArgument(where + e.what());
    }
  }
  // The default ladder only keeps strides that fit the configured window.
  if (!cfg.has("bench.strides"))
    std::erase_if(cfg.bench_strides, [&](std::size_t s) { return s > cfg.window(); });
  cfg.validate();
  return cfg;
}

inline RunConfig load_run_config(const std::string& path) {
  std::ifstream is(path);
  require(static_cast<bool>(is), "cannot open config file: " + path);
  return parse_run_config(is);
}

}  // namespace tilevit
