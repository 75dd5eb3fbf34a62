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

// Parameter checkpoints.
//
// Layout (all little-endian):
//   "TVITCKPT"
//   i32 patch_size, i32 native_side, i32 channels, i32 num_blocks,
//   i32 num_heads, f64 mlp_ratio, i32 last_attention_identity
//   per tensor, in for_each_param order:
//     u32 name length, name bytes, u32 rank, u32 dims[rank], f64 payload
// The trainable mask is a training-time setting and is not stored.

#pragma once

#include <cstdint>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>
#include <utility>

#include "tilevit/binary_io.hpp"
#include "tilevit/vit.hpp"

namespace tilevit {

inline constexpr char kCheckpointMagic[] = "TVITCKPT";

inline void write_checkpoint(std::ostream& os, const ViTConfig& cfg,
                             const ModelParams& params) {
  cfg.validate();
  le::write_bytes(os, std::string(kCheckpointMagic, 8));
  le::write(os, static_cast<std::int32_t>(cfg.patch_size));
  le::write(os, static_cast<std::int32_t>(cfg.native_side));
  le::write(os, static_cast<std::int32_t>(cfg.channels));
  le::write(os, static_cast<std::int32_t>(cfg.num_blocks));
  le::write(os, static_cast<std::int32_t>(cfg.num_heads));
  le::write_f64(os, cfg.mlp_ratio);
  le::write(os, static_cast<std::int32_t>(cfg.last_attention_identity ? 1 : 0));
  for_each_param(params, [&](const std::string& name, const Param& t) {
    le::write(os, static_cast<std::uint32_t>(name.size()));
    le::write_bytes(os, name);
    le::write(os, static_cast<std::uint32_t>(t.shape.size()));
    for (auto d : t.shape) le::write(os, static_cast<std::uint32_t>(d));
    for (double v : t.value) le::write_f64(os, v);
  });
}

inline std::pair<ViTConfig, ModelParams> read_checkpoint(std::istream& is) {
  if (le::read_bytes(is, 8) != std::string(kCheckpointMagic, 8))
    throw DataError("checkpoint: bad magic");
  auto read_dim = [&]() {
    const auto v = le::read<std::int32_t>(is);
    if (v < 0) throw DataError("checkpoint: negative config field");
    return static_cast<std::size_t>(v);
  };
  ViTConfig cfg;
  cfg.patch_size = read_dim();
  cfg.native_side = read_dim();
  cfg.channels = read_dim();
  cfg.num_blocks = read_dim();
  cfg.num_heads = read_dim();
  cfg.mlp_ratio = le::read_f64(is);
  cfg.last_attention_identity = le::read<std::int32_t>(is) != 0;
  try {
    cfg.validate();
  } catch (const InvalidArgument& e) {
    throw DataError(std::string("checkpoint: ") + e.what());
  }

  // Shapes come from the config; the file must agree tensor by tensor.
  ModelParams params = init_params(cfg, 0);
  for_each_param(params, [&](const std::string& name, Param& t) {
    const auto len = le::read<std::uint32_t>(is);
    const std::string got = le::read_bytes(is, len);
    if (got != name)
      throw DataError("checkpoint: expected tensor '" + name + "', found '" +
                      got + "'");
    const auto rank = le::read<std::uint32_t>(is);
    if (rank != t.shape.size())
      throw DataError("checkpoint: rank mismatch for " + name);
    for (auto d : t.shape)
      if (le::read<std::uint32_t>(is) != d)
        throw DataError("checkpoint: shape mismatch for " + name);
    for (double& v : t.value) v = le::read_f64(is);
  });
  return {cfg, std::move(params)};
}

inline void save_checkpoint(const std::string& path, const ViTConfig& cfg,
                            const ModelParams& params) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError("cannot open checkpoint for writing: " + path);
  write_checkpoint(os, cfg, params);
  if (!os) throw DataError("failed writing checkpoint: " + path);
}

inline std::pair<ViTConfig, ModelParams> load_checkpoint(
    const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open checkpoint: " + path);
  try {
    return read_checkpoint(is);
  } catch (const DataError& e) {
    throw DataError(path + ": " + e.what());
  }
}

}  // namespace tilevit
