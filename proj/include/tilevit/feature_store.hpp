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

// Teacher feature store.
//
//   "TVITFEAT", u32 version, u64 record count
//   per record: u32 id length, UTF-8 id, u32 h, u32 w, u32 d, u8 dtype,
//               h*w*d values (dtype 0 = f32, 1 = f64), little-endian,
//               row-major channel-last.

#pragma once

#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "tilevit/binary_io.hpp"
#include "tilevit/tensor.hpp"

namespace tilevit {

inline constexpr char kStoreMagic[] = "TVITFEAT";
inline constexpr std::uint32_t kStoreVersion = 1;

enum class StoreDtype : std::uint8_t { f32 = 0, f64 = 1 };

struct FeatureStoreRecord {
  std::string image_id;
  StoreDtype dtype = StoreDtype::f32;
  FeatureGrid features;
};

// Streams records to disk; the count in the header is patched on finish().
class FeatureStoreWriter {
 public:
  explicit FeatureStoreWriter(const std::string& path)
      : path_(path), os_(path, std::ios::binary | std::ios::trunc) {
    if (!os_) throw DataError("cannot open feature store for writing: " + path);
    le::write_bytes(os_, std::string(kStoreMagic, 8));
    le::write(os_, kStoreVersion);
    le::write(os_, std::uint64_t{0});
  }

  FeatureStoreWriter(const FeatureStoreWriter&) = delete;
  FeatureStoreWriter& operator=(const FeatureStoreWriter&) = delete;

  void append(const FeatureStoreRecord& rec) {
    require(!finished_, "feature store already finished");
    const FeatureGrid& f = rec.features;
    le::write(os_, static_cast<std::uint32_t>(rec.image_id.size()));
    le::write_bytes(os_, rec.image_id);
    le::write(os_, static_cast<std::uint32_t>(f.height()));
    le::write(os_, static_cast<std::uint32_t>(f.width()));
    le::write(os_, static_cast<std::uint32_t>(f.channels()));
    le::write(os_, static_cast<std::uint8_t>(rec.dtype));
    if (rec.dtype == StoreDtype::f32) {
      for (double v : f.values()) le::write_f32(os_, static_cast<float>(v));
    } else {
      for (double v : f.values()) le::write_f64(os_, v);
    }
    if (!os_)
      throw DataError("failed writing record '" + rec.image_id + "' to " + path_);
    ++count_;
  }

  void finish() {
    if (finished_) return;
    os_.seekp(12);
    le::write(os_, count_);
    os_.flush();
    if (!os_) throw DataError("failed finalising feature store " + path_);
    finished_ = true;
  }

  ~FeatureStoreWriter() {
    try {
      finish();
    } catch (...) {
    }
  }

  std::uint64_t count() const { return count_; }

 private:
  std::string path_;
  std::ofstream os_;
  std::uint64_t count_ = 0;
  bool finished_ = false;
};

inline std::vector<FeatureStoreRecord> read_feature_store(
    const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open feature store: " + path);
  if (le::read_bytes(is, 8) != std::string(kStoreMagic, 8))
    throw DataError(path + ": not a feature store (bad magic)");
  const auto version = le::read<std::uint32_t>(is);
  if (version != kStoreVersion)
    throw DataError(path + ": unsupported store version " +
                    std::to_string(version));
  const auto n = le::read<std::uint64_t>(is);
  std::vector<FeatureStoreRecord> out;
  for (std::uint64_t i = 0; i < n; ++i) {
    FeatureStoreRecord rec;
    rec.image_id = le::read_bytes(is, le::read<std::uint32_t>(is));
    const auto h = le::read<std::uint32_t>(is);
    const auto w = le::read<std::uint32_t>(is);
    const auto d = le::read<std::uint32_t>(is);
    const auto dtype = le::read<std::uint8_t>(is);
    if (h == 0 || w == 0 || d == 0)
      throw DataError(path + ": record '" + rec.image_id + "' has empty shape");
    if (dtype > 1)
      throw DataError(path + ": record '" + rec.image_id + "' has unknown dtype");
    rec.dtype = static_cast<StoreDtype>(dtype);
    std::vector<double> values(std::size_t{h} * w * d);
    try {
      if (rec.dtype == StoreDtype::f32) {
        for (double& v : values) v = le::read_f32(is);
      } else {
        for (double& v : values) v = le::read_f64(is);
      }
    } catch (const DataError&) {
      throw DataError(path + ": truncated record '" + rec.image_id + "'");
    }
    rec.features = FeatureGrid(h, w, d, std::move(values));
    out.push_back(std::move(rec));
  }
  return out;
}

}  // namespace tilevit
