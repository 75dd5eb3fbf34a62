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

#include "tilevit/checkpoint.hpp"

#include <gtest/gtest.h>

#include <sstream>

namespace tilevit {
namespace {

ViTConfig small() {
  ViTConfig cfg;
  cfg.channels = 4;
  cfg.num_blocks = 2;
  cfg.mlp_ratio = 1.5;
  cfg.last_attention_identity = true;
  return cfg;
}

TEST(Checkpoint, RoundTripIsExact) {
  const ViTConfig cfg = small();
  const ModelParams p = init_params(cfg, 42);
  std::stringstream ss;
  write_checkpoint(ss, cfg, p);
  const auto [cfg2, p2] = read_checkpoint(ss);
  EXPECT_EQ(cfg2, cfg);
  std::vector<std::vector<double>> a, b;
  for_each_param(p, [&](const std::string&, const Param& t) { a.push_back(t.value); });
  for_each_param(p2, [&](const std::string&, const Param& t) { b.push_back(t.value); });
  EXPECT_EQ(a, b);
}

TEST(Checkpoint, StartsWithMagicAndIsByteStable) {
  const ViTConfig cfg = small();
  std::stringstream a, b;
  write_checkpoint(a, cfg, init_params(cfg, 1));
  write_checkpoint(b, cfg, init_params(cfg, 1));
  EXPECT_EQ(a.str().substr(0, 8), "TVITCKPT");
  EXPECT_EQ(a.str(), b.str());
}

TEST(Checkpoint, RejectsBadMagic) {
  std::stringstream ss("NOTACKPT and more");
  EXPECT_THROW(read_checkpoint(ss), DataError);
}

TEST(Checkpoint, RejectsTruncation) {
  const ViTConfig cfg = small();
  std::stringstream full;
  write_checkpoint(full, cfg, init_params(cfg, 1));
  const std::string s = full.str();
  for (std::size_t cut : {std::size_t{10}, std::size_t{40}, s.size() - 3}) {
    std::stringstream part(s.substr(0, cut));
    EXPECT_THROW(read_checkpoint(part), DataError) << "cut=" << cut;
  }
}

TEST(Checkpoint, RejectsWrongTensorName) {
  const ViTConfig cfg = small();
  std::stringstream full;
  write_checkpoint(full, cfg, init_params(cfg, 1));
  std::string s = full.str();
  const auto pos = s.find("patch_projection.weight");
  ASSERT_NE(pos, std::string::npos);
  s[pos] = 'q';
  std::stringstream bad(s);
  EXPECT_THROW(read_checkpoint(bad), DataError);
}

TEST(Checkpoint, MissingFileIsDataError) {
  EXPECT_THROW(load_checkpoint("/nonexistent/dir/x.ckpt"), DataError);
}

}  // namespace
}  // namespace tilevit
