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

#include "tilevit/vit.hpp"

#include <gtest/gtest.h>

#include <random>
#include <set>

#include "oracles.hpp"

namespace tilevit {
namespace {

ViTConfig toy_config(std::size_t blocks = 1, bool identity = false) {
  ViTConfig cfg;
  cfg.patch_size = 16;
  cfg.native_side = 32;
  cfg.channels = 4;
  cfg.num_heads = 2;
  cfg.num_blocks = blocks;
  cfg.mlp_ratio = 2.0;
  cfg.last_attention_identity = identity;
  return cfg;
}

// Init weights are tiny; widen every tensor so gradients are well scaled.
ModelParams spread_params(const ViTConfig& cfg, std::uint64_t seed) {
  ModelParams p = init_params(cfg, seed);
  std::mt19937_64 rng(seed + 1);
  std::normal_distribution<double> n(0.0, 0.3);
  for_each_param(p, [&](const std::string& name, Param& t) {
    for (double& v : t.value) v = (name.ends_with("gamma") ? 1.0 : 0.0) + n(rng);
  });
  return p;
}

TEST(ViTConfig, ValidatesDivisibility) {
  ViTConfig cfg = toy_config();
  cfg.native_side = 40;
  EXPECT_THROW(cfg.validate(), InvalidArgument);
  cfg = toy_config();
  cfg.num_heads = 3;
  EXPECT_THROW(cfg.validate(), InvalidArgument);
  EXPECT_NO_THROW(toy_config().validate());
}

TEST(InitParams, DeterministicPerSeed) {
  const ViTConfig cfg = toy_config(2);
  const ModelParams a = init_params(cfg, 7), b = init_params(cfg, 7),
                    c = init_params(cfg, 8);
  EXPECT_EQ(a.patch_weight.value, b.patch_weight.value);
  EXPECT_EQ(a.blocks[1].fc2_weight.value, b.blocks[1].fc2_weight.value);
  EXPECT_NE(a.patch_weight.value, c.patch_weight.value);
  EXPECT_EQ(a.blocks[0].norm1_gamma.value, std::vector<double>(4, 1.0));
  EXPECT_EQ(a.blocks[0].qkv_bias.value, std::vector<double>(12, 0.0));
}

TEST(InitParams, CanonicalNamesAreUniqueAndOrdered) {
  ModelParams p = init_params(toy_config(2), 0);
  std::vector<std::string> names;
  for_each_param(p, [&](const std::string& n, Param&) { names.push_back(n); });
  ASSERT_EQ(names.size(), 3u + 2 * 12);
  EXPECT_EQ(names[0], "patch_projection.weight");
  EXPECT_EQ(names[2], "pos_encodings");
  EXPECT_EQ(names[3], "blocks.0.norm1.gamma");
  EXPECT_EQ(names.back(), "blocks.1.mlp.fc2.bias");
  EXPECT_EQ(std::set<std::string>(names.begin(), names.end()).size(), names.size());
}

TEST(Forward, OutputShapeFollowsImage) {
  const ViTConfig cfg = toy_config();
  const ModelParams p = init_params(cfg, 1);
  for (auto [h, w] : {std::pair<std::size_t, std::size_t>{32, 32}, {48, 64}, {16, 80}}) {
    const FeatureGrid y = encode(oracle::random_grid(h, w, 3, h * w, 0, 1), p, cfg);
    EXPECT_EQ(y.height(), h / 16);
    EXPECT_EQ(y.width(), w / 16);
    EXPECT_EQ(y.channels(), 4u);
    EXPECT_TRUE(y.all_finite());
  }
}

TEST(Forward, RejectsIndivisibleImageNamingTheAxis) {
  const ViTConfig cfg = toy_config();
  const ModelParams p = init_params(cfg, 1);
  try {
    encode(FeatureGrid(40, 32, 3), p, cfg);
    FAIL() << "expected InvalidArgument";
  } catch (const InvalidArgument& e) {
    EXPECT_NE(std::string(e.what()).find("height 40"), std::string::npos);
  }
  try {
    encode(FeatureGrid(32, 33, 3), p, cfg);
    FAIL() << "expected InvalidArgument";
  } catch (const InvalidArgument& e) {
    EXPECT_NE(std::string(e.what()).find("width 33"), std::string::npos);
  }
}

TEST(Forward, WindowAndSinglePassAgreeAtNativeSide) {
  const ViTConfig cfg = toy_config(2);
  const ModelParams p = spread_params(cfg, 3);
  const FeatureGrid img = oracle::random_grid(32, 32, 3, 4, 0, 1);
  EXPECT_EQ(forward_window(img, p, cfg), encode(img, p, cfg));
  EXPECT_EQ(forward(img, p, cfg).features, encode(img, p, cfg));
  EXPECT_THROW(forward_window(oracle::random_grid(48, 32, 3, 4), p, cfg),
               InvalidArgument);
}

TEST(Forward, AttentionRowsSumToOne) {
  const ViTConfig cfg = toy_config(2);
  ModelParams p = spread_params(cfg, 5);
  set_all_trainable(p, true);
  const ForwardResult r = forward(oracle::random_grid(48, 64, 3, 6, 0, 1), p, cfg);
  ASSERT_EQ(r.cache.blocks.size(), 2u);
  for (const auto& bc : r.cache.blocks)
    for (std::size_t h = 0; h < cfg.num_heads; ++h) {
      const Matrix a = bc.attention_probabilities(h);
      ASSERT_EQ(a.rows(), 12);
      for (Eigen::Index i = 0; i < a.rows(); ++i) {
        EXPECT_NEAR(a.row(i).sum(), 1.0, 1e-12);
        EXPECT_GE(a.row(i).minCoeff(), 0.0);
      }
    }
}

TEST(Forward, LastBlockIdentityAttention) {
  const ViTConfig cfg = toy_config(2, true);
  ModelParams p = spread_params(cfg, 9);
  set_all_trainable(p, true);
  const ForwardResult r = forward(oracle::random_grid(32, 32, 3, 10, 0, 1), p, cfg);
  const Matrix a = r.cache.blocks.back().attention_probabilities(0);
  EXPECT_TRUE(a.isApprox(Matrix::Identity(4, 4)));
  EXPECT_FALSE(r.cache.blocks.front().attention_probabilities(0).isApprox(
      Matrix::Identity(4, 4), 1e-3));
}

TEST(Forward, IdentityAttentionKeepsTokensIndependent) {
  // With a single identity-attention block, each output token only sees its
  // own patch: perturbing one patch must leave every other token unchanged.
  const ViTConfig cfg = toy_config(1, true);
  const ModelParams p = spread_params(cfg, 11);
  FeatureGrid img = oracle::random_grid(32, 32, 3, 12, 0, 1);
  const FeatureGrid before = encode(img, p, cfg);
  for (std::size_t y = 0; y < 16; ++y)
    for (std::size_t x = 16; x < 32; ++x) img.at(y, x, 1) += 0.5;
  const FeatureGrid after = encode(img, p, cfg);
  for (std::size_t c = 0; c < 4; ++c) {
    EXPECT_EQ(after.at(0, 0, c), before.at(0, 0, c));
    EXPECT_EQ(after.at(1, 1, c), before.at(1, 1, c));
  }
  EXPECT_GT(std::abs(after.at(0, 1, 0) - before.at(0, 1, 0)), 0.0);
}

TEST(PosEncodings, InterpolationMatchesScalarOracle) {
  ViTConfig cfg = toy_config();
  const ModelParams p = spread_params(cfg, 13);
  const FeatureGrid pe = pos_encoding_grid(p);
  ASSERT_EQ(pe.height(), 2u);
  EXPECT_LE(max_abs_diff(interpolate_pos_encodings(pe, 3, 3), oracle::bilinear(pe, 3, 3)),
            1e-12);
  EXPECT_EQ(interpolate_pos_encodings(pe, 2, 2), pe);
}

TEST(Backward, ZeroAndScaledUpstreamGradient) {
  const ViTConfig cfg = toy_config(2);
  ModelParams p = spread_params(cfg, 15);
  set_all_trainable(p, true);
  const ForwardResult r = forward(oracle::random_grid(48, 32, 3, 16, 0, 1), p, cfg);
  const FeatureGrid g = oracle::random_grid(3, 2, 4, 17);
  FeatureGrid g2 = g;
  for (double& v : g2.values()) v *= 2;
  const ParamGrads zero = backward_tail(r.cache, FeatureGrid(3, 2, 4), p, cfg);
  const ParamGrads one = backward_tail(r.cache, g, p, cfg);
  const ParamGrads two = backward_tail(r.cache, g2, p, cfg);
  ASSERT_EQ(one.size(), 27u);
  for (const auto& [name, v] : one) {
    for (double z : zero.at(name)) EXPECT_EQ(z, 0.0) << name;
    for (std::size_t i = 0; i < v.size(); ++i)
      EXPECT_NEAR(two.at(name)[i], 2 * v[i], 1e-12 * (1 + std::abs(v[i]))) << name;
  }
}

TEST(Backward, OnlyTrainableTensorsGetGradients) {
  const ViTConfig cfg = toy_config(3);
  ModelParams p = spread_params(cfg, 19);
  p.blocks[2].fc1_weight.trainable = true;
  p.blocks[1].qkv_bias.trainable = true;
  const ForwardResult r = forward(oracle::random_grid(32, 32, 3, 20, 0, 1), p, cfg);
  EXPECT_EQ(r.cache.first_block, 1u);
  EXPECT_EQ(r.cache.blocks.size(), 2u);
  const ParamGrads g = backward_tail(r.cache, oracle::random_grid(2, 2, 4, 21), p, cfg);
  ASSERT_EQ(g.size(), 2u);
  EXPECT_TRUE(g.count("blocks.2.mlp.fc1.weight"));
  EXPECT_TRUE(g.count("blocks.1.attn.qkv.bias"));
}

TEST(Backward, RejectsMismatchedCache) {
  const ViTConfig cfg = toy_config(2);
  ModelParams p = spread_params(cfg, 23);
  p.blocks[1].fc1_bias.trainable = true;
  const ForwardResult r = forward(oracle::random_grid(32, 32, 3, 24, 0, 1), p, cfg);
  EXPECT_THROW(backward_tail(r.cache, FeatureGrid(3, 2, 4), p, cfg), InvalidArgument);
  p.blocks[0].fc1_bias.trainable = true;
  EXPECT_THROW(backward_tail(r.cache, FeatureGrid(2, 2, 4), p, cfg), InvalidArgument);
}

// Gradient of sum(w * f(x)) against central differences for every element
// of every tensor.
void check_all_gradients(const ViTConfig& cfg, std::size_t h, std::size_t w,
                         std::uint64_t seed) {
  ModelParams p = spread_params(cfg, seed);
  set_all_trainable(p, true);
  const FeatureGrid img = oracle::random_grid(h, w, 3, seed + 2, 0, 1);
  const FeatureGrid weights =
      oracle::random_grid(h / cfg.patch_size, w / cfg.patch_size, cfg.channels, seed + 3);
  const ForwardResult r = forward(img, p, cfg);
  const ParamGrads g = backward_tail(r.cache, weights, p, cfg);
  std::size_t checked = 0;
  for_each_param(p, [&](const std::string& name, Param& t) {
    const auto& gv = g.at(name);
    ASSERT_EQ(gv.size(), t.size()) << name;
    // Patch weights are large; probe a stride through them.
    const std::size_t step = t.size() > 200 ? 37 : 1;
    for (std::size_t i = 0; i < t.size(); i += step) {
      const double fd = oracle::central_difference(
          [&] { return oracle::weighted_output(img, p, cfg, weights); }, t.value[i], 1e-5);
      EXPECT_LE(oracle::relative_error(gv[i], fd), 1e-4)
          << name << "[" << i << "] analytic=" << gv[i] << " fd=" << fd;
      ++checked;
    }
  });
  EXPECT_GT(checked, 100u);
}

TEST(Backward, MatchesFiniteDifferencesAtNativeSide) {
  check_all_gradients(toy_config(1), 32, 32, 31);
}

TEST(Backward, MatchesFiniteDifferencesWithInterpolatedPositions) {
  check_all_gradients(toy_config(2), 48, 64, 41);
}

TEST(Backward, MatchesFiniteDifferencesWithIdentityLastBlock) {
  check_all_gradients(toy_config(2, true), 48, 32, 51);
}

}  // namespace
}  // namespace tilevit
