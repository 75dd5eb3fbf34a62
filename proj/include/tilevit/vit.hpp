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

// Micro vision transformer: patch embedding, learned k x k positional
// encodings resampled to any token grid, pre-norm blocks (multi-head
// attention, GELU MLP), no class token. The backward pass covers only the
// tensors flagged trainable and the blocks downstream of the first of them.

#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "tilevit/errors.hpp"
#include "tilevit/tensor.hpp"

namespace tilevit {

struct ViTConfig {
  std::size_t patch_size = 16;
  std::size_t native_side = 32;
  std::size_t channels = 8;
  std::size_t num_blocks = 1;
  std::size_t num_heads = 2;
  double mlp_ratio = 4.0;
  bool last_attention_identity = false;

  std::size_t grid_side() const { return native_side / patch_size; }
  std::size_t head_dim() const { return channels / num_heads; }
  std::size_t hidden() const {
    return static_cast<std::size_t>(
        std::llround(mlp_ratio * static_cast<double>(channels)));
  }
  std::size_t patch_dim() const { return 3 * patch_size * patch_size; }

  void validate() const {
    require(patch_size > 0, "ViTConfig: patch_size must be positive");
    require(native_side > 0 && native_side % patch_size == 0,
            "ViTConfig: native_side " + std::to_string(native_side) +
                " must be a positive multiple of patch_size " +
                std::to_string(patch_size));
    require(channels > 0 && num_heads > 0 && channels % num_heads == 0,
            "ViTConfig: channels " + std::to_string(channels) +
                " must be divisible by num_heads " + std::to_string(num_heads));
    require(num_blocks > 0, "ViTConfig: num_blocks must be positive");
    require(mlp_ratio > 0.0 && hidden() > 0,
            "ViTConfig: mlp_ratio must give a positive hidden width");
  }

  friend bool operator==(const ViTConfig&, const ViTConfig&) = default;
};

struct Param {
  std::vector<std::size_t> shape;
  std::vector<double> value;
  bool trainable = false;

  Param() = default;
  explicit Param(std::vector<std::size_t> dims, double fill = 0.0)
      : shape(std::move(dims)) {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    value.assign(n, fill);
  }
  std::size_t size() const { return value.size(); }
};

struct BlockParams {
  Param norm1_gamma, norm1_beta;
  Param qkv_weight, qkv_bias;
  Param proj_weight, proj_bias;
  Param norm2_gamma, norm2_beta;
  Param fc1_weight, fc1_bias;
  Param fc2_weight, fc2_bias;
};

struct ModelParams {
  Param patch_weight;  // (3 P P) x d, input rows ordered [py][px][rgb]
  Param patch_bias;
  Param pos_encodings;  // k x k x d
  std::vector<BlockParams> blocks;
};

// Canonical tensor order and names; checkpoints and optimizer state rely on
// this order.
template <class Block, class Fn>
void for_each_block_param(Block& b, const std::string& prefix, Fn&& fn) {
  fn(prefix + "norm1.gamma", b.norm1_gamma);
  fn(prefix + "norm1.beta", b.norm1_beta);
  fn(prefix + "attn.qkv.weight", b.qkv_weight);
  fn(prefix + "attn.qkv.bias", b.qkv_bias);
  fn(prefix + "attn.proj.weight", b.proj_weight);
  fn(prefix + "attn.proj.bias", b.proj_bias);
  fn(prefix + "norm2.gamma", b.norm2_gamma);
  fn(prefix + "norm2.beta", b.norm2_beta);
  fn(prefix + "mlp.fc1.weight", b.fc1_weight);
  fn(prefix + "mlp.fc1.bias", b.fc1_bias);
  fn(prefix + "mlp.fc2.weight", b.fc2_weight);
  fn(prefix + "mlp.fc2.bias", b.fc2_bias);
}

template <class Params, class Fn>
void for_each_param(Params& p, Fn&& fn) {
  fn(std::string("patch_projection.weight"), p.patch_weight);
  fn(std::string("patch_projection.bias"), p.patch_bias);
  fn(std::string("pos_encodings"), p.pos_encodings);
  for (std::size_t i = 0; i < p.blocks.size(); ++i)
    for_each_block_param(p.blocks[i], "blocks." + std::to_string(i) + ".", fn);
}

inline void set_all_trainable(ModelParams& p, bool trainable) {
  for_each_param(p, [&](const std::string&, Param& t) { t.trainable = trainable; });
}

inline bool block_has_trainable(const BlockParams& b) {
  bool any = false;
  for_each_block_param(b, "", [&](const std::string&, const Param& t) {
    any = any || t.trainable;
  });
  return any;
}

// First block whose activations the backward pass needs; num_blocks when
// nothing is trainable.
inline std::size_t first_backprop_block(const ModelParams& p) {
  if (p.patch_weight.trainable || p.patch_bias.trainable ||
      p.pos_encodings.trainable)
    return 0;
  for (std::size_t i = 0; i < p.blocks.size(); ++i)
    if (block_has_trainable(p.blocks[i])) return i;
  return p.blocks.size();
}

// Weights ~ N(0, 0.02), layer-norm gamma = 1, beta = 0, biases 0.
inline ModelParams init_params(const ViTConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  const std::size_t d = cfg.channels;
  const std::size_t k = cfg.grid_side();
  const std::size_t hid = cfg.hidden();

  ModelParams p;
  p.patch_weight = Param({cfg.patch_dim(), d});
  p.patch_bias = Param({d});
  p.pos_encodings = Param({k, k, d});
  p.blocks.resize(cfg.num_blocks);
  for (auto& b : p.blocks) {
    b.norm1_gamma = Param({d}, 1.0);
    b.norm1_beta = Param({d});
    b.qkv_weight = Param({d, 3 * d});
    b.qkv_bias = Param({3 * d});
    b.proj_weight = Param({d, d});
    b.proj_bias = Param({d});
    b.norm2_gamma = Param({d}, 1.0);
    b.norm2_beta = Param({d});
    b.fc1_weight = Param({d, hid});
    b.fc1_bias = Param({hid});
    b.fc2_weight = Param({hid, d});
    b.fc2_bias = Param({d});
  }

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 0.02);
  for_each_param(p, [&](const std::string& name, Param& t) {
    const bool random = name.ends_with(".weight") || name == "pos_encodings";
    if (!random) return;
    for (double& v : t.value) v = normal(rng);
  });
  return p;
}

inline FeatureGrid pos_encoding_grid(const ModelParams& p) {
  const auto& s = p.pos_encodings.shape;
  require(s.size() == 3, "pos_encodings must be rank 3");
  return FeatureGrid(s[0], s[1], s[2], p.pos_encodings.value);
}

inline FeatureGrid interpolate_pos_encodings(const FeatureGrid& pe,
                                             std::size_t h, std::size_t w) {
  return bilinear_resize(pe, h, w);
}

using Matrix =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVector = Eigen::Matrix<double, 1, Eigen::Dynamic>;
using ColVector = Eigen::VectorXd;

namespace detail {

using ConstMatrixMap = Eigen::Map<const Matrix>;
using ConstRowMap = Eigen::Map<const RowVector>;

inline ConstMatrixMap as_matrix(const Param& p) {
  return {p.value.data(), static_cast<Eigen::Index>(p.shape[0]),
          static_cast<Eigen::Index>(p.shape[1])};
}
inline ConstRowMap as_row(const Param& p) {
  return {p.value.data(), static_cast<Eigen::Index>(p.value.size())};
}

constexpr double kLayerNormEps = 1e-6;

inline double gelu(double x) {
  return 0.5 * x * (1.0 + std::erf(x * M_SQRT1_2));
}
inline double gelu_grad(double x) {
  const double cdf = 0.5 * (1.0 + std::erf(x * M_SQRT1_2));
  const double pdf = std::exp(-0.5 * x * x) * 0.5 * M_2_SQRTPI * M_SQRT1_2;
  return cdf + x * pdf;
}

// Row-wise normalisation; writes the normalised rows and 1/std per row.
inline void layer_norm(const Matrix& x, Matrix& xhat, ColVector& rstd) {
  const auto n = x.rows();
  const auto d = static_cast<double>(x.cols());
  xhat.resize(n, x.cols());
  rstd.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double mean = x.row(i).sum() / d;
    const double var = (x.row(i).array() - mean).square().sum() / d;
    rstd(i) = 1.0 / std::sqrt(var + kLayerNormEps);
    xhat.row(i) = (x.row(i).array() - mean) * rstd(i);
  }
}

inline Matrix affine_rows(const Matrix& xhat, const Param& gamma,
                          const Param& beta) {
  return (xhat.array().rowwise() * as_row(gamma).array()).rowwise() +
         as_row(beta).array();
}

inline Matrix layer_norm_backward(const Matrix& dy, const Matrix& xhat,
                                  const ColVector& rstd, const Param& gamma) {
  const Matrix dxhat = dy.array().rowwise() * as_row(gamma).array();
  const double d = static_cast<double>(dy.cols());
  Matrix dx(dy.rows(), dy.cols());
  for (Eigen::Index i = 0; i < dy.rows(); ++i) {
    const double mean_g = dxhat.row(i).sum() / d;
    const double mean_gx = dxhat.row(i).dot(xhat.row(i)) / d;
    dx.row(i) = rstd(i) * (dxhat.row(i).array() - mean_g -
                           xhat.row(i).array() * mean_gx);
  }
  return dx;
}

}  // namespace detail

// Activations saved for one block during a caching forward pass.
struct BlockCache {
  Matrix input;
  Matrix norm1_hat, norm1_out;
  ColVector norm1_rstd;
  Matrix qkv;
  bool identity_attention = false;
  std::vector<Matrix> attention;  // per head, n x n; empty in identity mode
  Matrix attn_concat;
  Matrix residual1;
  Matrix norm2_hat, norm2_out;
  ColVector norm2_rstd;
  Matrix hidden_pre, hidden_act;

  // Attention probabilities actually applied by this block.
  Matrix attention_probabilities(std::size_t head) const {
    if (identity_attention)
      return Matrix::Identity(input.rows(), input.rows());
    return attention.at(head);
  }
};

struct ForwardCache {
  std::size_t grid_h = 0;
  std::size_t grid_w = 0;
  std::size_t first_block = 0;
  std::size_t num_blocks = 0;
  Matrix patches;  // only when the patch projection is trainable
  std::vector<BlockCache> blocks;  // blocks [first_block, num_blocks)

  // Token grid entering the first cached block.
  const Matrix& first_input() const { return blocks.front().input; }
};

struct ForwardResult {
  FeatureGrid features;
  ForwardCache cache;
};

using ParamGrads = std::map<std::string, std::vector<double>>;

namespace detail {

inline Matrix patchify(const FeatureGrid& image, std::size_t p) {
  const std::size_t h = image.height() / p;
  const std::size_t w = image.width() / p;
  Matrix out(static_cast<Eigen::Index>(h * w),
             static_cast<Eigen::Index>(3 * p * p));
  for (std::size_t pr = 0; pr < h; ++pr) {
    for (std::size_t pc = 0; pc < w; ++pc) {
      double* row = out.row(static_cast<Eigen::Index>(pr * w + pc)).data();
      for (std::size_t py = 0; py < p; ++py) {
        const double* src = image.cell(pr * p + py, pc * p).data();
        std::copy(src, src + 3 * p, row + py * 3 * p);
      }
    }
  }
  return out;
}

inline void run_block(const BlockParams& bp, const ViTConfig& cfg,
                      bool identity, Matrix& x, BlockCache* cache) {
  const auto n = x.rows();
  const auto d = static_cast<Eigen::Index>(cfg.channels);
  const auto hd = static_cast<Eigen::Index>(cfg.head_dim());
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));

  Matrix xhat1;
  ColVector rstd1;
  layer_norm(x, xhat1, rstd1);
  Matrix x1 = affine_rows(xhat1, bp.norm1_gamma, bp.norm1_beta);
  Matrix qkv = x1 * as_matrix(bp.qkv_weight);
  qkv.rowwise() += as_row(bp.qkv_bias);

  Matrix concat(n, d);
  std::vector<Matrix> probs;
  if (identity) {
    concat = qkv.middleCols(2 * d, d);
  } else {
    probs.reserve(cfg.num_heads);
    for (Eigen::Index h = 0; h < static_cast<Eigen::Index>(cfg.num_heads);
         ++h) {
      const auto q = qkv.middleCols(h * hd, hd);
      const auto k = qkv.middleCols(d + h * hd, hd);
      const auto v = qkv.middleCols(2 * d + h * hd, hd);
      Matrix a = (q * k.transpose()) * scale;
      for (Eigen::Index i = 0; i < n; ++i) {
        const double m = a.row(i).maxCoeff();
        a.row(i) = (a.row(i).array() - m).exp();
        a.row(i) /= a.row(i).sum();
      }
      concat.middleCols(h * hd, hd).noalias() = a * v;
      if (cache) probs.push_back(std::move(a));
    }
  }
  Matrix attn = concat * as_matrix(bp.proj_weight);
  attn.rowwise() += as_row(bp.proj_bias);
  Matrix x2 = x + attn;

  Matrix xhat2;
  ColVector rstd2;
  layer_norm(x2, xhat2, rstd2);
  Matrix x3 = affine_rows(xhat2, bp.norm2_gamma, bp.norm2_beta);
  Matrix hpre = x3 * as_matrix(bp.fc1_weight);
  hpre.rowwise() += as_row(bp.fc1_bias);
  Matrix hact = hpre.unaryExpr([](double v) { return gelu(v); });
  Matrix y = hact * as_matrix(bp.fc2_weight);
  y.rowwise() += as_row(bp.fc2_bias);

  if (cache) {
    cache->input = x;
    cache->norm1_hat = std::move(xhat1);
    cache->norm1_out = std::move(x1);
    cache->norm1_rstd = std::move(rstd1);
    cache->qkv = std::move(qkv);
    cache->identity_attention = identity;
    cache->attention = std::move(probs);
    cache->attn_concat = std::move(concat);
    cache->residual1 = x2;
    cache->norm2_hat = std::move(xhat2);
    cache->norm2_out = std::move(x3);
    cache->norm2_rstd = std::move(rstd2);
    cache->hidden_pre = std::move(hpre);
    cache->hidden_act = std::move(hact);
  }
  x = x2 + y;
}

inline void check_params(const ModelParams& p, const ViTConfig& cfg) {
  require(p.blocks.size() == cfg.num_blocks,
          "params have " + std::to_string(p.blocks.size()) +
              " blocks, config expects " + std::to_string(cfg.num_blocks));
  require(p.patch_weight.shape ==
              std::vector<std::size_t>{cfg.patch_dim(), cfg.channels},
          "patch projection shape does not match config");
  require(p.pos_encodings.shape ==
              std::vector<std::size_t>{cfg.grid_side(), cfg.grid_side(),
                                       cfg.channels},
          "positional encoding grid does not match config");
}

inline FeatureGrid run_forward(const FeatureGrid& image, const ModelParams& p,
                               const ViTConfig& cfg, ForwardCache* cache) {
  cfg.validate();
  check_params(p, cfg);
  require(image.channels() == 3, "forward: image must have 3 channels, got " +
                                     std::to_string(image.channels()));
  const std::size_t ps = cfg.patch_size;
  require(image.height() % ps == 0,
          "forward: image height " + std::to_string(image.height()) +
              " is not divisible by patch size " + std::to_string(ps));
  require(image.width() % ps == 0,
          "forward: image width " + std::to_string(image.width()) +
              " is not divisible by patch size " + std::to_string(ps));
  const std::size_t h = image.height() / ps;
  const std::size_t w = image.width() / ps;
  const std::size_t k = cfg.grid_side();

  Matrix patches = patchify(image, ps);
  Matrix x = patches * as_matrix(p.patch_weight);
  x.rowwise() += as_row(p.patch_bias);
  if (h == k && w == k) {
    x += Eigen::Map<const Matrix>(p.pos_encodings.value.data(), x.rows(),
                                  x.cols());
  } else {
    const FeatureGrid pe = interpolate_pos_encodings(pos_encoding_grid(p), h, w);
    x += Eigen::Map<const Matrix>(pe.data(), x.rows(), x.cols());
  }

  const std::size_t first = cache ? first_backprop_block(p) : cfg.num_blocks;
  if (cache) {
    *cache = ForwardCache{};
    cache->grid_h = h;
    cache->grid_w = w;
    cache->first_block = first;
    cache->num_blocks = cfg.num_blocks;
    if (p.patch_weight.trainable) cache->patches = std::move(patches);
    cache->blocks.resize(cfg.num_blocks - first);
  }
  for (std::size_t b = 0; b < cfg.num_blocks; ++b) {
    const bool identity =
        cfg.last_attention_identity && b + 1 == cfg.num_blocks;
    BlockCache* bc = (cache && b >= first) ? &cache->blocks[b - first] : nullptr;
    run_block(p.blocks[b], cfg, identity, x, bc);
  }
  return FeatureGrid(h, w, cfg.channels,
                     std::vector<double>(x.data(), x.data() + x.size()));
}

}  // namespace detail

// Single pass at any patch-divisible resolution; caches activations for the
// trainable tail.
inline ForwardResult forward(const FeatureGrid& image, const ModelParams& p,
                             const ViTConfig& cfg) {
  ForwardResult r;
  r.features = detail::run_forward(image, p, cfg, &r.cache);
  return r;
}

// Inference-only forward: same arithmetic as forward(), no cache.
inline FeatureGrid encode(const FeatureGrid& image, const ModelParams& p,
                          const ViTConfig& cfg) {
  return detail::run_forward(image, p, cfg, nullptr);
}

inline FeatureGrid forward_window(const FeatureGrid& window,
                                  const ModelParams& p, const ViTConfig& cfg) {
  require(window.height() == cfg.native_side &&
              window.width() == cfg.native_side,
          "forward_window: window must be " + std::to_string(cfg.native_side) +
              "x" + std::to_string(cfg.native_side) + ", got " +
              window.shape_string());
  return detail::run_forward(window, p, cfg, nullptr);
}

inline ParamGrads backward_tail(const ForwardCache& cache,
                                const FeatureGrid& grad_output,
                                const ModelParams& p, const ViTConfig& cfg) {
  detail::check_params(p, cfg);
  const std::size_t first = first_backprop_block(p);
  if (cache.num_blocks != cfg.num_blocks || cache.first_block != first ||
      cache.blocks.size() != cfg.num_blocks - first)
    throw InvalidArgument(
        "backward_tail: cache was produced with a different model or "
        "trainable set");
  require(grad_output.height() == cache.grid_h &&
              grad_output.width() == cache.grid_w &&
              grad_output.channels() == cfg.channels,
          "backward_tail: grad_output " + grad_output.shape_string() +
              " does not match forward output " +
              std::to_string(cache.grid_h) + "x" +
              std::to_string(cache.grid_w) + "x" +
              std::to_string(cfg.channels));
  if (p.patch_weight.trainable && cache.patches.size() == 0)
    throw InvalidArgument("backward_tail: cache lacks patch inputs");

  using detail::as_matrix;
  const auto n = static_cast<Eigen::Index>(cache.grid_h * cache.grid_w);
  const auto d = static_cast<Eigen::Index>(cfg.channels);
  const auto hd = static_cast<Eigen::Index>(cfg.head_dim());
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));

  ParamGrads grads;
  auto put = [&](const std::string& name, const Param& t, const auto& g) {
    if (!t.trainable) return;
    Matrix m = g;  // row-major copy matches Param layout
    grads[name].assign(m.data(), m.data() + m.size());
  };

  Matrix dx = Eigen::Map<const Matrix>(grad_output.data(), n, d);
  for (std::size_t b = cfg.num_blocks; b-- > first;) {
    const BlockParams& bp = p.blocks[b];
    const BlockCache& c = cache.blocks[b - first];
    const std::string pre = "blocks." + std::to_string(b) + ".";

    // MLP branch.
    put(pre + "mlp.fc2.weight", bp.fc2_weight, c.hidden_act.transpose() * dx);
    put(pre + "mlp.fc2.bias", bp.fc2_bias, dx.colwise().sum());
    Matrix dh = dx * as_matrix(bp.fc2_weight).transpose();
    dh = dh.cwiseProduct(
        c.hidden_pre.unaryExpr([](double v) { return detail::gelu_grad(v); }));
    put(pre + "mlp.fc1.weight", bp.fc1_weight, c.norm2_out.transpose() * dh);
    put(pre + "mlp.fc1.bias", bp.fc1_bias, dh.colwise().sum());
    const Matrix dx3 = dh * as_matrix(bp.fc1_weight).transpose();
    put(pre + "norm2.gamma", bp.norm2_gamma,
        dx3.cwiseProduct(c.norm2_hat).colwise().sum());
    put(pre + "norm2.beta", bp.norm2_beta, dx3.colwise().sum());
    const Matrix dx2 =
        dx + detail::layer_norm_backward(dx3, c.norm2_hat, c.norm2_rstd,
                                         bp.norm2_gamma);

    // Attention branch.
    put(pre + "attn.proj.weight", bp.proj_weight,
        c.attn_concat.transpose() * dx2);
    put(pre + "attn.proj.bias", bp.proj_bias, dx2.colwise().sum());
    const Matrix d_concat = dx2 * as_matrix(bp.proj_weight).transpose();
    Matrix dqkv = Matrix::Zero(n, 3 * d);
    if (c.identity_attention) {
      dqkv.middleCols(2 * d, d) = d_concat;
    } else {
      for (Eigen::Index h = 0; h < static_cast<Eigen::Index>(cfg.num_heads);
           ++h) {
        const Matrix& a = c.attention[static_cast<std::size_t>(h)];
        const auto q = c.qkv.middleCols(h * hd, hd);
        const auto k = c.qkv.middleCols(d + h * hd, hd);
        const auto v = c.qkv.middleCols(2 * d + h * hd, hd);
        const auto d_out = d_concat.middleCols(h * hd, hd);
        const Matrix da = d_out * v.transpose();
        dqkv.middleCols(2 * d + h * hd, hd) = a.transpose() * d_out;
        const ColVector row_dot = da.cwiseProduct(a).rowwise().sum();
        Matrix ds = a.cwiseProduct(da.colwise() - row_dot) * scale;
        dqkv.middleCols(h * hd, hd) = ds * k;
        dqkv.middleCols(d + h * hd, hd) = ds.transpose() * q;
      }
    }
    put(pre + "attn.qkv.weight", bp.qkv_weight, c.norm1_out.transpose() * dqkv);
    put(pre + "attn.qkv.bias", bp.qkv_bias, dqkv.colwise().sum());
    const Matrix dx1 = dqkv * as_matrix(bp.qkv_weight).transpose();
    put(pre + "norm1.gamma", bp.norm1_gamma,
        dx1.cwiseProduct(c.norm1_hat).colwise().sum());
    put(pre + "norm1.beta", bp.norm1_beta, dx1.colwise().sum());
    dx = dx2 + detail::layer_norm_backward(dx1, c.norm1_hat, c.norm1_rstd,
                                           bp.norm1_gamma);
  }

  if (p.pos_encodings.trainable) {
    const FeatureGrid g(cache.grid_h, cache.grid_w, cfg.channels,
                        std::vector<double>(dx.data(), dx.data() + dx.size()));
    const std::size_t k = cfg.grid_side();
    const FeatureGrid gk = bilinear_resize_adjoint(g, k, k);
    grads["pos_encodings"].assign(gk.values().begin(), gk.values().end());
  }
  if (p.patch_weight.trainable)
    put("patch_projection.weight", p.patch_weight,
        cache.patches.transpose() * dx);
  put("patch_projection.bias", p.patch_bias, dx.colwise().sum());
  return grads;
}

}  // namespace tilevit
