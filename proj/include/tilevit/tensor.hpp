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

// Dense height x width x channels grids. One type carries images (3
// channels), token maps, feature maps and per-class similarity maps.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "tilevit/errors.hpp"

namespace tilevit {

class FeatureGrid {
 public:
  FeatureGrid() = default;

  FeatureGrid(std::size_t height, std::size_t width, std::size_t channels,
              double fill = 0.0)
      : height_(height),
        width_(width),
        channels_(channels),
        data_(checked_size(height, width, channels), fill) {}

  FeatureGrid(std::size_t height, std::size_t width, std::size_t channels,
              std::vector<double> data)
      : height_(height),
        width_(width),
        channels_(channels),
        data_(std::move(data)) {
    require(data_.size() == checked_size(height, width, channels),
            "FeatureGrid: data length " + std::to_string(data_.size()) +
                " does not match " + shape_string());
  }

  std::size_t height() const { return height_; }
  std::size_t width() const { return width_; }
  std::size_t channels() const { return channels_; }
  std::size_t cells() const { return height_ * width_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& at(std::size_t row, std::size_t col, std::size_t ch) {
    return data_[(row * width_ + col) * channels_ + ch];
  }
  double at(std::size_t row, std::size_t col, std::size_t ch) const {
    return data_[(row * width_ + col) * channels_ + ch];
  }

  std::span<double> cell(std::size_t row, std::size_t col) {
    return {data_.data() + (row * width_ + col) * channels_, channels_};
  }
  std::span<const double> cell(std::size_t row, std::size_t col) const {
    return {data_.data() + (row * width_ + col) * channels_, channels_};
  }

  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }
  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }

  bool same_shape(const FeatureGrid& o) const {
    return height_ == o.height_ && width_ == o.width_ &&
           channels_ == o.channels_;
  }

  std::string shape_string() const {
    return std::to_string(height_) + "x" + std::to_string(width_) + "x" +
           std::to_string(channels_);
  }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(),
                       [](double v) { return std::isfinite(v); });
  }

  friend bool operator==(const FeatureGrid&, const FeatureGrid&) = default;

 private:
  static std::size_t checked_size(std::size_t h, std::size_t w, std::size_t c) {
    require(h > 0 && w > 0 && c > 0,
            "FeatureGrid: dimensions must be positive, got " +
                std::to_string(h) + "x" + std::to_string(w) + "x" +
                std::to_string(c));
    return h * w * c;
  }

  std::size_t height_ = 0;
  std::size_t width_ = 0;
  std::size_t channels_ = 0;
  std::vector<double> data_;
};

namespace detail {

// Source taps for one output coordinate along one axis.
struct Tap {
  std::size_t lo;
  std::size_t hi;
  double frac;
};

// Half-pixel centres: src = (dst + 0.5) * scale - 0.5, clamped to the grid.
inline std::vector<Tap> half_pixel_taps(std::size_t src, std::size_t dst) {
  std::vector<Tap> taps(dst);
  const double scale = static_cast<double>(src) / static_cast<double>(dst);
  const double last = static_cast<double>(src - 1);
  for (std::size_t i = 0; i < dst; ++i) {
    double x = (static_cast<double>(i) + 0.5) * scale - 0.5;
    x = std::clamp(x, 0.0, last);
    const auto lo = static_cast<std::size_t>(x);
    const std::size_t hi = std::min(lo + 1, src - 1);
    taps[i] = {lo, hi, x - static_cast<double>(lo)};
  }
  return taps;
}

// a + f * (b - a) reproduces a exactly when a == b, so constants survive.
inline double lerp(double a, double b, double f) { return a + f * (b - a); }

}  // namespace detail

inline FeatureGrid bilinear_resize(const FeatureGrid& src, std::size_t out_h,
                                   std::size_t out_w) {
  require(!src.empty(), "bilinear_resize: empty source grid");
  require(out_h > 0 && out_w > 0,
          "bilinear_resize: target dimensions must be positive, got " +
              std::to_string(out_h) + "x" + std::to_string(out_w));
  if (out_h == src.height() && out_w == src.width()) return src;

  const auto ty = detail::half_pixel_taps(src.height(), out_h);
  const auto tx = detail::half_pixel_taps(src.width(), out_w);
  const std::size_t ch = src.channels();
  FeatureGrid out(out_h, out_w, ch);
  for (std::size_t r = 0; r < out_h; ++r) {
    const auto& y = ty[r];
    for (std::size_t c = 0; c < out_w; ++c) {
      const auto& x = tx[c];
      auto a = src.cell(y.lo, x.lo);
      auto b = src.cell(y.lo, x.hi);
      auto d = src.cell(y.hi, x.lo);
      auto e = src.cell(y.hi, x.hi);
      auto o = out.cell(r, c);
      for (std::size_t k = 0; k < ch; ++k) {
        const double top = detail::lerp(a[k], b[k], x.frac);
        const double bottom = detail::lerp(d[k], e[k], x.frac);
        o[k] = detail::lerp(top, bottom, y.frac);
      }
    }
  }
  return out;
}

// Transpose of bilinear_resize(., grad.height(), grad.width()) applied to
// `grad`; maps a gradient on the resized grid back onto a src_h x src_w grid.
inline FeatureGrid bilinear_resize_adjoint(const FeatureGrid& grad,
                                           std::size_t src_h,
                                           std::size_t src_w) {
  require(src_h > 0 && src_w > 0, "bilinear_resize_adjoint: bad source dims");
  if (src_h == grad.height() && src_w == grad.width()) return grad;

  const auto ty = detail::half_pixel_taps(src_h, grad.height());
  const auto tx = detail::half_pixel_taps(src_w, grad.width());
  const std::size_t ch = grad.channels();
  FeatureGrid out(src_h, src_w, ch);
  for (std::size_t r = 0; r < grad.height(); ++r) {
    const auto& y = ty[r];
    for (std::size_t c = 0; c < grad.width(); ++c) {
      const auto& x = tx[c];
      const double w00 = (1.0 - y.frac) * (1.0 - x.frac);
      const double w01 = (1.0 - y.frac) * x.frac;
      const double w10 = y.frac * (1.0 - x.frac);
      const double w11 = y.frac * x.frac;
      auto g = grad.cell(r, c);
      for (std::size_t k = 0; k < ch; ++k) {
        out.at(y.lo, x.lo, k) += w00 * g[k];
        out.at(y.lo, x.hi, k) += w01 * g[k];
        out.at(y.hi, x.lo, k) += w10 * g[k];
        out.at(y.hi, x.hi, k) += w11 * g[k];
      }
    }
  }
  return out;
}

// Each cell is replicated into a factor x factor block.
inline FeatureGrid replicate_upsample(const FeatureGrid& src,
                                      std::size_t factor) {
  require(factor > 0, "replicate_upsample: factor must be positive");
  if (factor == 1) return src;
  FeatureGrid out(src.height() * factor, src.width() * factor, src.channels());
  for (std::size_t r = 0; r < out.height(); ++r) {
    for (std::size_t c = 0; c < out.width(); ++c) {
      auto s = src.cell(r / factor, c / factor);
      std::copy(s.begin(), s.end(), out.cell(r, c).begin());
    }
  }
  return out;
}

// Vectors with norm below epsilon are returned unchanged.
inline FeatureGrid l2_normalize_channels(const FeatureGrid& src,
                                         double epsilon = 1e-12) {
  require(epsilon > 0.0, "l2_normalize_channels: epsilon must be positive");
  FeatureGrid out = src;
  for (std::size_t r = 0; r < out.height(); ++r) {
    for (std::size_t c = 0; c < out.width(); ++c) {
      auto v = out.cell(r, c);
      double sq = 0.0;
      for (double x : v) sq += x * x;
      const double norm = std::sqrt(sq);
      if (norm < epsilon) continue;
      for (double& x : v) x /= norm;
    }
  }
  return out;
}

inline double mse(const FeatureGrid& a, const FeatureGrid& b) {
  require(a.same_shape(b), "mse: shape mismatch " + a.shape_string() +
                               " vs " + b.shape_string());
  require(!a.empty(), "mse: empty grids");
  double sum = 0.0;
  const auto av = a.values();
  const auto bv = b.values();
  for (std::size_t i = 0; i < av.size(); ++i) {
    const double d = av[i] - bv[i];
    sum += d * d;
  }
  return sum / static_cast<double>(av.size());
}

// d mse(prediction, target) / d prediction = 2 (prediction - target) / numel.
inline FeatureGrid mse_gradient(const FeatureGrid& prediction,
                                const FeatureGrid& target) {
  require(prediction.same_shape(target),
          "mse_gradient: shape mismatch " + prediction.shape_string() +
              " vs " + target.shape_string());
  FeatureGrid g = prediction;
  const double scale = 2.0 / static_cast<double>(g.size());
  auto gv = g.values();
  const auto tv = target.values();
  for (std::size_t i = 0; i < gv.size(); ++i) gv[i] = scale * (gv[i] - tv[i]);
  return g;
}

inline FeatureGrid crop(const FeatureGrid& src, std::size_t row,
                        std::size_t col, std::size_t height,
                        std::size_t width) {
  require(row + height <= src.height() && col + width <= src.width(),
          "crop: region exceeds source " + src.shape_string());
  FeatureGrid out(height, width, src.channels());
  const std::size_t span = width * src.channels();
  for (std::size_t r = 0; r < height; ++r) {
    const double* from = src.cell(row + r, col).data();
    std::copy(from, from + span, out.cell(r, 0).data());
  }
  return out;
}

inline FeatureGrid flip_horizontal(const FeatureGrid& src) {
  FeatureGrid out(src.height(), src.width(), src.channels());
  for (std::size_t r = 0; r < src.height(); ++r) {
    for (std::size_t c = 0; c < src.width(); ++c) {
      auto s = src.cell(r, src.width() - 1 - c);
      std::copy(s.begin(), s.end(), out.cell(r, c).begin());
    }
  }
  return out;
}

inline double max_abs_diff(const FeatureGrid& a, const FeatureGrid& b) {
  require(a.same_shape(b), "max_abs_diff: shape mismatch");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    m = std::max(m, std::abs(a.values()[i] - b.values()[i]));
  return m;
}

}  // namespace tilevit
