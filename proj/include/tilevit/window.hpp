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

// Sliding-window plans and the two stitchers: feature-level (on the patch
// grid, refined by an upsample factor r when the stride is not a multiple of
// the patch size) and prediction-level (on the pixel grid).

#pragma once

#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "tilevit/errors.hpp"
#include "tilevit/tensor.hpp"

namespace tilevit {

struct WindowOrigin {
  std::size_t row = 0;
  std::size_t col = 0;
  friend bool operator==(const WindowOrigin&, const WindowOrigin&) = default;
};

struct WindowPlan {
  std::size_t image_h = 0;
  std::size_t image_w = 0;
  std::size_t window = 0;
  std::size_t stride = 0;
  std::size_t patch = 0;
  std::vector<std::size_t> row_origins;
  std::vector<std::size_t> col_origins;
  std::vector<WindowOrigin> origins;  // row-major
  std::size_t upsample = 1;           // r

  std::size_t count() const { return origins.size(); }
};

// Smallest r with P % r == 0 and s % (P / r) == 0. r = P always qualifies.
inline std::size_t min_upsample_factor(std::size_t stride, std::size_t patch) {
  require(stride >= 1 && patch >= 1,
          "min_upsample_factor: stride and patch must be positive");
  for (std::size_t r = 1; r <= patch; ++r)
    if (patch % r == 0 && stride % (patch / r) == 0) return r;
  return patch;
}

namespace detail {

inline std::vector<std::size_t> axis_origins(std::size_t dim, std::size_t window,
                                             std::size_t stride) {
  std::vector<std::size_t> o;
  for (std::size_t x = 0; x + window <= dim; x += stride) o.push_back(x);
  if (o.back() != dim - window) o.push_back(dim - window);
  return o;
}

}  // namespace detail

inline WindowPlan plan_windows(std::size_t image_h, std::size_t image_w,
                               std::size_t window, std::size_t stride,
                               std::size_t patch) {
  require(patch >= 1 && window >= 1 && window % patch == 0,
          "plan_windows: window " + std::to_string(window) +
              " must be a positive multiple of patch " + std::to_string(patch));
  require(stride >= 1, "plan_windows: stride must be at least 1");
  require(stride <= window, "plan_windows: stride " + std::to_string(stride) +
                                " exceeds window " + std::to_string(window) +
                                " and would leave gaps");
  require(image_h >= window && image_w >= window,
          "plan_windows: image " + std::to_string(image_h) + "x" +
              std::to_string(image_w) + " is smaller than the " +
              std::to_string(window) + "px window; resize it first");

  WindowPlan plan;
  plan.image_h = image_h;
  plan.image_w = image_w;
  plan.window = window;
  plan.stride = stride;
  plan.patch = patch;
  plan.row_origins = detail::axis_origins(image_h, window, stride);
  plan.col_origins = detail::axis_origins(image_w, window, stride);
  plan.origins.reserve(plan.row_origins.size() * plan.col_origins.size());
  for (auto r : plan.row_origins)
    for (auto c : plan.col_origins) plan.origins.push_back({r, c});
  plan.upsample = min_upsample_factor(stride, patch);
  return plan;
}

// How window feature maps are brought to the r-times finer grid.
//   replicate: each patch feature covers its r x r sub-patches; a down-sample
//              by r afterwards restores the window map exactly.
//   bilinear:  half-pixel bilinear up-sampling (smooths across patches).
enum class StitchUpsample { replicate, bilinear };

inline FeatureGrid stitch_features(
    const std::vector<FeatureGrid>& window_feats, const WindowPlan& plan,
    StitchUpsample mode = StitchUpsample::replicate) {
  require(window_feats.size() == plan.count(),
          "stitch_features: got " + std::to_string(window_feats.size()) +
              " window maps for a plan of " + std::to_string(plan.count()));
  require(!window_feats.empty(), "stitch_features: empty plan");
  const std::size_t p = plan.patch;
  const std::size_t r = plan.upsample;
  require(plan.image_h % p == 0 && plan.image_w % p == 0,
          "stitch_features: image dims must be multiples of the patch size");
  const std::size_t k = plan.window / p;
  const std::size_t d = window_feats.front().channels();
  const std::size_t fine_h = plan.image_h * r / p;
  const std::size_t fine_w = plan.image_w * r / p;
  const std::size_t fine_k = k * r;
  const std::size_t cell = p / r;  // pixels per fine cell

  FeatureGrid sum(fine_h, fine_w, d);
  std::vector<std::size_t> count(fine_h * fine_w, 0);
  for (std::size_t i = 0; i < plan.count(); ++i) {
    const FeatureGrid& wf = window_feats[i];
    require(wf.height() == k && wf.width() == k && wf.channels() == d,
            "stitch_features: window " + std::to_string(i) + " has shape " +
                wf.shape_string() + ", expected " + std::to_string(k) + "x" +
                std::to_string(k) + "x" + std::to_string(d));
    const auto& o = plan.origins[i];
    ensure(o.row % cell == 0 && o.col % cell == 0,
           "stitch_features: origin not aligned to the fine grid");
    const std::size_t fr = o.row / cell;
    const std::size_t fc = o.col / cell;
    const FeatureGrid up = r == 1 ? wf
                           : mode == StitchUpsample::replicate
                               ? replicate_upsample(wf, r)
                               : bilinear_resize(wf, fine_k, fine_k);
    for (std::size_t y = 0; y < fine_k; ++y) {
      for (std::size_t x = 0; x < fine_k; ++x) {
        auto dst = sum.cell(fr + y, fc + x);
        auto src = up.cell(y, x);
        for (std::size_t c = 0; c < d; ++c) dst[c] += src[c];
        ++count[(fr + y) * fine_w + fc + x];
      }
    }
  }
  for (std::size_t y = 0; y < fine_h; ++y) {
    for (std::size_t x = 0; x < fine_w; ++x) {
      const std::size_t n = count[y * fine_w + x];
      ensure(n > 0, "stitch_features: uncovered cell");
      const double inv = static_cast<double>(n);
      for (double& v : sum.cell(y, x)) v /= inv;
    }
  }
  if (r == 1) return sum;
  return bilinear_resize(sum, plan.image_h / p, plan.image_w / p);
}

// Number of windows covering each pixel.
inline std::vector<std::size_t> coverage_counts(const WindowPlan& plan) {
  std::vector<std::size_t> count(plan.image_h * plan.image_w, 0);
  for (const auto& o : plan.origins)
    for (std::size_t y = 0; y < plan.window; ++y)
      for (std::size_t x = 0; x < plan.window; ++x)
        ++count[(o.row + y) * plan.image_w + o.col + x];
  return count;
}

inline FeatureGrid stitch_predictions(
    const std::vector<FeatureGrid>& window_sims, const WindowPlan& plan) {
  require(window_sims.size() == plan.count(),
          "stitch_predictions: got " + std::to_string(window_sims.size()) +
              " window maps for a plan of " + std::to_string(plan.count()));
  require(!window_sims.empty(), "stitch_predictions: empty plan");
  const std::size_t kw = plan.window;
  const std::size_t c = window_sims.front().channels();
  FeatureGrid sum(plan.image_h, plan.image_w, c);
  std::vector<std::size_t> count(plan.image_h * plan.image_w, 0);
  for (std::size_t i = 0; i < plan.count(); ++i) {
    const FeatureGrid& ws = window_sims[i];
    require(ws.height() == kw && ws.width() == kw && ws.channels() == c,
            "stitch_predictions: window " + std::to_string(i) + " has shape " +
                ws.shape_string());
    const auto& o = plan.origins[i];
    for (std::size_t y = 0; y < kw; ++y) {
      for (std::size_t x = 0; x < kw; ++x) {
        auto dst = sum.cell(o.row + y, o.col + x);
        auto src = ws.cell(y, x);
        for (std::size_t j = 0; j < c; ++j) dst[j] += src[j];
        ++count[(o.row + y) * plan.image_w + o.col + x];
      }
    }
  }
  for (std::size_t y = 0; y < plan.image_h; ++y) {
    for (std::size_t x = 0; x < plan.image_w; ++x) {
      const std::size_t n = count[y * plan.image_w + x];
      ensure(n > 0, "stitch_predictions: uncovered pixel");
      for (double& v : sum.cell(y, x)) v /= static_cast<double>(n);
    }
  }
  return sum;
}

// Copies every planned K x K crop out of the image, in plan order.
inline std::vector<FeatureGrid> extract_windows(const FeatureGrid& image,
                                                const WindowPlan& plan) {
  require(image.height() == plan.image_h && image.width() == plan.image_w,
          "extract_windows: image does not match plan");
  std::vector<FeatureGrid> crops;
  crops.reserve(plan.count());
  for (const auto& o : plan.origins)
    crops.push_back(crop(image, o.row, o.col, plan.window, plan.window));
  return crops;
}

}  // namespace tilevit
