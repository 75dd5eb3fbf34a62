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

// End-to-end segmentation of one image in either inference mode.

#pragma once

#include <algorithm>
#include <cstddef>
#include <vector>

#include "tilevit/bench.hpp"
#include "tilevit/distill.hpp"
#include "tilevit/parallel.hpp"
#include "tilevit/segment.hpp"
#include "tilevit/tensor.hpp"
#include "tilevit/vit.hpp"
#include "tilevit/window.hpp"

namespace tilevit {

// Resizes so both sides are multiples of the patch size (rounded down).
inline FeatureGrid fit_to_patches(const FeatureGrid& image, std::size_t patch) {
  auto fit = [&](std::size_t v) { return std::max(patch, v - v % patch); };
  return bilinear_resize(image, fit(image.height()), fit(image.width()));
}

// h x w x C similarities from one forward over the whole image.
inline FeatureGrid single_pass_similarities(const FeatureGrid& image,
                                            const ModelParams& params,
                                            const ViTConfig& cfg,
                                            const ClassEmbeddings& classes) {
  return class_similarities(
      encode(fit_to_patches(image, cfg.patch_size), params, cfg), classes);
}

// Pixel-level similarities, averaged over overlapping K x K windows. The
// result has the size of the (possibly up-scaled) image that was tiled.
inline FeatureGrid sliding_window_similarities(const FeatureGrid& image,
                                               const ModelParams& params,
                                               const ViTConfig& cfg,
                                               const ClassEmbeddings& classes,
                                               std::size_t stride,
                                               std::size_t threads = 1) {
  const std::size_t k = cfg.native_side;
  const FeatureGrid x = ensure_min_side(image, k, cfg.patch_size);
  const WindowPlan plan = plan_windows(x.height(), x.width(), k, stride, cfg.patch_size);
  const auto crops = extract_windows(x, plan);
  std::vector<FeatureGrid> sims(crops.size());
  parallel_for(crops.size(), threads, [&](std::size_t i) {
    sims[i] = bilinear_resize(
        class_similarities(forward_window(crops[i], params, cfg), classes), k, k);
  });
  return stitch_predictions(sims, plan);
}

inline SegMask segment_image(const FeatureGrid& image, const ModelParams& params,
                             const ViTConfig& cfg, const ClassEmbeddings& classes,
                             InferenceMode mode, std::size_t stride,
                             std::size_t threads = 1) {
  const FeatureGrid y =
      mode == InferenceMode::single_pass
          ? single_pass_similarities(image, params, cfg, classes)
          : sliding_window_similarities(image, params, cfg, classes, stride, threads);
  return predict_mask(y, image.height(), image.width());
}

}  // namespace tilevit
