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

// Inference timing. Only encoder forward passes are inside the timed region;
// window planning, cropping and stitching are not. Each measurement follows
// `warmup` untimed passes; the default reports the single pass after them.

#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <iomanip>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "tilevit/errors.hpp"
#include "tilevit/parallel.hpp"
#include "tilevit/tensor.hpp"
#include "tilevit/vit.hpp"
#include "tilevit/window.hpp"

namespace tilevit {

enum class InferenceMode { single_pass, sliding_window };

inline const char* to_string(InferenceMode m) {
  return m == InferenceMode::single_pass ? "single_pass" : "sliding_window";
}

struct TimingRecord {
  InferenceMode mode = InferenceMode::single_pass;
  std::size_t height = 0, width = 0;
  std::size_t window = 0, stride = 0;
  std::size_t windows = 1;  // m
  std::size_t sub_batch = 0;
  std::size_t warmup = 0;
  std::size_t threads = 1;
  double seconds = 0.0;
};

struct BenchOptions {
  std::size_t warmup = 10;
  std::size_t sub_batch = 60;
  std::size_t threads = 1;  // parallel window forwards when > 1
  std::size_t trials = 1;   // > 1 reports the median
};

namespace detail {

using Clock = std::chrono::steady_clock;

inline double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

inline double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace detail

inline TimingRecord time_single_pass(const ModelParams& params,
                                     const ViTConfig& cfg,
                                     const FeatureGrid& image,
                                     const BenchOptions& opt = {}) {
  require(opt.trials >= 1, "bench: trials must be at least 1");
  std::vector<double> trials;
  for (std::size_t t = 0; t < opt.trials; ++t) {
    for (std::size_t i = 0; i < opt.warmup; ++i) (void)encode(image, params, cfg);
    const auto t0 = detail::Clock::now();
    (void)encode(image, params, cfg);
    trials.push_back(detail::seconds_since(t0));
  }
  TimingRecord r;
  r.mode = InferenceMode::single_pass;
  r.height = image.height();
  r.width = image.width();
  r.window = cfg.native_side;
  r.stride = 0;
  r.windows = 1;
  r.sub_batch = 1;
  r.warmup = opt.warmup;
  r.threads = 1;
  r.seconds = detail::median(trials);
  return r;
}

inline TimingRecord time_sliding_window(const ModelParams& params,
                                        const ViTConfig& cfg,
                                        const FeatureGrid& image,
                                        std::size_t stride,
                                        const BenchOptions& opt = {}) {
  require(opt.sub_batch >= 1, "bench: sub_batch must be at least 1");
  require(opt.trials >= 1, "bench: trials must be at least 1");
  const WindowPlan plan = plan_windows(image.height(), image.width(),
                                       cfg.native_side, stride, cfg.patch_size);
  const std::size_t m = plan.count();

  std::vector<double> trials;
  for (std::size_t t = 0; t < opt.trials; ++t) {
    // Every window forward has the same shape; warm up on the first crop.
    const FeatureGrid first =
        crop(image, plan.origins[0].row, plan.origins[0].col, plan.window,
             plan.window);
    for (std::size_t i = 0; i < opt.warmup; ++i)
      (void)forward_window(first, params, cfg);

    double total = 0.0;
    for (std::size_t begin = 0; begin < m; begin += opt.sub_batch) {
      const std::size_t n = std::min(opt.sub_batch, m - begin);
      std::vector<FeatureGrid> crops;
      crops.reserve(n);
      for (std::size_t j = 0; j < n; ++j) {
        const auto& o = plan.origins[begin + j];
        crops.push_back(crop(image, o.row, o.col, plan.window, plan.window));
      }
      std::vector<FeatureGrid> out(n);
      const auto t0 = detail::Clock::now();
      parallel_for(n, opt.threads, [&](std::size_t j) {
        out[j] = forward_window(crops[j], params, cfg);
      });
      total += detail::seconds_since(t0);
    }
    trials.push_back(total);
  }

  TimingRecord r;
  r.mode = InferenceMode::sliding_window;
  r.height = image.height();
  r.width = image.width();
  r.window = cfg.native_side;
  r.stride = stride;
  r.windows = m;
  r.sub_batch = opt.sub_batch;
  r.warmup = opt.warmup;
  r.threads = std::max<std::size_t>(1, opt.threads);
  r.seconds = detail::median(trials);
  return r;
}

// One single-pass record followed by one sliding-window record per stride.
inline std::vector<TimingRecord> sweep(const ModelParams& params,
                                       const ViTConfig& cfg,
                                       const FeatureGrid& image,
                                       const std::vector<std::size_t>& strides,
                                       const BenchOptions& opt = {}) {
  require(!strides.empty(), "sweep: no strides given");
  for (auto s : strides)
    require(s >= 1 && s <= cfg.native_side,
            "sweep: stride " + std::to_string(s) + " outside [1, " +
                std::to_string(cfg.native_side) + "]");
  std::vector<TimingRecord> out;
  out.push_back(time_single_pass(params, cfg, image, opt));
  for (auto s : strides) out.push_back(time_sliding_window(params, cfg, image, s, opt));
  return out;
}

inline constexpr const char* kTimingCsvHeader =
    "mode,H,W,K,s,m,sub_batch,warmup,seconds,threads";

inline void write_timing_csv(std::ostream& os,
                             const std::vector<TimingRecord>& records) {
  os << kTimingCsvHeader << '\n';
  for (const auto& r : records) {
    std::ostringstream secs;
    secs << std::setprecision(9) << r.seconds;
    os << to_string(r.mode) << ',' << r.height << ',' << r.width << ','
       << r.window << ',' << r.stride << ',' << r.windows << ','
       << r.sub_batch << ',' << r.warmup << ',' << secs.str() << ','
       << r.threads << '\n';
  }
}

// Time (x, log scale) against a caller-supplied metric (y), one labelled
// point per record.
inline void write_tradeoff_svg(std::ostream& os,
                               const std::vector<TimingRecord>& records,
                               const std::vector<double>& metric,
                               const std::string& metric_name) {
  require(records.size() == metric.size() && !records.empty(),
          "write_tradeoff_svg: need one metric value per record");
  constexpr double W = 640, H = 420, L = 70, R = 20, T = 20, B = 50;
  double tmin = 1e300, tmax = 0, ymin = 1e300, ymax = -1e300;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const double t = std::max(records[i].seconds, 1e-9);
    tmin = std::min(tmin, t);
    tmax = std::max(tmax, t);
    ymin = std::min(ymin, metric[i]);
    ymax = std::max(ymax, metric[i]);
  }
  const double lx0 = std::log10(tmin), lx1 = std::log10(tmax);
  const double xs = lx1 > lx0 ? (W - L - R) / (lx1 - lx0) : 0.0;
  const double ys = ymax > ymin ? (H - T - B) / (ymax - ymin) : 0.0;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W
     << "\" height=\"" << H << "\">\n"
     << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
     << "<line x1=\"" << L << "\" y1=\"" << H - B << "\" x2=\"" << W - R
     << "\" y2=\"" << H - B << "\" stroke=\"black\"/>\n"
     << "<line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L
     << "\" y2=\"" << H - B << "\" stroke=\"black\"/>\n"
     << "<text x=\"" << W / 2 << "\" y=\"" << H - 10
     << "\" text-anchor=\"middle\">seconds (log)</text>\n"
     << "<text x=\"15\" y=\"" << H / 2 << "\" transform=\"rotate(-90 15 "
     << H / 2 << ")\" text-anchor=\"middle\">" << metric_name << "</text>\n";
  for (std::size_t i = 0; i < records.size(); ++i) {
    const double x =
        L + (std::log10(std::max(records[i].seconds, 1e-9)) - lx0) * xs;
    const double y = H - B - (metric[i] - ymin) * ys;
    const auto& r = records[i];
    const std::string label = r.mode == InferenceMode::single_pass
                                  ? "single"
                                  : "s=" + std::to_string(r.stride);
    os << "<circle cx=\"" << x << "\" cy=\"" << y
       << "\" r=\"4\" fill=\"steelblue\"/>\n"
       << "<text x=\"" << x + 6 << "\" y=\"" << y - 6
       << "\" font-size=\"11\">" << label << "</text>\n";
  }
  os << "</svg>\n";
}

}  // namespace tilevit
