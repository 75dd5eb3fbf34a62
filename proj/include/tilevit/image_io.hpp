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

// Binary PPM (P6) / PGM (P5), 8-bit only. Images load as H x W x 3 grids
// with values in [0, 1]; grey images are replicated to three channels.
// Label masks are PGM with one class index per pixel, 255 = ignore.

#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "tilevit/errors.hpp"
#include "tilevit/segment.hpp"
#include "tilevit/tensor.hpp"

namespace tilevit {

inline constexpr std::int32_t kIgnoreLabel = 255;

namespace detail {

struct Netpbm {
  int channels = 0;
  std::size_t width = 0, height = 0;
  std::vector<std::uint8_t> pixels;
};

inline std::string next_token(std::istream& is) {
  std::string tok;
  int ch = 0;
  while ((ch = is.get()) != EOF) {
    if (ch == '#') {
      while ((ch = is.get()) != EOF && ch != '\n') {
      }
      continue;
    }
    if (std::isspace(ch)) {
      if (!tok.empty()) break;
      continue;
    }
    tok.push_back(static_cast<char>(ch));
  }
  return tok;
}

inline Netpbm read_netpbm(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open image: " + path);
  Netpbm img;
  const std::string magic = next_token(is);
  if (magic == "P6")
    img.channels = 3;
  else if (magic == "P5")
    img.channels = 1;
  else
    throw DataError(path + ": not a binary PPM/PGM file");
  try {
    img.width = std::stoul(next_token(is));
    img.height = std::stoul(next_token(is));
    const auto maxval = std::stoul(next_token(is));
    if (maxval != 255) throw DataError(path + ": only 8-bit maxval 255 is supported");
  } catch (const std::logic_error&) {
    throw DataError(path + ": malformed header");
  }
  if (img.width == 0 || img.height == 0) throw DataError(path + ": empty image");
  img.pixels.resize(img.width * img.height * static_cast<std::size_t>(img.channels));
  is.read(reinterpret_cast<char*>(img.pixels.data()),
          static_cast<std::streamsize>(img.pixels.size()));
  if (!is) throw DataError(path + ": truncated pixel data");
  return img;
}

inline void write_netpbm(const std::string& path, const char* magic,
                         std::size_t w, std::size_t h,
                         const std::vector<std::uint8_t>& px) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError("cannot write image: " + path);
  os << magic << '\n' << w << ' ' << h << "\n255\n";
  os.write(reinterpret_cast<const char*>(px.data()),
           static_cast<std::streamsize>(px.size()));
  if (!os) throw DataError("failed writing image: " + path);
}

}  // namespace detail

inline FeatureGrid read_image(const std::string& path) {
  const auto img = detail::read_netpbm(path);
  FeatureGrid out(img.height, img.width, 3);
  for (std::size_t i = 0; i < img.height * img.width; ++i)
    for (std::size_t c = 0; c < 3; ++c) {
      const std::size_t src = img.channels == 3 ? i * 3 + c : i;
      out.data()[i * 3 + c] = img.pixels[src] / 255.0;
    }
  return out;
}

// Values are clamped to [0, 1] and rounded to 8 bits.
inline void write_ppm(const std::string& path, const FeatureGrid& image) {
  require(image.channels() == 3, "write_ppm: need 3 channels");
  std::vector<std::uint8_t> px(image.size());
  for (std::size_t i = 0; i < px.size(); ++i)
    px[i] = static_cast<std::uint8_t>(
        std::lround(std::clamp(image.values()[i], 0.0, 1.0) * 255.0));
  detail::write_netpbm(path, "P6", image.width(), image.height(), px);
}

inline SegMask read_mask(const std::string& path) {
  const auto img = detail::read_netpbm(path);
  if (img.channels != 1) throw DataError(path + ": label masks must be PGM (P5)");
  SegMask m(img.height, img.width);
  for (std::size_t i = 0; i < m.labels.size(); ++i) m.labels[i] = img.pixels[i];
  return m;
}

inline void write_mask(const std::string& path, const SegMask& mask) {
  std::vector<std::uint8_t> px(mask.labels.size());
  for (std::size_t i = 0; i < px.size(); ++i) {
    const auto v = mask.labels[i];
    require(v >= 0 && v <= 255, "write_mask: label does not fit in 8 bits");
    px[i] = static_cast<std::uint8_t>(v);
  }
  detail::write_netpbm(path, "P5", mask.width, mask.height, px);
}

}  // namespace tilevit
