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

// Little-endian primitives for the on-disk formats.

#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>
#include <type_traits>

#include "tilevit/errors.hpp"

namespace tilevit::le {

template <class T>
  requires std::is_integral_v<T>
void write(std::ostream& os, T v) {
  using U = std::make_unsigned_t<T>;
  auto u = static_cast<U>(v);
  std::array<char, sizeof(T)> buf;
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    buf[i] = static_cast<char>(u & 0xFF);
    if constexpr (sizeof(T) > 1) u = static_cast<U>(u >> 8);
  }
  os.write(buf.data(), buf.size());
}

inline void write_f64(std::ostream& os, double v) {
  write(os, std::bit_cast<std::uint64_t>(v));
}
inline void write_f32(std::ostream& os, float v) {
  write(os, std::bit_cast<std::uint32_t>(v));
}

inline void write_bytes(std::ostream& os, const std::string& s) {
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

template <class T>
  requires std::is_integral_v<T>
T read(std::istream& is) {
  using U = std::make_unsigned_t<T>;
  std::array<unsigned char, sizeof(T)> buf{};
  is.read(reinterpret_cast<char*>(buf.data()), buf.size());
  if (!is) throw DataError("unexpected end of file");
  U u = 0;
  for (std::size_t i = sizeof(T); i-- > 0;) {
    if constexpr (sizeof(T) > 1) u = static_cast<U>(u << 8);
    u = static_cast<U>(u | buf[i]);
  }
  return static_cast<T>(u);
}

inline double read_f64(std::istream& is) {
  return std::bit_cast<double>(read<std::uint64_t>(is));
}
inline float read_f32(std::istream& is) {
  return std::bit_cast<float>(read<std::uint32_t>(is));
}

inline std::string read_bytes(std::istream& is, std::size_t n) {
  std::string s(n, '\0');
  is.read(s.data(), static_cast<std::streamsize>(n));
  if (!is) throw DataError("unexpected end of file");
  return s;
}

}  // namespace tilevit::le
