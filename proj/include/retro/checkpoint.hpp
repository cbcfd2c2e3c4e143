// Copyright 2026 The retrofpn Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

// Named-tensor checkpoint file.
//
//   bytes 0..7   magic "RETROCKP"
//   u32          format version (1)
//   u64          entry count
//   per entry:
//     u32        name length in bytes, then the UTF-8 name
//     u32        rank, then rank x u64 extents
//     f64 x numel values, row-major
//
// Every integer and float is little-endian regardless of host order.

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "retro/tensor.hpp"

namespace retro {

/// Ordered name -> values map used for saving and restoring state.
struct TensorRecord {
  Shape shape;
  std::vector<double> values;
};
using TensorMap = std::map<std::string, TensorRecord>;

namespace detail {

template <typename T>
void put_le(std::ostream& os, T v) {
  std::uint8_t buf[sizeof(T)];
  if constexpr (std::is_same_v<T, double>) {
    const auto bits = std::bit_cast<std::uint64_t>(v);
    for (std::size_t i = 0; i < 8; ++i) buf[i] = static_cast<std::uint8_t>(bits >> (8 * i));
  } else {
    for (std::size_t i = 0; i < sizeof(T); ++i) buf[i] = static_cast<std::uint8_t>(static_cast<std::uint64_t>(v) >> (8 * i));
  }
  os.write(reinterpret_cast<const char*>(buf), sizeof(T));
}

template <typename T>
T get_le(std::istream& is) {
  std::uint8_t buf[sizeof(T)];
  if (!is.read(reinterpret_cast<char*>(buf), sizeof(T))) throw std::runtime_error("checkpoint: truncated file");
  std::uint64_t bits = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) bits |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
  if constexpr (std::is_same_v<T, double>) {
    return std::bit_cast<double>(bits);
  } else {
    return static_cast<T>(bits);
  }
}

inline constexpr char kCheckpointMagic[8] = {'R', 'E', 'T', 'R', 'O', 'C', 'K', 'P'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

}  // namespace detail

inline void write_checkpoint(const std::string& path, const TensorMap& entries) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("checkpoint: cannot open " + path + " for writing");
  os.write(detail::kCheckpointMagic, 8);
  detail::put_le<std::uint32_t>(os, detail::kCheckpointVersion);
  detail::put_le<std::uint64_t>(os, entries.size());
  for (const auto& [name, rec] : entries) {
    if (shape_numel(rec.shape) != rec.values.size()) {
      throw ShapeError("checkpoint: entry " + name + " has inconsistent shape");
    }
    detail::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    detail::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(rec.shape.size()));
    for (auto e : rec.shape) detail::put_le<std::uint64_t>(os, e);
    for (double v : rec.values) detail::put_le<double>(os, v);
  }
  if (!os) throw std::runtime_error("checkpoint: write failed for " + path);
}

inline TensorMap read_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("checkpoint: cannot open " + path);
  char magic[8];
  if (!is.read(magic, 8) || std::memcmp(magic, detail::kCheckpointMagic, 8) != 0) {
    throw std::runtime_error("checkpoint: bad magic in " + path);
  }
  const auto version = detail::get_le<std::uint32_t>(is);
  if (version != detail::kCheckpointVersion) {
    throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));
  }
  const auto count = detail::get_le<std::uint64_t>(is);
  TensorMap out;
  for (std::uint64_t e = 0; e < count; ++e) {
    const auto len = detail::get_le<std::uint32_t>(is);
    std::string name(len, '\0');
    if (!is.read(name.data(), len)) throw std::runtime_error("checkpoint: truncated name");
    const auto rank = detail::get_le<std::uint32_t>(is);
    TensorRecord rec;
    for (std::uint32_t r = 0; r < rank; ++r) rec.shape.push_back(detail::get_le<std::uint64_t>(is));
    rec.values.resize(shape_numel(rec.shape));
    for (auto& v : rec.values) v = detail::get_le<double>(is);
    out.emplace(std::move(name), std::move(rec));
  }
  return out;
}

}  // namespace retro
