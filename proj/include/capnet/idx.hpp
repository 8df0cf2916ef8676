// Copyright 2026 The CapNet Authors. All Rights Reserved.
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

// Reader for the IDX container used by the MNIST and Fashion-MNIST
// distributions (big-endian header, unsigned byte payload).

#pragma once

#include <cstdint>
#include <fstream>
#include <limits>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "capnet/error.hpp"

namespace capnet {

inline constexpr std::uint32_t kIdxImageMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelMagic = 0x00000801;

struct IdxImages {
  std::size_t count = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> pixels;  // count x (height*width), scaled to [0, 1]

  std::size_t pixels_per_image() const { return height * width; }
  std::span<const double> image(std::size_t i) const {
    return std::span<const double>(pixels).subspan(i * pixels_per_image(), pixels_per_image());
  }
};

struct IdxLabels {
  std::vector<int> labels;
};

namespace detail {

inline std::uint32_t read_be32(std::span<const unsigned char> bytes, std::size_t offset) {
  if (bytes.size() < offset + 4) {
    throw ParseError("idx: header truncated at byte offset " + std::to_string(bytes.size()));
  }
  return (std::uint32_t{bytes[offset]} << 24) | (std::uint32_t{bytes[offset + 1]} << 16) |
         (std::uint32_t{bytes[offset + 2]} << 8) | std::uint32_t{bytes[offset + 3]};
}

inline void require_payload(std::span<const unsigned char> bytes, std::size_t header,
                            std::size_t payload) {
  if (bytes.size() - header < payload) {
    throw ParseError("idx: payload truncated at byte offset " + std::to_string(bytes.size()) +
                     " (header promises " + std::to_string(payload) + " bytes from offset " +
                     std::to_string(header) + ", expected end at offset " +
                     std::to_string(header + payload) + ")");
  }
}

}  // namespace detail

inline IdxImages parse_idx_images(std::span<const unsigned char> bytes) {
  const std::uint32_t magic = detail::read_be32(bytes, 0);
  if (magic != kIdxImageMagic) {
    throw ParseError("idx: expected image magic 0x00000803 at byte offset 0");
  }
  IdxImages out;
  out.count = detail::read_be32(bytes, 4);
  out.height = detail::read_be32(bytes, 8);
  out.width = detail::read_be32(bytes, 12);
  constexpr std::size_t header = 16;
  const std::size_t max = std::numeric_limits<std::size_t>::max();
  if (out.height != 0 && out.width > max / out.height) {
    throw ParseError("idx: dimension overflow in header at byte offset 8");
  }
  const std::size_t per_image = out.height * out.width;
  if (per_image != 0 && out.count > max / per_image) {
    throw ParseError("idx: dimension overflow in header at byte offset 4");
  }
  const std::size_t payload = out.count * per_image;
  detail::require_payload(bytes, header, payload);
  out.pixels.resize(payload);
  for (std::size_t i = 0; i < payload; ++i) out.pixels[i] = bytes[header + i] / 255.0;
  return out;
}

inline IdxLabels parse_idx_labels(std::span<const unsigned char> bytes) {
  const std::uint32_t magic = detail::read_be32(bytes, 0);
  if (magic != kIdxLabelMagic) {
    throw ParseError("idx: expected label magic 0x00000801 at byte offset 0");
  }
  const std::size_t count = detail::read_be32(bytes, 4);
  constexpr std::size_t header = 8;
  detail::require_payload(bytes, header, count);
  IdxLabels out;
  out.labels.resize(count);
  for (std::size_t i = 0; i < count; ++i) {
    const int label = bytes[header + i];
    if (label > 9) {
      throw ParseError("idx: label " + std::to_string(label) + " outside 0..9 at byte offset " +
                       std::to_string(header + i));
    }
    out.labels[i] = label;
  }
  return out;
}

// Dispatches on the magic number.
inline std::variant<IdxImages, IdxLabels> parse_idx(std::span<const unsigned char> bytes) {
  const std::uint32_t magic = detail::read_be32(bytes, 0);
  if (magic == kIdxImageMagic) return parse_idx_images(bytes);
  if (magic == kIdxLabelMagic) return parse_idx_labels(bytes);
  throw ParseError("idx: unknown magic at byte offset 0");
}

inline std::vector<unsigned char> read_file_bytes(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open '" + path + "'");
  return std::vector<unsigned char>((std::istreambuf_iterator<char>(is)),
                                    std::istreambuf_iterator<char>());
}

}  // namespace capnet
