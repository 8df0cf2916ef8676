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

// Binary parameter checkpoints.
//
//   "CAPN"            4 bytes magic
//   version           u32
//   repeated until EOF:
//     path length     u32
//     path            UTF-8 bytes
//     rank            u32
//     dims            u32[rank]
//     values          f64[product(dims)]
//
// All integers and floats are little-endian.

#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "capnet/error.hpp"
#include "capnet/params.hpp"

namespace capnet {

inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_f64(std::string& out, double d) {
  const auto v = std::bit_cast<std::uint64_t>(d);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

class ByteReader {
 public:
  explicit ByteReader(const std::string& bytes) : bytes_(bytes) {}

  bool done() const { return pos_ == bytes_.size(); }
  std::size_t offset() const { return pos_; }

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
      v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }

  double f64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i)
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += 8;
    return std::bit_cast<double>(v);
  }

  std::size_t remaining() const { return bytes_.size() - pos_; }

  std::string str(std::size_t n) {
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) {
      throw ParseError("checkpoint truncated at byte offset " + std::to_string(pos_));
    }
  }

 private:
  const std::string& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::string encode_checkpoint(const ParamStore& params) {
  std::string out = "CAPN";
  detail::put_u32(out, kCheckpointVersion);
  for (const auto& [path, p] : params) {
    detail::put_u32(out, static_cast<std::uint32_t>(path.size()));
    out += path;
    detail::put_u32(out, static_cast<std::uint32_t>(p.value.rank()));
    for (std::size_t d : p.value.shape()) detail::put_u32(out, static_cast<std::uint32_t>(d));
    for (double v : p.value.data()) detail::put_f64(out, v);
  }
  return out;
}

inline std::map<std::string, Tensor> decode_checkpoint(const std::string& bytes) {
  detail::ByteReader in(bytes);
  if (in.str(4) != "CAPN") throw ParseError("checkpoint: bad magic at byte offset 0");
  const std::uint32_t version = in.u32();
  if (version != kCheckpointVersion) {
    throw IntegrityError("checkpoint: unsupported version " + std::to_string(version));
  }
  std::map<std::string, Tensor> out;
  while (!in.done()) {
    const std::string path = in.str(in.u32());
    const std::uint32_t rank = in.u32();
    Shape shape(rank);
    std::size_t count = 1;
    for (auto& d : shape) {
      d = in.u32();
      if (d != 0 && count > in.remaining() / d) count = in.remaining() + 1;
      else count *= d;
    }
    in.need(count * 8);
    std::vector<double> values(count);
    for (double& v : values) v = in.f64();
    out.emplace(path, Tensor(std::move(shape), std::move(values)));
  }
  return out;
}

inline void save_checkpoint(const ParamStore& params, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot write checkpoint '" + path + "'");
  const std::string bytes = encode_checkpoint(params);
  os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

// Overwrites the values of an already-constructed store. The record set must
// match the store exactly (same paths and shapes).
inline void load_checkpoint(ParamStore& params, const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot read checkpoint '" + path + "'");
  const std::string bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  auto records = decode_checkpoint(bytes);
  if (records.size() != params.tensors()) {
    throw IntegrityError("checkpoint has " + std::to_string(records.size()) +
                         " parameters, model expects " + std::to_string(params.tensors()));
  }
  for (auto& [name, p] : params) {
    auto it = records.find(name);
    if (it == records.end()) throw IntegrityError("checkpoint lacks parameter '" + name + "'");
    if (it->second.shape() != p.value.shape()) {
      throw IntegrityError("checkpoint parameter '" + name + "' has shape " +
                           shape_string(it->second.shape()) + ", model expects " +
                           shape_string(p.value.shape()));
    }
    p.value = std::move(it->second);
  }
}

}  // namespace capnet
