/*
 * Copyright 2026 The FusionProxy Authors.
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include "fusionproxy/fpx.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace fusionproxy {
namespace {

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_u32(const std::uint8_t* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

}  // namespace

std::vector<std::uint8_t> encode_fpx(const Tensor<float>& t) {
  if (t.rank() > 255) throw ShapeError("FPX1 supports rank <= 255");
  std::vector<std::uint8_t> out;
  out.reserve(6 + 4 * t.rank() + 4 * t.size());
  out.insert(out.end(), kFpxMagic, kFpxMagic + 4);
  out.push_back(kFpxFloat32);
  out.push_back(static_cast<std::uint8_t>(t.rank()));
  for (int d : t.shape()) put_u32(out, static_cast<std::uint32_t>(d));
  for (float v : t.vec()) put_u32(out, std::bit_cast<std::uint32_t>(v));
  return out;
}

Tensor<float> decode_fpx(const std::vector<std::uint8_t>& bytes, const std::string& what) {
  if (bytes.size() < 6) throw IoError(what + ": truncated FPX header");
  const std::string magic(bytes.begin(), bytes.begin() + 4);
  if (magic != kFpxMagic) throw FormatVersionError(magic, kFpxMagic);
  if (bytes[4] != kFpxFloat32)
    throw IoError(what + ": unsupported dtype code " + std::to_string(bytes[4]));
  const int rank = bytes[5];
  std::size_t offset = 6;
  if (bytes.size() < offset + 4u * rank) throw IoError(what + ": truncated FPX dims");
  Shape shape(rank);
  for (int i = 0; i < rank; ++i, offset += 4) shape[i] = static_cast<int>(get_u32(&bytes[offset]));
  const std::size_t n = shape_numel(shape);
  if (bytes.size() != offset + 4 * n)
    throw IoError(what + ": payload holds " + std::to_string((bytes.size() - offset) / 4) +
                  " values, dims " + shape_str(shape) + " need " + std::to_string(n));
  std::vector<float> data(n);
  for (std::size_t i = 0; i < n; ++i, offset += 4) data[i] = std::bit_cast<float>(get_u32(&bytes[offset]));
  return Tensor<float>(std::move(shape), std::move(data));
}

void write_fpx(const std::filesystem::path& path, const Tensor<float>& t) {
  const auto bytes = encode_fpx(t);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw IoError("short write to " + path.string());
}

Tensor<float> read_fpx(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  return decode_fpx(bytes, path.string());
}

Tensor<float> read_fpx_expect(const std::filesystem::path& path, const Shape& expected) {
  Tensor<float> t = read_fpx(path);
  if (t.shape() != expected)
    throw ShapeError(path.string() + ": dims " + shape_str(t.shape()) + " do not match expected " +
                     shape_str(expected));
  return t;
}

}  // namespace fusionproxy
