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

#ifndef FUSIONPROXY_FPX_HPP_
#define FUSIONPROXY_FPX_HPP_

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "fusionproxy/tensor.hpp"

namespace fusionproxy {

// FPX1 tensor container, little-endian:
//   "FPX1" | dtype u8 (0 = float32) | rank u8 | dims u32 x rank | payload
// Payload is row-major float32.
inline constexpr char kFpxMagic[] = "FPX1";
inline constexpr std::uint8_t kFpxFloat32 = 0;

std::vector<std::uint8_t> encode_fpx(const Tensor<float>& t);
Tensor<float> decode_fpx(const std::vector<std::uint8_t>& bytes, const std::string& what = "tensor");

void write_fpx(const std::filesystem::path& path, const Tensor<float>& t);
Tensor<float> read_fpx(const std::filesystem::path& path);

// Reads and checks the dims against `expected`; throws ShapeError naming the
// file on mismatch.
Tensor<float> read_fpx_expect(const std::filesystem::path& path, const Shape& expected);

}  // namespace fusionproxy

#endif  // FUSIONPROXY_FPX_HPP_
