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

#ifndef FUSIONPROXY_PNG_IO_HPP_
#define FUSIONPROXY_PNG_IO_HPP_

#include <filesystem>

#include "fusionproxy/tensor.hpp"

namespace fusionproxy {

// 8-bit PNG I/O. Readers return intensities scaled to [0,1] as [C, H, W];
// libpng converts between gray and RGB storage when the file differs.
Tensor<float> read_png_gray(const std::filesystem::path& path);
Tensor<float> read_png_rgb(const std::filesystem::path& path);

// Writes a [1,H,W] or [3,H,W] tensor in [0,1], rounding to the nearest 8-bit
// level and clamping out-of-range values.
void write_png(const std::filesystem::path& path, const Tensor<float>& image);

// Quantization shared by the writers and the metrics: round(v * 255) clamped.
inline unsigned char to_u8(double v) {
  const double s = v * 255.0 + 0.5;
  if (!(s > 0.0)) return 0;
  if (s >= 255.0) return 255;
  return static_cast<unsigned char>(s);
}

}  // namespace fusionproxy

#endif  // FUSIONPROXY_PNG_IO_HPP_
