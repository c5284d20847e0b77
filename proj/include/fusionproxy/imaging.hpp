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

#ifndef FUSIONPROXY_IMAGING_HPP_
#define FUSIONPROXY_IMAGING_HPP_

#include <cmath>
#include <filesystem>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "fusionproxy/tensor.hpp"

namespace fusionproxy {

using Rng = std::mt19937_64;

// Spatial divisibility required by the student's four 2x downsamplings.
inline constexpr int kSpatialMultiple = 16;

inline int round_up(int v, int multiple) { return (v + multiple - 1) / multiple * multiple; }

// Aligned infrared/visible input. `ir` is [1,H,W], `vis` is [3,H,W], both in
// [0,1]. H and W are multiples of 16 once loaded; the zero padding added on
// the bottom/right is recorded so outputs can be cropped back.
struct ImagePair {
  std::string id;
  Tensor<float> ir;
  Tensor<float> vis;
  int orig_height = 0;
  int orig_width = 0;
  int pad_bottom = 0;
  int pad_right = 0;

  int height() const { return ir.dim(1); }
  int width() const { return ir.dim(2); }
};

// Builds a pair from raw planes, zero-padding to the next multiple of 16.
ImagePair make_pair(std::string id, Tensor<float> ir, Tensor<float> vis);

struct FusedImage {
  Tensor<float> pixels;  // [3,H,W] in [0,1]
  std::string source_id;
};

// Translation in pixels (+x right, +y down) and rotation in degrees about the
// image center.
struct AffinePerturbation {
  double dx = 0.0;
  double dy = 0.0;
  double theta = 0.0;

  bool is_identity() const { return dx == 0.0 && dy == 0.0 && theta == 0.0; }
  AffinePerturbation inverse_parts() const { return {-dx, -dy, -theta}; }
};

struct PerturbationRange {
  double max_translation = 10.0;  // px
  double max_rotation = 2.0;      // degrees
};

// Loads `<root>/ir/<id>.png` and `<root>/vis/<id>.png`, sorted by id.
std::vector<ImagePair> load_dataset(const std::filesystem::path& root);

AffinePerturbation sample_perturbation(Rng& rng, const PerturbationRange& range);

// Zero-pads a [C,H,W] tensor on the bottom/right.
template <typename T>
Tensor<T> pad_bottom_right(const Tensor<T>& x, int height, int width) {
  const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
  if (height < h || width < w) throw ShapeError("pad target smaller than input");
  Tensor<T> out({c, height, width});
  for (int k = 0; k < c; ++k)
    for (int y = 0; y < h; ++y)
      for (int i = 0; i < w; ++i) out(k, y, i) = x(k, y, i);
  return out;
}

// Crops a [C,H,W] tensor (or an [H,W] field) to the window at (y0, x0).
template <typename T>
Tensor<T> crop(const Tensor<T>& x, int y0, int x0, int height, int width) {
  const bool field = x.rank() == 2;
  const int c = field ? 1 : x.dim(0);
  const int h = x.dim(-2), w = x.dim(-1);
  if (y0 < 0 || x0 < 0 || y0 + height > h || x0 + width > w)
    throw ShapeError("crop window outside tensor " + shape_str(x.shape()));
  Tensor<T> out(field ? Shape{height, width} : Shape{c, height, width});
  for (int k = 0; k < c; ++k)
    for (int y = 0; y < height; ++y)
      for (int i = 0; i < width; ++i)
        out[(static_cast<std::size_t>(k) * height + y) * width + i] =
            x[(static_cast<std::size_t>(k) * h + y0 + y) * w + x0 + i];
  return out;
}

// Warps every plane of a [C,H,W] (or [H,W]) tensor: rotation about the
// center, then translation. Bilinear sampling; out-of-frame coordinates are
// clamped to the border (replicate). The identity returns an exact copy.
template <typename T>
Tensor<T> apply_affine(const Tensor<T>& image, const AffinePerturbation& p) {
  if (p.is_identity()) return image;
  const bool field = image.rank() == 2;
  const int c = field ? 1 : image.dim(0);
  const int h = image.dim(-2), w = image.dim(-1);
  Tensor<T> out(image.shape());
  const double rad = p.theta * std::numbers::pi / 180.0;
  const double cs = std::cos(rad), sn = std::sin(rad);
  const double cx = (w - 1) / 2.0, cy = (h - 1) / 2.0;
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      // Inverse map: undo the translation, then the rotation.
      const double ux = x - p.dx - cx, uy = y - p.dy - cy;
      double sx = cs * ux + sn * uy + cx;
      double sy = -sn * ux + cs * uy + cy;
      sx = std::clamp(sx, 0.0, static_cast<double>(w - 1));
      sy = std::clamp(sy, 0.0, static_cast<double>(h - 1));
      const int x0 = static_cast<int>(std::floor(sx)), y0 = static_cast<int>(std::floor(sy));
      const int x1 = std::min(x0 + 1, w - 1), y1 = std::min(y0 + 1, h - 1);
      const T fx = static_cast<T>(sx - x0), fy = static_cast<T>(sy - y0);
      for (int k = 0; k < c; ++k) {
        const T* src = image.data() + k * plane;
        const T top = std::lerp(src[y0 * w + x0], src[y0 * w + x1], fx);
        const T bot = std::lerp(src[y1 * w + x0], src[y1 * w + x1], fx);
        out[k * plane + static_cast<std::size_t>(y) * w + x] = std::lerp(top, bot, fy);
      }
    }
  }
  return out;
}

// Per-axis corner-aligned bilinear taps: output index i reads source
// positions lo[i] and lo[i]+1 (clamped) with weight frac[i] on the latter.
struct BilinearAxis {
  std::vector<int> lo;
  std::vector<int> hi;
  std::vector<double> frac;

  BilinearAxis(int src, int dst) : lo(dst), hi(dst), frac(dst) {
    for (int i = 0; i < dst; ++i) {
      const double pos = (dst > 1 && src > 1) ? static_cast<double>(i) * (src - 1) / (dst - 1) : 0.0;
      int l = static_cast<int>(std::floor(pos));
      l = std::clamp(l, 0, src - 1);
      lo[i] = l;
      hi[i] = std::min(l + 1, src - 1);
      frac[i] = pos - l;
    }
  }
};

// Corner-aligned bilinear resampling of a [C,h,w] feature map to
// [C,out_h,out_w].
template <typename T>
Tensor<T> resample_bilinear(const Tensor<T>& feature, int out_h, int out_w) {
  if (out_h <= 0 || out_w <= 0) throw ShapeError("resample_bilinear: target dimension must be positive");
  if (feature.rank() != 3 || feature.dim(1) < 1 || feature.dim(2) < 1)
    throw ShapeError("resample_bilinear expects a non-empty [C,h,w] map, got " + shape_str(feature.shape()));
  const int c = feature.dim(0), h = feature.dim(1), w = feature.dim(2);
  const BilinearAxis ay(h, out_h), ax(w, out_w);
  Tensor<T> out({c, out_h, out_w});
  for (int k = 0; k < c; ++k) {
    const T* src = feature.data() + static_cast<std::size_t>(k) * h * w;
    T* dst = out.data() + static_cast<std::size_t>(k) * out_h * out_w;
    for (int y = 0; y < out_h; ++y) {
      const T fy = static_cast<T>(ay.frac[y]);
      const T* r0 = src + static_cast<std::size_t>(ay.lo[y]) * w;
      const T* r1 = src + static_cast<std::size_t>(ay.hi[y]) * w;
      for (int x = 0; x < out_w; ++x) {
        const T fx = static_cast<T>(ax.frac[x]);
        const T top = std::lerp(r0[ax.lo[x]], r0[ax.hi[x]], fx);
        const T bot = std::lerp(r1[ax.lo[x]], r1[ax.hi[x]], fx);
        dst[static_cast<std::size_t>(y) * out_w + x] = std::lerp(top, bot, fy);
      }
    }
  }
  return out;
}

}  // namespace fusionproxy

#endif  // FUSIONPROXY_IMAGING_HPP_
