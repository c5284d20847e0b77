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

#include "fusionproxy/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "fusionproxy/png_io.hpp"

namespace fusionproxy {

namespace fs = std::filesystem;

ImagePair synth_pair(const std::string& id, int height, int width, Rng& rng, const SynthConfig& cfg) {
  if (height < 1 || width < 1) throw ConfigError("synth: image size must be positive");
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::normal_distribution<double> noise(0.0, 1.0);

  Tensor<float> vis({3, height, width});
  Tensor<float> ir({1, height, width});
  // thermal response of each region; background is cool
  Tensor<float> heat({height, width});

  double base[3], slope[3];
  for (int c = 0; c < 3; ++c) {
    base[c] = 0.2 + 0.4 * u(rng);
    slope[c] = 0.3 * (u(rng) - 0.5);
  }
  const double bg_heat = 0.15 + 0.15 * u(rng);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) {
      const double t = (static_cast<double>(y) / height + static_cast<double>(x) / width) * 0.5;
      for (int c = 0; c < 3; ++c) vis(c, y, x) = static_cast<float>(base[c] + slope[c] * t);
      heat(y, x) = static_cast<float>(bg_heat + 0.1 * t);
    }

  for (int o = 0; o < cfg.objects; ++o) {
    const bool disc = u(rng) < 0.5;
    const double cy = u(rng) * height, cx = u(rng) * width;
    const double ry = (0.08 + 0.17 * u(rng)) * height, rx = (0.08 + 0.17 * u(rng)) * width;
    double color[3];
    for (double& c : color) c = 0.05 + 0.9 * u(rng);
    const double obj_heat = 0.1 + 0.8 * u(rng);
    for (int y = 0; y < height; ++y)
      for (int x = 0; x < width; ++x) {
        const double dy = (y + 0.5 - cy) / ry, dx = (x + 0.5 - cx) / rx;
        const bool inside = disc ? dy * dy + dx * dx <= 1.0 : std::abs(dy) <= 1.0 && std::abs(dx) <= 1.0;
        if (!inside) continue;
        for (int c = 0; c < 3; ++c) vis(c, y, x) = static_cast<float>(color[c]);
        heat(y, x) = static_cast<float>(obj_heat);
      }
  }

  for (int s = 0; s < cfg.hot_spots; ++s) {
    const double cy = u(rng) * height, cx = u(rng) * width;
    const double r = (0.04 + 0.08 * u(rng)) * std::min(height, width);
    for (int y = 0; y < height; ++y)
      for (int x = 0; x < width; ++x) {
        const double d2 = ((y - cy) * (y - cy) + (x - cx) * (x - cx)) / (r * r);
        heat(y, x) = static_cast<float>(heat(y, x) + 0.7 * std::exp(-0.5 * d2));
      }
  }

  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x)
      ir(0, y, x) = static_cast<float>(std::clamp(heat(y, x) + cfg.ir_noise * noise(rng), 0.0, 1.0));
  for (auto& v : vis.vec()) v = std::clamp(v, 0.0f, 1.0f);
  return make_pair(id, std::move(ir), std::move(vis));
}

std::vector<ImagePair> synth_dataset(const SynthConfig& cfg) {
  if (cfg.count < 1) throw ConfigError("synth: count must be >= 1");
  Rng rng(cfg.seed);
  std::vector<ImagePair> pairs;
  for (int i = 0; i < cfg.count; ++i) {
    char id[32];
    std::snprintf(id, sizeof id, "scene_%03d", i);
    pairs.push_back(synth_pair(id, cfg.height, cfg.width, rng, cfg));
  }
  return pairs;
}

void write_dataset(const fs::path& root, const std::vector<ImagePair>& pairs) {
  fs::create_directories(root / "ir");
  fs::create_directories(root / "vis");
  for (const auto& p : pairs) {
    write_png(root / "ir" / (p.id + ".png"), crop(p.ir, 0, 0, p.orig_height, p.orig_width));
    write_png(root / "vis" / (p.id + ".png"), crop(p.vis, 0, 0, p.orig_height, p.orig_width));
  }
}

}  // namespace fusionproxy
