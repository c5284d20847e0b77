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

#include "fusionproxy/panel.hpp"

#include <fstream>

#include <nlohmann/json.hpp>

#include "fusionproxy/fpx.hpp"

namespace fusionproxy {

using nlohmann::json;

std::string activation_name(Activation a) {
  switch (a) {
    case Activation::kTanh:
      return "tanh";
    case Activation::kIdentity:
      return "identity";
    case Activation::kRelu:
      return "relu";
  }
  return "tanh";
}

Activation parse_activation(const std::string& s) {
  if (s == "tanh") return Activation::kTanh;
  if (s == "identity") return Activation::kIdentity;
  if (s == "relu") return Activation::kRelu;
  throw ConfigError("unknown activation " + s);
}

PanelConfig default_panel_config(int grid) {
  PanelConfig cfg;
  cfg.grid = grid;
  cfg.backbones = {
      {"vgg16_standin", 1601, 16, 8, Activation::kTanh, "VGG-16 relu3_3"},
      {"dinov2_standin", 1402, 24, 14, Activation::kTanh, "DINOv2-ViT-B/14 block 6 of 12"},
      {"clip_standin", 1403, 24, 14, Activation::kTanh, "CLIP-ViT-L/14 block 12 of 24"},
      {"sam_standin", 1604, 16, 16, Activation::kTanh, "SAM-ViT-B block 6 of 12"},
  };
  return cfg;
}

void save_norm_stats(const std::filesystem::path& dir, const PanelConfig& cfg, const PanelNormStats& norms) {
  if (norms.per_backbone.size() != cfg.backbones.size())
    throw ShapeError("save_norm_stats: norm/panel size mismatch");
  std::filesystem::create_directories(dir);
  json desc;
  desc["version"] = kFpxMagic;
  desc["grid"] = cfg.grid;
  desc["tau"] = cfg.tau;
  desc["backbones"] = json::array();
  Tensor<float> mean_var({static_cast<int>(norms.per_backbone.size())});
  for (std::size_t k = 0; k < cfg.backbones.size(); ++k) {
    const auto& b = cfg.backbones[k];
    desc["backbones"].push_back({{"name", b.name},
                                 {"seed", b.seed},
                                 {"channels", b.channels},
                                 {"stride", b.stride},
                                 {"activation", activation_name(b.activation)},
                                 {"layer", b.layer}});
    const auto& n = norms.per_backbone[k];
    Tensor<float> sigma({static_cast<int>(n.sigma_hat.size())});
    for (std::size_t c = 0; c < n.sigma_hat.size(); ++c) sigma[c] = static_cast<float>(n.sigma_hat[c]);
    write_fpx(dir / ("sigma_" + std::to_string(k) + ".fpx"), sigma);
    mean_var[k] = static_cast<float>(n.mean_var);
  }
  write_fpx(dir / "mean_var.fpx", mean_var);
  std::ofstream(dir / "panel.json") << desc.dump(2) << "\n";
}

std::pair<PanelConfig, PanelNormStats> load_norm_stats(const std::filesystem::path& dir) {
  const auto path = dir / "panel.json";
  std::ifstream is(path);
  if (!is) throw CacheError("panel norm stats missing at " + dir.string() + "; run the cache pre-pass first");
  json desc;
  try {
    desc = json::parse(is);
  } catch (const json::exception& e) {
    throw IoError(path.string() + ": " + e.what());
  }
  const std::string version = desc.value("version", "");
  if (version != kFpxMagic) throw FormatVersionError(version, kFpxMagic);
  PanelConfig cfg;
  cfg.grid = desc.at("grid").get<int>();
  cfg.tau = desc.value("tau", 1.0);
  PanelNormStats norms;
  const int k = static_cast<int>(desc.at("backbones").size());
  const Tensor<float> mean_var = read_fpx_expect(dir / "mean_var.fpx", {k});
  for (int i = 0; i < k; ++i) {
    const auto& b = desc["backbones"][i];
    BackboneConfig bc{b.at("name").get<std::string>(), b.at("seed").get<std::uint64_t>(), b.at("channels").get<int>(),
                      b.at("stride").get<int>(), parse_activation(b.value("activation", "tanh")),
                      b.value("layer", "")};
    const Tensor<float> sigma = read_fpx_expect(dir / ("sigma_" + std::to_string(i) + ".fpx"), {bc.channels});
    BackboneNorm n;
    n.sigma_hat.assign(sigma.vec().begin(), sigma.vec().end());
    n.mean_var = mean_var[i];
    norms.per_backbone.push_back(std::move(n));
    cfg.backbones.push_back(std::move(bc));
  }
  return {cfg, norms};
}

}  // namespace fusionproxy
