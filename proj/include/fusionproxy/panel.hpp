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

#ifndef FUSIONPROXY_PANEL_HPP_
#define FUSIONPROXY_PANEL_HPP_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <limits>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "fusionproxy/autograd.hpp"
#include "fusionproxy/teacher.hpp"
#include "fusionproxy/tensor.hpp"

namespace fusionproxy {

enum class Activation { kTanh, kIdentity, kRelu };

std::string activation_name(Activation a);
Activation parse_activation(const std::string& s);

// Construction recipe for a frozen stand-in encoder. `layer` documents which
// mid-block of a real backbone an adapter would tap in its place.
struct BackboneConfig {
  std::string name;
  std::uint64_t seed = 0;
  int channels = 16;
  int stride = 16;
  Activation activation = Activation::kTanh;
  std::string layer;
};

// Frozen feature extractor. `features` stays differentiable with respect to
// its input so the alignment loss can be back-propagated to the student
// output; the backbone's own weights never require gradients.
template <typename T>
class Backbone {
 public:
  virtual ~Backbone() = default;
  virtual const std::string& name() const = 0;
  virtual int channels() const = 0;
  virtual ad::Var<T> features(const ad::Var<T>& image) const = 0;
  // Raw weights in a fixed order, for hashing.
  virtual std::vector<const Tensor<T>*> weights() const = 0;

  Tensor<T> extract(const Tensor<T>& image) const {
    ad::NoGradGuard guard;
    return features(ad::Var<T>(image)).value();
  }
};

// Patchify convolution (kernel = stride) -> activation -> 1x1 convolution ->
// activation, with fixed-seed uniform weights.
template <typename T>
class StandinBackbone final : public Backbone<T> {
 public:
  explicit StandinBackbone(BackboneConfig cfg) : cfg_(std::move(cfg)) {
    const int s = cfg_.stride, c = cfg_.channels;
    if (c < 1) throw ConfigError("backbone " + cfg_.name + ": channels must be >= 1");
    if (s != 4 && s != 8 && s != 14 && s != 16)
      throw ConfigError("backbone " + cfg_.name + ": stride must be one of 4, 8, 14, 16");
    std::mt19937_64 rng(cfg_.seed);
    std::uniform_real_distribution<double> unit(-1.0, 1.0);
    auto init = [&](Shape shape, double bound) {
      Tensor<T> t(std::move(shape));
      for (auto& v : t.vec()) v = static_cast<T>(bound * unit(rng));
      return ad::Var<T>(std::move(t));
    };
    const double fan1 = 3.0 * s * s;
    // Inputs live in [0,1]; the 2.0 gain keeps the first activation in its
    // responsive range.
    w1_ = init({c, 3, s, s}, 2.0 * std::sqrt(3.0 / fan1));
    b1_ = init({c}, 0.5);
    w2_ = init({c, c, 1, 1}, std::sqrt(3.0 / c));
    b2_ = init({c}, 0.1);
  }

  const std::string& name() const override { return cfg_.name; }
  int channels() const override { return cfg_.channels; }
  const BackboneConfig& config() const { return cfg_; }

  ad::Var<T> features(const ad::Var<T>& image) const override {
    if (image.value().rank() != 3 || image.dim(0) != 3)
      throw ShapeError("backbone " + cfg_.name + " expects [3,H,W], got " + shape_str(image.shape()));
    if (image.dim(1) < cfg_.stride || image.dim(2) < cfg_.stride)
      throw ShapeError("backbone " + cfg_.name + ": image smaller than stride");
    auto h = activate(ad::conv2d(image, w1_, b1_, cfg_.stride, 0));
    return activate(ad::conv2d(h, w2_, b2_));
  }

  std::vector<const Tensor<T>*> weights() const override {
    return {&w1_.value(), &b1_.value(), &w2_.value(), &b2_.value()};
  }

 private:
  ad::Var<T> activate(const ad::Var<T>& x) const {
    switch (cfg_.activation) {
      case Activation::kTanh:
        return ad::tanh(x);
      case Activation::kRelu:
        return ad::relu(x);
      case Activation::kIdentity:
        break;
    }
    return x;
  }

  BackboneConfig cfg_;
  ad::Var<T> w1_, b1_, w2_, b2_;
};

template <typename T>
std::unique_ptr<Backbone<T>> standin_backbone(std::uint64_t seed, int channels, int stride,
                                              Activation act = Activation::kTanh) {
  return std::make_unique<StandinBackbone<T>>(
      BackboneConfig{"standin_" + std::to_string(seed), seed, channels, stride, act, ""});
}

struct PanelConfig {
  std::vector<BackboneConfig> backbones;
  int grid = 64;
  double tau = 1.0;
};

// Four heterogeneous stand-ins in place of VGG-16 relu3_3, DINOv2 block 6,
// CLIP block 12 and SAM block 6.
PanelConfig default_panel_config(int grid = 64);

template <typename T>
struct Panel {
  PanelConfig config;
  std::vector<std::unique_ptr<Backbone<T>>> backbones;

  int size() const { return static_cast<int>(backbones.size()); }
  int grid() const { return config.grid; }
};

template <typename T>
Panel<T> build_panel(const PanelConfig& cfg) {
  if (cfg.backbones.empty()) throw ConfigError("panel needs at least one backbone");
  if (cfg.grid < 1) throw ConfigError("panel grid must be >= 1");
  Panel<T> panel;
  panel.config = cfg;
  for (const auto& b : cfg.backbones) panel.backbones.push_back(std::make_unique<StandinBackbone<T>>(b));
  return panel;
}

// FNV-1a over the float32 bit patterns of every backbone weight.
template <typename T>
std::uint64_t panel_hash(const Panel<T>& panel) {
  std::uint64_t h = 1469598103934665603ull;
  auto mix = [&h](std::uint8_t byte) {
    h ^= byte;
    h *= 1099511628211ull;
  };
  for (const auto& b : panel.backbones)
    for (const Tensor<T>* t : b->weights())
      for (T v : t->vec()) {
        const float f = static_cast<float>(v);
        std::uint32_t bits;
        std::memcpy(&bits, &f, sizeof bits);
        for (int i = 0; i < 4; ++i) mix(static_cast<std::uint8_t>(bits >> (8 * i)));
      }
  return h;
}

struct BackboneNorm {
  std::vector<double> sigma_hat;  // per channel, > 0
  double mean_var = 0.0;          // training-set mean of the spatial mean variance
};

struct PanelNormStats {
  std::vector<BackboneNorm> per_backbone;
};

// Per-backbone feature statistics on the G x G grid.
template <typename T>
struct FeatureStats {
  std::string pair_id;
  std::vector<Tensor<T>> targets;  // [C_k,G,G]
  std::vector<Tensor<T>> vars;     // [G,G]
  Tensor<T> routing;               // [K,G,G]
};

template <typename T>
const BackboneNorm& norm_for(const Backbone<T>& b, const BackboneNorm& norm) {
  if (static_cast<int>(norm.sigma_hat.size()) != b.channels())
    throw ShapeError("backbone " + b.name() + " has " + std::to_string(b.channels()) +
                     " channels but its norm stats hold " + std::to_string(norm.sigma_hat.size()));
  return norm;
}

// extract -> resample to out_h x out_w -> divide channel c by sigma_hat[c].
// Training crops resample onto the matching sub-window of the grid.
template <typename T>
ad::Var<T> normalized_features(const Backbone<T>& b, const BackboneNorm& norm, const ad::Var<T>& image, int out_h,
                               int out_w) {
  norm_for(b, norm);
  auto f = ad::resample(b.features(image), out_h, out_w);
  Tensor<T> inv({b.channels(), 1, 1});
  for (int c = 0; c < b.channels(); ++c) inv[c] = static_cast<T>(1.0 / norm.sigma_hat[c]);
  return ad::scale_channels(f, ad::Var<T>(std::move(inv)));
}

template <typename T>
ad::Var<T> normalized_features(const Backbone<T>& b, const BackboneNorm& norm, const ad::Var<T>& image, int grid) {
  return normalized_features(b, norm, image, grid, grid);
}

template <typename T>
Tensor<T> normalized_features(const Backbone<T>& b, const BackboneNorm& norm, const Tensor<T>& image, int grid) {
  ad::NoGradGuard guard;
  return normalized_features(b, norm, ad::Var<T>(image), grid, grid).value();
}

// Mean over samples of the normalized features, and the population variance
// over samples averaged across channels.
template <typename T>
std::pair<Tensor<T>, Tensor<T>> feature_moments(const Backbone<T>& b, const BackboneNorm& norm,
                                                const TeacherSampleSet<T>& s, int grid) {
  require_samples(s);
  std::vector<Tensor<T>> feats;
  feats.reserve(s.count());
  for (const auto& y : s.samples) feats.push_back(normalized_features(b, norm, y, grid));
  Tensor<T> mean(feats.front().shape());
  for (const auto& f : feats) mean.array() += f.array();
  mean.array() /= static_cast<T>(feats.size());
  Tensor<T> var(mean.shape());
  for (const auto& f : feats) {
    const auto d = f.array() - mean.array();
    var.array() += d * d;
  }
  var.array() /= static_cast<T>(feats.size());
  return {std::move(mean), channel_mean(var)};
}

template <typename T>
Tensor<T> feature_variance(const Backbone<T>& b, const BackboneNorm& norm, const TeacherSampleSet<T>& s, int grid) {
  return feature_moments(b, norm, s, grid).second;
}

template <typename T>
Tensor<T> feature_target(const Backbone<T>& b, const BackboneNorm& norm, const TeacherSampleSet<T>& s, int grid) {
  return feature_moments(b, norm, s, grid).first;
}

// W_k = softmax_k( v_k / (mean_var_k + eps) / tau ), per grid cell.
template <typename T>
Tensor<T> routing_weights(const std::vector<Tensor<T>>& vars, const PanelNormStats& norms, double tau,
                          double eps = 1e-3) {
  if (!(tau > 0)) throw ConfigError("routing temperature tau must be > 0");
  if (vars.empty() || vars.size() != norms.per_backbone.size())
    throw ShapeError("routing_weights: " + std::to_string(vars.size()) + " variance fields for " +
                     std::to_string(norms.per_backbone.size()) + " backbones");
  const int k = static_cast<int>(vars.size());
  const int h = vars.front().dim(0), w = vars.front().dim(1);
  for (const auto& v : vars) require_same_shape(v, vars.front(), "routing_weights");
  Tensor<T> out({k, h, w});
  std::vector<double> logits(k);
  for (int p = 0; p < h * w; ++p) {
    double mx = -std::numeric_limits<double>::infinity();
    for (int i = 0; i < k; ++i) {
      logits[i] = static_cast<double>(vars[i][p]) / (norms.per_backbone[i].mean_var + eps) / tau;
      mx = std::max(mx, logits[i]);
    }
    double z = 0;
    for (int i = 0; i < k; ++i) z += (logits[i] = std::exp(logits[i] - mx));
    for (int i = 0; i < k; ++i) out[static_cast<std::size_t>(i) * h * w + p] = static_cast<T>(logits[i] / z);
  }
  return out;
}

// Shannon entropy (nats) of the routing distribution at each cell, [G,G].
template <typename T>
Tensor<double> routing_entropy(const Tensor<T>& routing) {
  const int k = routing.dim(0), h = routing.dim(1), w = routing.dim(2);
  Tensor<double> out({h, w});
  for (int p = 0; p < h * w; ++p) {
    double e = 0;
    for (int i = 0; i < k; ++i) {
      const double q = routing[static_cast<std::size_t>(i) * h * w + p];
      if (q > 0) e -= q * std::log(q);
    }
    out[p] = e;
  }
  return out;
}

// Fits sigma_hat (pooled over every sample and grid cell of the raw resampled
// features) and then mean_var from the normalized features.
template <typename T>
PanelNormStats fit_norm_stats(const Panel<T>& panel, const std::vector<TeacherSampleSet<T>>& sets) {
  if (sets.empty()) throw ConfigError("fit_norm_stats: no sample sets");
  PanelNormStats out;
  const int grid = panel.grid();
  for (const auto& b : panel.backbones) {
    const int c = b->channels();
    // Chan et al. pairwise merge of per-sample moments keeps one pass stable.
    std::vector<double> mean(c, 0.0), m2(c, 0.0);
    // exact constancy check; the merged m2 of a constant channel is only ~0
    std::vector<T> lo(c, std::numeric_limits<T>::max()), hi(c, std::numeric_limits<T>::lowest());
    double count = 0;
    for (const auto& s : sets) {
      require_samples(s);
      for (const auto& y : s.samples) {
        Tensor<T> f;
        {
          ad::NoGradGuard guard;
          f = ad::resample(b->features(ad::Var<T>(y)), grid, grid).value();
        }
        const double n = static_cast<double>(grid) * grid;
        for (int k = 0; k < c; ++k) {
          auto p = f.plane(k);
          double sm = 0;
          for (T v : p) {
            sm += v;
            lo[k] = std::min(lo[k], v);
            hi[k] = std::max(hi[k], v);
          }
          const double bm = sm / n;
          double bm2 = 0;
          for (T v : p) bm2 += (v - bm) * (v - bm);
          const double delta = bm - mean[k];
          const double tot = count + n;
          mean[k] += delta * n / tot;
          m2[k] += bm2 + delta * delta * count * n / tot;
        }
        count += n;
      }
    }
    BackboneNorm norm;
    norm.sigma_hat.resize(c);
    for (int k = 0; k < c; ++k) {
      const double sd = std::sqrt(m2[k] / count);
      norm.sigma_hat[k] = (hi[k] > lo[k] && sd > 0) ? sd : 1.0;
    }
    double mv = 0;
    for (const auto& s : sets) mv += feature_variance(*b, norm, s, grid).array().template cast<double>().mean();
    norm.mean_var = mv / static_cast<double>(sets.size());
    out.per_backbone.push_back(std::move(norm));
  }
  return out;
}

// Rounds sigma_hat and mean_var through float32, the precision they are
// stored at, so cache-time and train-time normalization agree exactly.
inline PanelNormStats as_stored(PanelNormStats norms) {
  for (auto& n : norms.per_backbone) {
    for (auto& s : n.sigma_hat) s = static_cast<float>(s);
    n.mean_var = static_cast<float>(n.mean_var);
  }
  return norms;
}

template <typename T>
FeatureStats<T> compute_feature_stats(const Panel<T>& panel, const PanelNormStats& norms,
                                      const TeacherSampleSet<T>& s, double tau) {
  if (norms.per_backbone.size() != panel.backbones.size())
    throw ShapeError("norm stats cover " + std::to_string(norms.per_backbone.size()) + " backbones, panel has " +
                     std::to_string(panel.backbones.size()));
  FeatureStats<T> fs;
  fs.pair_id = s.pair_id;
  for (std::size_t k = 0; k < panel.backbones.size(); ++k) {
    auto [target, var] = feature_moments(*panel.backbones[k], norms.per_backbone[k], s, panel.grid());
    fs.targets.push_back(std::move(target));
    fs.vars.push_back(std::move(var));
  }
  fs.routing = routing_weights(fs.vars, norms, tau);
  return fs;
}

// JSON descriptor + FPX1 tensors under `dir`.
void save_norm_stats(const std::filesystem::path& dir, const PanelConfig& cfg, const PanelNormStats& norms);
std::pair<PanelConfig, PanelNormStats> load_norm_stats(const std::filesystem::path& dir);

}  // namespace fusionproxy

#endif  // FUSIONPROXY_PANEL_HPP_
