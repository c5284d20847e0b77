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

#ifndef FUSIONPROXY_OPTIM_HPP_
#define FUSIONPROXY_OPTIM_HPP_

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fusionproxy/fpx.hpp"
#include "fusionproxy/params.hpp"

namespace fusionproxy {

struct AdamWConfig {
  double lr = 1e-4;
  double lr_min = 1e-6;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.05;
  double clip_norm = 1.0;  // <= 0 disables clipping

  void validate() const {
    if (!(lr > 0) || lr_min < 0 || lr_min > lr) throw ConfigError("learning rates must satisfy 0 <= lr_min <= lr, lr > 0");
    if (!(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1)) throw ConfigError("adam betas must lie in [0, 1)");
    if (!(eps > 0) || weight_decay < 0) throw ConfigError("adam eps must be > 0 and weight decay >= 0");
  }
};

// Cosine decay from lr to lr_min over total_steps; holds lr_min afterwards.
inline double cosine_lr(const AdamWConfig& cfg, long step, long total_steps) {
  if (total_steps <= 1) return cfg.lr;
  const double t = std::min(1.0, static_cast<double>(step) / static_cast<double>(total_steps - 1));
  return cfg.lr_min + 0.5 * (cfg.lr - cfg.lr_min) * (1.0 + std::cos(std::numbers::pi * t));
}

// Decoupled weight decay Adam over a ParamStore. Decay applies to weights of
// rank >= 2 only; biases and per-channel affine terms are not decayed.
template <typename T>
class AdamW {
 public:
  AdamW(ParamStore<T>& params, AdamWConfig cfg) : params_(&params), cfg_(cfg) {
    cfg_.validate();
    for (const auto& e : params.entries()) {
      m_.emplace_back(e.var.shape());
      v_.emplace_back(e.var.shape());
    }
  }

  const AdamWConfig& config() const { return cfg_; }
  long steps() const { return t_; }

  // Global L2 norm of all gradients.
  double grad_norm() const {
    double sq = 0.0;
    for (const auto& e : params_->entries())
      if (e.var.has_grad())
        for (T g : e.var.grad().vec()) sq += static_cast<double>(g) * static_cast<double>(g);
    return std::sqrt(sq);
  }

  // One update at learning rate `lr`. Returns the pre-clip gradient norm.
  double step(double lr) {
    const double norm = grad_norm();
    const double scale = (cfg_.clip_norm > 0 && norm > cfg_.clip_norm) ? cfg_.clip_norm / norm : 1.0;
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    auto& entries = params_->entries();
    for (std::size_t i = 0; i < entries.size(); ++i) {
      auto& var = entries[i].var;
      Tensor<T>& p = var.mutable_value();
      const bool decay = p.rank() >= 2 && cfg_.weight_decay > 0;
      const bool has_grad = var.has_grad();
      for (std::size_t j = 0; j < p.size(); ++j) {
        const double g = has_grad ? static_cast<double>(var.grad()[j]) * scale : 0.0;
        double m = cfg_.beta1 * static_cast<double>(m_[i][j]) + (1.0 - cfg_.beta1) * g;
        double v = cfg_.beta2 * static_cast<double>(v_[i][j]) + (1.0 - cfg_.beta2) * g * g;
        m_[i][j] = static_cast<T>(m);
        v_[i][j] = static_cast<T>(v);
        double w = static_cast<double>(p[j]);
        if (decay) w -= lr * cfg_.weight_decay * w;
        w -= lr * (m / bc1) / (std::sqrt(v / bc2) + cfg_.eps);
        p[j] = static_cast<T>(w);
      }
    }
    return norm;
  }

  // State as <dir>/optim.json + <dir>/m/<name>.fpx + <dir>/v/<name>.fpx.
  void save(const std::filesystem::path& dir) const {
    std::filesystem::create_directories(dir / "m");
    std::filesystem::create_directories(dir / "v");
    const auto& entries = params_->entries();
    for (std::size_t i = 0; i < entries.size(); ++i) {
      write_fpx(dir / "m" / (entries[i].name + ".fpx"), m_[i].template cast<float>());
      write_fpx(dir / "v" / (entries[i].name + ".fpx"), v_[i].template cast<float>());
    }
    nlohmann::json j = {{"step", t_},
                        {"lr", cfg_.lr},
                        {"lr_min", cfg_.lr_min},
                        {"beta1", cfg_.beta1},
                        {"beta2", cfg_.beta2},
                        {"eps", cfg_.eps},
                        {"weight_decay", cfg_.weight_decay},
                        {"clip_norm", cfg_.clip_norm}};
    std::ofstream(dir / "optim.json") << j.dump(2) << "\n";
  }

  void load(const std::filesystem::path& dir) {
    std::ifstream is(dir / "optim.json");
    if (!is) throw IoError("optimizer state missing at " + dir.string());
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(is);
      t_ = j.at("step").get<long>();
    } catch (const nlohmann::json::exception& e) {
      throw IoError((dir / "optim.json").string() + ": " + e.what());
    }
    const auto& entries = params_->entries();
    for (std::size_t i = 0; i < entries.size(); ++i) {
      m_[i] = read_fpx_expect(dir / "m" / (entries[i].name + ".fpx"), entries[i].var.shape()).template cast<T>();
      v_[i] = read_fpx_expect(dir / "v" / (entries[i].name + ".fpx"), entries[i].var.shape()).template cast<T>();
    }
  }

 private:
  ParamStore<T>* params_;
  AdamWConfig cfg_;
  std::vector<Tensor<T>> m_, v_;
  long t_ = 0;
};

}  // namespace fusionproxy

#endif  // FUSIONPROXY_OPTIM_HPP_
