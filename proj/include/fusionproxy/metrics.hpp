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

#ifndef FUSIONPROXY_METRICS_HPP_
#define FUSIONPROXY_METRICS_HPP_

#include <array>
#include <filesystem>
#include <map>
#include <optional>
#include <string>

#include <nlohmann/json.hpp>

#include "fusionproxy/tensor.hpp"

namespace fusionproxy {

// Classical fusion quality metrics. Inputs are images with values in [0,1],
// either [H,W] or [C,H,W]; multi-channel images are reduced to grayscale by
// the unweighted channel mean.

Tensor<double> to_gray(const Tensor<float>& image);
Tensor<double> to_gray(const Tensor<double>& image);

// 256-bin histogram of round(v * 255) clamped to [0,255].
std::array<double, 256> histogram(const Tensor<double>& gray);

// Shannon entropy in bits of the 8-bit histogram.
double entropy(const Tensor<double>& gray);

// MI(a; b) in bits from the 256x256 joint histogram.
double mutual_information(const Tensor<double>& a, const Tensor<double>& b);

// MI(fused; ir) + MI(fused; vis).
double mutual_information(const Tensor<double>& fused, const Tensor<double>& ir, const Tensor<double>& vis);

// sqrt(RF^2 + CF^2) on the 0..255 scale. RF is the RMS of horizontal first
// differences, CF the RMS of vertical ones.
double spatial_frequency(const Tensor<double>& gray);

// Gradient-preservation index with the usual sigmoid constants.
struct QabfParams {
  double gamma_g = 0.9994;
  double kappa_g = -15.0;
  double sigma_g = 0.5;
  double gamma_a = 0.9879;
  double kappa_a = -22.0;
  double sigma_a = 0.8;
  double weight_exponent = 1.0;  // L
};

// Returns 0 when neither source has any gradient.
double q_abf(const Tensor<double>& fused, const Tensor<double>& a, const Tensor<double>& b,
             const QabfParams& params = {});

// Largest value q_abf can reach: both sigmoids evaluated at perfect
// preservation.
double q_abf_ceiling(const QabfParams& params = {});

struct MetricValues {
  double en = 0.0;
  double mi = 0.0;
  double sf = 0.0;
  double qabf = 0.0;
  std::optional<double> ssim;  // vs a reference, when one is given
};

MetricValues evaluate_images(const Tensor<float>& fused, const Tensor<float>& ir, const Tensor<float>& vis,
                             const Tensor<float>* reference = nullptr);

struct MetricReport {
  std::map<std::string, MetricValues> per_image;  // ordered by id
  MetricValues aggregate;
  int count = 0;
};

// Arithmetic means over per_image.
MetricValues aggregate(const std::map<std::string, MetricValues>& per_image);

MetricReport evaluate_dir(const std::filesystem::path& fused_dir, const std::filesystem::path& ir_dir,
                          const std::filesystem::path& vis_dir,
                          const std::optional<std::filesystem::path>& reference_dir = std::nullopt);

nlohmann::json to_json(const MetricValues& v);
nlohmann::json to_json(const MetricReport& r);
MetricValues metric_values_from_json(const nlohmann::json& j);
MetricReport metric_report_from_json(const nlohmann::json& j);

}  // namespace fusionproxy

#endif  // FUSIONPROXY_METRICS_HPP_
