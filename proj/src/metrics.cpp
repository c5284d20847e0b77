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

#include "fusionproxy/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <vector>

#include "fusionproxy/loss.hpp"
#include "fusionproxy/png_io.hpp"

namespace fusionproxy {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void require_plane(const Tensor<double>& g, const char* what) {
  if (g.rank() != 2 || g.size() == 0) throw ShapeError(std::string(what) + ": expected a nonempty [H,W] image");
}

template <typename T>
Tensor<double> gray_impl(const Tensor<T>& image) {
  if (image.rank() == 2) return image.template cast<double>();
  if (image.rank() != 3) throw ShapeError("metrics: image must be [H,W] or [C,H,W], got " + shape_str(image.shape()));
  return channel_mean(image.template cast<double>());
}

double entropy_bits(const double* p, std::size_t n) {
  double h = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    if (p[i] > 0) h -= p[i] * std::log2(p[i]);
  return h;
}

// Replicate-padded 3x3 Sobel responses.
void sobel(const Tensor<double>& g, Tensor<double>& gx, Tensor<double>& gy) {
  const int h = g.dim(0), w = g.dim(1);
  gx = Tensor<double>({h, w});
  gy = Tensor<double>({h, w});
  auto at = [&](int y, int x) { return g(std::clamp(y, 0, h - 1), std::clamp(x, 0, w - 1)); };
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      gx(y, x) = (at(y - 1, x + 1) + 2 * at(y, x + 1) + at(y + 1, x + 1)) -
                 (at(y - 1, x - 1) + 2 * at(y, x - 1) + at(y + 1, x - 1));
      gy(y, x) = (at(y + 1, x - 1) + 2 * at(y + 1, x) + at(y + 1, x + 1)) -
                 (at(y - 1, x - 1) + 2 * at(y - 1, x) + at(y - 1, x + 1));
    }
}

struct EdgeField {
  Tensor<double> strength, orientation;
};

EdgeField edges(const Tensor<double>& g) {
  Tensor<double> gx, gy;
  sobel(g, gx, gy);
  EdgeField e{Tensor<double>(g.shape()), Tensor<double>(g.shape())};
  for (std::size_t i = 0; i < g.size(); ++i) {
    e.strength[i] = std::hypot(gx[i], gy[i]);
    e.orientation[i] = gx[i] == 0.0 ? std::numbers::pi / 2 : std::atan(gy[i] / gx[i]);
  }
  return e;
}

// Per-pixel preservation Q^{SF} of source edges in the fused image.
double preservation(double g_src, double a_src, double g_f, double a_f, const QabfParams& p) {
  double rel;
  if (g_src == g_f)
    rel = 1.0;
  else
    rel = g_src > g_f ? g_f / g_src : g_src / g_f;
  const double orient = 1.0 - std::abs(a_src - a_f) / (std::numbers::pi / 2);
  const double qg = p.gamma_g / (1.0 + std::exp(p.kappa_g * (rel - p.sigma_g)));
  const double qa = p.gamma_a / (1.0 + std::exp(p.kappa_a * (orient - p.sigma_a)));
  return qg * qa;
}

std::map<std::string, fs::path> list_png(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw IoError("not a directory: " + dir.string());
  std::map<std::string, fs::path> out;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".png") out[e.path().stem().string()] = e.path();
  return out;
}

}  // namespace

Tensor<double> to_gray(const Tensor<float>& image) { return gray_impl(image); }
Tensor<double> to_gray(const Tensor<double>& image) { return gray_impl(image); }

std::array<double, 256> histogram(const Tensor<double>& gray) {
  std::array<double, 256> hist{};
  for (double v : gray.vec()) hist[to_u8(v)] += 1.0;
  return hist;
}

double entropy(const Tensor<double>& gray) {
  require_plane(gray, "entropy");
  auto hist = histogram(gray);
  for (auto& v : hist) v /= static_cast<double>(gray.size());
  return entropy_bits(hist.data(), hist.size());
}

double mutual_information(const Tensor<double>& a, const Tensor<double>& b) {
  require_plane(a, "mutual_information");
  require_same_shape(a, b, "mutual_information");
  std::vector<double> joint(256 * 256, 0.0);
  std::array<double, 256> pa{}, pb{};
  const double n = static_cast<double>(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    const int qa = to_u8(a[i]), qb = to_u8(b[i]);
    joint[qa * 256 + qb] += 1.0 / n;
    pa[qa] += 1.0 / n;
    pb[qb] += 1.0 / n;
  }
  double mi = 0.0;
  for (int i = 0; i < 256; ++i)
    for (int j = 0; j < 256; ++j) {
      const double pij = joint[i * 256 + j];
      if (pij > 0) mi += pij * std::log2(pij / (pa[i] * pb[j]));
    }
  return std::max(0.0, mi);
}

double mutual_information(const Tensor<double>& fused, const Tensor<double>& ir, const Tensor<double>& vis) {
  return mutual_information(fused, ir) + mutual_information(fused, vis);
}

double spatial_frequency(const Tensor<double>& gray) {
  require_plane(gray, "spatial_frequency");
  const int h = gray.dim(0), w = gray.dim(1);
  if (h < 2 || w < 2) throw ShapeError("spatial_frequency: image must be at least 2x2");
  double row = 0.0, col = 0.0;
  for (int y = 0; y < h; ++y)
    for (int x = 1; x < w; ++x) {
      const double d = 255.0 * (gray(y, x) - gray(y, x - 1));
      row += d * d;
    }
  for (int y = 1; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double d = 255.0 * (gray(y, x) - gray(y - 1, x));
      col += d * d;
    }
  row /= static_cast<double>(h) * (w - 1);
  col /= static_cast<double>(h - 1) * w;
  return std::sqrt(row + col);
}

double q_abf(const Tensor<double>& fused, const Tensor<double>& a, const Tensor<double>& b, const QabfParams& p) {
  require_plane(fused, "q_abf");
  require_same_shape(fused, a, "q_abf");
  require_same_shape(fused, b, "q_abf");
  const EdgeField ef = edges(fused), ea = edges(a), eb = edges(b);
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < fused.size(); ++i) {
    const double wa = std::pow(ea.strength[i], p.weight_exponent);
    const double wb = std::pow(eb.strength[i], p.weight_exponent);
    if (wa > 0)
      num += wa * preservation(ea.strength[i], ea.orientation[i], ef.strength[i], ef.orientation[i], p);
    if (wb > 0)
      num += wb * preservation(eb.strength[i], eb.orientation[i], ef.strength[i], ef.orientation[i], p);
    den += wa + wb;
  }
  if (den <= 0) return 0.0;
  return std::clamp(num / den, 0.0, 1.0);
}

double q_abf_ceiling(const QabfParams& p) {
  return p.gamma_g / (1.0 + std::exp(p.kappa_g * (1.0 - p.sigma_g))) *
         (p.gamma_a / (1.0 + std::exp(p.kappa_a * (1.0 - p.sigma_a))));
}

MetricValues evaluate_images(const Tensor<float>& fused, const Tensor<float>& ir, const Tensor<float>& vis,
                             const Tensor<float>* reference) {
  const Tensor<double> f = to_gray(fused), a = to_gray(ir), b = to_gray(vis);
  MetricValues v;
  v.en = entropy(f);
  v.mi = mutual_information(f, a, b);
  v.sf = spatial_frequency(f);
  v.qabf = q_abf(f, a, b);
  if (reference) {
    if (reference->shape() == fused.shape() && fused.rank() == 3) {
      v.ssim = ssim(fused.cast<double>(), reference->cast<double>());
    } else {
      const Tensor<double> r = to_gray(*reference);
      v.ssim = ssim(f.reshaped({1, f.dim(0), f.dim(1)}), r.reshaped({1, r.dim(0), r.dim(1)}));
    }
  }
  return v;
}

MetricValues aggregate(const std::map<std::string, MetricValues>& per_image) {
  MetricValues agg;
  if (per_image.empty()) return agg;
  const double n = static_cast<double>(per_image.size());
  bool all_ssim = true;
  double ssim_sum = 0.0;
  for (const auto& [_, v] : per_image) {
    agg.en += v.en / n;
    agg.mi += v.mi / n;
    agg.sf += v.sf / n;
    agg.qabf += v.qabf / n;
    if (v.ssim)
      ssim_sum += *v.ssim / n;
    else
      all_ssim = false;
  }
  if (all_ssim) agg.ssim = ssim_sum;
  return agg;
}

MetricReport evaluate_dir(const fs::path& fused_dir, const fs::path& ir_dir, const fs::path& vis_dir,
                          const std::optional<fs::path>& reference_dir) {
  const auto fused = list_png(fused_dir), ir = list_png(ir_dir), vis = list_png(vis_dir);
  std::map<std::string, fs::path> ref;
  if (reference_dir) ref = list_png(*reference_dir);
  if (fused.empty()) throw IoError("no fused images in " + fused_dir.string());

  std::vector<std::string> orphans;
  auto check = [&](const std::map<std::string, fs::path>& other, const std::string& label) {
    for (const auto& [id, _] : fused)
      if (!other.count(id)) orphans.push_back(id + " (no " + label + ")");
    for (const auto& [id, _] : other)
      if (!fused.count(id)) orphans.push_back(id + " (no fused)");
  };
  check(ir, "ir");
  check(vis, "vis");
  if (reference_dir) check(ref, "reference");
  if (!orphans.empty()) {
    std::sort(orphans.begin(), orphans.end());
    orphans.erase(std::unique(orphans.begin(), orphans.end()), orphans.end());
    std::string msg = "orphan ids:";
    for (const auto& o : orphans) msg += " " + o;
    throw IoError(msg);
  }

  MetricReport report;
  for (const auto& [id, path] : fused) {
    const Tensor<float> f = read_png_rgb(path);
    const Tensor<float> a = read_png_gray(ir.at(id));
    const Tensor<float> b = read_png_rgb(vis.at(id));
    std::optional<Tensor<float>> r;
    if (reference_dir) r = read_png_rgb(ref.at(id));
    report.per_image[id] = evaluate_images(f, a, b, r ? &*r : nullptr);
  }
  report.count = static_cast<int>(report.per_image.size());
  report.aggregate = aggregate(report.per_image);
  return report;
}

json to_json(const MetricValues& v) {
  json j = {{"EN", v.en}, {"MI", v.mi}, {"SF", v.sf}, {"Q_abf", v.qabf}};
  if (v.ssim) j["SSIM"] = *v.ssim;
  return j;
}

json to_json(const MetricReport& r) {
  json per = json::object();
  for (const auto& [id, v] : r.per_image) per[id] = to_json(v);
  return {{"count", r.count}, {"per_image", per}, {"aggregate", to_json(r.aggregate)}};
}

MetricValues metric_values_from_json(const json& j) {
  MetricValues v;
  v.en = j.at("EN").get<double>();
  v.mi = j.at("MI").get<double>();
  v.sf = j.at("SF").get<double>();
  v.qabf = j.at("Q_abf").get<double>();
  if (j.contains("SSIM")) v.ssim = j.at("SSIM").get<double>();
  return v;
}

MetricReport metric_report_from_json(const json& j) {
  MetricReport r;
  r.count = j.at("count").get<int>();
  for (const auto& [id, v] : j.at("per_image").items()) r.per_image[id] = metric_values_from_json(v);
  r.aggregate = metric_values_from_json(j.at("aggregate"));
  return r;
}

}  // namespace fusionproxy
