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

#ifndef FUSIONPROXY_LOSS_HPP_
#define FUSIONPROXY_LOSS_HPP_

#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "fusionproxy/autograd.hpp"
#include "fusionproxy/panel.hpp"
#include "fusionproxy/teacher.hpp"

namespace fusionproxy {

struct LossWeights {
  double pix = 1.0;
  double mfm = 0.5;
  double ssim = 0.2;

  void validate() const {
    if (pix < 0 || mfm < 0 || ssim < 0) throw ConfigError("loss weights must be >= 0");
  }
};

struct LossBreakdown {
  double pix = 0.0;
  double mfm = 0.0;
  double ssim = 0.0;
  double total = 0.0;
};

// ------------------------------------------------------------------ pixel

// sum_p w(p) * sum_c |pred(c,p) - mean(c,p)|. The subgradient at a tie is 0.
template <typename T>
ad::Var<T> pixel_loss(const ad::Var<T>& pred, const Tensor<T>& mean, const Tensor<T>& weights) {
  require_same_shape(pred.value(), mean, "pixel_loss");
  const int c = mean.dim(0);
  const std::size_t hw = static_cast<std::size_t>(mean.dim(1)) * mean.dim(2);
  if (weights.size() != hw) throw ShapeError("pixel_loss: weights " + shape_str(weights.shape()) + " vs image " +
                                             shape_str(mean.shape()));
  T total = 0;
  for (int k = 0; k < c; ++k)
    for (std::size_t p = 0; p < hw; ++p) total += weights[p] * std::abs(pred.value()[k * hw + p] - mean[k * hw + p]);
  return ad::make_op<T>(Tensor<T>({1}, total), {pred}, [mean, weights, c, hw](ad::Node<T>& n) {
    auto& p = *n.parents[0];
    auto& g = p.grad_buffer();
    const T s = n.grad[0];
    for (int k = 0; k < c; ++k)
      for (std::size_t i = 0; i < hw; ++i) {
        const T d = p.value[k * hw + i] - mean[k * hw + i];
        if (d > T(0))
          g[k * hw + i] += s * weights[i];
        else if (d < T(0))
          g[k * hw + i] -= s * weights[i];
      }
  });
}

template <typename T>
T pixel_loss(const Tensor<T>& pred, const Tensor<T>& mean, const Tensor<T>& weights) {
  ad::NoGradGuard guard;
  return pixel_loss(ad::Var<T>(pred), mean, weights).value()[0];
}

// ------------------------------------------------------------------ mfm

// sum_p routing(p) * ||feat(:,p) - target(:,p)||^2, unnormalized.
template <typename T>
ad::Var<T> routed_sq_error(const ad::Var<T>& feat, const Tensor<T>& target, const Tensor<T>& routing_slice) {
  require_same_shape(feat.value(), target, "mfm features");
  const int c = target.dim(0);
  const std::size_t cells = static_cast<std::size_t>(target.dim(1)) * target.dim(2);
  if (routing_slice.size() != cells) throw ShapeError("mfm: routing slice does not match the feature grid");
  T total = 0;
  for (int k = 0; k < c; ++k)
    for (std::size_t p = 0; p < cells; ++p) {
      const T d = feat.value()[k * cells + p] - target[k * cells + p];
      total += routing_slice[p] * d * d;
    }
  return ad::make_op<T>(Tensor<T>({1}, total), {feat}, [target, routing_slice, c, cells](ad::Node<T>& n) {
    auto& f = *n.parents[0];
    auto& g = f.grad_buffer();
    const T s = T(2) * n.grad[0];
    for (int k = 0; k < c; ++k)
      for (std::size_t p = 0; p < cells; ++p)
        g[k * cells + p] += s * routing_slice[p] * (f.value[k * cells + p] - target[k * cells + p]);
  });
}

template <typename T>
Tensor<T> routing_slice(const Tensor<T>& routing, int k) {
  const int h = routing.dim(1), w = routing.dim(2);
  Tensor<T> out({h, w});
  std::copy_n(routing.data() + static_cast<std::size_t>(k) * h * w, static_cast<std::size_t>(h) * w, out.data());
  return out;
}

// (1/|Omega|) sum_k sum_p W_k(p) ||pred_k(p) - target_k(p)||^2.
template <typename T>
ad::Var<T> mfm_loss(const std::vector<ad::Var<T>>& pred_feats, const std::vector<Tensor<T>>& targets,
                    const Tensor<T>& routing) {
  const std::size_t k = targets.size();
  if (pred_feats.size() != k || routing.rank() != 3 || static_cast<std::size_t>(routing.dim(0)) != k)
    throw ShapeError("mfm_loss: panel mismatch between features, targets and routing");
  const T cells = static_cast<T>(routing.dim(1)) * static_cast<T>(routing.dim(2));
  std::vector<ad::Var<T>> terms;
  for (std::size_t i = 0; i < k; ++i)
    terms.push_back(routed_sq_error(pred_feats[i], targets[i], routing_slice(routing, static_cast<int>(i))));
  return ad::weighted_sum(terms, std::vector<T>(k, T(1) / cells));
}

template <typename T>
T mfm_loss(const std::vector<Tensor<T>>& pred_feats, const std::vector<Tensor<T>>& targets, const Tensor<T>& routing) {
  ad::NoGradGuard guard;
  std::vector<ad::Var<T>> vars;
  for (const auto& f : pred_feats) vars.emplace_back(f);
  return mfm_loss(vars, targets, routing).value()[0];
}

// ------------------------------------------------------------------ ssim

// Gaussian SSIM window and stabilizers (dynamic range 1).
inline constexpr int kSsimWindow = 11;
inline constexpr double kSsimSigma = 1.5;
inline constexpr double kSsimK1 = 0.01;
inline constexpr double kSsimK2 = 0.03;

template <typename T>
std::array<T, kSsimWindow> ssim_taps() {
  std::array<double, kSsimWindow> g{};
  double s = 0;
  for (int i = 0; i < kSsimWindow; ++i) {
    const double d = i - kSsimWindow / 2;
    s += (g[i] = std::exp(-d * d / (2 * kSsimSigma * kSsimSigma)));
  }
  std::array<T, kSsimWindow> out{};
  for (int i = 0; i < kSsimWindow; ++i) out[i] = static_cast<T>(g[i] / s);
  return out;
}

namespace detail {

// Separable "valid" Gaussian filtering of an h x w plane.
template <typename T>
std::vector<T> gauss_valid(const T* src, int h, int w) {
  const auto g = ssim_taps<T>();
  const int hv = h - kSsimWindow + 1, wv = w - kSsimWindow + 1;
  std::vector<T> tmp(static_cast<std::size_t>(h) * wv), out(static_cast<std::size_t>(hv) * wv);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < wv; ++x) {
      T s = 0;
      for (int i = 0; i < kSsimWindow; ++i) s += g[i] * src[static_cast<std::size_t>(y) * w + x + i];
      tmp[static_cast<std::size_t>(y) * wv + x] = s;
    }
  for (int y = 0; y < hv; ++y)
    for (int x = 0; x < wv; ++x) {
      T s = 0;
      for (int i = 0; i < kSsimWindow; ++i) s += g[i] * tmp[static_cast<std::size_t>(y + i) * wv + x];
      out[static_cast<std::size_t>(y) * wv + x] = s;
    }
  return out;
}

// Adjoint of gauss_valid: scatters an hv x wv map back onto h x w.
template <typename T>
std::vector<T> gauss_valid_adjoint(const std::vector<T>& g_map, int h, int w) {
  const auto g = ssim_taps<T>();
  const int hv = h - kSsimWindow + 1, wv = w - kSsimWindow + 1;
  std::vector<T> tmp(static_cast<std::size_t>(h) * wv, T(0)), out(static_cast<std::size_t>(h) * w, T(0));
  for (int y = 0; y < hv; ++y)
    for (int x = 0; x < wv; ++x) {
      const T v = g_map[static_cast<std::size_t>(y) * wv + x];
      for (int i = 0; i < kSsimWindow; ++i) tmp[static_cast<std::size_t>(y + i) * wv + x] += g[i] * v;
    }
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < wv; ++x) {
      const T v = tmp[static_cast<std::size_t>(y) * wv + x];
      for (int i = 0; i < kSsimWindow; ++i) out[static_cast<std::size_t>(y) * w + x + i] += g[i] * v;
    }
  return out;
}

template <typename T>
void require_ssim_size(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "ssim");
  if (a.rank() != 3 || a.dim(1) < kSsimWindow || a.dim(2) < kSsimWindow)
    throw ShapeError("ssim: image " + shape_str(a.shape()) + " smaller than the 11x11 window");
}

}  // namespace detail

// Mean SSIM over channels and valid window positions, differentiable in `a`.
template <typename T>
ad::Var<T> ssim(const ad::Var<T>& a, const Tensor<T>& b) {
  detail::require_ssim_size(a.value(), b);
  const int c = b.dim(0), h = b.dim(1), w = b.dim(2);
  const int hv = h - kSsimWindow + 1, wv = w - kSsimWindow + 1;
  const std::size_t nv = static_cast<std::size_t>(hv) * wv;
  const T c1 = static_cast<T>(kSsimK1 * kSsimK1), c2 = static_cast<T>(kSsimK2 * kSsimK2);
  const T count = static_cast<T>(c) * static_cast<T>(nv);
  // Per-channel partials dS/dmu_a, dS/dE[a^2], dS/dE[ab], already divided by count.
  std::vector<std::vector<T>> d_mu(c), d_aa(c), d_ab(c);
  T total = 0;
  const bool keep = ad::grad_mode() && a.requires_grad();
  for (int k = 0; k < c; ++k) {
    const T* pa = a.value().data() + static_cast<std::size_t>(k) * h * w;
    const T* pb = b.data() + static_cast<std::size_t>(k) * h * w;
    std::vector<T> aa(static_cast<std::size_t>(h) * w), bb(aa.size()), ab(aa.size());
    for (std::size_t i = 0; i < aa.size(); ++i) {
      aa[i] = pa[i] * pa[i];
      bb[i] = pb[i] * pb[i];
      ab[i] = pa[i] * pb[i];
    }
    const auto mu_a = detail::gauss_valid(pa, h, w), mu_b = detail::gauss_valid(pb, h, w);
    const auto e_aa = detail::gauss_valid(aa.data(), h, w), e_bb = detail::gauss_valid(bb.data(), h, w);
    const auto e_ab = detail::gauss_valid(ab.data(), h, w);
    if (keep) {
      d_mu[k].resize(nv);
      d_aa[k].resize(nv);
      d_ab[k].resize(nv);
    }
    for (std::size_t p = 0; p < nv; ++p) {
      const T ma = mu_a[p], mb = mu_b[p];
      const T saa = e_aa[p] - ma * ma, sbb = e_bb[p] - mb * mb, sab = e_ab[p] - ma * mb;
      const T a1 = T(2) * ma * mb + c1, a2 = T(2) * sab + c2;
      const T b1 = ma * ma + mb * mb + c1, b2 = saa + sbb + c2;
      const T s = (a1 * a2) / (b1 * b2);
      total += s;
      if (keep) {
        d_mu[k][p] = s * (T(2) * mb / a1 - T(2) * mb / a2 - T(2) * ma / b1 + T(2) * ma / b2) / count;
        d_aa[k][p] = -s / b2 / count;
        d_ab[k][p] = T(2) * s / a2 / count;
      }
    }
  }
  return ad::make_op<T>(
      Tensor<T>({1}, total / count), {a},
      [b, c, h, w, d_mu = std::move(d_mu), d_aa = std::move(d_aa), d_ab = std::move(d_ab)](ad::Node<T>& n) {
        auto& pa = *n.parents[0];
        auto& g = pa.grad_buffer();
        const T s = n.grad[0];
        for (int k = 0; k < c; ++k) {
          const auto g_mu = detail::gauss_valid_adjoint(d_mu[k], h, w);
          const auto g_aa = detail::gauss_valid_adjoint(d_aa[k], h, w);
          const auto g_ab = detail::gauss_valid_adjoint(d_ab[k], h, w);
          const std::size_t off = static_cast<std::size_t>(k) * h * w;
          for (std::size_t i = 0; i < g_mu.size(); ++i)
            g[off + i] += s * (g_mu[i] + T(2) * pa.value[off + i] * g_aa[i] + b[off + i] * g_ab[i]);
        }
      });
}

template <typename T>
T ssim(const Tensor<T>& a, const Tensor<T>& b) {
  ad::NoGradGuard guard;
  return ssim(ad::Var<T>(a), b).value()[0];
}

template <typename T>
ad::Var<T> ssim_loss(const ad::Var<T>& pred, const Tensor<T>& mean) {
  auto s = ssim(pred, mean);
  return ad::make_op<T>(Tensor<T>({1}, T(1) - s.value()[0]), {s},
                        [](ad::Node<T>& n) { n.parents[0]->grad_buffer()[0] -= n.grad[0]; });
}

template <typename T>
T ssim_loss(const Tensor<T>& pred, const Tensor<T>& mean) {
  return T(1) - ssim(pred, mean);
}

// ------------------------------------------------------------------ total

template <typename T>
struct LossTerms {
  ad::Var<T> pix, mfm, ssim, total;

  LossBreakdown breakdown() const {
    return {static_cast<double>(pix.value()[0]), static_cast<double>(mfm.value()[0]),
            static_cast<double>(ssim.value()[0]), static_cast<double>(total.value()[0])};
  }
};

// Normalized panel features of `pred`, resampled to the grid window that
// `fstats` covers.
template <typename T>
std::vector<ad::Var<T>> panel_features(const ad::Var<T>& pred, const Panel<T>& panel, const PanelNormStats& norms,
                                       int grid_h, int grid_w) {
  if (norms.per_backbone.size() != panel.backbones.size())
    throw ShapeError("panel/norm size mismatch");
  std::vector<ad::Var<T>> feats;
  for (std::size_t k = 0; k < panel.backbones.size(); ++k)
    feats.push_back(normalized_features(*panel.backbones[k], norms.per_backbone[k], pred, grid_h, grid_w));
  return feats;
}

template <typename T>
LossTerms<T> total_loss(const ad::Var<T>& pred, const EnsembleStats<T>& stats, const FeatureStats<T>& fstats,
                        const Panel<T>& panel, const PanelNormStats& norms, const LossWeights& w) {
  if (stats.pair_id != fstats.pair_id)
    throw ConfigError("total_loss: ensemble stats for \"" + stats.pair_id + "\" but feature stats for \"" +
                      fstats.pair_id + "\"");
  w.validate();
  LossTerms<T> out;
  out.pix = pixel_loss(pred, stats.mean, stats.pixel_weights);
  const auto feats = panel_features(pred, panel, norms, fstats.routing.dim(1), fstats.routing.dim(2));
  out.mfm = mfm_loss(feats, fstats.targets, fstats.routing);
  out.ssim = ssim_loss(pred, stats.mean);
  out.total = ad::weighted_sum<T>({out.pix, out.mfm, out.ssim},
                                  {static_cast<T>(w.pix), static_cast<T>(w.mfm), static_cast<T>(w.ssim)});
  return out;
}

template <typename T>
LossBreakdown total_loss(const Tensor<T>& pred, const EnsembleStats<T>& stats, const FeatureStats<T>& fstats,
                         const Panel<T>& panel, const PanelNormStats& norms, const LossWeights& w) {
  ad::NoGradGuard guard;
  return total_loss(ad::Var<T>(pred), stats, fstats, panel, norms, w).breakdown();
}

inline double combine(const LossBreakdown& b, const LossWeights& w) {
  return w.pix * b.pix + w.mfm * b.mfm + w.ssim * b.ssim;
}

}  // namespace fusionproxy

#endif  // FUSIONPROXY_LOSS_HPP_
