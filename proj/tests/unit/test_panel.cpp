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

#include <doctest.h>

#include <cmath>

#include "../oracles.hpp"
#include "../support.hpp"
#include "fusionproxy/imaging.hpp"
#include "fusionproxy/panel.hpp"

using namespace fusionproxy;
using fusionproxy::testing::TempDir;

namespace {

PanelNormStats unit_norms(int k, int channels = 1, double mean_var = 1.0 - 1e-3) {
  PanelNormStats n;
  for (int i = 0; i < k; ++i) n.per_backbone.push_back({std::vector<double>(channels, 1.0), mean_var});
  return n;
}

PanelConfig small_panel(int grid = 8) {
  PanelConfig cfg;
  cfg.grid = grid;
  cfg.backbones = {{"a", 11, 5, 4, Activation::kTanh, ""},
                   {"b", 12, 6, 8, Activation::kTanh, ""},
                   {"c", 13, 4, 4, Activation::kRelu, ""}};
  return cfg;
}

TeacherSampleSet<double> random_set(std::mt19937_64& rng, int count, int h, int w, const std::string& id = "r") {
  TeacherSampleSet<double> s;
  s.pair_id = id;
  for (int i = 0; i < count; ++i) {
    s.samples.push_back(testing::random_tensor<double>({3, h, w}, rng));
    s.source.push_back("t");
  }
  return s;
}

std::vector<Tensor<double>> normalized_per_sample(const Backbone<double>& b, const BackboneNorm& n,
                                                  const TeacherSampleSet<double>& s, int grid) {
  std::vector<Tensor<double>> out;
  for (const auto& y : s.samples) {
    auto f = resample_bilinear(b.extract(y), grid, grid);
    for (int c = 0; c < f.dim(0); ++c)
      for (auto& v : f.plane(c)) v /= n.sigma_hat[c];
    out.push_back(std::move(f));
  }
  return out;
}

double cosine(const Tensor<double>& a, const Tensor<double>& b) {
  double ab = 0, aa = 0, bb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  return ab / std::sqrt(aa * bb);
}

}  // namespace

TEST_SUITE("backbone") {
  TEST_CASE("same seed is bit identical, distinct seeds differ") {
    std::mt19937_64 rng(1);
    const auto img = testing::random_tensor<double>({3, 64, 64}, rng);
    auto a = standin_backbone<double>(7, 16, 8);
    auto b = standin_backbone<double>(7, 16, 8);
    auto c = standin_backbone<double>(8, 16, 8);
    CHECK(a->extract(img) == b->extract(img));
    CHECK(cosine(a->extract(img), c->extract(img)) < 0.99);
  }

  TEST_CASE("stride 16 on 256x256 gives a 16x16 map") {
    Tensor<float> img({3, 256, 256}, 0.5f);
    auto b = standin_backbone<float>(3, 12, 16);
    CHECK(b->extract(img).shape() == Shape{12, 16, 16});
    CHECK_THROWS_AS(standin_backbone<float>(3, 12, 5), ConfigError);
    CHECK_THROWS_AS(standin_backbone<float>(3, 0, 16), ConfigError);
    CHECK_THROWS_AS(b->extract(Tensor<float>({1, 32, 32})), ShapeError);
  }

  TEST_CASE("panel hash is stable and sensitive") {
    auto p1 = build_panel<float>(default_panel_config(16));
    auto p2 = build_panel<float>(default_panel_config(16));
    CHECK(panel_hash(p1) == panel_hash(p2));
    auto cfg = default_panel_config(16);
    cfg.backbones[2].seed += 1;
    CHECK(panel_hash(build_panel<float>(cfg)) != panel_hash(p1));
  }
}

TEST_SUITE("normalization") {
  TEST_CASE("unit sigma is plain resampling, doubled sigma halves") {
    std::mt19937_64 rng(2);
    const auto img = testing::random_tensor<double>({3, 32, 32}, rng);
    auto b = standin_backbone<double>(5, 4, 4);
    BackboneNorm one{{1, 1, 1, 1}, 0.0}, two{{2, 2, 2, 2}, 0.0};
    const auto raw = resample_bilinear(b->extract(img), 8, 8);
    const auto n1 = normalized_features(*b, one, img, 8);
    const auto n2 = normalized_features(*b, two, img, 8);
    CHECK(oracle::max_abs(n1, raw) < 1e-12);
    for (std::size_t i = 0; i < n1.size(); ++i) CHECK(n2[i] == doctest::Approx(0.5 * n1[i]).epsilon(1e-12));
    BackboneNorm wrong{{1, 1}, 0.0};
    CHECK_THROWS_AS(normalized_features(*b, wrong, img, 8), ShapeError);
  }

  TEST_CASE("fit_norm_stats matches a two-pass oracle") {
    std::mt19937_64 rng(3);
    const auto panel = build_panel<double>(small_panel());
    std::vector<TeacherSampleSet<double>> sets;
    for (int i = 0; i < 3; ++i) sets.push_back(random_set(rng, 4, 32, 32, "s" + std::to_string(i)));
    const auto norms = fit_norm_stats(panel, sets);
    REQUIRE(norms.per_backbone.size() == 3);
    for (int k = 0; k < panel.size(); ++k) {
      const auto& b = *panel.backbones[k];
      std::vector<Tensor<double>> raw;
      for (const auto& s : sets)
        for (const auto& y : s.samples) raw.push_back(resample_bilinear(b.extract(y), 8, 8));
      const auto sd = oracle::pooled_std(raw);
      for (int c = 0; c < b.channels(); ++c)
        CHECK(std::abs(norms.per_backbone[k].sigma_hat[c] - sd[c]) < 1e-9);

      double mv = 0.0;
      for (const auto& s : sets) {
        const auto v = oracle::channel_avg_variance(normalized_per_sample(b, norms.per_backbone[k], s, 8));
        double m = 0.0;
        for (double x : v.vec()) m += x;
        mv += m / static_cast<double>(v.size());
      }
      CHECK(std::abs(norms.per_backbone[k].mean_var - mv / 3.0) < 1e-9);

      // after normalization the pooled per-channel std is one
      std::vector<Tensor<double>> normed;
      for (const auto& s : sets)
        for (auto& f : normalized_per_sample(b, norms.per_backbone[k], s, 8)) normed.push_back(std::move(f));
      for (double v : oracle::pooled_std(normed)) {
        CHECK(v >= 0.95);
        CHECK(v <= 1.05);
      }
    }
    CHECK_THROWS_AS(fit_norm_stats(panel, {}), ConfigError);
  }

  TEST_CASE("duplicated data leaves the stats unchanged") {
    std::mt19937_64 rng(4);
    const auto panel = build_panel<double>(small_panel());
    std::vector<TeacherSampleSet<double>> sets{random_set(rng, 3, 32, 32)};
    const auto once = fit_norm_stats(panel, sets);
    sets.push_back(sets[0]);
    const auto twice = fit_norm_stats(panel, sets);
    for (int k = 0; k < 3; ++k) {
      CHECK(std::abs(once.per_backbone[k].mean_var - twice.per_backbone[k].mean_var) < 1e-12);
      for (std::size_t c = 0; c < once.per_backbone[k].sigma_hat.size(); ++c)
        CHECK(std::abs(once.per_backbone[k].sigma_hat[c] - twice.per_backbone[k].sigma_hat[c]) < 1e-12);
    }
  }

  TEST_CASE("constant features fall back to unit sigma") {
    const auto panel = build_panel<double>(small_panel());
    TeacherSampleSet<double> s;
    s.pair_id = "c";
    s.samples = {Tensor<double>({3, 32, 32}, 0.4)};
    s.source = {"t"};
    const auto norms = fit_norm_stats(panel, {s});
    for (const auto& n : norms.per_backbone) {
      for (double v : n.sigma_hat) CHECK(v == 1.0);
      CHECK(n.mean_var == 0.0);
    }
  }

  TEST_CASE("norm stats save and load") {
    TempDir dir;
    const auto cfg = small_panel();
    PanelNormStats n;
    n.per_backbone = {{{0.5, 1.5, 2.0, 3.0, 0.25}, 0.125}, {{1, 2, 3, 4, 5, 6}, 2.5}, {{1, 1, 1, 1}, 0.0}};
    save_norm_stats(dir.path(), cfg, n);
    const auto [cfg2, n2] = load_norm_stats(dir.path());
    CHECK(cfg2.grid == 8);
    REQUIRE(cfg2.backbones.size() == 3);
    CHECK(cfg2.backbones[1].stride == 8);
    CHECK(cfg2.backbones[2].activation == Activation::kRelu);
    CHECK(n2.per_backbone[0].sigma_hat == n.per_backbone[0].sigma_hat);
    CHECK(n2.per_backbone[1].mean_var == 2.5);
    CHECK_THROWS(load_norm_stats(dir / "missing"));
  }
}

TEST_SUITE("feature statistics") {
  TEST_CASE("feature variance and target match loop oracles") {
    std::mt19937_64 rng(5);
    const auto panel = build_panel<double>(small_panel());
    const auto s = random_set(rng, 6, 32, 32);
    const auto norms = fit_norm_stats(panel, {s});
    for (int k = 0; k < panel.size(); ++k) {
      const auto& b = *panel.backbones[k];
      const auto feats = normalized_per_sample(b, norms.per_backbone[k], s, 8);
      CHECK(oracle::max_abs(feature_target(b, norms.per_backbone[k], s, 8), oracle::mean(feats)) < 1e-9);
      CHECK(oracle::max_abs(feature_variance(b, norms.per_backbone[k], s, 8), oracle::channel_avg_variance(feats)) <
            1e-9);
    }
  }

  TEST_CASE("identical samples and a symmetric pair") {
    std::mt19937_64 rng(6);
    auto b = standin_backbone<double>(9, 5, 4, Activation::kIdentity);
    BackboneNorm n{{1, 1, 1, 1, 1}, 0.0};
    const auto x = testing::random_tensor<double>({3, 16, 16}, rng, -1.0, 1.0);
    TeacherSampleSet<double> same{"s", {x, x, x}, {"a", "a", "a"}};
    const auto same_var = feature_variance(*b, n, same, 4);
    for (double v : same_var.vec()) CHECK(v < 1e-24);
    CHECK(oracle::max_abs(feature_target(*b, n, same, 4), normalized_features(*b, n, x, 4)) < 1e-12);

    // two samples with features f and -f: variance is the channel mean of f^2
    StandinBackbone<double> lin({"lin", 9, 5, 4, Activation::kIdentity, ""});
    Tensor<double> zero({3, 16, 16});
    const auto bias = normalized_features(lin, n, zero, 4);
    auto f = normalized_features(lin, n, x, 4);
    f.array() -= bias.array();
    Tensor<double> neg = x;
    neg.array() *= -1.0;
    TeacherSampleSet<double> pm{"pm", {x, neg}, {"a", "b"}};
    const auto v = feature_variance(lin, n, pm, 4);
    Tensor<double> f2 = f;
    f2.array() *= f.array();
    CHECK(oracle::max_abs(v, channel_mean(f2)) < 1e-12);
  }

  TEST_CASE("target is the mean of features, not features of the mean") {
    std::mt19937_64 rng(7);
    const auto x = testing::random_tensor<double>({3, 16, 16}, rng, -1.0, 1.0);
    Tensor<double> neg = x;
    neg.array() *= -1.0;
    const auto y = testing::random_tensor<double>({3, 16, 16}, rng);
    const auto z = testing::random_tensor<double>({3, 16, 16}, rng);
    BackboneNorm n{{1, 1, 1, 1, 1, 1}, 0.0};
    Tensor<double> mid = y;
    mid.array() = 0.5 * (y.array() + z.array());

    StandinBackbone<double> lin({"lin", 21, 6, 4, Activation::kIdentity, ""});
    TeacherSampleSet<double> yz{"yz", {y, z}, {"a", "b"}};
    CHECK(oracle::max_abs(feature_target(lin, n, yz, 4), normalized_features(lin, n, mid, 4)) < 1e-9);

    StandinBackbone<double> relu({"relu", 21, 6, 4, Activation::kRelu, ""});
    TeacherSampleSet<double> pm{"pm", {x, neg}, {"a", "b"}};
    Tensor<double> zero({3, 16, 16});
    CHECK(oracle::max_abs(feature_target(relu, n, pm, 4), normalized_features(relu, n, zero, 4)) > 1e-3);
  }
}

TEST_SUITE("routing") {
  TEST_CASE("two-backbone softmax value") {
    const auto norms = unit_norms(2);
    const auto w = routing_weights<double>({Tensor<double>({1, 1}, 1.0), Tensor<double>({1, 1}, 0.0)}, norms, 1.0);
    CHECK(w[0] == doctest::Approx(0.7311).epsilon(1e-4));
    CHECK(w[1] == doctest::Approx(0.2689).epsilon(1e-4));
    CHECK_THROWS_AS(routing_weights<double>({Tensor<double>({1, 1})}, norms, 1.0), ShapeError);
    CHECK_THROWS_AS(routing_weights<double>({Tensor<double>({1, 1}), Tensor<double>({1, 1})}, norms, 0.0),
                    ConfigError);
  }

  TEST_CASE("equal logits and large tau give uniform weights") {
    std::mt19937_64 rng(8);
    PanelNormStats norms;
    norms.per_backbone = {{{1}, 0.5}, {{1}, 2.0}, {{1}, 1.0}, {{1}, 0.1}};
    std::vector<Tensor<double>> vars;
    for (int k = 0; k < 4; ++k) vars.push_back(testing::random_tensor<double>({6, 6}, rng, 0.0, 3.0));
    const auto w = routing_weights(vars, norms, 1e6);
    for (double v : w.vec()) CHECK(std::abs(v - 0.25) < 1e-4);

    std::vector<Tensor<double>> eq;
    for (int k = 0; k < 4; ++k) eq.push_back(Tensor<double>({3, 3}, 0.7 * (norms.per_backbone[k].mean_var + 1e-3)));
    for (double tau : {0.1, 1.0, 5.0}) {
      const auto uniform = routing_weights(eq, norms, tau);
      for (double v : uniform.vec()) CHECK(v == doctest::Approx(0.25).epsilon(1e-12));
    }
  }

  TEST_CASE("sum to one, loop oracle, shift invariance, entropy monotone in tau") {
    std::mt19937_64 rng(9);
    PanelNormStats norms;
    norms.per_backbone = {{{1}, 0.3}, {{1}, 1.7}, {{1}, 0.9}};
    std::vector<Tensor<double>> vars;
    for (int k = 0; k < 3; ++k) vars.push_back(testing::random_tensor<double>({8, 8}, rng, 0.0, 2.0));
    const auto w = routing_weights(vars, norms, 1.0);
    CHECK(oracle::max_abs(w, oracle::routing(vars, {0.3, 1.7, 0.9}, 1.0, 1e-3)) < 1e-9);
    for (int p = 0; p < 64; ++p) CHECK(std::abs(w[p] + w[64 + p] + w[128 + p] - 1.0) < 1e-6);

    auto shifted = vars;
    for (int k = 0; k < 3; ++k) shifted[k].array() += 2.5 * (norms.per_backbone[k].mean_var + 1e-3);
    CHECK(oracle::max_abs(routing_weights(shifted, norms, 1.0), w) < 1e-12);

    Tensor<double> prev;
    for (double tau : {0.1, 0.5, 1.0, 2.0, 5.0}) {
      const auto e = routing_entropy(routing_weights(vars, norms, tau));
      if (!prev.empty())
        for (std::size_t i = 0; i < e.size(); ++i) CHECK(e[i] >= prev[i] - 1e-12);
      prev = e;
    }
  }

  TEST_CASE("compute_feature_stats routes over the panel") {
    std::mt19937_64 rng(10);
    const auto panel = build_panel<double>(small_panel());
    const auto s = random_set(rng, 4, 32, 32, "pair");
    const auto norms = fit_norm_stats(panel, {s});
    const auto fs = compute_feature_stats(panel, norms, s, 1.0);
    CHECK(fs.pair_id == "pair");
    REQUIRE(fs.targets.size() == 3);
    CHECK(fs.targets[1].shape() == Shape{6, 8, 8});
    CHECK(fs.routing.shape() == Shape{3, 8, 8});
    std::vector<double> mv;
    for (const auto& n : norms.per_backbone) mv.push_back(n.mean_var);
    CHECK(oracle::max_abs(fs.routing, oracle::routing(fs.vars, mv, 1.0, 1e-3)) < 1e-9);
  }
}
