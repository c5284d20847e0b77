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

// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any fails.

#include <chrono>
#include <cmath>
#include <cstring>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "../oracles.hpp"
#include "../support.hpp"
#include "fusionproxy/bench.hpp"
#include "fusionproxy/fpx.hpp"
#include "fusionproxy/loss.hpp"
#include "fusionproxy/metrics.hpp"
#include "fusionproxy/synth.hpp"
#include "fusionproxy/trainer.hpp"

using namespace fusionproxy;
using fusionproxy::testing::TempDir;

namespace {

// Collects named sub-checks; a criterion passes when all of them hold.
class Checks {
 public:
  void expect(bool ok, const std::string& what) {
    if (!ok) failed_.push_back(what);
    ++count_;
  }
  void note(const std::string& s) { notes_.push_back(s); }
  bool ok() const { return failed_.empty(); }
  std::string summary() const {
    std::ostringstream os;
    os << (count_ - failed_.size()) << "/" << count_ << " checks";
    for (const auto& f : failed_) os << "; failed: " << f;
    for (const auto& n : notes_) os << "; " << n;
    return os.str();
  }

 private:
  std::vector<std::string> failed_;
  std::vector<std::string> notes_;
  std::size_t count_ = 0;
};

std::string fmt(double v, int prec = 4) {
  std::ostringstream os;
  os << std::setprecision(prec) << v;
  return os.str();
}

bool same_bits(const Tensor<float>& a, const Tensor<float>& b) {
  return a.shape() == b.shape() && std::memcmp(a.data(), b.data(), a.size() * sizeof(float)) == 0;
}

TeacherSampleSet<double> random_set(std::mt19937_64& rng, int count, int h, int w, const std::string& id) {
  TeacherSampleSet<double> s;
  s.pair_id = id;
  for (int i = 0; i < count; ++i) {
    s.samples.push_back(testing::random_tensor<double>({3, h, w}, rng));
    s.source.push_back(i < count / 2 ? "a" : "b");
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

PanelConfig three_backbones(int grid) {
  PanelConfig cfg;
  cfg.grid = grid;
  cfg.backbones = {{"a", 11, 5, 4, Activation::kTanh, ""},
                   {"b", 12, 6, 8, Activation::kTanh, ""},
                   {"c", 13, 4, 4, Activation::kRelu, ""}};
  return cfg;
}

PanelConfig two_backbones(int grid) {
  PanelConfig cfg;
  cfg.grid = grid;
  cfg.backbones = {{"a", 41, 4, 4, Activation::kTanh, ""}, {"b", 42, 6, 8, Activation::kTanh, ""}};
  return cfg;
}

CacheBuildReport make_cache(const std::filesystem::path& root, const SynthConfig& sc, const std::string& teachers,
                            int n_per_teacher, const PanelConfig& panel, std::uint64_t seed = 0) {
  const auto data = synth_dataset(sc);
  const auto owned = teachers_from_list(teachers);
  std::vector<const Teacher*> ts;
  CacheConfig cfg;
  for (const auto& t : owned) {
    ts.push_back(t.get());
    cfg.teachers.push_back(t->name());
  }
  cfg.n_per_teacher = n_per_teacher;
  cfg.grid = panel.grid;
  cfg.seed = seed;
  return build_cache(data, ts, cfg, panel, root);
}

StudentConfig small_student(std::uint64_t seed) {
  StudentConfig cfg;
  cfg.scales = 2;
  cfg.widths = {8, 16};
  cfg.depths = {1, 1};
  cfg.seed = seed;
  return cfg;
}

// ---------------------------------------------------------------- A1
Checks a1() {
  Checks c;
  std::mt19937_64 rng(101);
  const auto panel = build_panel<double>(three_backbones(8));
  for (int trial = 0; trial < 3; ++trial) {
    const auto s = random_set(rng, 6, 8, 8, "t" + std::to_string(trial));
    std::vector<Tensor<double>> samples(s.samples.begin(), s.samples.end());
    const auto mean = ensemble_mean(s);
    const auto var = pixel_variance(s);
    const auto w = pixel_weights(var);
    c.expect(oracle::max_abs(mean, oracle::mean(samples)) < 1e-9, "ensemble mean");
    c.expect(oracle::max_abs(var, oracle::channel_avg_variance(samples)) < 1e-9, "pixel variance");
    c.expect(oracle::max_abs(w, oracle::pixel_weights(oracle::channel_avg_variance(samples), 1e-3)) < 1e-9,
             "pixel weights");

    const auto norms = fit_norm_stats(panel, {s});
    std::vector<Tensor<double>> vars;
    std::vector<double> mean_vars;
    for (int k = 0; k < panel.size(); ++k) {
      const auto& b = *panel.backbones[k];
      const auto feats = normalized_per_sample(b, norms.per_backbone[k], s, 8);
      const auto fv = feature_variance(b, norms.per_backbone[k], s, 8);
      c.expect(oracle::max_abs(fv, oracle::channel_avg_variance(feats)) < 1e-9, "feature variance");
      c.expect(oracle::max_abs(feature_target(b, norms.per_backbone[k], s, 8), oracle::mean(feats)) < 1e-9,
               "feature target");
      vars.push_back(fv);
      mean_vars.push_back(norms.per_backbone[k].mean_var);
    }
    for (double tau : {0.5, 1.0, 2.0})
      c.expect(oracle::max_abs(routing_weights(vars, norms, tau), oracle::routing(vars, mean_vars, tau, 1e-3)) < 1e-9,
               "routing weights tau=" + fmt(tau));
  }
  return c;
}

// ---------------------------------------------------------------- A2
Checks a2() {
  Checks c;
  std::mt19937_64 rng(102);
  PanelConfig pc;
  pc.grid = 4;
  pc.backbones = {{"a", 31, 3, 4, Activation::kTanh, ""}, {"b", 32, 4, 8, Activation::kTanh, ""}};
  const auto panel = build_panel<double>(pc);
  const auto s = random_set(rng, 4, 16, 16, "g");
  const auto norms = fit_norm_stats(panel, {s});
  const auto stats = ensemble_stats(s);
  const auto fstats = compute_feature_stats(panel, norms, s, 1.0);
  const auto pred = testing::random_tensor<double>({3, 16, 16}, rng);
  const double h = 1e-5;
  auto near_kink = [&](std::size_t i) { return std::abs(pred[i] - stats.mean[i]) <= h + 1e-6; };

  using LossFn = std::function<ad::Var<double>(const ad::Var<double>&)>;
  const std::vector<std::pair<std::string, LossFn>> cases{
      {"pix", [&](const ad::Var<double>& p) { return pixel_loss(p, stats.mean, stats.pixel_weights); }},
      {"mfm",
       [&](const ad::Var<double>& p) {
         return mfm_loss(panel_features(p, panel, norms, 4, 4), fstats.targets, fstats.routing);
       }},
      {"ssim", [&](const ad::Var<double>& p) { return ssim_loss(p, stats.mean); }},
      {"total", [&](const ad::Var<double>& p) { return total_loss(p, stats, fstats, panel, norms, LossWeights{}).total; }},
  };
  for (const auto& [name, fn] : cases) {
    ad::Var<double> v(pred, true);
    ad::backward(fn(v));
    const auto g = v.grad();
    auto value = [&](const Tensor<double>& x) {
      ad::NoGradGuard guard;
      return fn(ad::Var<double>(x)).value()[0];
    };
    const bool kinked = name == "pix" || name == "total";
    const auto r = oracle::check_gradient(value, pred, g, h, kinked ? std::function<bool(std::size_t)>(near_kink) : nullptr);
    c.expect(r.max_rel < 1e-4 && r.checked > 700, name + " max_rel=" + fmt(r.max_rel));
    c.note(name + " max_rel " + fmt(r.max_rel, 3));
  }
  return c;
}

// ---------------------------------------------------------------- A3
Checks a3() {
  Checks c;
  std::mt19937_64 rng(103);
  PanelNormStats norms;
  norms.per_backbone = {{{1}, 0.3}, {{1}, 1.7}, {{1}, 0.9}, {{1}, 0.05}};
  std::vector<Tensor<double>> vars;
  for (int k = 0; k < 4; ++k) vars.push_back(testing::random_tensor<double>({16, 16}, rng, 0.0, 2.0));
  const int cells = 256;

  const auto w = routing_weights(vars, norms, 1.0);
  double worst = 0.0;
  for (int p = 0; p < cells; ++p) {
    double s = 0.0;
    for (int k = 0; k < 4; ++k) s += w[k * cells + p];
    worst = std::max(worst, std::abs(s - 1.0));
  }
  c.expect(worst < 1e-6, "sum to one");

  auto shifted = vars;
  for (int k = 0; k < 4; ++k) shifted[k].array() += 3.0 * (norms.per_backbone[k].mean_var + 1e-3);
  c.expect(oracle::max_abs(routing_weights(shifted, norms, 1.0), w) < 1e-12, "shift invariance");

  Tensor<double> prev;
  bool monotone = true;
  for (double tau : {0.1, 0.5, 1.0, 2.0, 5.0}) {
    const auto e = routing_entropy(routing_weights(vars, norms, tau));
    if (!prev.empty())
      for (std::size_t i = 0; i < e.size(); ++i) monotone = monotone && e[i] >= prev[i] - 1e-12;
    prev = e;
  }
  c.expect(monotone, "entropy nondecreasing in tau");

  const auto u = routing_weights(vars, norms, 1e6);
  double dev = 0.0;
  for (double v : u.vec()) dev = std::max(dev, std::abs(v - 0.25));
  c.expect(dev < 1e-4, "large tau uniform (dev " + fmt(dev) + ")");
  return c;
}

// ---------------------------------------------------------------- A4
Checks a4() {
  Checks c;
  std::mt19937_64 rng(104);
  for (int i = 0; i < 5; ++i) {
    const auto var = testing::random_tensor<double>({13, 17}, rng, 0.0, 0.3 * (i + 1));
    double total = 0.0;
    const auto w = pixel_weights(var);
    for (double v : w.vec()) total += v;
    c.expect(std::abs(total - 1.0) < 1e-6, "pixel weights sum");
    const auto vf = testing::random_tensor<float>({32, 32}, rng, 0.0, 0.25);
    double tf = 0.0;
    const auto wf = pixel_weights(vf);
    for (float v : wf.vec()) tf += v;
    c.expect(std::abs(tf - 1.0) < 1e-6, "float pixel weights sum");
  }

  const auto panel = build_panel<double>(three_backbones(8));
  std::vector<TeacherSampleSet<double>> sets;
  for (int i = 0; i < 4; ++i) sets.push_back(random_set(rng, 4, 32, 32, "s" + std::to_string(i)));
  const auto norms = fit_norm_stats(panel, sets);
  double lo = 1e9, hi = -1e9;
  for (int k = 0; k < panel.size(); ++k) {
    std::vector<Tensor<double>> normed;
    for (const auto& s : sets)
      for (auto& f : normalized_per_sample(*panel.backbones[k], norms.per_backbone[k], s, 8)) normed.push_back(std::move(f));
    for (double v : oracle::pooled_std(normed)) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  }
  c.expect(lo >= 0.95 && hi <= 1.05, "normalized std in [0.95,1.05]");
  c.note("normalized std range [" + fmt(lo, 6) + ", " + fmt(hi, 6) + "]");
  return c;
}

// ---------------------------------------------------------------- A5
Checks a5() {
  Checks c;
  TempDir dir;
  SynthConfig sc;
  sc.count = 10;
  sc.height = 32;
  sc.width = 32;
  sc.seed = 105;
  make_cache(dir.path(), sc, "det", 2, default_panel_config(8));

  Student<float> student(StudentConfig::preset(Variant::kDefault, 5));
  TrainConfig cfg;
  cfg.batch_size = 10;
  cfg.epochs = 500;
  cfg.crop = 32;
  cfg.misalign = {0.0, 0.0};
  cfg.optim.lr = 7e-3;
  cfg.optim.lr_min = 5e-4;
  cfg.seed = 5;
  const auto r = train(student, dir.path(), cfg);
  const double first = r.log.front().loss.total, last = r.log.back().loss.total;
  const double drop = 1.0 - last / first;

  const auto setup = load_training_setup(dir.path(), cfg.tau);
  double l1 = 0.0;
  std::size_t n = 0;
  for (const auto& b : setup.bundles) {
    const auto out = student.forward(b.pair.ir, b.pair.vis);
    for (std::size_t i = 0; i < out.size(); ++i) l1 += std::abs(out[i] - b.stats.mean[i]);
    n += out.size();
  }
  l1 /= static_cast<double>(n);
  c.expect(r.steps == 500, "500 steps");
  c.expect(drop >= 0.9, "loss drop " + fmt(drop));
  c.expect(l1 < 0.02, "L1 " + fmt(l1));
  c.note("loss " + fmt(first) + " -> " + fmt(last) + " (drop " + fmt(100 * drop, 3) + "%), L1 " + fmt(l1, 3));
  return c;
}

// ---------------------------------------------------------------- A6
Checks a6() {
  Checks c;
  TempDir dir;
  SynthConfig sc;
  sc.count = 6;
  sc.height = 64;
  sc.width = 64;
  sc.seed = 106;
  make_cache(dir.path(), sc, "synthA,synthB", 2, two_backbones(8));

  // instrumented step
  {
    const auto setup = load_training_setup(dir.path(), 1.0);
    Student<float> s(small_student(1));
    TrainConfig cfg;
    cfg.crop = 64;
    cfg.misalign = {10.0, 2.0};
    AdamW<float> opt(s.params(), cfg.optim);
    Rng rng(6);
    bool vis_same = true, stats_same = true, ir_warped = true, ir_model = true;
    int seen = 0;
    std::vector<const CacheBundle*> batch;
    for (const auto& b : setup.bundles) batch.push_back(&b);
    train_step(s, opt, batch, setup.panel, setup.norms, cfg, rng, 1e-3, [&](const StepProbe& p) {
      ++seen;
      const auto disk = cache_read(p.bundle->id(), dir.path());
      vis_same = vis_same && same_bits(*p.vis_input, disk.pair.vis);
      stats_same = stats_same && same_bits(p.stats->mean, disk.stats.mean) &&
                   same_bits(p.stats->pixel_weights, disk.stats.pixel_weights) &&
                   same_bits(p.fstats->routing, disk.fstats.routing);
      for (std::size_t k = 0; k < disk.fstats.targets.size(); ++k)
        stats_same = stats_same && same_bits(p.fstats->targets[k], disk.fstats.targets[k]) &&
                     same_bits(p.fstats->vars[k], disk.fstats.vars[k]);
      ir_warped = ir_warped && !same_bits(*p.ir_input, disk.pair.ir);
      ir_model = ir_model && same_bits(*p.ir_input, apply_affine(disk.pair.ir, p.perturbation));
    });
    c.expect(seen == static_cast<int>(setup.bundles.size()), "probe saw every element");
    c.expect(vis_same, "VIS input bit-identical to cache");
    c.expect(stats_same, "supervision byte-identical to cache");
    c.expect(ir_warped && ir_model, "IR input is the warped cached IR");
  }

  const auto data = load_cache(dir.path());
  const std::vector<std::pair<double, double>> mags{{0, 0}, {20, 5}};

  auto trained = [&](PerturbationRange range) {
    auto s = std::make_unique<Student<float>>(small_student(3));
    TrainConfig cfg;
    cfg.epochs = 60;
    cfg.batch_size = 3;
    cfg.crop = 64;
    cfg.misalign = range;
    cfg.optim.lr = 3e-3;
    cfg.optim.lr_min = 1e-4;
    cfg.seed = 6;
    train(*s, dir.path(), cfg);
    return s;
  };
  const auto injected = trained({10.0, 2.0});
  const auto control = trained({0.0, 0.0});

  const auto rows_inj = misalign_sweep(*injected, data, mags, 7, 4);
  const auto rows_ctl = misalign_sweep(*control, data, mags, 7, 4);
  const auto aligned = evaluate_aligned(*injected, data);
  c.expect(rows_inj[0].ssim == aligned.ssim && rows_inj[0].metrics.qabf == aligned.metrics.qabf &&
               rows_inj[0].metrics.mi == aligned.metrics.mi,
           "sweep row (0,0) equals aligned evaluation");

  const double deg_inj = rows_inj[0].ssim - rows_inj[1].ssim;
  const double deg_ctl = rows_ctl[0].ssim - rows_ctl[1].ssim;
  c.expect(deg_ctl > 0.0 && deg_inj < 0.5 * deg_ctl,
           "injection degradation " + fmt(deg_inj) + " vs control " + fmt(deg_ctl));
  c.note("SSIM drop at (20px,5deg): injected " + fmt(deg_inj) + ", control " + fmt(deg_ctl));
  return c;
}

// ---------------------------------------------------------------- A7
Checks a7() {
  Checks c;
  std::mt19937_64 rng(107);
  {
    Student<float> s(StudentConfig::preset(Variant::kDefault, 7));
    const auto ir = testing::random_tensor<float>({1, 64, 64}, rng);
    const auto vis = testing::random_tensor<float>({3, 64, 64}, rng);
    c.expect(same_bits(s.forward(ir, vis), s.forward(ir, vis)), "eval forward bit-identical");
  }

  TempDir a, b;
  SynthConfig sc;
  sc.count = 4;
  sc.height = 32;
  sc.width = 32;
  sc.seed = 107;
  make_cache(a.path(), sc, "synthA,synthB", 2, two_backbones(8), 9);
  make_cache(b.path(), sc, "synthA,synthB", 2, two_backbones(8), 9);
  bool caches_equal = true;
  for (const auto& e : std::filesystem::recursive_directory_iterator(a.path())) {
    if (!e.is_regular_file() || e.path().extension() != ".fpx") continue;
    const auto rel = std::filesystem::relative(e.path(), a.path());
    caches_equal = caches_equal && same_bits(read_fpx(e.path()), read_fpx(b.path() / rel));
  }
  c.expect(caches_equal, "seeded cache builds identical");

  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.batch_size = 2;
  cfg.crop = 32;
  cfg.seed = 17;
  Student<float> s1(small_student(8)), s2(small_student(8));
  const auto r1 = train(s1, a.path(), cfg);
  const auto r2 = train(s2, b.path(), cfg);
  c.expect(r1.panel_hash_before == r1.panel_hash_after, "panel hash unchanged by training");
  c.expect(r1.panel_hash_before == panel_hash(build_panel<float>(two_backbones(8))), "panel hash matches fresh build");
  c.expect(s1.params().flatten() == s2.params().flatten(), "seeded runs bitwise identical");
  bool logs_equal = r1.log.size() == r2.log.size();
  for (std::size_t i = 0; logs_equal && i < r1.log.size(); ++i)
    logs_equal = r1.log[i].loss.total == r2.log[i].loss.total;
  c.expect(logs_equal, "seeded loss curves identical");
  return c;
}

// ---------------------------------------------------------------- A8
Checks a8() {
  Checks c;
  std::mt19937_64 rng(108);
  c.expect(entropy(Tensor<double>({32, 32}, 0.4)) == 0.0, "EN(constant)=0");
  Tensor<double> two({16, 16});
  for (int i = 0; i < 128; ++i) two[i] = 1.0;
  c.expect(std::abs(entropy(two) - 1.0) < 1e-12, "EN(two bins)=1");
  Tensor<double> noise({512, 512});
  std::uniform_int_distribution<int> level(0, 255);
  for (auto& v : noise.vec()) v = level(rng) / 255.0;
  const double en = entropy(noise);
  c.expect(std::abs(en - 8.0) <= 0.02, "EN(noise)=" + fmt(en, 6));

  c.expect(spatial_frequency(Tensor<double>({32, 32}, 0.7)) == 0.0, "SF(constant)=0");
  Tensor<double> stripes({32, 32});
  for (int y = 0; y < 32; ++y)
    for (int x = 1; x < 32; x += 2) stripes(y, x) = 1.0;
  const double sf = spatial_frequency(stripes);
  c.expect(std::abs(sf - 255.0) < 1e-6, "SF(stripes)=" + fmt(sf, 10));

  Tensor<double> scene({64, 64}), other({64, 64});
  for (int y = 0; y < 64; ++y)
    for (int x = 0; x < 64; ++x) {
      scene(y, x) = 0.5 + 0.3 * std::sin(0.3 * x) * std::cos(0.2 * y) + (x + y > 64 ? 0.15 : -0.15);
      other(y, x) = 0.5 + 0.3 * std::cos(0.25 * x + 1.0) * std::sin(0.15 * y) + (x > 30 ? 0.1 : -0.1);
    }
  const double self = q_abf(scene, scene, scene);
  c.expect(self >= 0.99, "Q_abf(self)=" + fmt(self, 6) + " >= 0.99");
  const double flat = q_abf(Tensor<double>({64, 64}, 0.5), scene, other);
  c.expect(flat < 0.05, "Q_abf(constant)=" + fmt(flat));
  c.note("Q_abf(self) " + fmt(self, 6) + ", index ceiling " + fmt(q_abf_ceiling(), 6));

  const auto img = testing::random_tensor<double>({3, 32, 32}, rng);
  c.expect(std::abs(ssim(img, img) - 1.0) < 1e-12, "SSIM(x,x)=1");
  return c;
}

// ---------------------------------------------------------------- A9
Checks a9() {
  Checks c;
  const auto r = run_bench([] { std::this_thread::sleep_for(std::chrono::milliseconds(20)); }, 2, 15);
  c.expect(std::abs(r.median_ms - 20.0) <= 2.0, "median " + fmt(r.median_ms) + " ms");
  c.expect(std::abs(r.fps * r.median_ms - 1000.0) < 1e-6, "fps * median = 1000");
  bool first = true;
  const auto w = run_bench(
      [&] {
        std::this_thread::sleep_for(std::chrono::milliseconds(first ? 300 : 2));
        first = false;
      },
      1, 7);
  double worst = 0.0;
  for (double s : w.samples_ms) worst = std::max(worst, s);
  c.expect(worst < 100.0, "warmup excluded (slowest timed " + fmt(worst) + " ms)");
  c.note("stub median " + fmt(r.median_ms) + " ms");
  return c;
}

// ---------------------------------------------------------------- A10
Checks a10() {
  Checks c;
  std::mt19937_64 rng(110);
  auto t = testing::random_tensor<float>({2, 5, 7}, rng, -3.0, 3.0);
  t[0] = -0.0f;
  t[1] = std::numeric_limits<float>::denorm_min();
  t[2] = std::numeric_limits<float>::infinity();
  TempDir dir;
  write_fpx(dir / "t.fpx", t);
  c.expect(same_bits(read_fpx(dir / "t.fpx"), t), "FPX1 round trip bit-exact");

  auto bytes = encode_fpx(t);
  bytes[3] = '9';
  try {
    decode_fpx(bytes);
    c.expect(false, "foreign FPX version rejected");
  } catch (const FormatVersionError& e) {
    c.expect(e.found() == "FPX9" && e.expected() == "FPX1", "version error names both tags");
  }
  try {
    read_fpx_expect(dir / "t.fpx", {2, 5, 8});
    c.expect(false, "shape mismatch rejected");
  } catch (const ShapeError& e) {
    c.expect(std::string(e.what()).find("t.fpx") != std::string::npos, "shape error names the file");
  }

  TempDir cache;
  SynthConfig sc;
  sc.count = 3;
  sc.height = 32;
  sc.width = 32;
  const auto first = make_cache(cache.path(), sc, "synthA,synthB", 2, two_backbones(8));
  std::map<std::string, std::filesystem::file_time_type> stamps;
  for (const auto& e : std::filesystem::recursive_directory_iterator(cache.path()))
    if (e.is_regular_file()) stamps[e.path().string()] = e.last_write_time();
  const auto second = make_cache(cache.path(), sc, "synthA,synthB", 2, two_backbones(8));
  bool untouched = true;
  for (const auto& e : std::filesystem::recursive_directory_iterator(cache.path()))
    if (e.is_regular_file()) untouched = untouched && stamps.at(e.path().string()) == e.last_write_time();
  c.expect(first.files_written > 0 && second.files_written == 0 && second.entries_skipped == 3 && untouched,
           "idempotent re-run writes nothing");

  const auto before = cache_read("scene_000", cache.path());
  write_fpx(cache / "scene_000/mean.fpx", Tensor<float>({3, 16, 16}));
  try {
    cache_read("scene_000", cache.path());
    c.expect(false, "cached shape mismatch rejected");
  } catch (const ShapeError& e) {
    c.expect(std::string(e.what()).find("mean.fpx") != std::string::npos, "cached shape error names the tensor");
  }
  write_fpx(cache / "scene_000/mean.fpx", before.stats.mean);

  auto m = read_manifest(cache.path());
  m.version = "FPX2";
  write_manifest(cache.path(), m);
  try {
    read_manifest(cache.path());
    c.expect(false, "manifest version rejected");
  } catch (const FormatVersionError& e) {
    c.expect(e.found() == "FPX2", "manifest version error names the tag");
  }
  try {
    cache_read("nope", dir.path());
    c.expect(false, "missing cache rejected");
  } catch (const CacheError&) {
    c.expect(true, "missing cache rejected");
  }
  return c;
}

// ---------------------------------------------------------------- A11
Checks a11() {
  Checks c;
  std::mt19937_64 rng(111);
  Student<float> s(StudentConfig::preset(Variant::kDefault, 11));
  for (auto& e : s.params().entries())
    if (e.name.find(".gate.bias") != std::string::npos) e.var.mutable_value().fill(-1e4f);
  bool exact = true;
  for (int scale = 0; scale < s.config().scales; ++scale) {
    const int ch = s.config().widths[scale];
    const ad::Var<float> a(testing::random_tensor<float>({ch, 8, 8}, rng, -2.0, 2.0));
    const ad::Var<float> b(testing::random_tensor<float>({ch, 8, 8}, rng, -2.0, 2.0));
    ad::NoGradGuard guard;
    exact = exact && same_bits(s.head(scale).forward(a, b).value(), ad::add(a, b).value());
  }
  c.expect(exact, "closed gate output == F_IR + F_VIS at every scale");

  const int ch = 4;
  ParamStore<double> store;
  Initializer init(12);
  FusionHead<double> head(store, init, "h", ch);
  const auto a0 = testing::random_tensor<double>({ch, 1, 1}, rng, -1.0, 1.0);
  const auto b0 = testing::random_tensor<double>({ch, 1, 1}, rng, -1.0, 1.0);
  auto out = [&](const Tensor<double>& a) {
    ad::NoGradGuard guard;
    return head.forward(ad::Var<double>(a), ad::Var<double>(b0)).value();
  };
  auto jacobian = [&](auto&& f) {
    const double h = 1e-6;
    Tensor<double> j({ch, ch});
    for (int in = 0; in < ch; ++in) {
      Tensor<double> up = a0, dn = a0;
      up[in] += h;
      dn[in] -= h;
      const auto fu = f(up), fd = f(dn);
      for (int o = 0; o < ch; ++o) j(o, in) = (fu[o] - fd[o]) / (2 * h);
    }
    return j;
  };
  const auto full = jacobian(out);
  const auto gated = jacobian([&](const Tensor<double>& a) {
    auto y = out(a);
    for (int o = 0; o < ch; ++o) y[o] -= a[o] + b0[o];
    return y;
  });
  double dev = 0.0;
  for (int o = 0; o < ch; ++o)
    for (int in = 0; in < ch; ++in) dev = std::max(dev, std::abs(full(o, in) - gated(o, in) - (o == in ? 1.0 : 0.0)));
  c.expect(dev < 1e-8, "J - J_gated = I (dev " + fmt(dev) + ")");

  store.get("h.gate.bias").mutable_value().fill(-1e4);
  const auto closed = jacobian(out);
  double cdev = 0.0;
  for (int o = 0; o < ch; ++o)
    for (int in = 0; in < ch; ++in) cdev = std::max(cdev, std::abs(closed(o, in) - (o == in ? 1.0 : 0.0)));
  c.expect(cdev < 1e-9, "closed gate Jacobian = I (dev " + fmt(cdev) + ")");
  return c;
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, std::function<Checks()>>> criteria{
      {"A1", a1}, {"A2", a2}, {"A3", a3}, {"A4", a4},  {"A5", a5},  {"A6", a6},
      {"A7", a7}, {"A8", a8}, {"A9", a9}, {"A10", a10}, {"A11", a11},
  };
  std::vector<std::string> only(argv + 1, argv + argc);
  int failures = 0;
  for (const auto& [name, fn] : criteria) {
    if (!only.empty() && std::find(only.begin(), only.end(), name) == only.end()) continue;
    const auto t0 = std::chrono::steady_clock::now();
    bool ok = false;
    std::string detail;
    try {
      const auto r = fn();
      ok = r.ok();
      detail = r.summary();
    } catch (const std::exception& e) {
      detail = std::string("exception: ") + e.what();
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::cout << name << " " << (ok ? "PASS" : "FAIL") << " (" << fmt(secs, 3) << " s) " << detail << std::endl;
    if (!ok) ++failures;
  }
  return failures == 0 ? 0 : 1;
}
