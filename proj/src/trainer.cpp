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

#include "fusionproxy/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <ostream>

namespace fusionproxy {

namespace fs = std::filesystem;
using nlohmann::json;

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (batch_size < 1) throw ConfigError("batch size must be >= 1");
  if (crop < kSpatialMultiple || crop % kSpatialMultiple)
    throw ConfigError("crop must be a positive multiple of " + std::to_string(kSpatialMultiple));
  if (!(tau > 0)) throw ConfigError("routing temperature tau must be > 0");
  if (checkpoint_every < 0 || max_steps < 0) throw ConfigError("checkpoint_every and max_steps must be >= 0");
  if (misalign.max_translation < 0 || misalign.max_rotation < 0)
    throw ConfigError("misalignment ranges must be >= 0");
  optim.validate();
  weights.validate();
}

json to_json(const TrainConfig& c) {
  return {{"epochs", c.epochs},
          {"batch", c.batch_size},
          {"crop", c.crop},
          {"tau", c.tau},
          {"lambda_pix", c.weights.pix},
          {"lambda_mfm", c.weights.mfm},
          {"lambda_ssim", c.weights.ssim},
          {"misalign_px", c.misalign.max_translation},
          {"misalign_deg", c.misalign.max_rotation},
          {"lr", c.optim.lr},
          {"lr_min", c.optim.lr_min},
          {"weight_decay", c.optim.weight_decay},
          {"clip_norm", c.optim.clip_norm},
          {"seed", c.seed},
          {"checkpoint_every", c.checkpoint_every},
          {"max_steps", c.max_steps}};
}

json to_json(const TrainLogRecord& r) {
  return {{"step", r.step},
          {"epoch", r.epoch},
          {"loss", {{"pix", r.loss.pix}, {"mfm", r.loss.mfm}, {"ssim", r.loss.ssim}, {"total", r.loss.total}}},
          {"lr", r.lr},
          {"ms", r.ms},
          {"grad_norm", r.grad_norm},
          {"ids", r.ids}};
}

TrainLogRecord train_log_record_from_json(const json& j) {
  TrainLogRecord r;
  r.step = j.at("step").get<long>();
  r.epoch = j.at("epoch").get<int>();
  const auto& l = j.at("loss");
  r.loss = {l.at("pix").get<double>(), l.at("mfm").get<double>(), l.at("ssim").get<double>(),
            l.at("total").get<double>()};
  r.lr = j.at("lr").get<double>();
  r.ms = j.at("ms").get<double>();
  r.grad_norm = j.value("grad_norm", 0.0);
  r.ids = j.value("ids", std::vector<std::string>{});
  return r;
}

// ------------------------------------------------------------------ crops

namespace {

void map_to_grid(int start, int extent, int full, int grid, int& g0, int& gn) {
  gn = std::clamp(static_cast<int>(std::lround(static_cast<double>(extent) * grid / full)), 1, grid);
  g0 = std::clamp(static_cast<int>(std::floor(static_cast<double>(start) * grid / full)), 0, grid - gn);
}

}  // namespace

CropWindow full_window(int height, int width, int grid) {
  return {0, 0, height, width, 0, 0, grid, grid};
}

CropWindow choose_crop(int height, int width, int grid, int crop, Rng& rng) {
  CropWindow w;
  w.height = std::min(crop, height);
  w.width = std::min(crop, width);
  if (w.height < height) w.y0 = std::uniform_int_distribution<int>(0, height - w.height)(rng);
  if (w.width < width) w.x0 = std::uniform_int_distribution<int>(0, width - w.width)(rng);
  map_to_grid(w.y0, w.height, height, grid, w.gy0, w.grid_h);
  map_to_grid(w.x0, w.width, width, grid, w.gx0, w.grid_w);
  return w;
}

EnsembleStats<float> crop_stats(const EnsembleStats<float>& s, const CropWindow& w) {
  EnsembleStats<float> out;
  out.pair_id = s.pair_id;
  out.mean = crop(s.mean, w.y0, w.x0, w.height, w.width);
  out.pixel_var = crop(s.pixel_var, w.y0, w.x0, w.height, w.width);
  out.pixel_weights = crop(s.pixel_weights, w.y0, w.x0, w.height, w.width);
  double total = 0.0;
  for (float v : out.pixel_weights.vec()) total += v;
  if (!(total > 0)) throw NumericalError("pixel weights of " + s.pair_id + " vanish on the crop window");
  for (auto& v : out.pixel_weights.vec()) v = static_cast<float>(v / total);
  return out;
}

FeatureStats<float> crop_feature_stats(const FeatureStats<float>& s, const CropWindow& w) {
  FeatureStats<float> out;
  out.pair_id = s.pair_id;
  for (const auto& t : s.targets) out.targets.push_back(crop(t, w.gy0, w.gx0, w.grid_h, w.grid_w));
  for (const auto& v : s.vars) out.vars.push_back(crop(v, w.gy0, w.gx0, w.grid_h, w.grid_w));
  out.routing = crop(s.routing, w.gy0, w.gx0, w.grid_h, w.grid_w);
  return out;
}

// ------------------------------------------------------------------ setup

TrainingSetup load_training_setup(const fs::path& cache_root, double tau) {
  if (!(tau > 0)) throw ConfigError("routing temperature tau must be > 0");
  TrainingSetup setup;
  setup.manifest = read_manifest(cache_root);
  auto [panel_cfg, norms] = load_norm_stats(cache_root / "norms");
  if (panel_cfg.grid != setup.manifest.config.grid)
    throw CacheError("cache grid " + std::to_string(setup.manifest.config.grid) + " differs from the norm stats grid " +
                     std::to_string(panel_cfg.grid));
  setup.panel = build_panel<float>(panel_cfg);
  setup.norms = std::move(norms);
  if (setup.manifest.entries.empty()) throw CacheError("cache at " + cache_root.string() + " has no entries");
  setup.bundles = load_cache(cache_root);
  for (auto& b : setup.bundles) {
    if (static_cast<int>(b.fstats.targets.size()) != setup.panel.size())
      throw CacheError("cache entry " + b.id() + " covers " + std::to_string(b.fstats.targets.size()) +
                       " backbones, the panel has " + std::to_string(setup.panel.size()));
    if (tau != setup.manifest.config.tau) b.fstats.routing = routing_weights(b.fstats.vars, setup.norms, tau);
  }
  return setup;
}

// ------------------------------------------------------------------ step

TrainLogRecord train_step(Student<float>& student, AdamW<float>& optimizer, const std::vector<const CacheBundle*>& batch,
                          const Panel<float>& panel, const PanelNormStats& norms, const TrainConfig& cfg, Rng& rng,
                          double lr, const ProbeFn& probe) {
  if (batch.empty()) throw ConfigError("train_step: empty batch");
  const auto t0 = std::chrono::steady_clock::now();
  TrainLogRecord rec;
  rec.lr = lr;
  student.params().zero_grad();
  const float inv_b = 1.0f / static_cast<float>(batch.size());
  std::vector<std::string> bad;

  for (const CacheBundle* b : batch) {
    rec.ids.push_back(b->id());
    const int h = b->pair.height(), w = b->pair.width();
    const AffinePerturbation pert = sample_perturbation(rng, cfg.misalign);
    const CropWindow win = choose_crop(h, w, panel.grid(), cfg.crop, rng);
    const bool whole = win.full(h, w);

    // Only the IR input is perturbed; the warp runs on the full frame.
    const Tensor<float> ir_warped = pert.is_identity() ? b->pair.ir : apply_affine(b->pair.ir, pert);
    const Tensor<float> ir_in = whole ? ir_warped : crop(ir_warped, win.y0, win.x0, win.height, win.width);
    const Tensor<float> vis_in = whole ? b->pair.vis : crop(b->pair.vis, win.y0, win.x0, win.height, win.width);
    std::optional<EnsembleStats<float>> cropped;
    std::optional<FeatureStats<float>> fcropped;
    if (!whole) {
      cropped = crop_stats(b->stats, win);
      fcropped = crop_feature_stats(b->fstats, win);
    }
    const EnsembleStats<float>& stats = whole ? b->stats : *cropped;
    const FeatureStats<float>& fstats = whole ? b->fstats : *fcropped;
    if (probe) probe(StepProbe{b, pert, win, &ir_in, &vis_in, &stats, &fstats});

    const auto pred = student.forward(ad::Var<float>(ir_in), ad::Var<float>(vis_in));
    const auto terms = total_loss(pred, stats, fstats, panel, norms, cfg.weights);
    const LossBreakdown lb = terms.breakdown();
    if (!std::isfinite(lb.total) || !std::isfinite(lb.pix) || !std::isfinite(lb.mfm) || !std::isfinite(lb.ssim)) {
      bad.push_back(b->id());
      continue;
    }
    rec.loss.pix += lb.pix / batch.size();
    rec.loss.mfm += lb.mfm / batch.size();
    rec.loss.ssim += lb.ssim / batch.size();
    rec.loss.total += lb.total / batch.size();
    ad::backward(terms.total, Tensor<float>({1}, inv_b));
  }
  if (!bad.empty()) {
    student.params().zero_grad();
    std::string msg = "non-finite loss for pair ids:";
    for (const auto& id : bad) msg += " " + id;
    throw NumericalError(msg);
  }
  rec.grad_norm = optimizer.grad_norm();
  if (!std::isfinite(rec.grad_norm)) {
    student.params().zero_grad();
    std::string msg = "non-finite gradient for pair ids:";
    for (const auto& id : rec.ids) msg += " " + id;
    throw NumericalError(msg);
  }
  // With every loss weight at zero there is no objective; leave the
  // parameters (and the decay) alone.
  const auto& lw = cfg.weights;
  if (lw.pix > 0 || lw.mfm > 0 || lw.ssim > 0) optimizer.step(lr);
  student.params().zero_grad();
  rec.ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  return rec;
}

// ------------------------------------------------------------------ train

namespace {

Rng epoch_rng(std::uint64_t seed, int epoch) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(epoch)};
  return Rng(seq);
}

}  // namespace

void save_checkpoint(const fs::path& dir, const Student<float>& student, const AdamW<float>& optimizer,
                     const TrainConfig& cfg, int epochs_done, long steps) {
  save_student(student, dir);
  optimizer.save(dir / "optim");
  json j = {{"epochs_done", epochs_done}, {"steps", steps}, {"config", to_json(cfg)}};
  std::ofstream os(dir / "trainer.json");
  if (!os) throw IoError("cannot write " + (dir / "trainer.json").string());
  os << j.dump(2) << "\n";
}

TrainResult train(Student<float>& student, const fs::path& cache_root, const TrainConfig& cfg,
                  const TrainOptions& opts) {
  cfg.validate();
  const TrainingSetup setup = load_training_setup(cache_root, cfg.tau);
  const int n = static_cast<int>(setup.bundles.size());
  const int per_epoch = (n + cfg.batch_size - 1) / cfg.batch_size;
  long total_steps = static_cast<long>(cfg.epochs) * per_epoch;
  if (cfg.max_steps > 0) total_steps = std::min(total_steps, cfg.max_steps);

  AdamW<float> optimizer(student.params(), cfg.optim);
  TrainResult result;
  int start_epoch = 0;
  if (opts.resume_from) {
    std::ifstream is(*opts.resume_from / "trainer.json");
    if (!is) throw IoError("no trainer state in " + opts.resume_from->string());
    const json j = json::parse(is);
    start_epoch = j.at("epochs_done").get<int>();
    result.steps = j.at("steps").get<long>();
    load_student_params(student, *opts.resume_from);
    optimizer.load(*opts.resume_from / "optim");
    if (optimizer.steps() != result.steps) throw CacheError("optimizer state and trainer state disagree on step count");
  }

  result.panel_hash_before = panel_hash(setup.panel);
  result.epochs_done = start_epoch;
  for (int epoch = start_epoch; epoch < cfg.epochs && result.steps < total_steps; ++epoch) {
    Rng rng = epoch_rng(cfg.seed, epoch);
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    for (int start = 0; start < n && result.steps < total_steps; start += cfg.batch_size) {
      std::vector<const CacheBundle*> batch;
      for (int i = start; i < std::min(n, start + cfg.batch_size); ++i) batch.push_back(&setup.bundles[order[i]]);
      const double lr = cosine_lr(cfg.optim, result.steps, total_steps);
      TrainLogRecord rec =
          train_step(student, optimizer, batch, setup.panel, setup.norms, cfg, rng, lr, opts.probe);
      rec.step = ++result.steps;
      rec.epoch = epoch;
      if (opts.log) *opts.log << to_json(rec).dump() << "\n";
      result.log.push_back(std::move(rec));
    }
    result.epochs_done = epoch + 1;
    const bool last = result.epochs_done == cfg.epochs || result.steps >= total_steps;
    const bool stop = opts.stop_after_epoch >= 0 && result.epochs_done >= opts.stop_after_epoch;
    if (opts.checkpoint_dir &&
        (last || stop || (cfg.checkpoint_every > 0 && result.epochs_done % cfg.checkpoint_every == 0)))
      save_checkpoint(*opts.checkpoint_dir, student, optimizer, cfg, result.epochs_done, result.steps);
    if (stop) break;
  }
  if (opts.log) opts.log->flush();
  result.panel_hash_after = panel_hash(setup.panel);
  if (result.panel_hash_after != result.panel_hash_before)
    throw Error("frozen panel parameters changed during training");
  return result;
}

// ------------------------------------------------------------------ sweeps

LossBreakdown evaluate_loss(const Student<float>& student, const TrainingSetup& setup, const LossWeights& w) {
  LossBreakdown mean;
  const double n = static_cast<double>(setup.bundles.size());
  for (const auto& b : setup.bundles) {
    const Tensor<float> pred = student.forward(b.pair.ir, b.pair.vis);
    const LossBreakdown lb = total_loss(pred, b.stats, b.fstats, setup.panel, setup.norms, w);
    mean.pix += lb.pix / n;
    mean.mfm += lb.mfm / n;
    mean.ssim += lb.ssim / n;
    mean.total += lb.total / n;
  }
  return mean;
}

std::vector<TauSweepRow> tau_sweep(const fs::path& cache_root, const StudentConfig& student_cfg, const TrainConfig& cfg,
                                   const std::vector<double>& taus, bool retrain) {
  if (taus.empty()) throw ConfigError("tau sweep needs at least one tau");
  std::vector<TauSweepRow> rows;
  for (double tau : taus) {
    if (!(tau > 0)) throw ConfigError("tau sweep: every tau must be > 0");
    TrainConfig c = cfg;
    c.tau = tau;
    const TrainingSetup setup = load_training_setup(cache_root, tau);
    TauSweepRow row;
    row.tau = tau;
    for (const auto& b : setup.bundles) {
      const Tensor<double> ent = routing_entropy(b.fstats.routing);
      const double m = ent.vec().empty() ? 0.0 : std::accumulate(ent.vec().begin(), ent.vec().end(), 0.0) / ent.size();
      row.entropy_per_image.push_back(m);
    }
    row.mean_entropy = std::accumulate(row.entropy_per_image.begin(), row.entropy_per_image.end(), 0.0) /
                       static_cast<double>(row.entropy_per_image.size());
    auto student = build_student<float>(student_cfg);
    if (retrain) train(*student, cache_root, c);
    row.final_loss = evaluate_loss(*student, setup, c.weights);
    rows.push_back(std::move(row));
  }
  return rows;
}

namespace {

struct EvalSample {
  double ssim = 0.0;
  MetricValues metrics;
};

EvalSample evaluate_one(const Student<float>& student, const CacheBundle& b, const AffinePerturbation& p) {
  const Tensor<float> ir = p.is_identity() ? b.pair.ir : apply_affine(b.pair.ir, p);
  const Tensor<float> out = student.forward(ir, b.pair.vis);
  const int h = b.pair.orig_height, w = b.pair.orig_width;
  const Tensor<float> fused = crop(out, 0, 0, h, w);
  const Tensor<float> mean = crop(b.stats.mean, 0, 0, h, w);
  EvalSample s;
  s.ssim = ssim(fused.cast<double>(), mean.cast<double>());
  s.metrics = evaluate_images(fused, crop(ir, 0, 0, h, w), crop(b.pair.vis, 0, 0, h, w));
  return s;
}

void accumulate(MisalignRow& row, const EvalSample& s, double weight) {
  row.ssim += weight * s.ssim;
  row.metrics.en += weight * s.metrics.en;
  row.metrics.mi += weight * s.metrics.mi;
  row.metrics.sf += weight * s.metrics.sf;
  row.metrics.qabf += weight * s.metrics.qabf;
}

}  // namespace

std::vector<MisalignRow> misalign_sweep(const Student<float>& student, const std::vector<CacheBundle>& data,
                                        const std::vector<std::pair<double, double>>& magnitudes, std::uint64_t seed,
                                        int draws) {
  if (data.empty()) throw ConfigError("misalignment sweep needs at least one pair");
  if (draws < 1) throw ConfigError("misalignment sweep needs draws >= 1");
  std::vector<MisalignRow> rows;
  for (const auto& [px, deg] : magnitudes) {
    if (px < 0 || deg < 0) throw ConfigError("misalignment magnitudes must be >= 0");
    MisalignRow row;
    row.px = px;
    row.deg = deg;
    const bool identity = px == 0 && deg == 0;
    const int d_eff = identity ? 1 : draws;
    const double weight = 1.0 / (static_cast<double>(data.size()) * d_eff);
    for (const auto& b : data) {
      Rng rng = pair_rng(seed, b.id());
      for (int d = 0; d < d_eff; ++d) {
        const AffinePerturbation p = sample_perturbation(rng, PerturbationRange{px, deg});
        accumulate(row, evaluate_one(student, b, identity ? AffinePerturbation{} : p), weight);
      }
    }
    rows.push_back(row);
  }
  return rows;
}

MisalignRow evaluate_aligned(const Student<float>& student, const std::vector<CacheBundle>& data) {
  if (data.empty()) throw ConfigError("evaluation needs at least one pair");
  MisalignRow row;
  const double weight = 1.0 / static_cast<double>(data.size());
  for (const auto& b : data) accumulate(row, evaluate_one(student, b, AffinePerturbation{}), weight);
  return row;
}

json to_json(const TauSweepRow& r) {
  return {{"tau", r.tau},
          {"mean_entropy", r.mean_entropy},
          {"entropy_per_image", r.entropy_per_image},
          {"final_loss",
           {{"pix", r.final_loss.pix},
            {"mfm", r.final_loss.mfm},
            {"ssim", r.final_loss.ssim},
            {"total", r.final_loss.total}}}};
}

json to_json(const MisalignRow& r) {
  json j = to_json(r.metrics);
  j["px"] = r.px;
  j["deg"] = r.deg;
  j["SSIM_vs_mean"] = r.ssim;
  return j;
}

}  // namespace fusionproxy
