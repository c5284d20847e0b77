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

#ifndef FUSIONPROXY_TRAINER_HPP_
#define FUSIONPROXY_TRAINER_HPP_

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "fusionproxy/cache.hpp"
#include "fusionproxy/loss.hpp"
#include "fusionproxy/metrics.hpp"
#include "fusionproxy/optim.hpp"
#include "fusionproxy/student.hpp"

namespace fusionproxy {

struct TrainConfig {
  int epochs = 160;
  int batch_size = 8;
  int crop = 256;  // square training crop; images smaller than this are used whole
  AdamWConfig optim;
  LossWeights weights;
  double tau = 1.0;
  PerturbationRange misalign;  // +-10 px, +-2 degrees
  std::uint64_t seed = 0;
  int checkpoint_every = 0;  // epochs between checkpoints; 0 writes only the final one
  long max_steps = 0;        // 0 = epochs * steps_per_epoch

  void validate() const;
};

nlohmann::json to_json(const TrainConfig& cfg);

struct TrainLogRecord {
  long step = 0;  // 1-based
  int epoch = 0;  // 0-based
  LossBreakdown loss;
  double lr = 0.0;
  double ms = 0.0;
  double grad_norm = 0.0;
  std::vector<std::string> ids;
};

nlohmann::json to_json(const TrainLogRecord& r);
TrainLogRecord train_log_record_from_json(const nlohmann::json& j);

// Full-frame crop window in pixels and the matching window on the feature grid.
struct CropWindow {
  int y0 = 0, x0 = 0, height = 0, width = 0;
  int gy0 = 0, gx0 = 0, grid_h = 0, grid_w = 0;

  bool full(int h, int w) const { return y0 == 0 && x0 == 0 && height == h && width == w; }
};

CropWindow choose_crop(int height, int width, int grid, int crop, Rng& rng);
CropWindow full_window(int height, int width, int grid);

// Supervision restricted to a crop window. Pixel weights are renormalized to
// sum to one over the window.
EnsembleStats<float> crop_stats(const EnsembleStats<float>& s, const CropWindow& w);
FeatureStats<float> crop_feature_stats(const FeatureStats<float>& s, const CropWindow& w);

// What a single batch element fed to the student and the loss.
struct StepProbe {
  const CacheBundle* bundle;
  AffinePerturbation perturbation;
  CropWindow window;
  const Tensor<float>* ir_input;
  const Tensor<float>* vis_input;
  const EnsembleStats<float>* stats;
  const FeatureStats<float>* fstats;
};
using ProbeFn = std::function<void(const StepProbe&)>;

struct TrainingSetup {
  Panel<float> panel;
  PanelNormStats norms;
  CacheManifest manifest;
  std::vector<CacheBundle> bundles;
};

// Loads the cache, the panel normalization and the frozen panel. Routing is
// recomputed from the cached feature variances when `tau` differs from the
// cached temperature.
TrainingSetup load_training_setup(const std::filesystem::path& cache_root, double tau);

// One optimizer update on the batch mean loss. Each element gets a fresh
// perturbation of its IR input and a random crop; supervision comes from the
// cache untouched. Throws NumericalError naming the pair ids whose loss is not
// finite, before any parameter changes.
TrainLogRecord train_step(Student<float>& student, AdamW<float>& optimizer,
                          const std::vector<const CacheBundle*>& batch, const Panel<float>& panel,
                          const PanelNormStats& norms, const TrainConfig& cfg, Rng& rng, double lr,
                          const ProbeFn& probe = {});

struct TrainOptions {
  std::optional<std::filesystem::path> checkpoint_dir;
  std::optional<std::filesystem::path> resume_from;
  std::ostream* log = nullptr;  // NDJSON, one record per step
  ProbeFn probe;
  int stop_after_epoch = -1;  // stop (after checkpointing) once this many epochs are done
};

struct TrainResult {
  std::vector<TrainLogRecord> log;
  std::uint64_t panel_hash_before = 0;
  std::uint64_t panel_hash_after = 0;
  long steps = 0;
  int epochs_done = 0;
};

// Seeded, resumable training. Epoch e draws from mt19937_64 seeded with
// (seed, e) so a resumed run replays the same batches.
TrainResult train(Student<float>& student, const std::filesystem::path& cache_root, const TrainConfig& cfg,
                  const TrainOptions& opts = {});

void save_checkpoint(const std::filesystem::path& dir, const Student<float>& student, const AdamW<float>& optimizer,
                     const TrainConfig& cfg, int epochs_done, long steps);

// Mean loss of the student over every cached pair at full frame.
LossBreakdown evaluate_loss(const Student<float>& student, const TrainingSetup& setup, const LossWeights& w);

struct TauSweepRow {
  double tau = 1.0;
  double mean_entropy = 0.0;
  std::vector<double> entropy_per_image;  // mean routing entropy per pair, id order
  LossBreakdown final_loss;
};

// For each tau: routing entropies from the cached feature variances, then a
// fresh student trained at that tau (or evaluated untrained when retrain is
// false) and its final full-frame loss.
std::vector<TauSweepRow> tau_sweep(const std::filesystem::path& cache_root, const StudentConfig& student_cfg,
                                   const TrainConfig& cfg, const std::vector<double>& taus, bool retrain = true);

struct MisalignRow {
  double px = 0.0;
  double deg = 0.0;
  double ssim = 0.0;  // vs the aligned ensemble mean
  MetricValues metrics;
};

// Evaluates the student with the IR input perturbed within +-px, +-deg. The
// same underlying uniform draws are scaled for every magnitude.
std::vector<MisalignRow> misalign_sweep(const Student<float>& student, const std::vector<CacheBundle>& data,
                                        const std::vector<std::pair<double, double>>& magnitudes,
                                        std::uint64_t seed = 0, int draws = 1);

// Unperturbed evaluation with the same fields as a sweep row.
MisalignRow evaluate_aligned(const Student<float>& student, const std::vector<CacheBundle>& data);

nlohmann::json to_json(const TauSweepRow& r);
nlohmann::json to_json(const MisalignRow& r);

}  // namespace fusionproxy

#endif  // FUSIONPROXY_TRAINER_HPP_
