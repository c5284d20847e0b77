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

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <random>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "fusionproxy/bench.hpp"
#include "fusionproxy/cache.hpp"
#include "fusionproxy/metrics.hpp"
#include "fusionproxy/png_io.hpp"
#include "fusionproxy/student.hpp"
#include "fusionproxy/synth.hpp"
#include "fusionproxy/trainer.hpp"

namespace fp = fusionproxy;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string default_cache_root() {
  const char* env = std::getenv("FUSIONPROXY_CACHE");
  return env ? env : "";
}

std::string require_cache_root(const std::string& given) {
  if (!given.empty()) return given;
  throw fp::ConfigError("no cache root: pass --cache/--out or set FUSIONPROXY_CACHE");
}

template <typename T>
std::vector<T> parse_list(const std::string& s, char sep = ',') {
  std::vector<T> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, sep)) {
    if (item.empty()) continue;
    std::stringstream is(item);
    T v;
    if (!(is >> v)) throw fp::ConfigError("cannot parse list item '" + item + "'");
    out.push_back(v);
  }
  return out;
}

// ------------------------------------------------------------------ cache

struct CacheArgs {
  std::string data, out = default_cache_root(), teachers;
  int n = 0;
  int grid = 64;
  double tau = 1.0;
  std::uint64_t seed = 0;
};

int cmd_cache(const CacheArgs& a) {
  const std::string root = require_cache_root(a.out);
  auto owned = fp::teachers_from_list(a.teachers);
  std::vector<const fp::Teacher*> teachers;
  fp::CacheConfig cfg;
  for (const auto& t : owned) {
    teachers.push_back(t.get());
    cfg.teachers.push_back(t->name());
  }
  cfg.n_per_teacher = a.n;
  cfg.grid = a.grid;
  cfg.tau = a.tau;
  cfg.seed = a.seed;
  std::cout << json{{"command", "cache"},
                    {"data", a.data},
                    {"out", root},
                    {"teachers", cfg.teachers},
                    {"n", cfg.n_per_teacher},
                    {"grid", cfg.grid},
                    {"tau", cfg.tau},
                    {"seed", cfg.seed}}
                   .dump()
            << "\n";
  const auto pairs = fp::load_dataset(a.data);
  const auto report = fp::build_cache(pairs, teachers, cfg, fp::default_panel_config(a.grid), root);
  std::cout << json{{"pairs", report.pairs},
                    {"entries_written", report.entries_written},
                    {"entries_skipped", report.entries_skipped},
                    {"files_written", report.files_written},
                    {"samples_per_pair", cfg.n_per_teacher * static_cast<int>(teachers.size())}}
                   .dump()
            << "\n";
  return 0;
}

// ------------------------------------------------------------------ train

struct TrainArgs {
  std::string cache = default_cache_root(), out, variant = "default", resume;
  fp::TrainConfig cfg;
  std::uint64_t student_seed = 0;
};

void add_train_options(CLI::App* sub, TrainArgs& a) {
  sub->add_option("--cache", a.cache, "Cache root (default $FUSIONPROXY_CACHE)");
  sub->add_option("--epochs", a.cfg.epochs, "Training epochs")->capture_default_str()->check(CLI::PositiveNumber);
  sub->add_option("--batch", a.cfg.batch_size, "Batch size")->capture_default_str()->check(CLI::PositiveNumber);
  sub->add_option("--crop", a.cfg.crop, "Square training crop")->capture_default_str()->check(CLI::PositiveNumber);
  sub->add_option("--tau", a.cfg.tau, "Routing temperature")->capture_default_str();
  sub->add_option("--lambda-pix", a.cfg.weights.pix, "Pixel loss weight")->capture_default_str();
  sub->add_option("--lambda-mfm", a.cfg.weights.mfm, "Feature matching weight")->capture_default_str();
  sub->add_option("--lambda-ssim", a.cfg.weights.ssim, "SSIM loss weight")->capture_default_str();
  sub->add_option("--misalign-px", a.cfg.misalign.max_translation, "IR translation range")->capture_default_str();
  sub->add_option("--misalign-deg", a.cfg.misalign.max_rotation, "IR rotation range")->capture_default_str();
  sub->add_option("--variant", a.variant, "Student variant")->capture_default_str();
  sub->add_option("--seed", a.cfg.seed, "Training seed")->capture_default_str();
  sub->add_option("--init-seed", a.student_seed, "Student initialization seed")->capture_default_str();
  sub->add_option("--lr", a.cfg.optim.lr, "Peak learning rate")->capture_default_str();
  sub->add_option("--lr-min", a.cfg.optim.lr_min, "Final learning rate")->capture_default_str();
  sub->add_option("--max-steps", a.cfg.max_steps, "Stop after this many steps (0 = no limit)")->capture_default_str();
}

json train_header(const TrainArgs& a, const std::string& command) {
  json j = fp::to_json(a.cfg);
  j["command"] = command;
  j["cache"] = a.cache;
  j["variant"] = a.variant;
  j["init_seed"] = a.student_seed;
  return j;
}

int cmd_train(const TrainArgs& a) {
  const std::string cache = require_cache_root(a.cache);
  a.cfg.validate();
  std::cout << train_header(a, "train").dump() << "\n";
  auto student = fp::build_student<float>(fp::StudentConfig::preset(fp::parse_variant(a.variant), a.student_seed));
  fs::create_directories(a.out);
  std::ofstream log(fs::path(a.out) / "train_log.ndjson", a.resume.empty() ? std::ios::trunc : std::ios::app);
  fp::TrainOptions opts;
  opts.checkpoint_dir = fs::path(a.out);
  if (!a.resume.empty()) opts.resume_from = fs::path(a.resume);
  opts.log = &log;
  const auto result = fp::train(*student, cache, a.cfg, opts);
  json summary = {{"steps", result.steps},
                  {"epochs_done", result.epochs_done},
                  {"parameter_count", student->parameter_count()},
                  {"panel_hash", result.panel_hash_after},
                  {"checkpoint", a.out}};
  if (!result.log.empty()) summary["final"] = fp::to_json(result.log.back());
  std::cout << summary.dump() << "\n";
  return 0;
}

// ------------------------------------------------------------------ fuse

struct FuseArgs {
  std::string ckpt, ir, vis, out;
};

int cmd_fuse(const FuseArgs& a) {
  auto student = fp::load_student(a.ckpt);
  const auto ir = fp::read_png_gray(a.ir);
  const auto vis = fp::read_png_rgb(a.vis);
  if (ir.dim(1) != vis.dim(1) || ir.dim(2) != vis.dim(2))
    throw fp::ShapeError("ir is " + std::to_string(ir.dim(1)) + "x" + std::to_string(ir.dim(2)) + " but vis is " +
                         std::to_string(vis.dim(1)) + "x" + std::to_string(vis.dim(2)));
  fp::write_png(a.out, fp::fuse_any_size(*student, ir, vis));
  return 0;
}

// ------------------------------------------------------------------ bench

struct BenchArgs {
  std::string ckpt;
  int height = 480, width = 640, runs = 1000, warmup = 50;
  std::uint64_t seed = 0;
};

int cmd_bench(const BenchArgs& a) {
  auto student = fp::load_student(a.ckpt);
  std::mt19937_64 rng(a.seed);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  fp::Tensor<float> ir({1, a.height, a.width}), vis({3, a.height, a.width});
  for (auto& v : ir.vec()) v = u(rng);
  for (auto& v : vis.vec()) v = u(rng);
  auto report = fp::run_bench([&] { fp::fuse_any_size(*student, ir, vis); }, a.warmup, a.runs);
  report.height = a.height;
  report.width = a.width;
  json j = fp::to_json(report);
  j["variant"] = fp::variant_name(student->config().variant);
  j["parameter_count"] = student->parameter_count();
  std::cout << j.dump(2) << "\n";
  return 0;
}

// ------------------------------------------------------------------ eval

struct EvalArgs {
  std::string fused, ir, vis, reference, report;
};

int cmd_eval(const EvalArgs& a) {
  std::optional<fs::path> ref;
  if (!a.reference.empty()) ref = a.reference;
  const auto report = fp::evaluate_dir(a.fused, a.ir, a.vis, ref);
  const json j = fp::to_json(report);
  if (!a.report.empty()) {
    std::ofstream os(a.report);
    if (!os) throw fp::IoError("cannot write " + a.report);
    os << j.dump(2) << "\n";
  }
  std::cout << j.dump(2) << "\n";
  return 0;
}

// ------------------------------------------------------------------ synth

int cmd_synth(const std::string& out, const fp::SynthConfig& cfg) {
  fp::write_dataset(out, fp::synth_dataset(cfg));
  std::cout << json{{"command", "synth"}, {"out", out}, {"count", cfg.count}, {"height", cfg.height},
                    {"width", cfg.width}, {"seed", cfg.seed}}
                   .dump()
            << "\n";
  return 0;
}

// ------------------------------------------------------------------ sweeps

int cmd_sweep_tau(const TrainArgs& a, const std::string& taus, bool no_retrain) {
  const std::string cache = require_cache_root(a.cache);
  a.cfg.validate();
  json header = train_header(a, "sweep-tau");
  header["taus"] = parse_list<double>(taus);
  header["retrain"] = !no_retrain;
  std::cout << header.dump() << "\n";
  const auto rows = fp::tau_sweep(cache, fp::StudentConfig::preset(fp::parse_variant(a.variant), a.student_seed),
                                  a.cfg, parse_list<double>(taus), !no_retrain);
  json out = json::array();
  for (const auto& r : rows) out.push_back(fp::to_json(r));
  std::cout << out.dump(2) << "\n";
  return 0;
}

int cmd_sweep_misalign(const std::string& ckpt, const std::string& cache_arg, const std::string& magnitudes, int draws,
                       std::uint64_t seed) {
  const std::string cache = require_cache_root(cache_arg);
  auto student = fp::load_student(ckpt);
  std::vector<std::pair<double, double>> mags;
  for (const auto& m : parse_list<std::string>(magnitudes)) {
    const auto parts = parse_list<double>(m, ':');
    if (parts.size() != 2) throw fp::ConfigError("magnitude '" + m + "' must be px:deg");
    mags.emplace_back(parts[0], parts[1]);
  }
  const auto data = fp::load_cache(cache);
  const auto rows = fp::misalign_sweep(*student, data, mags, seed, draws);
  json out = json::array();
  for (const auto& r : rows) out.push_back(fp::to_json(r));
  std::cout << out.dump(2) << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Infrared/visible image fusion: teacher cache, distillation training, inference and evaluation"};
  app.require_subcommand(1);

  CacheArgs cache_args;
  auto* cache = app.add_subcommand("cache", "Draw teacher ensembles and cache every training statistic");
  cache->add_option("--data", cache_args.data, "Dataset root with ir/ and vis/")->required();
  cache->add_option("--out", cache_args.out, "Cache root (default $FUSIONPROXY_CACHE)");
  cache->add_option("--teachers", cache_args.teachers, "Comma-separated teacher specs")->required();
  cache->add_option("--n", cache_args.n, "Samples per teacher")->required()->check(CLI::PositiveNumber);
  cache->add_option("--grid", cache_args.grid, "Feature grid size")->capture_default_str()->check(CLI::PositiveNumber);
  cache->add_option("--tau", cache_args.tau, "Routing temperature stored in the cache")->capture_default_str();
  cache->add_option("--seed", cache_args.seed, "Teacher sampling seed")->capture_default_str();

  TrainArgs train_args;
  auto* train = app.add_subcommand("train", "Train a student from a cache");
  add_train_options(train, train_args);
  train->add_option("--out", train_args.out, "Checkpoint directory")->required();
  train->add_option("--checkpoint-every", train_args.cfg.checkpoint_every, "Epochs between checkpoints")
      ->capture_default_str();
  train->add_option("--resume", train_args.resume, "Resume from a checkpoint directory");

  FuseArgs fuse_args;
  auto* fuse = app.add_subcommand("fuse", "Fuse one IR/VIS pair");
  fuse->add_option("--ckpt", fuse_args.ckpt, "Checkpoint directory")->required();
  fuse->add_option("--ir", fuse_args.ir, "Infrared PNG")->required();
  fuse->add_option("--vis", fuse_args.vis, "Visible PNG")->required();
  fuse->add_option("--out", fuse_args.out, "Output PNG")->required();

  BenchArgs bench_args;
  auto* bench = app.add_subcommand("bench", "Median latency of a forward pass");
  bench->add_option("--ckpt", bench_args.ckpt, "Checkpoint directory")->required();
  bench->add_option("--height", bench_args.height)->capture_default_str()->check(CLI::PositiveNumber);
  bench->add_option("--width", bench_args.width)->capture_default_str()->check(CLI::PositiveNumber);
  bench->add_option("--runs", bench_args.runs)->capture_default_str()->check(CLI::PositiveNumber);
  bench->add_option("--warmup", bench_args.warmup)->capture_default_str()->check(CLI::NonNegativeNumber);
  bench->add_option("--seed", bench_args.seed)->capture_default_str();

  EvalArgs eval_args;
  auto* eval = app.add_subcommand("eval", "EN, MI, SF and Q_abf over a directory of fused images");
  eval->add_option("--fused", eval_args.fused)->required();
  eval->add_option("--ir", eval_args.ir)->required();
  eval->add_option("--vis", eval_args.vis)->required();
  eval->add_option("--reference", eval_args.reference, "Optional reference images for SSIM");
  eval->add_option("--report", eval_args.report, "Write the JSON report here");

  std::string synth_out;
  fp::SynthConfig synth_cfg;
  auto* synth = app.add_subcommand("synth", "Write a synthetic IR/VIS dataset");
  synth->add_option("--out", synth_out)->required();
  synth->add_option("--count", synth_cfg.count)->capture_default_str()->check(CLI::PositiveNumber);
  synth->add_option("--height", synth_cfg.height)->capture_default_str()->check(CLI::PositiveNumber);
  synth->add_option("--width", synth_cfg.width)->capture_default_str()->check(CLI::PositiveNumber);
  synth->add_option("--seed", synth_cfg.seed)->capture_default_str();

  TrainArgs sweep_args;
  std::string taus = "0.1,0.5,1,2,5";
  bool no_retrain = false;
  auto* sweep_tau = app.add_subcommand("sweep-tau", "Routing entropy and final loss per temperature");
  add_train_options(sweep_tau, sweep_args);
  sweep_tau->add_option("--taus", taus, "Comma-separated temperatures")->capture_default_str();
  sweep_tau->add_flag("--no-retrain", no_retrain, "Evaluate an untrained student instead of training per tau");

  std::string mis_ckpt, mis_cache = default_cache_root(), magnitudes = "0:0,10:2,20:5,30:10";
  int draws = 1;
  std::uint64_t mis_seed = 0;
  auto* sweep_mis = app.add_subcommand("sweep-misalign", "Evaluate under IR misalignment");
  sweep_mis->add_option("--ckpt", mis_ckpt)->required();
  sweep_mis->add_option("--cache", mis_cache, "Cache root (default $FUSIONPROXY_CACHE)");
  sweep_mis->add_option("--magnitudes", magnitudes, "Comma-separated px:deg pairs")->capture_default_str();
  sweep_mis->add_option("--draws", draws)->capture_default_str()->check(CLI::PositiveNumber);
  sweep_mis->add_option("--seed", mis_seed)->capture_default_str();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*cache) return cmd_cache(cache_args);
    if (*train) return cmd_train(train_args);
    if (*fuse) return cmd_fuse(fuse_args);
    if (*bench) return cmd_bench(bench_args);
    if (*eval) return cmd_eval(eval_args);
    if (*synth) return cmd_synth(synth_out, synth_cfg);
    if (*sweep_tau) return cmd_sweep_tau(sweep_args, taus, no_retrain);
    if (*sweep_mis) return cmd_sweep_misalign(mis_ckpt, mis_cache, magnitudes, draws, mis_seed);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
