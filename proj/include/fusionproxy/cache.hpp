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

#ifndef FUSIONPROXY_CACHE_HPP_
#define FUSIONPROXY_CACHE_HPP_

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "fusionproxy/imaging.hpp"
#include "fusionproxy/panel.hpp"
#include "fusionproxy/teacher.hpp"

namespace fusionproxy {

// Teacher cache layout:
//   <root>/manifest.json
//   <root>/norms/{panel.json, sigma_<k>.fpx, mean_var.fpx}
//   <root>/<pair_id>/<tensor>.fpx
// Per-pair tensors: ir, vis, samples [2N,3,H,W], mean, pixel_var,
// pixel_weights, feat_target_<k>, feat_var_<k>, routing.

struct CacheConfig {
  int n_per_teacher = 4;
  std::vector<std::string> teachers;
  int grid = 64;
  double tau = 1.0;
  std::uint64_t seed = 0;

  bool operator==(const CacheConfig&) const = default;
};

struct CacheEntryInfo {
  std::map<std::string, Shape> tensors;
  std::vector<std::string> sources;
  int orig_height = 0;
  int orig_width = 0;
  int pad_bottom = 0;
  int pad_right = 0;
};

struct CacheManifest {
  std::string version = "FPX1";
  CacheConfig config;
  std::map<std::string, CacheEntryInfo> entries;
};

// Everything cached for one pair.
struct CacheBundle {
  ImagePair pair;
  TeacherSampleSet<float> samples;
  EnsembleStats<float> stats;
  FeatureStats<float> fstats;

  const std::string& id() const { return pair.id; }
};

void write_manifest(const std::filesystem::path& root, const CacheManifest& manifest);
CacheManifest read_manifest(const std::filesystem::path& root);

CacheEntryInfo describe(const CacheBundle& bundle);

// Writes the bundle's tensors under <root>/<id>/ and records the entry in
// `manifest` (the manifest file itself is written by write_manifest).
// Returns the number of files written.
int cache_write(const CacheBundle& bundle, const std::filesystem::path& root, CacheManifest& manifest);

CacheBundle cache_read(const std::string& id, const std::filesystem::path& root, const CacheManifest& manifest);
CacheBundle cache_read(const std::string& id, const std::filesystem::path& root);

// All entries in id order.
std::vector<CacheBundle> load_cache(const std::filesystem::path& root);

// True when every tensor listed for `id` exists with the recorded dims.
bool entry_complete(const std::filesystem::path& root, const CacheManifest& manifest, const std::string& id);

struct CacheBuildReport {
  int pairs = 0;
  int entries_written = 0;
  int entries_skipped = 0;
  int files_written = 0;
  bool norms_refit = false;
};

// Draws ensembles, fits panel normalization and computes every statistic.
// Entries already complete under the same configuration are verified and
// reused; a fully complete cache is left untouched.
CacheBuildReport build_cache(const std::vector<ImagePair>& pairs, const std::vector<const Teacher*>& teachers,
                             const CacheConfig& cfg, const PanelConfig& panel_cfg, const std::filesystem::path& root);

// Per-pair rng seeded from the cache seed and the id, independent of order.
Rng pair_rng(std::uint64_t seed, const std::string& id);

}  // namespace fusionproxy

#endif  // FUSIONPROXY_CACHE_HPP_
