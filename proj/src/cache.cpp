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

#include "fusionproxy/cache.hpp"

#include <cstring>
#include <fstream>

#include <nlohmann/json.hpp>

#include "fusionproxy/fpx.hpp"

namespace fusionproxy {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const char* kManifestName = "manifest.json";

Tensor<float> stack(const std::vector<Tensor<float>>& items) {
  Shape shape = items.front().shape();
  shape.insert(shape.begin(), static_cast<int>(items.size()));
  Tensor<float> out(shape);
  const std::size_t step = items.front().size();
  for (std::size_t i = 0; i < items.size(); ++i) {
    require_same_shape(items[i], items.front(), "cache stack");
    std::copy(items[i].vec().begin(), items[i].vec().end(), out.vec().begin() + static_cast<std::ptrdiff_t>(i * step));
  }
  return out;
}

std::vector<Tensor<float>> unstack(const Tensor<float>& t) {
  Shape inner(t.shape().begin() + 1, t.shape().end());
  const std::size_t step = shape_numel(inner);
  std::vector<Tensor<float>> out;
  for (int i = 0; i < t.dim(0); ++i) {
    Tensor<float> item(inner);
    std::copy(t.vec().begin() + static_cast<std::ptrdiff_t>(i * step),
              t.vec().begin() + static_cast<std::ptrdiff_t>((i + 1) * step), item.vec().begin());
    out.push_back(std::move(item));
  }
  return out;
}

std::vector<std::pair<std::string, const Tensor<float>*>> named_tensors(const CacheBundle& b, const Tensor<float>& samples) {
  std::vector<std::pair<std::string, const Tensor<float>*>> out = {
      {"ir", &b.pair.ir},
      {"vis", &b.pair.vis},
      {"samples", &samples},
      {"mean", &b.stats.mean},
      {"pixel_var", &b.stats.pixel_var},
      {"pixel_weights", &b.stats.pixel_weights},
  };
  for (std::size_t k = 0; k < b.fstats.targets.size(); ++k) {
    out.emplace_back("feat_target_" + std::to_string(k), &b.fstats.targets[k]);
    out.emplace_back("feat_var_" + std::to_string(k), &b.fstats.vars[k]);
  }
  out.emplace_back("routing", &b.fstats.routing);
  return out;
}

void check_bundle(const CacheBundle& b) {
  const auto& id = b.id();
  if (id.empty() || id.find('/') != std::string::npos) throw ConfigError("invalid cache pair id '" + id + "'");
  if (b.samples.samples.empty()) throw CacheError("bundle " + id + " has no teacher samples");
  if (b.samples.source.size() != b.samples.samples.size())
    throw CacheError("bundle " + id + " has " + std::to_string(b.samples.source.size()) + " source labels for " +
                     std::to_string(b.samples.samples.size()) + " samples");
  if (b.stats.mean.size() == 0 || b.stats.pixel_var.size() == 0 || b.stats.pixel_weights.size() == 0)
    throw CacheError("bundle " + id + " is missing pixel statistics");
  if (b.fstats.targets.empty() || b.fstats.targets.size() != b.fstats.vars.size() || b.fstats.routing.size() == 0)
    throw CacheError("bundle " + id + " is missing feature statistics");
}

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

json entry_to_json(const CacheEntryInfo& e) {
  json tensors = json::object();
  for (const auto& [name, dims] : e.tensors) tensors[name] = dims;
  return {{"tensors", tensors},
          {"sources", e.sources},
          {"orig_height", e.orig_height},
          {"orig_width", e.orig_width},
          {"pad_bottom", e.pad_bottom},
          {"pad_right", e.pad_right}};
}

CacheEntryInfo entry_from_json(const json& j) {
  CacheEntryInfo e;
  for (const auto& [name, dims] : j.at("tensors").items()) e.tensors[name] = dims.get<Shape>();
  e.sources = j.at("sources").get<std::vector<std::string>>();
  e.orig_height = j.at("orig_height").get<int>();
  e.orig_width = j.at("orig_width").get<int>();
  e.pad_bottom = j.at("pad_bottom").get<int>();
  e.pad_right = j.at("pad_right").get<int>();
  return e;
}

}  // namespace

Rng pair_rng(std::uint64_t seed, const std::string& id) {
  const std::uint64_t h = fnv1a(id);
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(h), static_cast<std::uint32_t>(h >> 32)};
  return Rng(seq);
}

void write_manifest(const fs::path& root, const CacheManifest& m) {
  fs::create_directories(root);
  json j;
  j["version"] = m.version;
  j["n_per_teacher"] = m.config.n_per_teacher;
  j["teachers"] = m.config.teachers;
  j["grid"] = m.config.grid;
  j["tau"] = m.config.tau;
  j["seed"] = m.config.seed;
  j["entries"] = json::object();
  for (const auto& [id, e] : m.entries) j["entries"][id] = entry_to_json(e);
  const fs::path tmp = root / (std::string(kManifestName) + ".tmp");
  {
    std::ofstream os(tmp);
    if (!os) throw IoError("cannot write " + tmp.string());
    os << j.dump(2) << "\n";
  }
  fs::rename(tmp, root / kManifestName);
}

CacheManifest read_manifest(const fs::path& root) {
  const fs::path path = root / kManifestName;
  std::ifstream is(path);
  if (!is) throw CacheError("no cache manifest at " + path.string() + "; run the cache pre-pass first");
  json j;
  try {
    j = json::parse(is);
  } catch (const json::exception& e) {
    throw IoError(path.string() + ": " + e.what());
  }
  CacheManifest m;
  const std::string version = j.value("version", std::string());
  if (version != kFpxMagic) throw FormatVersionError(version, kFpxMagic);
  try {
    m.version = version;
    m.config.n_per_teacher = j.at("n_per_teacher").get<int>();
    m.config.teachers = j.at("teachers").get<std::vector<std::string>>();
    m.config.grid = j.at("grid").get<int>();
    m.config.tau = j.value("tau", 1.0);
    m.config.seed = j.value("seed", std::uint64_t{0});
    for (const auto& [id, e] : j.at("entries").items()) m.entries[id] = entry_from_json(e);
  } catch (const json::exception& e) {
    throw IoError(path.string() + ": malformed manifest: " + e.what());
  }
  return m;
}

CacheEntryInfo describe(const CacheBundle& b) {
  CacheEntryInfo e;
  const Tensor<float> samples = stack(b.samples.samples);
  for (const auto& [name, t] : named_tensors(b, samples)) e.tensors[name] = t->shape();
  e.sources = b.samples.source;
  e.orig_height = b.pair.orig_height;
  e.orig_width = b.pair.orig_width;
  e.pad_bottom = b.pair.pad_bottom;
  e.pad_right = b.pair.pad_right;
  return e;
}

int cache_write(const CacheBundle& b, const fs::path& root, CacheManifest& manifest) {
  check_bundle(b);
  const fs::path dir = root / b.id();
  fs::create_directories(dir);
  const Tensor<float> samples = stack(b.samples.samples);
  int written = 0;
  for (const auto& [name, t] : named_tensors(b, samples)) {
    write_fpx(dir / (name + ".fpx"), *t);
    ++written;
  }
  manifest.entries[b.id()] = describe(b);
  return written;
}

CacheBundle cache_read(const std::string& id, const fs::path& root, const CacheManifest& manifest) {
  auto it = manifest.entries.find(id);
  if (it == manifest.entries.end()) throw EntryNotFoundError(id);
  const CacheEntryInfo& e = it->second;
  const fs::path dir = root / id;
  auto load = [&](const std::string& name) {
    auto dims = e.tensors.find(name);
    if (dims == e.tensors.end()) throw CacheError("cache entry " + id + " is partial: no tensor '" + name + "'");
    const fs::path p = dir / (name + ".fpx");
    if (!fs::exists(p)) throw CacheError("cache entry " + id + " is partial: missing " + p.string());
    return read_fpx_expect(p, dims->second);
  };

  CacheBundle b;
  b.pair.id = id;
  b.pair.ir = load("ir");
  b.pair.vis = load("vis");
  b.pair.orig_height = e.orig_height;
  b.pair.orig_width = e.orig_width;
  b.pair.pad_bottom = e.pad_bottom;
  b.pair.pad_right = e.pad_right;

  b.samples.pair_id = id;
  b.samples.samples = unstack(load("samples"));
  b.samples.source = e.sources;
  if (b.samples.source.size() != b.samples.samples.size())
    throw CacheError("cache entry " + id + " lists " + std::to_string(e.sources.size()) + " sources for " +
                     std::to_string(b.samples.samples.size()) + " samples");

  b.stats.pair_id = id;
  b.stats.mean = load("mean");
  b.stats.pixel_var = load("pixel_var");
  b.stats.pixel_weights = load("pixel_weights");

  b.fstats.pair_id = id;
  for (int k = 0; e.tensors.count("feat_target_" + std::to_string(k)); ++k) {
    b.fstats.targets.push_back(load("feat_target_" + std::to_string(k)));
    b.fstats.vars.push_back(load("feat_var_" + std::to_string(k)));
  }
  b.fstats.routing = load("routing");
  if (b.fstats.targets.empty()) throw CacheError("cache entry " + id + " is partial: no feature statistics");
  return b;
}

CacheBundle cache_read(const std::string& id, const fs::path& root) {
  return cache_read(id, root, read_manifest(root));
}

std::vector<CacheBundle> load_cache(const fs::path& root) {
  const CacheManifest m = read_manifest(root);
  std::vector<CacheBundle> out;
  out.reserve(m.entries.size());
  for (const auto& kv : m.entries) out.push_back(cache_read(kv.first, root, m));
  return out;
}

bool entry_complete(const fs::path& root, const CacheManifest& manifest, const std::string& id) {
  auto it = manifest.entries.find(id);
  if (it == manifest.entries.end()) return false;
  for (const auto& [name, dims] : it->second.tensors) {
    const fs::path p = root / id / (name + ".fpx");
    std::ifstream is(p, std::ios::binary);
    if (!is) return false;
    // header only: magic, dtype, rank, dims
    char head[6];
    if (!is.read(head, 6) || std::memcmp(head, kFpxMagic, 4) != 0 || head[4] != 0) return false;
    const int rank = static_cast<unsigned char>(head[5]);
    if (rank != static_cast<int>(dims.size())) return false;
    std::size_t numel = 1;
    for (int r = 0; r < rank; ++r) {
      unsigned char d[4];
      if (!is.read(reinterpret_cast<char*>(d), 4)) return false;
      const std::uint32_t v = d[0] | (d[1] << 8) | (d[2] << 16) | (static_cast<std::uint32_t>(d[3]) << 24);
      if (static_cast<int>(v) != dims[r]) return false;
      numel *= v;
    }
    const auto expected = static_cast<std::uintmax_t>(6 + 4 * rank + 4 * numel);
    if (fs::file_size(p) != expected) return false;
  }
  return true;
}

CacheBuildReport build_cache(const std::vector<ImagePair>& pairs, const std::vector<const Teacher*>& teachers,
                             const CacheConfig& cfg, const PanelConfig& panel_cfg, const fs::path& root) {
  if (pairs.empty()) throw ConfigError("cache: dataset is empty");
  if (teachers.empty()) throw ConfigError("cache: no teachers given");
  if (cfg.n_per_teacher < 1) throw ConfigError("cache: --n must be >= 1");
  if (!(cfg.tau > 0)) throw ConfigError("cache: tau must be > 0");
  if (cfg.grid != panel_cfg.grid) throw ConfigError("cache: grid differs from the panel grid");
  {
    std::vector<std::string> names;
    for (const Teacher* t : teachers) names.push_back(t->name());
    if (names != cfg.teachers) throw ConfigError("cache: teacher names do not match the configuration");
  }

  CacheBuildReport report;
  report.pairs = static_cast<int>(pairs.size());

  // Reuse a previous run only when its configuration matches exactly.
  CacheManifest old;
  bool reuse = false;
  if (fs::exists(root / kManifestName)) {
    old = read_manifest(root);
    reuse = old.config == cfg;
  }
  const fs::path norms_dir = root / "norms";
  bool all_complete = reuse;
  std::vector<bool> complete(pairs.size(), false);
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    complete[i] = reuse && entry_complete(root, old, pairs[i].id);
    all_complete = all_complete && complete[i];
  }
  if (all_complete && old.entries.size() == pairs.size() && fs::exists(norms_dir / "panel.json")) {
    // Verify the stored statistics load cleanly, then leave everything as is.
    load_norm_stats(norms_dir);
    report.entries_skipped = report.pairs;
    return report;
  }

  // Teacher draws: reuse the raw samples of complete entries.
  std::vector<TeacherSampleSet<float>> sets;
  sets.reserve(pairs.size());
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    if (complete[i]) {
      sets.push_back(cache_read(pairs[i].id, root, old).samples);
    } else {
      Rng rng = pair_rng(cfg.seed, pairs[i].id);
      sets.push_back(draw_ensemble(teachers, pairs[i], cfg.n_per_teacher, rng));
    }
  }

  PanelConfig pc = panel_cfg;
  pc.tau = cfg.tau;
  const Panel<float> panel = build_panel<float>(pc);
  const PanelNormStats norms = as_stored(fit_norm_stats(panel, sets));
  save_norm_stats(norms_dir, pc, norms);
  report.norms_refit = true;
  report.files_written += 2 + static_cast<int>(norms.per_backbone.size());

  CacheManifest manifest;
  manifest.config = cfg;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    CacheBundle b;
    b.pair = pairs[i];
    b.samples = std::move(sets[i]);
    b.stats = ensemble_stats(b.samples);
    b.fstats = compute_feature_stats(panel, norms, b.samples, cfg.tau);
    report.files_written += cache_write(b, root, manifest);
    ++report.entries_written;
  }
  write_manifest(root, manifest);
  ++report.files_written;
  return report;
}

}  // namespace fusionproxy
