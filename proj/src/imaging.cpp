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

#include "fusionproxy/imaging.hpp"

#include <algorithm>
#include <map>

#include "fusionproxy/png_io.hpp"

namespace fs = std::filesystem;

namespace fusionproxy {

ImagePair make_pair(std::string id, Tensor<float> ir, Tensor<float> vis) {
  if (ir.rank() != 3 || ir.dim(0) != 1) throw ShapeError("pair " + id + ": ir must be [1,H,W]");
  if (vis.rank() != 3 || vis.dim(0) != 3) throw ShapeError("pair " + id + ": vis must be [3,H,W]");
  if (ir.dim(1) != vis.dim(1) || ir.dim(2) != vis.dim(2))
    throw ShapeError("pair " + id + ": ir " + shape_str(ir.shape()) + " and vis " +
                     shape_str(vis.shape()) + " differ in size");
  ImagePair pair;
  pair.id = std::move(id);
  pair.orig_height = ir.dim(1);
  pair.orig_width = ir.dim(2);
  const int h = round_up(pair.orig_height, kSpatialMultiple);
  const int w = round_up(pair.orig_width, kSpatialMultiple);
  pair.pad_bottom = h - pair.orig_height;
  pair.pad_right = w - pair.orig_width;
  if (pair.pad_bottom || pair.pad_right) {
    pair.ir = pad_bottom_right(ir, h, w);
    pair.vis = pad_bottom_right(vis, h, w);
  } else {
    pair.ir = std::move(ir);
    pair.vis = std::move(vis);
  }
  return pair;
}

std::vector<ImagePair> load_dataset(const fs::path& root) {
  const fs::path ir_dir = root / "ir", vis_dir = root / "vis";
  if (!fs::is_directory(ir_dir) || !fs::is_directory(vis_dir))
    throw IoError("dataset root " + root.string() + " must contain ir/ and vis/");
  auto list = [](const fs::path& dir) {
    std::map<std::string, fs::path> files;
    for (const auto& e : fs::directory_iterator(dir))
      if (e.is_regular_file() && e.path().extension() == ".png") files[e.path().stem().string()] = e.path();
    return files;
  };
  const auto ir_files = list(ir_dir), vis_files = list(vis_dir);
  std::vector<std::string> orphans;
  for (const auto& [id, _] : ir_files)
    if (!vis_files.count(id)) orphans.push_back(id);
  for (const auto& [id, _] : vis_files)
    if (!ir_files.count(id)) orphans.push_back(id);
  if (!orphans.empty()) {
    std::sort(orphans.begin(), orphans.end());
    std::string msg = "orphan ids without a counterpart:";
    for (const auto& id : orphans) msg += " " + id;
    throw IoError(msg);
  }
  std::vector<ImagePair> pairs;
  pairs.reserve(ir_files.size());
  for (const auto& [id, ir_path] : ir_files)
    pairs.push_back(make_pair(id, read_png_gray(ir_path), read_png_rgb(vis_files.at(id))));
  return pairs;
}

AffinePerturbation sample_perturbation(Rng& rng, const PerturbationRange& range) {
  if (range.max_translation < 0 || range.max_rotation < 0)
    throw ConfigError("perturbation ranges must be nonnegative");
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  AffinePerturbation p;
  // Draw all three regardless so the rng advances identically for any range.
  const double ux = unit(rng), uy = unit(rng), ut = unit(rng);
  p.dx = ux * range.max_translation;
  p.dy = uy * range.max_translation;
  p.theta = ut * range.max_rotation;
  return p;
}

}  // namespace fusionproxy
