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

#include "fusionproxy/teacher.hpp"

#include <algorithm>
#include <sstream>

namespace fusionproxy {

SyntheticTeacher::SyntheticTeacher(SyntheticProfile profile) : profile_(std::move(profile)) {
  if (profile_.alpha_lo > profile_.alpha_hi)
    throw ConfigError("teacher " + profile_.name + ": alpha_lo > alpha_hi");
  if (profile_.noise_std < 0) throw ConfigError("teacher " + profile_.name + ": negative noise std");
  if (profile_.block_size < 0) throw ConfigError("teacher " + profile_.name + ": negative block size");
}

Tensor<float> SyntheticTeacher::sample(const ImagePair& x, Rng& rng) const {
  const int h = x.height(), w = x.width();
  const int block = profile_.block_size;
  const int by = block > 0 ? (h + block - 1) / block : 1;
  const int bx = block > 0 ? (w + block - 1) / block : 1;
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<double> alpha(static_cast<std::size_t>(by) * bx);
  for (auto& a : alpha) a = profile_.alpha_lo + (profile_.alpha_hi - profile_.alpha_lo) * unit(rng);
  std::normal_distribution<double> noise(0.0, 1.0);
  Tensor<float> out({3, h, w});
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < h; ++y)
      for (int i = 0; i < w; ++i) {
        const double a = alpha[block > 0 ? (y / block) * bx + i / block : 0];
        double v = a * x.ir(0, y, i) + (1.0 - a) * x.vis(c, y, i);
        if (profile_.noise_std > 0) v += profile_.noise_std * noise(rng);
        out(c, y, i) = static_cast<float>(std::clamp(v, 0.0, 1.0));
      }
  return out;
}

std::unique_ptr<Teacher> synthetic_teacher(SyntheticProfile profile) {
  return std::make_unique<SyntheticTeacher>(std::move(profile));
}

std::unique_ptr<Teacher> teacher_from_spec(const std::string& spec) {
  if (spec == "synthA") return synthetic_teacher({"synthA", 0.55, 0.85, 0.02, 16});
  if (spec == "synthB") return synthetic_teacher({"synthB", 0.15, 0.45, 0.03, 0});
  if (spec == "det") return synthetic_teacher({"det", 0.5, 0.5, 0.0, 0});
  if (spec.rfind("synth:", 0) == 0) {
    std::vector<std::string> parts;
    std::stringstream ss(spec.substr(6));
    for (std::string p; std::getline(ss, p, ':');) parts.push_back(p);
    if (parts.size() < 3 || parts.size() > 4) throw ConfigError("malformed teacher spec: " + spec);
    try {
      SyntheticProfile p{spec, std::stod(parts[0]), std::stod(parts[1]), std::stod(parts[2]),
                         parts.size() == 4 ? std::stoi(parts[3]) : 0};
      return synthetic_teacher(std::move(p));
    } catch (const std::logic_error&) {
      throw ConfigError("malformed teacher spec: " + spec);
    }
  }
  throw ConfigError("unknown teacher \"" + spec + "\" (valid: synthA, synthB, det, synth:lo:hi:std[:block])");
}

std::vector<std::unique_ptr<Teacher>> teachers_from_list(const std::string& list) {
  std::vector<std::unique_ptr<Teacher>> out;
  std::stringstream ss(list);
  for (std::string item; std::getline(ss, item, ',');)
    if (!item.empty()) out.push_back(teacher_from_spec(item));
  if (out.empty()) throw ConfigError("no teachers given");
  return out;
}

TeacherSampleSet<float> draw_ensemble(const std::vector<const Teacher*>& teachers, const ImagePair& x,
                                      int n_per_teacher, Rng& rng) {
  if (teachers.empty()) throw ConfigError("draw_ensemble: no teachers");
  if (n_per_teacher < 1) throw ConfigError("draw_ensemble: n_per_teacher must be >= 1");
  TeacherSampleSet<float> set;
  set.pair_id = x.id;
  const Shape expected{3, x.height(), x.width()};
  // Round-robin over teachers so source labels interleave.
  for (int n = 0; n < n_per_teacher; ++n)
    for (const Teacher* t : teachers) {
      Tensor<float> y = t->sample(x, rng);
      if (y.shape() != expected)
        throw ShapeError("teacher " + t->name() + " returned " + shape_str(y.shape()) + ", expected " +
                         shape_str(expected));
      set.samples.push_back(std::move(y));
      set.source.push_back(t->name());
    }
  return set;
}

}  // namespace fusionproxy
