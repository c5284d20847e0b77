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

#ifndef FUSIONPROXY_TEACHER_HPP_
#define FUSIONPROXY_TEACHER_HPP_

#include <memory>
#include <string>
#include <vector>

#include "fusionproxy/imaging.hpp"
#include "fusionproxy/tensor.hpp"

namespace fusionproxy {

// Stochastic conditional sampler over fused images. Implementations must be
// deterministic in the rng state and return [3,H,W] samples matching x.
class Teacher {
 public:
  virtual ~Teacher() = default;
  virtual const std::string& name() const = 0;
  virtual Tensor<float> sample(const ImagePair& x, Rng& rng) const = 0;
};

// sample = clamp(alpha * ir + (1 - alpha) * vis + noise, 0, 1), with alpha
// drawn uniformly per block (block_size 0 means one alpha per image) and
// i.i.d. Gaussian noise of standard deviation noise_std.
struct SyntheticProfile {
  std::string name = "synth";
  double alpha_lo = 0.5;
  double alpha_hi = 0.5;
  double noise_std = 0.0;
  int block_size = 0;
};

class SyntheticTeacher final : public Teacher {
 public:
  explicit SyntheticTeacher(SyntheticProfile profile);
  const std::string& name() const override { return profile_.name; }
  Tensor<float> sample(const ImagePair& x, Rng& rng) const override;
  const SyntheticProfile& profile() const { return profile_; }

 private:
  SyntheticProfile profile_;
};

std::unique_ptr<Teacher> synthetic_teacher(SyntheticProfile profile);

// Resolves a teacher name: the presets "synthA", "synthB", "det", or a custom
// "synth:<alpha_lo>:<alpha_hi>:<noise_std>[:<block>]".
std::unique_ptr<Teacher> teacher_from_spec(const std::string& spec);
std::vector<std::unique_ptr<Teacher>> teachers_from_list(const std::string& comma_separated);

template <typename T>
struct TeacherSampleSet {
  std::string pair_id;
  std::vector<Tensor<T>> samples;  // each [3,H,W]
  std::vector<std::string> source;

  std::size_t count() const { return samples.size(); }
};

template <typename T>
struct EnsembleStats {
  std::string pair_id;
  Tensor<T> mean;           // [3,H,W]
  Tensor<T> pixel_var;      // [H,W]
  Tensor<T> pixel_weights;  // [H,W], sums to 1
};

// Draws n_per_teacher samples from each teacher, taking one from each teacher
// in turn.
TeacherSampleSet<float> draw_ensemble(const std::vector<const Teacher*>& teachers, const ImagePair& x,
                                      int n_per_teacher, Rng& rng);

template <typename T>
void require_samples(const TeacherSampleSet<T>& s) {
  if (s.samples.empty()) throw ShapeError("ensemble for " + s.pair_id + " is empty");
  for (const auto& y : s.samples) require_same_shape(y, s.samples.front(), "ensemble sample");
}

template <typename T>
Tensor<T> ensemble_mean(const TeacherSampleSet<T>& s) {
  require_samples(s);
  Tensor<T> mean(s.samples.front().shape());
  for (const auto& y : s.samples) mean.array() += y.array();
  mean.array() /= static_cast<T>(s.samples.size());
  return mean;
}

// Population variance over samples per pixel and channel, averaged over the
// channels to one value per pixel.
template <typename T>
Tensor<T> pixel_variance(const TeacherSampleSet<T>& s) {
  const Tensor<T> mean = ensemble_mean(s);
  Tensor<T> per_channel(mean.shape());
  for (const auto& y : s.samples) {
    const auto d = y.array() - mean.array();
    per_channel.array() += d * d;
  }
  per_channel.array() /= static_cast<T>(s.samples.size());
  return channel_mean(per_channel);
}

// w(p) = (1 / (var(p) + eps)) / sum_q 1 / (var(q) + eps).
template <typename T>
Tensor<T> pixel_weights(const Tensor<T>& var, T eps = T(1e-3)) {
  Tensor<T> w(var.shape());
  T total = 0;
  for (std::size_t i = 0; i < var.size(); ++i) {
    if (var[i] < T(0)) throw ShapeError("pixel_weights: negative variance");
    w[i] = T(1) / (var[i] + eps);
    total += w[i];
  }
  w.array() /= total;
  return w;
}

template <typename T>
EnsembleStats<T> ensemble_stats(const TeacherSampleSet<T>& s, T eps = T(1e-3)) {
  EnsembleStats<T> st;
  st.pair_id = s.pair_id;
  st.mean = ensemble_mean(s);
  st.pixel_var = pixel_variance(s);
  st.pixel_weights = pixel_weights(st.pixel_var, eps);
  return st;
}

template <typename U, typename T>
TeacherSampleSet<U> cast_samples(const TeacherSampleSet<T>& s) {
  TeacherSampleSet<U> out;
  out.pair_id = s.pair_id;
  out.source = s.source;
  for (const auto& y : s.samples) out.samples.push_back(y.template cast<U>());
  return out;
}

}  // namespace fusionproxy

#endif  // FUSIONPROXY_TEACHER_HPP_
