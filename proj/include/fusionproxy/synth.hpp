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

#ifndef FUSIONPROXY_SYNTH_HPP_
#define FUSIONPROXY_SYNTH_HPP_

#include <cstdint>
#include <filesystem>
#include <vector>

#include "fusionproxy/imaging.hpp"

namespace fusionproxy {

// Procedural infrared/visible scenes: a shaded background with colored
// rectangles and discs in the visible image, and an infrared image that
// shares the object edges plus a few hot blobs invisible in the visible one.
struct SynthConfig {
  int count = 4;
  int height = 64;
  int width = 64;
  int objects = 6;
  int hot_spots = 2;
  double ir_noise = 0.01;
  std::uint64_t seed = 0;
};

ImagePair synth_pair(const std::string& id, int height, int width, Rng& rng, const SynthConfig& cfg = {});

// Ids are "scene_000", "scene_001", ...
std::vector<ImagePair> synth_dataset(const SynthConfig& cfg);

// Writes <root>/ir/<id>.png and <root>/vis/<id>.png at original size.
void write_dataset(const std::filesystem::path& root, const std::vector<ImagePair>& pairs);

}  // namespace fusionproxy

#endif  // FUSIONPROXY_SYNTH_HPP_
