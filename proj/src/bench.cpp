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

#include "fusionproxy/bench.hpp"

#include <algorithm>
#include <chrono>

#include "fusionproxy/error.hpp"

namespace fusionproxy {

double median(std::vector<double> values) {
  if (values.empty()) throw ConfigError("median of an empty sample");
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  return n % 2 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

BenchReport run_bench(const std::function<void()>& fn, int warmup, int runs) {
  if (runs < 1) throw ConfigError("bench: runs must be >= 1");
  if (warmup < 0) throw ConfigError("bench: warmup must be >= 0");
  using Clock = std::chrono::steady_clock;
  for (int i = 0; i < warmup; ++i) fn();
  BenchReport r;
  r.platform = platform_label();
  r.warmup = warmup;
  r.runs = runs;
  r.samples_ms.reserve(static_cast<std::size_t>(runs));
  for (int i = 0; i < runs; ++i) {
    const auto t0 = Clock::now();
    fn();
    const auto t1 = Clock::now();
    r.samples_ms.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
  }
  r.median_ms = median(r.samples_ms);
  r.fps = 1000.0 / r.median_ms;
  return r;
}

std::string platform_label() {
  std::string label;
#if defined(__clang__)
  label = "clang " + std::to_string(__clang_major__) + "." + std::to_string(__clang_minor__);
#elif defined(__GNUC__)
  label = "gcc " + std::to_string(__GNUC__) + "." + std::to_string(__GNUC_MINOR__);
#else
  label = "unknown compiler";
#endif
#if defined(__x86_64__)
  label += ", x86_64";
#elif defined(__aarch64__)
  label += ", aarch64";
#endif
  label += ", cpu, 1 thread";
  return label;
}

nlohmann::json to_json(const BenchReport& r, bool with_samples) {
  nlohmann::json j = {{"platform", r.platform}, {"precision", r.precision}, {"height", r.height},
                      {"width", r.width},       {"warmup", r.warmup},       {"runs", r.runs},
                      {"median_ms", r.median_ms}, {"fps", r.fps}};
  if (with_samples) j["samples_ms"] = r.samples_ms;
  return j;
}

}  // namespace fusionproxy
