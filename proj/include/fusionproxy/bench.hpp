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

#ifndef FUSIONPROXY_BENCH_HPP_
#define FUSIONPROXY_BENCH_HPP_

#include <functional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace fusionproxy {

struct BenchReport {
  std::string platform;
  std::string precision = "float32";
  int height = 0;
  int width = 0;
  int warmup = 0;
  int runs = 0;
  double median_ms = 0.0;
  double fps = 0.0;
  std::vector<double> samples_ms;  // timed runs only, in call order
};

// Calls `fn` warmup times untimed, then `runs` times timed with a steady
// clock. fps = 1000 / median_ms.
BenchReport run_bench(const std::function<void()>& fn, int warmup, int runs);

double median(std::vector<double> values);

// Compiler, architecture and thread count of this build.
std::string platform_label();

nlohmann::json to_json(const BenchReport& r, bool with_samples = false);

}  // namespace fusionproxy

#endif  // FUSIONPROXY_BENCH_HPP_
