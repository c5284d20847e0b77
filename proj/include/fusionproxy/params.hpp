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

#ifndef FUSIONPROXY_PARAMS_HPP_
#define FUSIONPROXY_PARAMS_HPP_

#include <map>
#include <random>
#include <string>
#include <vector>

#include "fusionproxy/autograd.hpp"

namespace fusionproxy {

// Named trainable leaves in registration order.
template <typename T>
class ParamStore {
 public:
  struct Entry {
    std::string name;
    ad::Var<T> var;
  };

  ad::Var<T> add(const std::string& name, Tensor<T> init) {
    if (index_.count(name)) throw ConfigError("duplicate parameter name " + name);
    index_[name] = entries_.size();
    entries_.push_back({name, ad::Var<T>(std::move(init), true)});
    return entries_.back().var;
  }

  const std::vector<Entry>& entries() const { return entries_; }
  std::vector<Entry>& entries() { return entries_; }

  ad::Var<T>& get(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw ConfigError("no parameter named " + name);
    return entries_[it->second].var;
  }
  bool contains(const std::string& name) const { return index_.count(name) > 0; }

  std::size_t count() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.var.value().size();
    return n;
  }

  void zero_grad() {
    for (auto& e : entries_) e.var.zero_grad();
  }

  // All parameter values concatenated in registration order.
  std::vector<T> flatten() const {
    std::vector<T> out;
    out.reserve(count());
    for (const auto& e : entries_) out.insert(out.end(), e.var.value().vec().begin(), e.var.value().vec().end());
    return out;
  }

 private:
  std::vector<Entry> entries_;
  std::map<std::string, std::size_t> index_;
};

// Uniform(-bound, bound) initializer drawing doubles so float and double
// builds from the same seed agree up to rounding.
class Initializer {
 public:
  explicit Initializer(std::uint64_t seed) : rng_(seed) {}

  template <typename T>
  Tensor<T> uniform(Shape shape, double bound) {
    std::uniform_real_distribution<double> unit(-1.0, 1.0);
    Tensor<T> t(std::move(shape));
    for (auto& v : t.vec()) v = static_cast<T>(bound * unit(rng_));
    return t;
  }

  // Fan-in scaled uniform for a conv weight [Cout, Cin, k, k] (or a
  // depthwise [C, k, k]).
  template <typename T>
  Tensor<T> conv(Shape shape, double gain = 1.0) {
    std::size_t fan_in = 1;
    for (std::size_t i = 1; i < shape.size(); ++i) fan_in *= static_cast<std::size_t>(shape[i]);
    return uniform<T>(std::move(shape), gain * std::sqrt(3.0 / static_cast<double>(fan_in)));
  }

 private:
  std::mt19937_64 rng_;
};

}  // namespace fusionproxy

#endif  // FUSIONPROXY_PARAMS_HPP_
