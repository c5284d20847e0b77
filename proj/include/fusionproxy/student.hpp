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

#ifndef FUSIONPROXY_STUDENT_HPP_
#define FUSIONPROXY_STUDENT_HPP_

#include <cstdint>
#include <filesystem>
#include <limits>
#include <memory>
#include <string>
#include <vector>

#include "fusionproxy/autograd.hpp"
#include "fusionproxy/imaging.hpp"
#include "fusionproxy/params.hpp"

namespace fusionproxy {

enum class Variant { kDefault, kUltralight, kMobileCnn, kMobileTransformer };

std::string variant_name(Variant v);
// Throws ConfigError listing the valid names.
Variant parse_variant(const std::string& name);

struct StudentConfig {
  Variant variant = Variant::kDefault;
  std::vector<int> widths;  // channels per scale
  std::vector<int> depths;  // blocks per scale
  int scales = 4;
  std::uint64_t seed = 0;

  // Preset widths/depths for a variant.
  static StudentConfig preset(Variant v, std::uint64_t seed = 0);
  void validate() const;
  int multiple() const { return 1 << scales; }
};

// Per-scale residual fusion head:
//   out = P(gate(cat) * cat) + f_ir + f_vis,  cat = [f_ir; f_vis],
// where gate is a sigmoid channel attention over the 2c concatenated channels
// and P a bias-free 1x1 projection 2c -> c. The additive paths bypass the gate.
template <typename T>
class FusionHead {
 public:
  FusionHead() = default;
  FusionHead(ParamStore<T>& store, Initializer& init, const std::string& prefix, int channels) : channels_(channels) {
    const int c2 = 2 * channels;
    gate_w_ = store.add(prefix + ".gate.weight", init.conv<T>({c2, c2, 1, 1}));
    gate_b_ = store.add(prefix + ".gate.bias", Tensor<T>({c2}));
    proj_w_ = store.add(prefix + ".proj.weight", init.conv<T>({channels, c2, 1, 1}));
  }

  ad::Var<T> forward(const ad::Var<T>& f_ir, const ad::Var<T>& f_vis) const {
    if (f_ir.shape() != f_vis.shape() || f_ir.dim(0) != channels_)
      throw ShapeError("fusion head expects two [" + std::to_string(channels_) + ",H,W] maps, got " +
                       shape_str(f_ir.shape()) + " and " + shape_str(f_vis.shape()));
    auto cat = ad::concat_channels(f_ir, f_vis);
    auto gate = ad::sigmoid(ad::conv2d(ad::global_avg_pool(cat), gate_w_, gate_b_));
    auto mixed = ad::conv2d(ad::scale_channels(cat, gate), proj_w_, ad::Var<T>());
    return ad::add(ad::add(mixed, f_ir), f_vis);
  }

  // Gate values for the given inputs, [2c,1,1].
  Tensor<T> gate(const ad::Var<T>& f_ir, const ad::Var<T>& f_vis) const {
    ad::NoGradGuard guard;
    auto cat = ad::concat_channels(f_ir, f_vis);
    return ad::sigmoid(ad::conv2d(ad::global_avg_pool(cat), gate_w_, gate_b_)).value();
  }

  int channels() const { return channels_; }

 private:
  int channels_ = 0;
  ad::Var<T> gate_w_, gate_b_, proj_w_;
};

namespace detail {

// Residual block of one of the four variant families.
template <typename T>
class Block {
 public:
  Block(ParamStore<T>& s, Initializer& init, const std::string& p, int c, Variant v) : variant_(v) {
    const int e = 2 * c;
    switch (v) {
      case Variant::kDefault:
      case Variant::kUltralight: {
        const int k = v == Variant::kDefault ? 7 : 3;
        dw_w_ = s.add(p + ".dw.weight", init.conv<T>({c, k, k}));
        dw_b_ = s.add(p + ".dw.bias", Tensor<T>({c}));
        pw1_w_ = s.add(p + ".pw1.weight", init.conv<T>({e, c, 1, 1}));
        pw1_b_ = s.add(p + ".pw1.bias", Tensor<T>({e}));
        grn_g_ = s.add(p + ".grn.gamma", Tensor<T>({e}));
        grn_b_ = s.add(p + ".grn.beta", Tensor<T>({e}));
        pw2_w_ = s.add(p + ".pw2.weight", init.conv<T>({c, e, 1, 1}, 0.5));
        pw2_b_ = s.add(p + ".pw2.bias", Tensor<T>({c}));
        break;
      }
      case Variant::kMobileTransformer:
        q_w_ = s.add(p + ".attn.score.weight", init.conv<T>({1, c, 1, 1}));
        k_w_ = s.add(p + ".attn.key.weight", init.conv<T>({c, c, 1, 1}));
        v_w_ = s.add(p + ".attn.value.weight", init.conv<T>({c, c, 1, 1}));
        o_w_ = s.add(p + ".attn.out.weight", init.conv<T>({c, c, 1, 1}, 0.5));
        [[fallthrough]];
      case Variant::kMobileCnn:
        pw1_w_ = s.add(p + ".expand.weight", init.conv<T>({e, c, 1, 1}));
        pw1_b_ = s.add(p + ".expand.bias", Tensor<T>({e}));
        dw_w_ = s.add(p + ".dw.weight", init.conv<T>({e, 3, 3}));
        dw_b_ = s.add(p + ".dw.bias", Tensor<T>({e}));
        pw2_w_ = s.add(p + ".project.weight", init.conv<T>({c, e, 1, 1}, 0.5));
        pw2_b_ = s.add(p + ".project.bias", Tensor<T>({c}));
        break;
    }
  }

  ad::Var<T> forward(ad::Var<T> x) const {
    switch (variant_) {
      case Variant::kDefault:
      case Variant::kUltralight: {
        auto h = ad::depthwise_conv2d(x, dw_w_, dw_b_);
        h = ad::grn(ad::gelu(ad::conv2d(h, pw1_w_, pw1_b_)), grn_g_, grn_b_);
        return ad::add(x, ad::conv2d(h, pw2_w_, pw2_b_));
      }
      case Variant::kMobileTransformer: {
        // Separable linear attention: one softmax over positions builds a
        // global context vector that gates the value projection.
        auto scores = ad::spatial_softmax(ad::conv2d(x, q_w_, ad::Var<T>()));
        auto context = ad::weighted_pool(ad::conv2d(x, k_w_, ad::Var<T>()), scores);
        auto values = ad::relu(ad::conv2d(x, v_w_, ad::Var<T>()));
        x = ad::add(x, ad::conv2d(ad::scale_channels(values, context), o_w_, ad::Var<T>()));
        [[fallthrough]];
      }
      case Variant::kMobileCnn: {
        auto h = ad::gelu(ad::conv2d(x, pw1_w_, pw1_b_));
        h = ad::gelu(ad::depthwise_conv2d(h, dw_w_, dw_b_));
        return ad::add(x, ad::conv2d(h, pw2_w_, pw2_b_));
      }
    }
    return x;
  }

 private:
  Variant variant_;
  ad::Var<T> dw_w_, dw_b_, pw1_w_, pw1_b_, grn_g_, grn_b_, pw2_w_, pw2_b_;
  ad::Var<T> q_w_, k_w_, v_w_, o_w_;
};

}  // namespace detail

// Dual-encoder U-Net. Each encoder halves the resolution `scales` times with
// 2x2 stride-2 convolutions followed by residual blocks; a fusion head merges
// the two encoders at every scale; the decoder upsamples, concatenates the
// fused skip, and the final stage sees the raw inputs at full resolution
// before a sigmoid maps to [0,1].
template <typename T>
class Student {
 public:
  explicit Student(StudentConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    Initializer init(cfg_.seed);
    const auto& w = cfg_.widths;
    for (int m = 0; m < 2; ++m) {
      const std::string enc = m == 0 ? "enc_ir" : "enc_vis";
      auto& e = encoders_[m];
      int in_c = m == 0 ? 1 : 3;
      for (int s = 0; s < cfg_.scales; ++s) {
        const std::string p = enc + "." + std::to_string(s);
        e.down_w.push_back(store_.add(p + ".down.weight", init.conv<T>({w[s], in_c, 2, 2})));
        e.down_b.push_back(store_.add(p + ".down.bias", Tensor<T>({w[s]})));
        std::vector<detail::Block<T>> blocks;
        for (int d = 0; d < cfg_.depths[s]; ++d)
          blocks.emplace_back(store_, init, p + ".block" + std::to_string(d), w[s], cfg_.variant);
        e.blocks.push_back(std::move(blocks));
        in_c = w[s];
      }
    }
    for (int s = 0; s < cfg_.scales; ++s)
      heads_.emplace_back(store_, init, "head" + std::to_string(s), w[s]);
    for (int s = cfg_.scales - 2; s >= 0; --s) {
      const std::string p = "dec." + std::to_string(s);
      Stage st;
      st.merge_w = store_.add(p + ".merge.weight", init.conv<T>({w[s], w[s + 1] + w[s], 1, 1}));
      st.merge_b = store_.add(p + ".merge.bias", Tensor<T>({w[s]}));
      st.blocks.emplace_back(store_, init, p + ".block0", w[s], cfg_.variant);
      decoder_.push_back(std::move(st));
    }
    const int c0 = w[0];
    out_w1_ = store_.add("out.conv.weight", init.conv<T>({c0, c0 + 4, 3, 3}));
    out_b1_ = store_.add("out.conv.bias", Tensor<T>({c0}));
    out_w2_ = store_.add("out.proj.weight", init.conv<T>({3, c0, 1, 1}));
    out_b2_ = store_.add("out.proj.bias", Tensor<T>({3}));
  }

  Student(const Student&) = delete;
  Student& operator=(const Student&) = delete;

  const StudentConfig& config() const { return cfg_; }
  ParamStore<T>& params() { return store_; }
  const ParamStore<T>& params() const { return store_; }
  std::size_t parameter_count() const { return store_.count(); }
  const FusionHead<T>& head(int scale) const { return heads_.at(scale); }

  // ir [1,H,W], vis [3,H,W] -> [3,H,W] in (0,1); H, W multiples of 2^scales.
  ad::Var<T> forward(const ad::Var<T>& ir, const ad::Var<T>& vis) const {
    check_input(ir.value(), vis.value());
    std::vector<ad::Var<T>> fused;
    ad::Var<T> a = ir, b = vis;
    for (int s = 0; s < cfg_.scales; ++s) {
      a = encode(0, s, a);
      b = encode(1, s, b);
      fused.push_back(heads_[s].forward(a, b));
    }
    ad::Var<T> d = fused.back();
    for (std::size_t i = 0; i < decoder_.size(); ++i) {
      const int s = cfg_.scales - 2 - static_cast<int>(i);
      const auto& st = decoder_[i];
      d = ad::gelu(ad::conv2d(ad::concat_channels(ad::upsample2x(d), fused[s]), st.merge_w, st.merge_b));
      for (const auto& blk : st.blocks) d = blk.forward(d);
    }
    auto full = ad::concat_channels(ad::concat_channels(ad::upsample2x(d), ir), vis);
    auto h = ad::gelu(ad::conv2d(full, out_w1_, out_b1_, 1, 1));
    return ad::sigmoid(ad::conv2d(h, out_w2_, out_b2_));
  }

  // Evaluation-mode single pass.
  Tensor<T> forward(const Tensor<T>& ir, const Tensor<T>& vis) const {
    ad::NoGradGuard guard;
    return forward(ad::Var<T>(ir), ad::Var<T>(vis)).value();
  }

 private:
  struct Encoder {
    std::vector<ad::Var<T>> down_w, down_b;
    std::vector<std::vector<detail::Block<T>>> blocks;
  };
  struct Stage {
    ad::Var<T> merge_w, merge_b;
    std::vector<detail::Block<T>> blocks;
  };

  void check_input(const Tensor<T>& ir, const Tensor<T>& vis) const {
    if (ir.rank() != 3 || ir.dim(0) != 1 || vis.rank() != 3 || vis.dim(0) != 3 || ir.dim(1) != vis.dim(1) ||
        ir.dim(2) != vis.dim(2))
      throw ShapeError("student expects ir [1,H,W] and vis [3,H,W], got " + shape_str(ir.shape()) + " and " +
                       shape_str(vis.shape()));
    const int m = cfg_.multiple();
    if (ir.dim(1) % m || ir.dim(2) % m || ir.dim(1) == 0 || ir.dim(2) == 0)
      throw ShapeError("student input " + std::to_string(ir.dim(1)) + "x" + std::to_string(ir.dim(2)) +
                       " is not divisible by " + std::to_string(m));
  }

  ad::Var<T> encode(int m, int s, const ad::Var<T>& x) const {
    const auto& e = encoders_[m];
    auto h = ad::conv2d(x, e.down_w[s], e.down_b[s], 2, 0);
    for (const auto& blk : e.blocks[s]) h = blk.forward(h);
    return h;
  }

  StudentConfig cfg_;
  ParamStore<T> store_;
  Encoder encoders_[2];
  std::vector<FusionHead<T>> heads_;
  std::vector<Stage> decoder_;
  ad::Var<T> out_w1_, out_b1_, out_w2_, out_b2_;
};

template <typename T>
std::unique_ptr<Student<T>> build_student(const StudentConfig& cfg) {
  return std::make_unique<Student<T>>(cfg);
}

// Pads to the student's multiple, runs one eval pass, crops back.
FusedImage fuse(const Student<float>& student, const ImagePair& pair);
Tensor<float> fuse_any_size(const Student<float>& student, const Tensor<float>& ir, const Tensor<float>& vis);

// Checkpoint directory: model.json + params/<name>.fpx.
void save_student(const Student<float>& student, const std::filesystem::path& dir);
std::unique_ptr<Student<float>> load_student(const std::filesystem::path& dir);
// Overwrites every parameter of an already built student from `dir`.
void load_student_params(Student<float>& student, const std::filesystem::path& dir);

}  // namespace fusionproxy

#endif  // FUSIONPROXY_STUDENT_HPP_
