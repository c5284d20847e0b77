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

#ifndef FUSIONPROXY_AUTOGRAD_HPP_
#define FUSIONPROXY_AUTOGRAD_HPP_

// Minimal reverse-mode differentiation over Tensor<T>. Each op allocates its
// output node and, when any input requires a gradient and grad mode is on,
// records a closure that accumulates into the inputs' gradient buffers.
// Graphs are freed as soon as the last Var referencing them goes away, so
// no-grad inference holds only live activations.

#include <cmath>
#include <functional>
#include <memory>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "fusionproxy/imaging.hpp"
#include "fusionproxy/tensor.hpp"

namespace fusionproxy::ad {

template <typename T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  Tensor<T>& grad_buffer() {
    if (grad.shape() != value.shape()) grad = Tensor<T>(value.shape());
    return grad;
  }
  bool has_grad() const { return !grad.empty() && grad.shape() == value.shape(); }
};

inline bool& grad_mode() {
  thread_local bool enabled = true;
  return enabled;
}

class NoGradGuard {
 public:
  NoGradGuard() : prev_(grad_mode()) { grad_mode() = false; }
  ~NoGradGuard() { grad_mode() = prev_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

template <typename T>
class Var {
 public:
  Var() = default;
  explicit Var(Tensor<T> value, bool requires_grad = false) : node_(std::make_shared<Node<T>>()) {
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
  }
  explicit Var(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

  bool defined() const { return node_ != nullptr; }
  const Tensor<T>& value() const { return node_->value; }
  Tensor<T>& mutable_value() { return node_->value; }
  const Tensor<T>& grad() const { return node_->grad; }
  Tensor<T>& grad_buffer() { return node_->grad_buffer(); }
  bool has_grad() const { return node_->has_grad(); }
  void zero_grad() { node_->grad = Tensor<T>(); }
  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool r) { node_->requires_grad = r; }
  const Shape& shape() const { return node_->value.shape(); }
  int dim(int i) const { return node_->value.dim(i); }
  Node<T>* node() const { return node_.get(); }
  const std::shared_ptr<Node<T>>& node_ptr() const { return node_; }

 private:
  std::shared_ptr<Node<T>> node_;
};

// Creates an op output. `backward` receives the output node; parents are in
// the order given.
template <typename T>
Var<T> make_op(Tensor<T> value, std::initializer_list<Var<T>> inputs, std::function<void(Node<T>&)> backward) {
  auto node = std::make_shared<Node<T>>();
  node->value = std::move(value);
  bool needs = false;
  if (grad_mode())
    for (const auto& v : inputs) needs = needs || v.requires_grad();
  if (needs) {
    node->requires_grad = true;
    for (const auto& v : inputs) node->parents.push_back(v.node_ptr());
    node->backward = std::move(backward);
  }
  return Var<T>(std::move(node));
}

// Accumulates d(out)/d(leaves) given d(out)/d(out) = seed (ones for a scalar
// output when seed is empty).
template <typename T>
void backward(const Var<T>& out, Tensor<T> seed = {}) {
  if (!out.requires_grad()) return;
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> seen;
  std::vector<std::pair<Node<T>*, std::size_t>> stack{{out.node(), 0}};
  seen.insert(out.node());
  while (!stack.empty()) {
    auto& [n, i] = stack.back();
    if (i < n->parents.size()) {
      Node<T>* p = n->parents[i++].get();
      if (p->requires_grad && seen.insert(p).second) stack.push_back({p, 0});
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }
  Tensor<T>& g = out.node()->grad_buffer();
  if (seed.empty()) {
    for (auto& v : g.vec()) v += T(1);
  } else {
    require_same_shape(g, seed, "backward seed");
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += seed[i];
  }
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* n = *it;
    if (n->backward && n->has_grad()) n->backward(*n);
  }
}

namespace detail {

template <typename T>
Node<T>& parent(Node<T>& n, std::size_t i) {
  return *n.parents[i];
}

template <typename T>
bool wants(Node<T>& n, std::size_t i) {
  return n.parents[i]->requires_grad;
}

}  // namespace detail

// ---------------------------------------------------------------- elementwise

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a.value(), b.value(), "add");
  Tensor<T> out = a.value();
  out.array() += b.value().array();
  return make_op<T>(std::move(out), {a, b}, [](Node<T>& n) {
    for (std::size_t i = 0; i < 2; ++i)
      if (detail::wants(n, i)) detail::parent(n, i).grad_buffer().array() += n.grad.array();
  });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a.value(), b.value(), "sub");
  Tensor<T> out = a.value();
  out.array() -= b.value().array();
  return make_op<T>(std::move(out), {a, b}, [](Node<T>& n) {
    if (detail::wants(n, 0)) detail::parent(n, 0).grad_buffer().array() += n.grad.array();
    if (detail::wants(n, 1)) detail::parent(n, 1).grad_buffer().array() -= n.grad.array();
  });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a.value(), b.value(), "mul");
  Tensor<T> out = a.value();
  out.array() *= b.value().array();
  return make_op<T>(std::move(out), {a, b}, [](Node<T>& n) {
    auto& pa = detail::parent(n, 0);
    auto& pb = detail::parent(n, 1);
    if (pa.requires_grad) pa.grad_buffer().array() += n.grad.array() * pb.value.array();
    if (pb.requires_grad) pb.grad_buffer().array() += n.grad.array() * pa.value.array();
  });
}

template <typename T>
Var<T> scale(const Var<T>& a, T s) {
  Tensor<T> out = a.value();
  out.array() *= s;
  return make_op<T>(std::move(out), {a}, [s](Node<T>& n) {
    detail::parent(n, 0).grad_buffer().array() += n.grad.array() * s;
  });
}

// Sum of all elements, as a [1] tensor.
template <typename T>
Var<T> sum(const Var<T>& a) {
  Tensor<T> out({1}, a.value().array().sum());
  return make_op<T>(std::move(out), {a}, [](Node<T>& n) {
    detail::parent(n, 0).grad_buffer().array() += n.grad[0];
  });
}

// Weighted sum of [1] scalars.
template <typename T>
Var<T> weighted_sum(const std::vector<Var<T>>& terms, const std::vector<T>& weights) {
  if (terms.size() != weights.size()) throw ShapeError("weighted_sum: size mismatch");
  T total = 0;
  auto node = std::make_shared<Node<T>>();
  bool needs = false;
  for (std::size_t i = 0; i < terms.size(); ++i) {
    total += weights[i] * terms[i].value()[0];
    needs = needs || terms[i].requires_grad();
  }
  node->value = Tensor<T>({1}, total);
  if (needs && grad_mode()) {
    node->requires_grad = true;
    for (const auto& t : terms) node->parents.push_back(t.node_ptr());
    node->backward = [weights](Node<T>& n) {
      for (std::size_t i = 0; i < weights.size(); ++i)
        if (n.parents[i]->requires_grad) n.parents[i]->grad_buffer()[0] += weights[i] * n.grad[0];
    };
  }
  return Var<T>(std::move(node));
}

template <typename T, typename F, typename D>
Var<T> unary(const Var<T>& a, F f, D dfdx) {
  Tensor<T> out(a.shape());
  const auto& x = a.value();
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = f(x[i]);
  return make_op<T>(std::move(out), {a}, [dfdx](Node<T>& n) {
    auto& p = detail::parent(n, 0);
    auto& g = p.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] * dfdx(p.value[i], n.value[i]);
  });
}

template <typename T>
Var<T> gelu(const Var<T>& a) {
  constexpr T kInvSqrt2 = T(0.70710678118654752440);
  constexpr T kInvSqrt2Pi = T(0.39894228040143267794);
  return unary(
      a, [](T x) { return T(0.5) * x * (T(1) + std::erf(x * kInvSqrt2)); },
      [](T x, T) { return T(0.5) * (T(1) + std::erf(x * kInvSqrt2)) + x * kInvSqrt2Pi * std::exp(T(-0.5) * x * x); });
}

template <typename T>
Var<T> sigmoid(const Var<T>& a) {
  return unary(
      a, [](T x) { return T(1) / (T(1) + std::exp(-x)); }, [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Var<T> tanh(const Var<T>& a) {
  return unary(
      a, [](T x) { return std::tanh(x); }, [](T, T y) { return T(1) - y * y; });
}

template <typename T>
Var<T> relu(const Var<T>& a) {
  return unary(
      a, [](T x) { return x > T(0) ? x : T(0); }, [](T x, T) { return x > T(0) ? T(1) : T(0); });
}

// ---------------------------------------------------------------- convolution

// Dense 2-D convolution of x [Cin,H,W] with w [Cout,Cin,k,k], optional bias
// [Cout], zero padding. 1x1 stride-1 convolutions skip the im2col copy.
template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& w, const Var<T>& b, int stride = 1, int pad = 0) {
  using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using Map = Eigen::Map<Mat>;
  using CMap = Eigen::Map<const Mat>;
  const auto& xv = x.value();
  const auto& wv = w.value();
  if (xv.rank() != 3 || wv.rank() != 4 || wv.dim(1) != xv.dim(0))
    throw ShapeError("conv2d: input " + shape_str(xv.shape()) + " incompatible with weight " +
                     shape_str(wv.shape()));
  const int cin = xv.dim(0), h = xv.dim(1), wd = xv.dim(2);
  const int cout = wv.dim(0), k = wv.dim(2);
  const int ho = (h + 2 * pad - k) / stride + 1, wo = (wd + 2 * pad - k) / stride + 1;
  if (ho <= 0 || wo <= 0) throw ShapeError("conv2d: input " + shape_str(xv.shape()) + " smaller than kernel");
  const bool pointwise = k == 1 && stride == 1 && pad == 0;
  const int rows = cin * k * k, cols = ho * wo;

  Tensor<T> col;
  if (!pointwise) {
    col = Tensor<T>({rows, cols});
    for (int c = 0; c < cin; ++c)
      for (int i = 0; i < k; ++i)
        for (int j = 0; j < k; ++j) {
          T* dst = col.data() + static_cast<std::size_t>((c * k + i) * k + j) * cols;
          for (int y = 0; y < ho; ++y) {
            const int sy = y * stride + i - pad;
            for (int xx = 0; xx < wo; ++xx) {
              const int sx = xx * stride + j - pad;
              dst[y * wo + xx] = (sy >= 0 && sy < h && sx >= 0 && sx < wd) ? xv(c, sy, sx) : T(0);
            }
          }
        }
  }
  const T* col_ptr = pointwise ? xv.data() : col.data();
  Tensor<T> out({cout, ho, wo});
  Map om(out.data(), cout, cols);
  om.noalias() = CMap(wv.data(), cout, rows) * CMap(col_ptr, rows, cols);
  if (b.defined()) {
    const auto& bv = b.value();
    for (int o = 0; o < cout; ++o) om.row(o).array() += bv[o];
  }
  std::initializer_list<Var<T>> inputs = {x, w, b.defined() ? b : Var<T>(Tensor<T>({0}))};
  const bool keep_col = !pointwise && w.requires_grad() && grad_mode();
  return make_op<T>(
      std::move(out), inputs,
      [=, col = keep_col ? std::move(col) : Tensor<T>()](Node<T>& n) {
        CMap g(n.grad.data(), cout, cols);
        auto& px = detail::parent(n, 0);
        auto& pw = detail::parent(n, 1);
        auto& pb = detail::parent(n, 2);
        const T* cp = pointwise ? px.value.data() : col.data();
        if (pw.requires_grad) Map(pw.grad_buffer().data(), cout, rows).noalias() += g * CMap(cp, rows, cols).transpose();
        if (pb.requires_grad) {
          auto& gb = pb.grad_buffer();
          for (int o = 0; o < cout; ++o) gb[o] += g.row(o).sum();
        }
        if (px.requires_grad) {
          CMap wm(pw.value.data(), cout, rows);
          if (pointwise) {
            Map(px.grad_buffer().data(), rows, cols).noalias() += wm.transpose() * g;
          } else {
            Mat dcol = wm.transpose() * g;
            auto& gx = px.grad_buffer();
            for (int c = 0; c < cin; ++c)
              for (int i = 0; i < k; ++i)
                for (int j = 0; j < k; ++j) {
                  const T* src = dcol.data() + static_cast<std::size_t>((c * k + i) * k + j) * cols;
                  for (int y = 0; y < ho; ++y) {
                    const int sy = y * stride + i - pad;
                    if (sy < 0 || sy >= h) continue;
                    for (int xx = 0; xx < wo; ++xx) {
                      const int sx = xx * stride + j - pad;
                      if (sx >= 0 && sx < wd) gx(c, sy, sx) += src[y * wo + xx];
                    }
                  }
                }
          }
        }
      });
}

// Depthwise stride-1 convolution: x [C,H,W], w [C,k,k], bias [C], padding
// k/2 so the spatial size is preserved (k odd).
template <typename T>
Var<T> depthwise_conv2d(const Var<T>& x, const Var<T>& w, const Var<T>& b) {
  const auto& xv = x.value();
  const auto& wv = w.value();
  if (xv.rank() != 3 || wv.rank() != 3 || wv.dim(0) != xv.dim(0) || wv.dim(1) % 2 == 0)
    throw ShapeError("depthwise_conv2d: input " + shape_str(xv.shape()) + " incompatible with weight " +
                     shape_str(wv.shape()));
  const int c = xv.dim(0), h = xv.dim(1), wd = xv.dim(2), k = wv.dim(1), pad = k / 2;
  Tensor<T> out({c, h, wd});
  for (int ch = 0; ch < c; ++ch) {
    const T bias = b.value()[ch];
    T* o = out.data() + static_cast<std::size_t>(ch) * h * wd;
    const T* src = xv.data() + static_cast<std::size_t>(ch) * h * wd;
    std::fill(o, o + static_cast<std::size_t>(h) * wd, bias);
    for (int i = 0; i < k; ++i)
      for (int j = 0; j < k; ++j) {
        const T kv = wv(ch, i, j);
        const int dy = i - pad, dx = j - pad;
        const int y_lo = std::max(0, -dy), y_hi = std::min(h, h - dy);
        const int x_lo = std::max(0, -dx), x_hi = std::min(wd, wd - dx);
        for (int y = y_lo; y < y_hi; ++y) {
          T* orow = o + static_cast<std::size_t>(y) * wd;
          const T* srow = src + static_cast<std::size_t>(y + dy) * wd + dx;
          for (int xx = x_lo; xx < x_hi; ++xx) orow[xx] += kv * srow[xx];
        }
      }
  }
  return make_op<T>(std::move(out), {x, w, b}, [=](Node<T>& n) {
    auto& px = detail::parent(n, 0);
    auto& pw = detail::parent(n, 1);
    auto& pb = detail::parent(n, 2);
    for (int ch = 0; ch < c; ++ch) {
      const T* g = n.grad.data() + static_cast<std::size_t>(ch) * h * wd;
      if (pb.requires_grad) {
        T s = 0;
        for (std::size_t i = 0; i < static_cast<std::size_t>(h) * wd; ++i) s += g[i];
        pb.grad_buffer()[ch] += s;
      }
      const T* src = px.value.data() + static_cast<std::size_t>(ch) * h * wd;
      T* gx = px.requires_grad ? px.grad_buffer().data() + static_cast<std::size_t>(ch) * h * wd : nullptr;
      for (int i = 0; i < k; ++i)
        for (int j = 0; j < k; ++j) {
          const int dy = i - pad, dx = j - pad;
          const int y_lo = std::max(0, -dy), y_hi = std::min(h, h - dy);
          const int x_lo = std::max(0, -dx), x_hi = std::min(wd, wd - dx);
          const T kv = pw.value(ch, i, j);
          T acc = 0;
          for (int y = y_lo; y < y_hi; ++y) {
            const T* grow = g + static_cast<std::size_t>(y) * wd;
            const T* srow = src + static_cast<std::size_t>(y + dy) * wd + dx;
            if (pw.requires_grad)
              for (int xx = x_lo; xx < x_hi; ++xx) acc += grow[xx] * srow[xx];
            if (gx) {
              T* gxrow = gx + static_cast<std::size_t>(y + dy) * wd + dx;
              for (int xx = x_lo; xx < x_hi; ++xx) gxrow[xx] += kv * grow[xx];
            }
          }
          if (pw.requires_grad) pw.grad_buffer()(ch, i, j) += acc;
        }
    }
  });
}

// ---------------------------------------------------------------- structure

// Spatial mean per channel: [C,H,W] -> [C,1,1].
template <typename T>
Var<T> global_avg_pool(const Var<T>& x) {
  const int c = x.dim(0);
  const std::size_t hw = static_cast<std::size_t>(x.dim(1)) * x.dim(2);
  Tensor<T> out({c, 1, 1});
  for (int k = 0; k < c; ++k) {
    auto p = x.value().plane(k);
    T s = 0;
    for (T v : p) s += v;
    out[k] = s / static_cast<T>(hw);
  }
  return make_op<T>(std::move(out), {x}, [c, hw](Node<T>& n) {
    auto& g = detail::parent(n, 0).grad_buffer();
    for (int k = 0; k < c; ++k) {
      const T v = n.grad[k] / static_cast<T>(hw);
      for (auto& e : g.plane(k)) e += v;
    }
  });
}

// x [C,H,W] scaled per channel by s [C,1,1].
template <typename T>
Var<T> scale_channels(const Var<T>& x, const Var<T>& s) {
  const int c = x.dim(0);
  if (static_cast<int>(s.value().size()) != c) throw ShapeError("scale_channels: gate size mismatch");
  Tensor<T> out = x.value();
  for (int k = 0; k < c; ++k)
    for (auto& e : out.plane(k)) e *= s.value()[k];
  return make_op<T>(std::move(out), {x, s}, [c](Node<T>& n) {
    auto& px = detail::parent(n, 0);
    auto& ps = detail::parent(n, 1);
    for (int k = 0; k < c; ++k) {
      auto g = n.grad.plane(k);
      if (px.requires_grad) {
        auto gx = px.grad_buffer().plane(k);
        const T sv = ps.value[k];
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * sv;
      }
      if (ps.requires_grad) {
        auto xv = px.value.plane(k);
        T acc = 0;
        for (std::size_t i = 0; i < g.size(); ++i) acc += g[i] * xv[i];
        ps.grad_buffer()[k] += acc;
      }
    }
  });
}

template <typename T>
Var<T> concat_channels(const Var<T>& a, const Var<T>& b) {
  const auto& av = a.value();
  const auto& bv = b.value();
  if (av.dim(1) != bv.dim(1) || av.dim(2) != bv.dim(2))
    throw ShapeError("concat_channels: spatial mismatch " + shape_str(av.shape()) + " vs " + shape_str(bv.shape()));
  Tensor<T> out({av.dim(0) + bv.dim(0), av.dim(1), av.dim(2)});
  std::copy(av.vec().begin(), av.vec().end(), out.vec().begin());
  std::copy(bv.vec().begin(), bv.vec().end(), out.vec().begin() + av.size());
  const std::size_t na = av.size();
  return make_op<T>(std::move(out), {a, b}, [na](Node<T>& n) {
    auto& pa = detail::parent(n, 0);
    auto& pb = detail::parent(n, 1);
    if (pa.requires_grad) {
      auto& g = pa.grad_buffer();
      for (std::size_t i = 0; i < na; ++i) g[i] += n.grad[i];
    }
    if (pb.requires_grad) {
      auto& g = pb.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[na + i];
    }
  });
}

// Nearest-neighbour 2x upsampling.
template <typename T>
Var<T> upsample2x(const Var<T>& x) {
  const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
  Tensor<T> out({c, 2 * h, 2 * w});
  for (int k = 0; k < c; ++k)
    for (int y = 0; y < 2 * h; ++y)
      for (int i = 0; i < 2 * w; ++i) out(k, y, i) = x.value()(k, y / 2, i / 2);
  return make_op<T>(std::move(out), {x}, [c, h, w](Node<T>& n) {
    auto& g = detail::parent(n, 0).grad_buffer();
    for (int k = 0; k < c; ++k)
      for (int y = 0; y < 2 * h; ++y)
        for (int i = 0; i < 2 * w; ++i) g(k, y / 2, i / 2) += n.grad(k, y, i);
  });
}

// Global response normalization with learned affine and residual:
//   G_c = ||x_c||_2 over space,  N_c = G_c / (mean_c G + eps),
//   y = gamma_c * x * N_c + beta_c + x.
template <typename T>
Var<T> grn(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, T eps = T(1e-6)) {
  const int c = x.dim(0);
  const auto& xv = x.value();
  std::vector<T> gnorm(c);
  T mean = 0;
  for (int k = 0; k < c; ++k) {
    T s = 0;
    for (T v : xv.plane(k)) s += v * v;
    gnorm[k] = std::sqrt(s);
    mean += gnorm[k];
  }
  mean /= static_cast<T>(c);
  const T denom = mean + eps;
  Tensor<T> out(xv.shape());
  for (int k = 0; k < c; ++k) {
    const T nk = gnorm[k] / denom;
    const T gk = gamma.value()[k], bk = beta.value()[k];
    auto src = xv.plane(k);
    auto dst = out.plane(k);
    for (std::size_t i = 0; i < src.size(); ++i) dst[i] = gk * src[i] * nk + bk + src[i];
  }
  return make_op<T>(std::move(out), {x, gamma, beta}, [c, gnorm, denom](Node<T>& n) {
    auto& px = detail::parent(n, 0);
    auto& pg = detail::parent(n, 1);
    auto& pb = detail::parent(n, 2);
    std::vector<T> gx_dot(c);  // sum_p g * x per channel
    for (int k = 0; k < c; ++k) {
      auto g = n.grad.plane(k);
      auto xs = px.value.plane(k);
      T dot = 0, gs = 0;
      for (std::size_t i = 0; i < g.size(); ++i) {
        dot += g[i] * xs[i];
        gs += g[i];
      }
      gx_dot[k] = dot;
      if (pg.requires_grad) pg.grad_buffer()[k] += dot * gnorm[k] / denom;
      if (pb.requires_grad) pb.grad_buffer()[k] += gs;
    }
    if (!px.requires_grad) return;
    // a_c = dL/dN_c; dL/dG_j = a_j/denom - (sum_c a_c G_c) / (C denom^2).
    T cross = 0;
    std::vector<T> a(c);
    for (int k = 0; k < c; ++k) {
      a[k] = pg.value[k] * gx_dot[k];
      cross += a[k] * gnorm[k];
    }
    auto& gx = px.grad_buffer();
    for (int k = 0; k < c; ++k) {
      const T nk = gnorm[k] / denom;
      const T dg = a[k] / denom - cross / (static_cast<T>(c) * denom * denom);
      const T via_norm = gnorm[k] > T(0) ? dg / gnorm[k] : T(0);
      const T direct = T(1) + pg.value[k] * nk;
      auto g = n.grad.plane(k);
      auto xs = px.value.plane(k);
      auto d = gx.plane(k);
      for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * direct + via_norm * xs[i];
    }
  });
}

// Corner-aligned bilinear resampling [C,h,w] -> [C,out_h,out_w].
template <typename T>
Var<T> resample(const Var<T>& x, int out_h, int out_w) {
  Tensor<T> out = resample_bilinear(x.value(), out_h, out_w);
  const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
  return make_op<T>(std::move(out), {x}, [=](Node<T>& n) {
    const BilinearAxis ay(h, out_h), ax(w, out_w);
    auto& g = detail::parent(n, 0).grad_buffer();
    for (int k = 0; k < c; ++k)
      for (int y = 0; y < out_h; ++y) {
        const T fy = static_cast<T>(ay.frac[y]);
        for (int i = 0; i < out_w; ++i) {
          const T fx = static_cast<T>(ax.frac[i]);
          const T v = n.grad(k, y, i);
          g(k, ay.lo[y], ax.lo[i]) += v * (T(1) - fy) * (T(1) - fx);
          g(k, ay.lo[y], ax.hi[i]) += v * (T(1) - fy) * fx;
          g(k, ay.hi[y], ax.lo[i]) += v * fy * (T(1) - fx);
          g(k, ay.hi[y], ax.hi[i]) += v * fy * fx;
        }
      }
  });
}

// Softmax over all spatial positions of a [1,H,W] map.
template <typename T>
Var<T> spatial_softmax(const Var<T>& x) {
  const auto& xv = x.value();
  const T mx = xv.array().maxCoeff();
  Tensor<T> out(xv.shape());
  T s = 0;
  for (std::size_t i = 0; i < xv.size(); ++i) s += (out[i] = std::exp(xv[i] - mx));
  for (auto& v : out.vec()) v /= s;
  return make_op<T>(std::move(out), {x}, [](Node<T>& n) {
    T dot = 0;
    for (std::size_t i = 0; i < n.value.size(); ++i) dot += n.grad[i] * n.value[i];
    auto& g = detail::parent(n, 0).grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.value[i] * (n.grad[i] - dot);
  });
}

// Context vector sum_p s(p) x(:,p): x [C,H,W], s [1,H,W] -> [C,1,1].
template <typename T>
Var<T> weighted_pool(const Var<T>& x, const Var<T>& s) {
  const int c = x.dim(0);
  if (s.value().size() != x.value().plane(0).size()) throw ShapeError("weighted_pool: score map size mismatch");
  Tensor<T> out({c, 1, 1});
  for (int k = 0; k < c; ++k) {
    auto xs = x.value().plane(k);
    T acc = 0;
    for (std::size_t i = 0; i < xs.size(); ++i) acc += xs[i] * s.value()[i];
    out[k] = acc;
  }
  return make_op<T>(std::move(out), {x, s}, [c](Node<T>& n) {
    auto& px = detail::parent(n, 0);
    auto& ps = detail::parent(n, 1);
    for (int k = 0; k < c; ++k) {
      auto xs = px.value.plane(k);
      if (px.requires_grad) {
        auto gx = px.grad_buffer().plane(k);
        for (std::size_t i = 0; i < xs.size(); ++i) gx[i] += n.grad[k] * ps.value[i];
      }
      if (ps.requires_grad) {
        auto& gs = ps.grad_buffer();
        for (std::size_t i = 0; i < xs.size(); ++i) gs[i] += n.grad[k] * xs[i];
      }
    }
  });
}

}  // namespace fusionproxy::ad

#endif  // FUSIONPROXY_AUTOGRAD_HPP_
