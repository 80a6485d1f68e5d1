// Copyright 2026 The cvegan Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <stdexcept>
#include <utility>
#include <vector>

#include "cvegan/tensor.hpp"

namespace cvegan {

// Handle into a Graph tape.
struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

namespace detail {

// Pooled scratch buffer without the zero-fill of vector construction; for
// temporaries that are fully written before being read.
class Scratch {
 public:
  explicit Scratch(size_t n)
      : n_(n),
        p_(static_cast<double*>(TensorBufferPool::instance().allocate(n * sizeof(double)))) {}
  ~Scratch() { TensorBufferPool::instance().deallocate(p_, n_ * sizeof(double)); }
  Scratch(const Scratch&) = delete;
  Scratch& operator=(const Scratch&) = delete;
  double* data() { return p_; }

 private:
  size_t n_;
  double* p_;
};

}  // namespace detail

// Reverse-mode autodiff over an eager tape. Values are computed at op
// construction; backward() walks the tape in reverse. Single-threaded and
// deterministic: identical op sequences produce bitwise identical results.
class Graph {
 public:
  // Leaf with gradient tracking (network inputs under test, features, ...).
  Var input(Tensor v) { return push(std::move(v), true); }

  // Leaf without gradient tracking (targets, fixed kernels, ...).
  Var constant(Tensor v) { return push(std::move(v), false); }

  // Leaf bound to an externally owned tensor (model parameter). Repeated
  // binds of the same tensor within one graph reuse the node, so gradients
  // from all uses accumulate.
  Var leaf(const Tensor* t) {
    auto it = leaf_cache_.find(t);
    if (it != leaf_cache_.end()) return it->second;
    Var v = push(*t, true);
    leaf_cache_[t] = v;
    return v;
  }

  const Tensor& val(Var v) const { return nodes_[check(v)].value; }

  const Tensor& grad(Var v) const {
    const Node& n = nodes_[check(v)];
    if (!n.grad_live) throw std::logic_error("Graph::grad: no gradient recorded");
    return n.grad;
  }

  bool has_grad(Var v) const { return nodes_[check(v)].grad_live; }

  // Gradient of a bound parameter tensor, or nullptr if it never received one.
  const Tensor* grad_of(const Tensor* t) const {
    auto it = leaf_cache_.find(t);
    if (it == leaf_cache_.end()) return nullptr;
    const Node& n = nodes_[static_cast<size_t>(it->second.id)];
    return n.grad_live ? &n.grad : nullptr;
  }

  void backward(Var root) {
    Node& r = nodes_[check(root)];
    if (r.value.numel() != 1) throw std::invalid_argument("Graph::backward: root must be scalar");
    grad_buf(root.id).data()[0] = 1.0;
    for (int i = root.id; i >= 0; --i) {
      Node& n = nodes_[static_cast<size_t>(i)];
      if (n.needs_grad && n.grad_live && n.backprop) n.backprop(*this);
    }
  }

  // ---------------------------------------------------------------------
  // Elementwise ops
  // ---------------------------------------------------------------------

  Var add(Var a, Var b) {
    const Tensor &ta = val(a), &tb = val(b);
    require(ta.same_shape(tb), "add: shape mismatch");
    Tensor out = ta;
    for (int64_t i = 0; i < out.numel(); ++i) out[i] += tb[i];
    return make(std::move(out), {a, b}, [a, b](Graph& g, const Node& n) {
      g.accumulate(a, n.grad);
      g.accumulate(b, n.grad);
    });
  }

  Var sub(Var a, Var b) {
    const Tensor &ta = val(a), &tb = val(b);
    require(ta.same_shape(tb), "sub: shape mismatch");
    Tensor out = ta;
    for (int64_t i = 0; i < out.numel(); ++i) out[i] -= tb[i];
    return make(std::move(out), {a, b}, [a, b](Graph& g, const Node& n) {
      g.accumulate(a, n.grad);
      if (g.wants(b)) {
        Tensor neg = n.grad;
        for (int64_t i = 0; i < neg.numel(); ++i) neg[i] = -neg[i];
        g.accumulate(b, neg);
      }
    });
  }

  Var mul(Var a, Var b) {
    const Tensor &ta = val(a), &tb = val(b);
    require(ta.same_shape(tb), "mul: shape mismatch");
    Tensor out = ta;
    for (int64_t i = 0; i < out.numel(); ++i) out[i] *= tb[i];
    return make(std::move(out), {a, b}, [a, b](Graph& g, const Node& n) {
      if (g.wants(a)) {
        Tensor da = n.grad;
        const Tensor& tb2 = g.val(b);
        for (int64_t i = 0; i < da.numel(); ++i) da[i] *= tb2[i];
        g.accumulate(a, da);
      }
      if (g.wants(b)) {
        Tensor db = n.grad;
        const Tensor& ta2 = g.val(a);
        for (int64_t i = 0; i < db.numel(); ++i) db[i] *= ta2[i];
        g.accumulate(b, db);
      }
    });
  }

  Var div(Var a, Var b) {
    const Tensor &ta = val(a), &tb = val(b);
    require(ta.same_shape(tb), "div: shape mismatch");
    Tensor out = ta;
    for (int64_t i = 0; i < out.numel(); ++i) out[i] /= tb[i];
    return make(std::move(out), {a, b}, [a, b](Graph& g, const Node& n) {
      const Tensor& tb2 = g.val(b);
      if (g.wants(a)) {
        Tensor da = n.grad;
        for (int64_t i = 0; i < da.numel(); ++i) da[i] /= tb2[i];
        g.accumulate(a, da);
      }
      if (g.wants(b)) {
        Tensor db = n.grad;
        const Tensor& y = n.value;
        for (int64_t i = 0; i < db.numel(); ++i) db[i] *= -y[i] / tb2[i];
        g.accumulate(b, db);
      }
    });
  }

  Var add_scalar(Var a, double s) {
    Tensor out = val(a);
    for (int64_t i = 0; i < out.numel(); ++i) out[i] += s;
    return make(std::move(out), {a}, [a](Graph& g, const Node& n) { g.accumulate(a, n.grad); });
  }

  Var mul_scalar(Var a, double s) {
    Tensor out = val(a);
    for (int64_t i = 0; i < out.numel(); ++i) out[i] *= s;
    return make(std::move(out), {a}, [a, s](Graph& g, const Node& n) {
      Tensor da = n.grad;
      for (int64_t i = 0; i < da.numel(); ++i) da[i] *= s;
      g.accumulate(a, da);
    });
  }

  Var neg(Var a) { return mul_scalar(a, -1.0); }

  Var square(Var a) {
    Tensor out = val(a);
    for (int64_t i = 0; i < out.numel(); ++i) out[i] *= out[i];
    return make(std::move(out), {a}, [a](Graph& g, const Node& n) {
      Tensor da = n.grad;
      const Tensor& x = g.val(a);
      for (int64_t i = 0; i < da.numel(); ++i) da[i] *= 2.0 * x[i];
      g.accumulate(a, da);
    });
  }

  Var absval(Var a) {
    Tensor out = val(a);
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = std::abs(out[i]);
    return make(std::move(out), {a}, [a](Graph& g, const Node& n) {
      Tensor da = n.grad;
      const Tensor& x = g.val(a);
      for (int64_t i = 0; i < da.numel(); ++i)
        da[i] *= (x[i] > 0.0 ? 1.0 : (x[i] < 0.0 ? -1.0 : 0.0));
      g.accumulate(a, da);
    });
  }

  Var logv(Var a) {
    Tensor out = val(a);
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = std::log(out[i]);
    return make(std::move(out), {a}, [a](Graph& g, const Node& n) {
      Tensor da = n.grad;
      const Tensor& x = g.val(a);
      for (int64_t i = 0; i < da.numel(); ++i) da[i] /= x[i];
      g.accumulate(a, da);
    });
  }

  Var sqrtv(Var a) {
    Tensor out = val(a);
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = std::sqrt(out[i]);
    return make(std::move(out), {a}, [a](Graph& g, const Node& n) {
      Tensor da = n.grad;
      const Tensor& y = n.value;
      for (int64_t i = 0; i < da.numel(); ++i) da[i] *= 0.5 / y[i];
      g.accumulate(a, da);
    });
  }

  // x^p with real exponent; callers keep x away from 0 when p < 1.
  Var powv(Var a, double p) {
    Tensor out = val(a);
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = std::pow(out[i], p);
    return make(std::move(out), {a}, [a, p](Graph& g, const Node& n) {
      Tensor da = n.grad;
      const Tensor& x = g.val(a);
      for (int64_t i = 0; i < da.numel(); ++i)
        da[i] *= (p == 1.0 ? 1.0 : p * std::pow(x[i], p - 1.0));
      g.accumulate(a, da);
    });
  }

  Var sigmoid(Var a) {
    Tensor out = val(a);
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = 1.0 / (1.0 + std::exp(-out[i]));
    return make(std::move(out), {a}, [a](Graph& g, const Node& n) {
      Tensor da = n.grad;
      const Tensor& y = n.value;
      for (int64_t i = 0; i < da.numel(); ++i) da[i] *= y[i] * (1.0 - y[i]);
      g.accumulate(a, da);
    });
  }

  Var tanhv(Var a) {
    Tensor out = val(a);
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = std::tanh(out[i]);
    return make(std::move(out), {a}, [a](Graph& g, const Node& n) {
      Tensor da = n.grad;
      const Tensor& y = n.value;
      for (int64_t i = 0; i < da.numel(); ++i) da[i] *= 1.0 - y[i] * y[i];
      g.accumulate(a, da);
    });
  }

  // mish(x) = x * tanh(softplus(x)), fused for accuracy.
  Var mish(Var a) {
    Tensor out = val(a);
    for (int64_t i = 0; i < out.numel(); ++i) out[i] *= std::tanh(softplus(out[i]));
    return make(std::move(out), {a}, [a](Graph& g, const Node& n) {
      Tensor da = n.grad;
      const Tensor& x = g.val(a);
      for (int64_t i = 0; i < da.numel(); ++i) {
        const double t = std::tanh(softplus(x[i]));
        const double sig = 1.0 / (1.0 + std::exp(-x[i]));
        da[i] *= t + x[i] * (1.0 - t * t) * sig;
      }
      g.accumulate(a, da);
    });
  }

  Var leaky_relu(Var a, double slope = 0.2) {
    Tensor out = val(a);
    for (int64_t i = 0; i < out.numel(); ++i)
      if (out[i] < 0.0) out[i] *= slope;
    return make(std::move(out), {a}, [a, slope](Graph& g, const Node& n) {
      Tensor da = n.grad;
      const Tensor& x = g.val(a);
      for (int64_t i = 0; i < da.numel(); ++i)
        if (x[i] < 0.0) da[i] *= slope;
      g.accumulate(a, da);
    });
  }

  // Gradient passes through on [lo, hi], zero outside.
  Var clampv(Var a, double lo, double hi) {
    Tensor out = val(a);
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = std::min(std::max(out[i], lo), hi);
    return make(std::move(out), {a}, [a, lo, hi](Graph& g, const Node& n) {
      Tensor da = n.grad;
      const Tensor& x = g.val(a);
      for (int64_t i = 0; i < da.numel(); ++i)
        if (x[i] < lo || x[i] > hi) da[i] = 0.0;
      g.accumulate(a, da);
    });
  }

  // arccos with the derivative evaluated at an input pulled inside
  // [-1+1e-7, 1-1e-7], so gradients stay finite at the domain boundary.
  Var acosv(Var a) {
    Tensor out = val(a);
    for (int64_t i = 0; i < out.numel(); ++i)
      out[i] = std::acos(std::min(std::max(out[i], -1.0), 1.0));
    return make(std::move(out), {a}, [a](Graph& g, const Node& n) {
      constexpr double kEdge = 1.0 - 1e-7;
      Tensor da = n.grad;
      const Tensor& x = g.val(a);
      for (int64_t i = 0; i < da.numel(); ++i) {
        const double xb = std::min(std::max(x[i], -kEdge), kEdge);
        da[i] *= -1.0 / std::sqrt(1.0 - xb * xb);
      }
      g.accumulate(a, da);
    });
  }

  // ---------------------------------------------------------------------
  // Reductions and shape ops
  // ---------------------------------------------------------------------

  Var sum_all(Var a) {
    const Tensor& x = val(a);
    double s = 0.0;
    for (int64_t i = 0; i < x.numel(); ++i) s += x[i];
    return make(Tensor::scalar(s), {a}, [a](Graph& g, const Node& n) {
      const double gd = n.grad[0];
      Tensor da = Tensor::full(g.val(a).shape(), gd);
      g.accumulate(a, da);
    });
  }

  Var mean_all(Var a) { return mul_scalar(sum_all(a), 1.0 / static_cast<double>(val(a).numel())); }

  // [R, C] -> [R]: sum over the last dimension of a 2-D tensor.
  Var sum_lastdim(Var a) {
    const Tensor& x = val(a);
    require(x.ndim() == 2, "sum_lastdim: expects 2-D");
    const int64_t R = x.dim(0), C = x.dim(1);
    Tensor out({R});
    for (int64_t r = 0; r < R; ++r) {
      double s = 0.0;
      for (int64_t c = 0; c < C; ++c) s += x.at2(r, c);
      out[r] = s;
    }
    return make(std::move(out), {a}, [a, R, C](Graph& g, const Node& n) {
      Tensor da(g.val(a).shape());
      for (int64_t r = 0; r < R; ++r)
        for (int64_t c = 0; c < C; ++c) da.at2(r, c) = n.grad[r];
      g.accumulate(a, da);
    });
  }

  Var reshape(Var a, std::vector<int64_t> shape) {
    Tensor out = val(a).reshaped(shape);
    return make(std::move(out), {a}, [a](Graph& g, const Node& n) {
      g.accumulate(a, n.grad.reshaped(g.val(a).shape()));
    });
  }

  Var concat_lastdim(const std::vector<Var>& parts) {
    require(!parts.empty(), "concat_lastdim: empty");
    const Tensor& first = val(parts[0]);
    std::vector<int64_t> shape = first.shape();
    int64_t total_c = 0;
    std::vector<int64_t> widths;
    for (Var p : parts) {
      const Tensor& t = val(p);
      require(t.ndim() == shape.size(), "concat_lastdim: rank mismatch");
      for (size_t d = 0; d + 1 < shape.size(); ++d)
        require(t.dim(d) == shape[d], "concat_lastdim: leading dim mismatch");
      widths.push_back(t.dim(t.ndim() - 1));
      total_c += widths.back();
    }
    const int64_t rows = first.numel() / first.dim(first.ndim() - 1);
    shape.back() = total_c;
    Tensor out(shape);
    int64_t off = 0;
    for (size_t pi = 0; pi < parts.size(); ++pi) {
      const Tensor& t = val(parts[pi]);
      const int64_t w = widths[pi];
      for (int64_t r = 0; r < rows; ++r)
        for (int64_t c = 0; c < w; ++c) out[r * total_c + off + c] = t[r * w + c];
      off += w;
    }
    auto parts_copy = parts;
    return make(std::move(out), parts,
                [parts_copy, widths, rows, total_c](Graph& g, const Node& n) {
                  int64_t off2 = 0;
                  for (size_t pi = 0; pi < parts_copy.size(); ++pi) {
                    const int64_t w = widths[pi];
                    if (g.wants(parts_copy[pi])) {
                      Tensor da(g.val(parts_copy[pi]).shape());
                      for (int64_t r = 0; r < rows; ++r)
                        for (int64_t c = 0; c < w; ++c)
                          da[r * w + c] = n.grad[r * total_c + off2 + c];
                      g.accumulate(parts_copy[pi], da);
                    }
                    off2 += w;
                  }
                });
  }

  Var slice_lastdim(Var a, int64_t c0, int64_t c1) {
    const Tensor& x = val(a);
    const int64_t C = x.dim(x.ndim() - 1);
    require(0 <= c0 && c0 < c1 && c1 <= C, "slice_lastdim: bad range");
    std::vector<int64_t> shape = x.shape();
    shape.back() = c1 - c0;
    const int64_t rows = x.numel() / C;
    Tensor out(shape);
    for (int64_t r = 0; r < rows; ++r)
      for (int64_t c = c0; c < c1; ++c) out[r * (c1 - c0) + (c - c0)] = x[r * C + c];
    return make(std::move(out), {a}, [a, c0, c1, C, rows](Graph& g, const Node& n) {
      Tensor da(g.val(a).shape());
      for (int64_t r = 0; r < rows; ++r)
        for (int64_t c = c0; c < c1; ++c) da[r * C + c] = n.grad[r * (c1 - c0) + (c - c0)];
      g.accumulate(a, da);
    });
  }

  // Spatial crop of an NHWC tensor; [y0,y1) x [x0,x1).
  Var crop(Var a, int64_t y0, int64_t y1, int64_t x0, int64_t x1) {
    const Tensor& t = val(a);
    require(t.ndim() == 4, "crop: expects NHWC");
    const int64_t B = t.dim(0), H = t.dim(1), W = t.dim(2), C = t.dim(3);
    require(0 <= y0 && y0 < y1 && y1 <= H && 0 <= x0 && x0 < x1 && x1 <= W, "crop: bad range");
    Tensor out({B, y1 - y0, x1 - x0, C});
    for (int64_t b = 0; b < B; ++b)
      for (int64_t y = y0; y < y1; ++y)
        for (int64_t x = x0; x < x1; ++x)
          for (int64_t c = 0; c < C; ++c) out.at(b, y - y0, x - x0, c) = t.at(b, y, x, c);
    return make(std::move(out), {a}, [a, y0, y1, x0, x1](Graph& g, const Node& n) {
      const Tensor& t2 = g.val(a);
      Tensor da(t2.shape());
      const int64_t B2 = t2.dim(0), C2 = t2.dim(3);
      for (int64_t b = 0; b < B2; ++b)
        for (int64_t y = y0; y < y1; ++y)
          for (int64_t x = x0; x < x1; ++x)
            for (int64_t c = 0; c < C2; ++c) da.at(b, y, x, c) = n.grad.at(b, y - y0, x - x0, c);
      g.accumulate(a, da);
    });
  }

  // ---------------------------------------------------------------------
  // Neural-network ops (NHWC)
  // ---------------------------------------------------------------------

  // x: [B,H,W,IC], w: [KH,KW,IC,OC], optional bias [OC]; zero padding.
  Var conv2d(Var x, Var w, Var bias, int stride = 1, int pad = -1) {
    const Tensor& xt = val(x);
    const Tensor& wt = val(w);
    require(xt.ndim() == 4 && wt.ndim() == 4, "conv2d: bad ranks");
    const int64_t B = xt.dim(0), H = xt.dim(1), W = xt.dim(2), IC = xt.dim(3);
    const int64_t KH = wt.dim(0), KW = wt.dim(1), OC = wt.dim(3);
    require(wt.dim(2) == IC, "conv2d: channel mismatch");
    if (pad < 0) pad = static_cast<int>((KH - 1) / 2);
    const int64_t OH = (H + 2 * pad - KH) / stride + 1;
    const int64_t OW = (W + 2 * pad - KW) / stride + 1;
    require(OH >= 1 && OW >= 1, "conv2d: output collapses");

    const int64_t K = KH * KW * IC;
    Tensor out({B, OH, OW, OC});
    detail::Scratch patches(static_cast<size_t>(OH * OW * K));
    detail::Scratch wtr(static_cast<size_t>(K * OC));
    transpose_to(wt.data(), wtr.data(), K, OC);
    for (int64_t b = 0; b < B; ++b) {
      im2col(xt, b, KH, KW, stride, pad, OH, OW, patches.data());
      gemm_bt(patches.data(), wtr.data(), out.data() + b * OH * OW * OC, OH * OW, K, OC);
    }
    if (bias.valid()) {
      const Tensor& bt = val(bias);
      require(bt.numel() == OC, "conv2d: bias size");
      for (int64_t i = 0; i < out.numel(); ++i) out[i] += bt[i % OC];
    }

    auto bp = [x, w, bias, B, H, W, IC, KH, KW, OC, OH, OW, K, stride, pad](Graph& g,
                                                                            const Node& n) {
      const Tensor& xt2 = g.val(x);
      const Tensor& wt2 = g.val(w);
      const bool want_x = g.wants(x), want_w = g.wants(w);
      Tensor dx = want_x ? Tensor(xt2.shape()) : Tensor();
      Tensor dw = want_w ? Tensor(wt2.shape()) : Tensor();
      detail::Scratch patches2(static_cast<size_t>(OH * OW * K));
      detail::Scratch dpatches(static_cast<size_t>(OH * OW * K));
      for (int64_t b = 0; b < B; ++b) {
        const double* dy = n.grad.data() + b * OH * OW * OC;
        if (want_w) {
          im2col(xt2, b, KH, KW, stride, pad, OH, OW, patches2.data());
          // dW[k,oc] += sum_m P[m,k] * dY[m,oc]
          for (int64_t m = 0; m < OH * OW; ++m) {
            const double* pm = patches2.data() + m * K;
            const double* dym = dy + m * OC;
            for (int64_t k = 0; k < K; ++k) {
              const double p = pm[k];
              if (p == 0.0) continue;
              double* dwk = dw.data() + k * OC;
              for (int64_t oc = 0; oc < OC; ++oc) dwk[oc] += p * dym[oc];
            }
          }
        }
        if (want_x) {
          // dP = dY * W^T; W is already [K,OC], i.e. row-contiguous in oc.
          gemm_bt(dy, wt2.data(), dpatches.data(), OH * OW, OC, K);
          col2im(dpatches.data(), b, KH, KW, stride, pad, OH, OW, dx);
        }
      }
      if (want_x) g.accumulate(x, dx);
      if (want_w) g.accumulate(w, dw);
      if (bias.valid() && g.wants(bias)) {
        Tensor db({OC});
        for (int64_t i = 0; i < n.grad.numel(); ++i) db[i % OC] += n.grad[i];
        g.accumulate(bias, db);
      }
    };
    std::vector<Var> parents = {x, w};
    if (bias.valid()) parents.push_back(bias);
    return make(std::move(out), parents, bp);
  }

  // x: [B,D], w: [D,K], bias [K].
  Var dense(Var x, Var w, Var bias) {
    const Tensor& xt = val(x);
    const Tensor& wt = val(w);
    require(xt.ndim() == 2 && wt.ndim() == 2 && xt.dim(1) == wt.dim(0), "dense: shape mismatch");
    const int64_t B = xt.dim(0), D = xt.dim(1), K = wt.dim(1);
    Tensor out({B, K});
    gemm(xt.data(), wt.data(), out.data(), B, D, K);
    if (bias.valid()) {
      const Tensor& bt = val(bias);
      require(bt.numel() == K, "dense: bias size");
      for (int64_t i = 0; i < out.numel(); ++i) out[i] += bt[i % K];
    }
    auto bp = [x, w, bias, B, D, K](Graph& g, const Node& n) {
      const Tensor& xt2 = g.val(x);
      const Tensor& wt2 = g.val(w);
      if (g.wants(x)) {
        Tensor dx({B, D});
        for (int64_t b = 0; b < B; ++b)
          for (int64_t d = 0; d < D; ++d) {
            const double* wr = wt2.data() + d * K;
            const double* gr = n.grad.data() + b * K;
            double s = 0.0;
            for (int64_t k = 0; k < K; ++k) s += gr[k] * wr[k];
            dx.at2(b, d) = s;
          }
        g.accumulate(x, dx);
      }
      if (g.wants(w)) {
        Tensor dw({D, K});
        for (int64_t b = 0; b < B; ++b)
          for (int64_t d = 0; d < D; ++d) {
            const double xv = xt2.at2(b, d);
            if (xv == 0.0) continue;
            double* dwr = dw.data() + d * K;
            const double* gr = n.grad.data() + b * K;
            for (int64_t k = 0; k < K; ++k) dwr[k] += xv * gr[k];
          }
        g.accumulate(w, dw);
      }
      if (bias.valid() && g.wants(bias)) {
        Tensor db({K});
        for (int64_t i = 0; i < n.grad.numel(); ++i) db[i % K] += n.grad[i];
        g.accumulate(bias, db);
      }
    };
    std::vector<Var> parents = {x, w};
    if (bias.valid()) parents.push_back(bias);
    return make(std::move(out), parents, bp);
  }

  // Per-channel batch normalisation with batch statistics.
  Var batchnorm(Var x, Var gamma, Var beta, double eps = 1e-5) {
    const Tensor& xt = val(x);
    require(xt.ndim() == 4, "batchnorm: expects NHWC");
    const int64_t C = xt.dim(3);
    const int64_t N = xt.numel() / C;
    require(val(gamma).numel() == C && val(beta).numel() == C, "batchnorm: affine size");
    std::vector<double> mean(static_cast<size_t>(C), 0.0), inv_std(static_cast<size_t>(C), 0.0);
    for (int64_t i = 0; i < xt.numel(); ++i) mean[static_cast<size_t>(i % C)] += xt[i];
    for (int64_t c = 0; c < C; ++c) mean[static_cast<size_t>(c)] /= static_cast<double>(N);
    for (int64_t i = 0; i < xt.numel(); ++i) {
      const double d = xt[i] - mean[static_cast<size_t>(i % C)];
      inv_std[static_cast<size_t>(i % C)] += d * d;
    }
    for (int64_t c = 0; c < C; ++c)
      inv_std[static_cast<size_t>(c)] =
          1.0 / std::sqrt(inv_std[static_cast<size_t>(c)] / static_cast<double>(N) + eps);
    const Tensor& gt = val(gamma);
    const Tensor& bt = val(beta);
    Tensor out(xt.shape());
    for (int64_t i = 0; i < xt.numel(); ++i) {
      const int64_t c = i % C;
      out[i] = gt[c] * (xt[i] - mean[static_cast<size_t>(c)]) * inv_std[static_cast<size_t>(c)] +
               bt[c];
    }
    auto bp = [x, gamma, beta, C, N, mean, inv_std](Graph& g, const Node& n) {
      const Tensor& xt2 = g.val(x);
      const Tensor& gt2 = g.val(gamma);
      std::vector<double> sum_dy(static_cast<size_t>(C), 0.0),
          sum_dy_xhat(static_cast<size_t>(C), 0.0);
      for (int64_t i = 0; i < xt2.numel(); ++i) {
        const size_t c = static_cast<size_t>(i % C);
        const double xhat = (xt2[i] - mean[c]) * inv_std[c];
        sum_dy[c] += n.grad[i];
        sum_dy_xhat[c] += n.grad[i] * xhat;
      }
      if (g.wants(gamma)) {
        Tensor dg({C});
        for (int64_t c = 0; c < C; ++c) dg[c] = sum_dy_xhat[static_cast<size_t>(c)];
        g.accumulate(gamma, dg);
      }
      if (g.wants(beta)) {
        Tensor db({C});
        for (int64_t c = 0; c < C; ++c) db[c] = sum_dy[static_cast<size_t>(c)];
        g.accumulate(beta, db);
      }
      if (g.wants(x)) {
        Tensor dx(xt2.shape());
        const double invN = 1.0 / static_cast<double>(N);
        for (int64_t i = 0; i < xt2.numel(); ++i) {
          const size_t c = static_cast<size_t>(i % C);
          const double xhat = (xt2[i] - mean[c]) * inv_std[c];
          dx[i] = gt2[static_cast<int64_t>(c)] * inv_std[c] *
                  (n.grad[i] - invN * sum_dy[c] - xhat * invN * sum_dy_xhat[c]);
        }
        g.accumulate(x, dx);
      }
    };
    return make(std::move(out), {x, gamma, beta}, bp);
  }

  // k x k average pooling, stride k; H and W must be divisible by k.
  Var avgpool(Var x, int k) {
    const Tensor& xt = val(x);
    require(xt.ndim() == 4, "avgpool: expects NHWC");
    const int64_t B = xt.dim(0), H = xt.dim(1), W = xt.dim(2), C = xt.dim(3);
    require(H % k == 0 && W % k == 0, "avgpool: size not divisible by k");
    const int64_t OH = H / k, OW = W / k;
    const double inv = 1.0 / (static_cast<double>(k) * k);
    Tensor out({B, OH, OW, C});
    for (int64_t b = 0; b < B; ++b)
      for (int64_t oy = 0; oy < OH; ++oy)
        for (int64_t ox = 0; ox < OW; ++ox)
          for (int64_t c = 0; c < C; ++c) {
            double s = 0.0;
            for (int64_t dy = 0; dy < k; ++dy)
              for (int64_t dx = 0; dx < k; ++dx) s += xt.at(b, oy * k + dy, ox * k + dx, c);
            out.at(b, oy, ox, c) = s * inv;
          }
    return make(std::move(out), {x}, [x, k, inv](Graph& g, const Node& n) {
      const Tensor& xt2 = g.val(x);
      Tensor dx(xt2.shape());
      const int64_t B2 = xt2.dim(0), C2 = xt2.dim(3);
      const int64_t OH2 = n.grad.dim(1), OW2 = n.grad.dim(2);
      for (int64_t b = 0; b < B2; ++b)
        for (int64_t oy = 0; oy < OH2; ++oy)
          for (int64_t ox = 0; ox < OW2; ++ox)
            for (int64_t c = 0; c < C2; ++c) {
              const double gd = n.grad.at(b, oy, ox, c) * inv;
              for (int64_t dy = 0; dy < k; ++dy)
                for (int64_t dx2 = 0; dx2 < k; ++dx2)
                  dx.at(b, oy * k + dy, ox * k + dx2, c) += gd;
            }
      g.accumulate(x, dx);
    });
  }

  Var global_avgpool(Var x) {
    const Tensor& xt = val(x);
    require(xt.ndim() == 4, "global_avgpool: expects NHWC");
    const int64_t B = xt.dim(0), H = xt.dim(1), W = xt.dim(2), C = xt.dim(3);
    Tensor out({B, 1, 1, C});
    for (int64_t b = 0; b < B; ++b)
      for (int64_t y = 0; y < H; ++y)
        for (int64_t x2 = 0; x2 < W; ++x2)
          for (int64_t c = 0; c < C; ++c) out.at(b, 0, 0, c) += xt.at(b, y, x2, c);
    const double inv = 1.0 / static_cast<double>(H * W);
    for (int64_t i = 0; i < out.numel(); ++i) out[i] *= inv;
    return make(std::move(out), {x}, [x, inv](Graph& g, const Node& n) {
      const Tensor& xt2 = g.val(x);
      Tensor dx(xt2.shape());
      const int64_t C2 = xt2.dim(3);
      const int64_t HW = xt2.dim(1) * xt2.dim(2);
      for (int64_t b = 0; b < xt2.dim(0); ++b)
        for (int64_t p = 0; p < HW; ++p)
          for (int64_t c = 0; c < C2; ++c)
            dx[(b * HW + p) * C2 + c] = n.grad.at(b, 0, 0, c) * inv;
      g.accumulate(x, dx);
    });
  }

  Var global_maxpool(Var x) {
    const Tensor& xt = val(x);
    require(xt.ndim() == 4, "global_maxpool: expects NHWC");
    const int64_t B = xt.dim(0), HW = xt.dim(1) * xt.dim(2), C = xt.dim(3);
    Tensor out({B, 1, 1, C});
    std::vector<int64_t> argmax(static_cast<size_t>(B * C));
    for (int64_t b = 0; b < B; ++b)
      for (int64_t c = 0; c < C; ++c) {
        double best = -std::numeric_limits<double>::infinity();
        int64_t bi = 0;
        for (int64_t p = 0; p < HW; ++p) {
          const double v = xt[(b * HW + p) * C + c];
          if (v > best) {
            best = v;
            bi = p;
          }
        }
        out.at(b, 0, 0, c) = best;
        argmax[static_cast<size_t>(b * C + c)] = bi;
      }
    return make(std::move(out), {x}, [x, argmax, HW, C](Graph& g, const Node& n) {
      const Tensor& xt2 = g.val(x);
      Tensor dx(xt2.shape());
      for (int64_t b = 0; b < xt2.dim(0); ++b)
        for (int64_t c = 0; c < C; ++c) {
          const int64_t p = argmax[static_cast<size_t>(b * C + c)];
          dx[(b * HW + p) * C + c] = n.grad.at(b, 0, 0, c);
        }
      g.accumulate(x, dx);
    });
  }

  Var channel_mean(Var x) {
    const Tensor& xt = val(x);
    require(xt.ndim() == 4, "channel_mean: expects NHWC");
    const int64_t BHW = xt.numel() / xt.dim(3), C = xt.dim(3);
    Tensor out({xt.dim(0), xt.dim(1), xt.dim(2), 1});
    const double inv = 1.0 / static_cast<double>(C);
    for (int64_t p = 0; p < BHW; ++p) {
      double s = 0.0;
      for (int64_t c = 0; c < C; ++c) s += xt[p * C + c];
      out[p] = s * inv;
    }
    return make(std::move(out), {x}, [x, C, inv, BHW](Graph& g, const Node& n) {
      Tensor dx(g.val(x).shape());
      for (int64_t p = 0; p < BHW; ++p)
        for (int64_t c = 0; c < C; ++c) dx[p * C + c] = n.grad[p] * inv;
      g.accumulate(x, dx);
    });
  }

  Var channel_max(Var x) {
    const Tensor& xt = val(x);
    require(xt.ndim() == 4, "channel_max: expects NHWC");
    const int64_t BHW = xt.numel() / xt.dim(3), C = xt.dim(3);
    Tensor out({xt.dim(0), xt.dim(1), xt.dim(2), 1});
    std::vector<int64_t> argmax(static_cast<size_t>(BHW));
    for (int64_t p = 0; p < BHW; ++p) {
      double best = xt[p * C];
      int64_t bi = 0;
      for (int64_t c = 1; c < C; ++c)
        if (xt[p * C + c] > best) {
          best = xt[p * C + c];
          bi = c;
        }
      out[p] = best;
      argmax[static_cast<size_t>(p)] = bi;
    }
    return make(std::move(out), {x}, [x, C, argmax, BHW](Graph& g, const Node& n) {
      Tensor dx(g.val(x).shape());
      for (int64_t p = 0; p < BHW; ++p) dx[p * C + argmax[static_cast<size_t>(p)]] = n.grad[p];
      g.accumulate(x, dx);
    });
  }

  // x: [B,H,W,C] * gate: [B,1,1,C]
  Var mul_channel(Var x, Var gate) {
    const Tensor& xt = val(x);
    const Tensor& gt = val(gate);
    require(xt.ndim() == 4 && gt.ndim() == 4 && gt.dim(1) == 1 && gt.dim(2) == 1 &&
                gt.dim(0) == xt.dim(0) && gt.dim(3) == xt.dim(3),
            "mul_channel: shape mismatch");
    const int64_t B = xt.dim(0), HW = xt.dim(1) * xt.dim(2), C = xt.dim(3);
    Tensor out(xt.shape());
    for (int64_t b = 0; b < B; ++b)
      for (int64_t p = 0; p < HW; ++p)
        for (int64_t c = 0; c < C; ++c)
          out[(b * HW + p) * C + c] = xt[(b * HW + p) * C + c] * gt.at(b, 0, 0, c);
    return make(std::move(out), {x, gate}, [x, gate, B, HW, C](Graph& g, const Node& n) {
      const Tensor& xt2 = g.val(x);
      const Tensor& gt2 = g.val(gate);
      if (g.wants(x)) {
        Tensor dx(xt2.shape());
        for (int64_t b = 0; b < B; ++b)
          for (int64_t p = 0; p < HW; ++p)
            for (int64_t c = 0; c < C; ++c)
              dx[(b * HW + p) * C + c] = n.grad[(b * HW + p) * C + c] * gt2.at(b, 0, 0, c);
        g.accumulate(x, dx);
      }
      if (g.wants(gate)) {
        Tensor dg(gt2.shape());
        for (int64_t b = 0; b < B; ++b)
          for (int64_t p = 0; p < HW; ++p)
            for (int64_t c = 0; c < C; ++c)
              dg.at(b, 0, 0, c) += n.grad[(b * HW + p) * C + c] * xt2[(b * HW + p) * C + c];
        g.accumulate(gate, dg);
      }
    });
  }

  // x: [B,H,W,C] * gate: [B,H,W,1]
  Var mul_spatial(Var x, Var gate) {
    const Tensor& xt = val(x);
    const Tensor& gt = val(gate);
    require(xt.ndim() == 4 && gt.ndim() == 4 && gt.dim(3) == 1 && gt.dim(0) == xt.dim(0) &&
                gt.dim(1) == xt.dim(1) && gt.dim(2) == xt.dim(2),
            "mul_spatial: shape mismatch");
    const int64_t BHW = xt.numel() / xt.dim(3), C = xt.dim(3);
    Tensor out(xt.shape());
    for (int64_t p = 0; p < BHW; ++p)
      for (int64_t c = 0; c < C; ++c) out[p * C + c] = xt[p * C + c] * gt[p];
    return make(std::move(out), {x, gate}, [x, gate, BHW, C](Graph& g, const Node& n) {
      const Tensor& xt2 = g.val(x);
      const Tensor& gt2 = g.val(gate);
      if (g.wants(x)) {
        Tensor dx(xt2.shape());
        for (int64_t p = 0; p < BHW; ++p)
          for (int64_t c = 0; c < C; ++c) dx[p * C + c] = n.grad[p * C + c] * gt2[p];
        g.accumulate(x, dx);
      }
      if (g.wants(gate)) {
        Tensor dg(gt2.shape());
        for (int64_t p = 0; p < BHW; ++p) {
          double s = 0.0;
          for (int64_t c = 0; c < C; ++c) s += n.grad[p * C + c] * xt2[p * C + c];
          dg[p] = s;
        }
        g.accumulate(gate, dg);
      }
    });
  }

  // Batched matmul: [B,M,K] x [B,K,N] -> [B,M,N]
  Var bmm(Var a, Var b) {
    const Tensor& ta = val(a);
    const Tensor& tb = val(b);
    require(ta.ndim() == 3 && tb.ndim() == 3 && ta.dim(0) == tb.dim(0) && ta.dim(2) == tb.dim(1),
            "bmm: shape mismatch");
    const int64_t B = ta.dim(0), M = ta.dim(1), K = ta.dim(2), N = tb.dim(2);
    Tensor out({B, M, N});
    for (int64_t i = 0; i < B; ++i)
      gemm(ta.data() + i * M * K, tb.data() + i * K * N, out.data() + i * M * N, M, K, N);
    return make(std::move(out), {a, b}, [a, b, B, M, K, N](Graph& g, const Node& n) {
      const Tensor& ta2 = g.val(a);
      const Tensor& tb2 = g.val(b);
      if (g.wants(a)) {
        Tensor da(ta2.shape());
        // dA = dY * B^T
        for (int64_t i = 0; i < B; ++i) {
          const double* dy = n.grad.data() + i * M * N;
          const double* bm = tb2.data() + i * K * N;
          double* dam = da.data() + i * M * K;
          for (int64_t m = 0; m < M; ++m)
            for (int64_t k = 0; k < K; ++k) {
              double s = 0.0;
              const double* dyr = dy + m * N;
              const double* br = bm + k * N;
              for (int64_t nn = 0; nn < N; ++nn) s += dyr[nn] * br[nn];
              dam[m * K + k] = s;
            }
        }
        g.accumulate(a, da);
      }
      if (g.wants(b)) {
        Tensor db(tb2.shape());
        // dB = A^T * dY
        for (int64_t i = 0; i < B; ++i) {
          const double* am = ta2.data() + i * M * K;
          const double* dy = n.grad.data() + i * M * N;
          double* dbm = db.data() + i * K * N;
          for (int64_t m = 0; m < M; ++m)
            for (int64_t k = 0; k < K; ++k) {
              const double av = am[m * K + k];
              if (av == 0.0) continue;
              const double* dyr = dy + m * N;
              double* dbr = dbm + k * N;
              for (int64_t nn = 0; nn < N; ++nn) dbr[nn] += av * dyr[nn];
            }
        }
        g.accumulate(b, db);
      }
    });
  }

  Var transpose12(Var a) {
    const Tensor& t = val(a);
    require(t.ndim() == 3, "transpose12: expects 3-D");
    const int64_t B = t.dim(0), M = t.dim(1), N = t.dim(2);
    Tensor out({B, N, M});
    for (int64_t b = 0; b < B; ++b)
      for (int64_t m = 0; m < M; ++m)
        for (int64_t n2 = 0; n2 < N; ++n2) out[(b * N + n2) * M + m] = t[(b * M + m) * N + n2];
    return make(std::move(out), {a}, [a, B, M, N](Graph& g, const Node& n) {
      Tensor da({B, M, N});
      for (int64_t b = 0; b < B; ++b)
        for (int64_t m = 0; m < M; ++m)
          for (int64_t n2 = 0; n2 < N; ++n2)
            da[(b * M + m) * N + n2] = n.grad[(b * N + n2) * M + m];
      g.accumulate(a, da);
    });
  }

  // Softmax over the last dimension of a 3-D tensor.
  Var softmax_lastdim(Var a) {
    const Tensor& t = val(a);
    require(t.ndim() == 3, "softmax_lastdim: expects 3-D");
    const int64_t R = t.dim(0) * t.dim(1), N = t.dim(2);
    Tensor out(t.shape());
    for (int64_t r = 0; r < R; ++r) {
      const double* xr = t.data() + r * N;
      double* yr = out.data() + r * N;
      double mx = xr[0];
      for (int64_t i = 1; i < N; ++i) mx = std::max(mx, xr[i]);
      double s = 0.0;
      for (int64_t i = 0; i < N; ++i) {
        yr[i] = std::exp(xr[i] - mx);
        s += yr[i];
      }
      const double inv = 1.0 / s;
      for (int64_t i = 0; i < N; ++i) yr[i] *= inv;
    }
    return make(std::move(out), {a}, [a, R, N](Graph& g, const Node& n) {
      Tensor da(n.value.shape());
      for (int64_t r = 0; r < R; ++r) {
        const double* yr = n.value.data() + r * N;
        const double* gr = n.grad.data() + r * N;
        double dot = 0.0;
        for (int64_t i = 0; i < N; ++i) dot += yr[i] * gr[i];
        double* dr = da.data() + r * N;
        for (int64_t i = 0; i < N; ++i) dr[i] = yr[i] * (gr[i] - dot);
      }
      g.accumulate(a, da);
    });
  }

  size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool needs_grad = false;
    bool grad_live = false;
    std::function<void(Graph&)> backprop;
  };

  static double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

  static void require(bool cond, const char* msg) {
    if (!cond) throw std::invalid_argument(msg);
  }

  size_t check(Var v) const {
    if (!v.valid() || static_cast<size_t>(v.id) >= nodes_.size())
      throw std::logic_error("Graph: invalid Var");
    return static_cast<size_t>(v.id);
  }

  Var push(Tensor v, bool needs_grad) {
    Node n;
    n.value = std::move(v);
    n.needs_grad = needs_grad;
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size() - 1)};
  }

  bool wants(Var v) const { return nodes_[check(v)].needs_grad; }

  Tensor& grad_buf(int id) {
    Node& n = nodes_[static_cast<size_t>(id)];
    if (!n.grad_live) {
      n.grad = Tensor(n.value.shape());
      n.grad_live = true;
    }
    return n.grad;
  }

  void accumulate(Var v, const Tensor& g) {
    Node& n = nodes_[check(v)];
    if (!n.needs_grad) return;
    Tensor& buf = grad_buf(v.id);
    for (int64_t i = 0; i < buf.numel(); ++i) buf[i] += g[i];
  }

  template <typename F>
  Var make(Tensor out, const std::vector<Var>& parents, F bp) {
    bool ng = false;
    for (Var p : parents)
      if (p.valid() && nodes_[check(p)].needs_grad) ng = true;
    Var v = push(std::move(out), ng);
    if (ng) {
      Node& n = nodes_[static_cast<size_t>(v.id)];
      const int id = v.id;
      n.backprop = [id, bp](Graph& g) { bp(g, g.nodes_[static_cast<size_t>(id)]); };
    }
    return v;
  }

  // C[M,N] = A[M,K] . Bt[N,K]^T with both inner vectors contiguous; the
  // networks here have tiny channel counts, where dot products beat the
  // row-update ordering.
  static void gemm_bt(const double* __restrict A, const double* __restrict Bt,
                      double* __restrict C, int64_t M, int64_t K, int64_t N) {
    for (int64_t m = 0; m < M; ++m) {
      const double* __restrict ar = A + m * K;
      double* __restrict cr = C + m * N;
      for (int64_t n = 0; n < N; ++n) {
        const double* __restrict br = Bt + n * K;
        double s = 0.0;
        for (int64_t k = 0; k < K; ++k) s += ar[k] * br[k];
        cr[n] = s;
      }
    }
  }

  static void transpose_to(const double* __restrict src, double* __restrict dst, int64_t rows,
                           int64_t cols) {
    for (int64_t r = 0; r < rows; ++r)
      for (int64_t c = 0; c < cols; ++c) dst[c * rows + r] = src[r * cols + c];
  }

  // C[M,N] += A[M,K] * B[K,N], row-major.
  static void gemm(const double* __restrict A, const double* __restrict B, double* __restrict C,
                   int64_t M, int64_t K, int64_t N) {
    for (int64_t m = 0; m < M; ++m) {
      double* __restrict cr = C + m * N;
      const double* __restrict ar = A + m * K;
      for (int64_t k = 0; k < K; ++k) {
        const double a = ar[k];
        if (a == 0.0) continue;
        const double* __restrict br = B + k * N;
        for (int64_t n = 0; n < N; ++n) cr[n] += a * br[n];
      }
    }
  }

  static void im2col(const Tensor& x, int64_t b, int64_t KH, int64_t KW, int stride, int pad,
                     int64_t OH, int64_t OW, double* patches) {
    const int64_t H = x.dim(1), W = x.dim(2), IC = x.dim(3);
    const int64_t K = KH * KW * IC;
    for (int64_t oy = 0; oy < OH; ++oy)
      for (int64_t ox = 0; ox < OW; ++ox) {
        double* row = patches + (oy * OW + ox) * K;
        int64_t idx = 0;
        for (int64_t ky = 0; ky < KH; ++ky) {
          const int64_t iy = oy * stride + ky - pad;
          for (int64_t kx = 0; kx < KW; ++kx) {
            const int64_t ix = ox * stride + kx - pad;
            if (iy < 0 || iy >= H || ix < 0 || ix >= W) {
              for (int64_t c = 0; c < IC; ++c) row[idx++] = 0.0;
            } else {
              const double* src = x.data() + ((b * H + iy) * W + ix) * IC;
              for (int64_t c = 0; c < IC; ++c) row[idx++] = src[c];
            }
          }
        }
      }
  }

  static void col2im(const double* dpatches, int64_t b, int64_t KH, int64_t KW, int stride,
                     int pad, int64_t OH, int64_t OW, Tensor& dx) {
    const int64_t H = dx.dim(1), W = dx.dim(2), IC = dx.dim(3);
    const int64_t K = KH * KW * IC;
    for (int64_t oy = 0; oy < OH; ++oy)
      for (int64_t ox = 0; ox < OW; ++ox) {
        const double* row = dpatches + (oy * OW + ox) * K;
        int64_t idx = 0;
        for (int64_t ky = 0; ky < KH; ++ky) {
          const int64_t iy = oy * stride + ky - pad;
          for (int64_t kx = 0; kx < KW; ++kx) {
            const int64_t ix = ox * stride + kx - pad;
            if (iy < 0 || iy >= H || ix < 0 || ix >= W) {
              idx += IC;
            } else {
              double* dst = dx.data() + ((b * H + iy) * W + ix) * IC;
              for (int64_t c = 0; c < IC; ++c) dst[c] += row[idx++];
            }
          }
        }
      }
  }

  std::vector<Node> nodes_;
  std::map<const Tensor*, Var> leaf_cache_;
};

}  // namespace cvegan
