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
#include <limits>
#include <memory>
#include <numeric>
#include <optional>
#include <string>

#include "cvegan/graph.hpp"

namespace cvegan {

// Image-quality losses over normalized [0,1] blocks. All graph functions are
// differentiable; the plain-value overloads run the same graph code on
// constants. SSIM-family metrics use the luminance channel only; l1/l2,
// gradient and feature losses use every channel.

struct LossVector {
  double l1 = 0.0;
  double l2 = 0.0;
  double grad = 0.0;
  double feat = 0.0;
  double ssim_loss = 0.0;
  double msssim_loss = 0.0;

  double component(int i) const {
    switch (i) {
      case 0: return l1;
      case 1: return l2;
      case 2: return grad;
      case 3: return feat;
      case 4: return ssim_loss;
      case 5: return msssim_loss;
      default: throw std::out_of_range("LossVector::component");
    }
  }
};

// Pluggable block -> feature-map transform for the feature loss. The default
// is a fixed-seed convolutional stack so tests and calibration runs are
// hermetic; a VGG-style extractor can be injected through the same interface.
struct FeatureExtractor {
  std::string name;
  double normalizer = 1.0;
  std::function<Var(Graph&, Var)> apply;
};

inline FeatureExtractor identity_extractor() {
  return {"identity", 1.0, [](Graph&, Var x) { return x; }};
}

inline FeatureExtractor random_conv_extractor(uint64_t seed, int channels = 8,
                                              double normalizer = 4.0) {
  Rng rng(seed);
  auto weights = std::make_shared<std::vector<Tensor>>();
  auto make_w = [&](int64_t ic, int64_t oc) {
    const double stddev = std::sqrt(2.0 / (9.0 * static_cast<double>(ic)));
    weights->push_back(rng.normal_tensor({3, 3, ic, oc}, stddev));
  };
  make_w(3, channels);
  make_w(channels, channels);
  make_w(channels, channels);
  auto apply = [weights](Graph& g, Var x) {
    Var h = g.mish(g.conv2d(x, g.constant((*weights)[0]), Var{}, 1, 1));
    h = g.mish(g.conv2d(h, g.constant((*weights)[1]), Var{}, 1, 1));
    return g.conv2d(h, g.constant((*weights)[2]), Var{}, 1, 1);
  };
  return {"randconv" + std::to_string(seed), normalizer, apply};
}

namespace detail {

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* who) {
  if (!a.same_shape(b)) throw std::invalid_argument(std::string(who) + ": shape mismatch");
}

inline void require_nhwc(const Tensor& a, const char* who) {
  if (a.ndim() != 4) throw std::invalid_argument(std::string(who) + ": expects NHWC");
}

// 11-tap Gaussian, sigma 1.5, normalized to sum 1.
inline const std::vector<double>& gaussian11() {
  static const std::vector<double> taps = [] {
    std::vector<double> t(11);
    double sum = 0.0;
    for (int i = 0; i < 11; ++i) {
      const double d = i - 5;
      t[static_cast<size_t>(i)] = std::exp(-d * d / (2.0 * 1.5 * 1.5));
      sum += t[static_cast<size_t>(i)];
    }
    for (double& v : t) v /= sum;
    return t;
  }();
  return taps;
}

// Separable valid-mode Gaussian filter of a [B,H,W,1] tensor.
inline Var gaussian_blur_valid(Graph& g, Var x) {
  const auto& taps = gaussian11();
  Tensor wh({1, 11, 1, 1}), wv({11, 1, 1, 1});
  for (int i = 0; i < 11; ++i) {
    wh[i] = taps[static_cast<size_t>(i)];
    wv[i] = taps[static_cast<size_t>(i)];
  }
  Var h = g.conv2d(x, g.constant(wh), Var{}, 1, 0);
  return g.conv2d(h, g.constant(wv), Var{}, 1, 0);
}

inline Var luma(Graph& g, Var x) {
  const Tensor& t = g.val(x);
  require_nhwc(t, "luma");
  return t.dim(3) == 1 ? x : g.slice_lastdim(x, 0, 1);
}

struct SsimTerms {
  Var full;  // mean of the SSIM map
  Var cs;    // mean of the contrast-structure map
};

inline SsimTerms ssim_terms(Graph& g, Var a, Var b) {
  constexpr double kC1 = 0.01 * 0.01;  // (0.01 L)^2, L = 1
  constexpr double kC2 = 0.03 * 0.03;
  const Tensor& ta = g.val(a);
  if (ta.dim(1) < 11 || ta.dim(2) < 11)
    throw std::invalid_argument("ssim: block smaller than the 11x11 window");
  Var mu_a = gaussian_blur_valid(g, a);
  Var mu_b = gaussian_blur_valid(g, b);
  Var mu_aa = g.mul(mu_a, mu_a);
  Var mu_bb = g.mul(mu_b, mu_b);
  Var mu_ab = g.mul(mu_a, mu_b);
  Var var_a = g.sub(gaussian_blur_valid(g, g.mul(a, a)), mu_aa);
  Var var_b = g.sub(gaussian_blur_valid(g, g.mul(b, b)), mu_bb);
  Var cov = g.sub(gaussian_blur_valid(g, g.mul(a, b)), mu_ab);

  Var lnum = g.add_scalar(g.mul_scalar(mu_ab, 2.0), kC1);
  Var lden = g.add_scalar(g.add(mu_aa, mu_bb), kC1);
  Var cnum = g.add_scalar(g.mul_scalar(cov, 2.0), kC2);
  Var cden = g.add_scalar(g.add(var_a, var_b), kC2);

  SsimTerms t;
  t.cs = g.mean_all(g.div(cnum, cden));
  t.full = g.mean_all(g.div(g.mul(lnum, cnum), g.mul(lden, cden)));
  return t;
}

}  // namespace detail

// --------------------------------------------------------------------------
// Graph-side losses
// --------------------------------------------------------------------------

inline Var l1_loss(Graph& g, Var a, Var b) {
  detail::require_same_shape(g.val(a), g.val(b), "l1_loss");
  return g.mean_all(g.absval(g.sub(a, b)));
}

inline Var l2_loss(Graph& g, Var a, Var b) {
  detail::require_same_shape(g.val(a), g.val(b), "l2_loss");
  return g.mean_all(g.square(g.sub(a, b)));
}

// Mean absolute difference of forward differences (horizontal + vertical,
// edge-replicated so border diffs are zero), halved to stay in [0,1].
inline Var gradient_loss(Graph& g, Var a, Var b) {
  const Tensor& ta = g.val(a);
  detail::require_same_shape(ta, g.val(b), "gradient_loss");
  detail::require_nhwc(ta, "gradient_loss");
  const int64_t H = ta.dim(1), W = ta.dim(2);
  const double n = static_cast<double>(ta.numel());
  auto fdiff_x = [&](Var v) { return g.sub(g.crop(v, 0, H, 1, W), g.crop(v, 0, H, 0, W - 1)); };
  auto fdiff_y = [&](Var v) { return g.sub(g.crop(v, 1, H, 0, W), g.crop(v, 0, H - 1, 0, W)); };
  Var gx = g.sum_all(g.absval(g.sub(fdiff_x(a), fdiff_x(b))));
  Var gy = g.sum_all(g.absval(g.sub(fdiff_y(a), fdiff_y(b))));
  return g.mul_scalar(g.add(gx, gy), 0.5 / n);
}

inline Var feature_loss(Graph& g, Var a, Var b, const FeatureExtractor& fx) {
  detail::require_same_shape(g.val(a), g.val(b), "feature_loss");
  Var fa = fx.apply(g, a);
  Var fb = fx.apply(g, b);
  Var mse = g.mean_all(g.square(g.sub(fa, fb)));
  return g.clampv(g.mul_scalar(mse, 1.0 / fx.normalizer), 0.0, 1.0);
}

inline Var ssim(Graph& g, Var a, Var b) {
  detail::require_same_shape(g.val(a), g.val(b), "ssim");
  return detail::ssim_terms(g, detail::luma(g, a), detail::luma(g, b)).full;
}

inline Var ssim_loss(Graph& g, Var a, Var b) {
  return g.mul_scalar(g.add_scalar(g.neg(ssim(g, a, b)), 1.0), 0.5);
}

inline std::vector<double> msssim_weights(int scales) {
  static const double base[5] = {0.0448, 0.2856, 0.3001, 0.2363, 0.1333};
  if (scales < 1 || scales > 5) throw std::invalid_argument("msssim_weights: scales in [1,5]");
  std::vector<double> w(base, base + scales);
  const double sum = std::accumulate(w.begin(), w.end(), 0.0);
  for (double& v : w) v /= sum;
  return w;
}

// Multi-scale SSIM with dyadic average-pool between scales; contrast-structure
// terms at the fine scales, full SSIM at the coarsest, combined with the
// standard weights truncated to `scales` and renormalized.
inline Var ms_ssim(Graph& g, Var a, Var b, int scales = 4) {
  detail::require_same_shape(g.val(a), g.val(b), "ms_ssim");
  const Tensor& ta = g.val(a);
  detail::require_nhwc(ta, "ms_ssim");
  const int64_t min_dim = std::min(ta.dim(1), ta.dim(2));
  if (min_dim < 11LL << (scales - 1))
    throw std::invalid_argument("ms_ssim: input too small for requested scales");
  const std::vector<double> w = msssim_weights(scales);

  Var xa = detail::luma(g, a);
  Var xb = detail::luma(g, b);
  Var prod;
  for (int s = 0; s < scales; ++s) {
    detail::SsimTerms t = detail::ssim_terms(g, xa, xb);
    Var term = (s + 1 == scales) ? t.full : t.cs;
    Var factor = g.powv(g.clampv(term, 1e-6, 1.0), w[static_cast<size_t>(s)]);
    prod = prod.valid() ? g.mul(prod, factor) : factor;
    if (s + 1 < scales) {
      xa = g.avgpool(xa, 2);
      xb = g.avgpool(xb, 2);
    }
  }
  return prod;
}

inline Var msssim_loss(Graph& g, Var a, Var b, int scales = 4) {
  return g.add_scalar(g.neg(ms_ssim(g, a, b, scales)), 1.0);
}

// --------------------------------------------------------------------------
// Plain-value wrappers
// --------------------------------------------------------------------------

namespace detail {
template <typename F>
double eval_pair(const Tensor& a, const Tensor& b, F fn) {
  Graph g;
  return g.val(fn(g, g.constant(a), g.constant(b)))[0];
}
}  // namespace detail

inline double l1_loss(const Tensor& a, const Tensor& b) {
  return detail::eval_pair(a, b, [](Graph& g, Var x, Var y) { return l1_loss(g, x, y); });
}
inline double l2_loss(const Tensor& a, const Tensor& b) {
  return detail::eval_pair(a, b, [](Graph& g, Var x, Var y) { return l2_loss(g, x, y); });
}
inline double gradient_loss(const Tensor& a, const Tensor& b) {
  return detail::eval_pair(a, b, [](Graph& g, Var x, Var y) { return gradient_loss(g, x, y); });
}
inline double feature_loss(const Tensor& a, const Tensor& b, const FeatureExtractor& fx) {
  return detail::eval_pair(a, b,
                           [&fx](Graph& g, Var x, Var y) { return feature_loss(g, x, y, fx); });
}
inline double ssim(const Tensor& a, const Tensor& b) {
  return detail::eval_pair(a, b, [](Graph& g, Var x, Var y) { return ssim(g, x, y); });
}
inline double ssim_loss(const Tensor& a, const Tensor& b) {
  return detail::eval_pair(a, b, [](Graph& g, Var x, Var y) { return ssim_loss(g, x, y); });
}
inline double ms_ssim(const Tensor& a, const Tensor& b, int scales = 4) {
  return detail::eval_pair(
      a, b, [scales](Graph& g, Var x, Var y) { return ms_ssim(g, x, y, scales); });
}
inline double msssim_loss(const Tensor& a, const Tensor& b, int scales = 4) {
  return detail::eval_pair(
      a, b, [scales](Graph& g, Var x, Var y) { return msssim_loss(g, x, y, scales); });
}

inline LossVector compute_loss_vector(const Tensor& a, const Tensor& b,
                                      const FeatureExtractor& fx, int msssim_scales = 4) {
  LossVector lv;
  lv.l1 = l1_loss(a, b);
  lv.l2 = l2_loss(a, b);
  lv.grad = gradient_loss(a, b);
  lv.feat = feature_loss(a, b, fx);
  lv.ssim_loss = ssim_loss(a, b);
  lv.msssim_loss = msssim_loss(a, b, msssim_scales);
  return lv;
}

// --------------------------------------------------------------------------
// PSNR and SROCC
// --------------------------------------------------------------------------

inline double psnr_from_mse(double mse, double peak) {
  if (mse <= 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(peak * peak / mse);
}

inline double psnr(const double* a, const double* b, size_t n, double peak) {
  if (n == 0) throw std::invalid_argument("psnr: empty input");
  double mse = 0.0;
  for (size_t i = 0; i < n; ++i) {
    const double d = a[i] - b[i];
    mse += d * d;
  }
  return psnr_from_mse(mse / static_cast<double>(n), peak);
}

inline double psnr(const std::vector<double>& a, const std::vector<double>& b, double peak) {
  if (a.size() != b.size()) throw std::invalid_argument("psnr: size mismatch");
  return psnr(a.data(), b.data(), a.size(), peak);
}

// Average ranks with ties sharing the mean of their positions.
inline std::vector<double> average_ranks(const std::vector<double>& x) {
  const size_t n = x.size();
  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), size_t{0});
  std::stable_sort(order.begin(), order.end(), [&x](size_t i, size_t j) { return x[i] < x[j]; });
  std::vector<double> ranks(n);
  size_t i = 0;
  while (i < n) {
    size_t j = i;
    while (j + 1 < n && x[order[j + 1]] == x[order[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (size_t k = i; k <= j; ++k) ranks[order[k]] = r;
    i = j + 1;
  }
  return ranks;
}

// Spearman rank-order correlation: Pearson correlation of average ranks.
// Undefined (nullopt) for fewer than two samples or zero rank variance.
inline std::optional<double> srocc(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size()) throw std::invalid_argument("srocc: size mismatch");
  if (x.size() < 2) return std::nullopt;
  const std::vector<double> rx = average_ranks(x);
  const std::vector<double> ry = average_ranks(y);
  const double n = static_cast<double>(x.size());
  double mx = 0.0, my = 0.0;
  for (size_t i = 0; i < x.size(); ++i) {
    mx += rx[i];
    my += ry[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (size_t i = 0; i < x.size(); ++i) {
    const double dx = rx[i] - mx, dy = ry[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx <= 0.0 || syy <= 0.0) return std::nullopt;
  return sxy / std::sqrt(sxx * syy);
}

}  // namespace cvegan
