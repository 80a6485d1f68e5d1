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

#include "cvegan/graph.hpp"

namespace cvegan {

// Hypersphere geometry for the relativistic sphere-GAN objective: feature
// points in R^n are lifted onto the unit n-sphere by the inverse
// stereographic projection and compared through powers of geodesic angles.
//
// The north-pole cosine (s-1)/(s+1) is evaluated unclamped (it cannot leave
// [-1,1) mathematically), so d^m(N, T(0)) = pi^m exactly. The relativistic
// cosine A is clamped to [-1+1e-7, 1-1e-7]: coincident or antipodal feature
// points would otherwise sit on the arccos singularity where the derivative
// blows up.

using VecN = std::vector<double>;

constexpr double kCosClamp = 1e-7;

struct SpherePoint {
  VecN coords;  // n+1 entries, unit norm
};

// How the expectation over the relativistic term pairs real and fake rows:
// by batch index (default) or over the full BxB cross product.
enum class RelPairing { kIndexPaired, kCrossProduct };

struct ReSphereConfig {
  int moments = 3;            // M
  double adv_weight = 0.005;  // weight of the adversarial term in the generator loss
  int64_t feature_dim = 1024;
  RelPairing pairing = RelPairing::kIndexPaired;
};

namespace detail {

inline double int_pow(double base, int m) {
  double r = 1.0;
  for (int i = 0; i < m; ++i) r *= base;
  return r;
}

inline double sumsq(const VecN& x) {
  double s = 0.0;
  for (double v : x) {
    if (!std::isfinite(v)) throw std::invalid_argument("sphere: non-finite input");
    s += v * v;
  }
  return s;
}

inline double dot(const VecN& a, const VecN& b) {
  if (a.size() != b.size()) throw std::invalid_argument("sphere: dimension mismatch");
  double s = 0.0;
  for (size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

}  // namespace detail

inline SpherePoint inverse_stereographic(const VecN& x) {
  const double s = detail::sumsq(x);
  const double inv = 1.0 / (s + 1.0);
  SpherePoint p;
  p.coords.resize(x.size() + 1);
  for (size_t i = 0; i < x.size(); ++i) p.coords[i] = 2.0 * x[i] * inv;
  p.coords.back() = (s - 1.0) * inv;
  return p;
}

// N . T(x) for the north pole N = (0,...,0,1).
inline double north_pole_cos(const VecN& x) {
  const double s = detail::sumsq(x);
  return (s - 1.0) / (s + 1.0);
}

inline double north_pole_distance(const VecN& x, int m) {
  if (m < 1) throw std::invalid_argument("north_pole_distance: m >= 1");
  return detail::int_pow(std::acos(north_pole_cos(x)), m);
}

inline double relativistic_cos(const VecN& xr, const VecN& xf) {
  const double sr = detail::sumsq(xr);
  const double sf = detail::sumsq(xf);
  const double d = detail::dot(xr, xf);
  const double a = (sr * sf - sr - sf + 4.0 * d + 1.0) / ((sr + 1.0) * (sf + 1.0));
  return std::min(std::max(a, -1.0 + kCosClamp), 1.0 - kCosClamp);
}

inline double relativistic_distance(const VecN& xr, const VecN& xf, int m) {
  if (m < 1) throw std::invalid_argument("relativistic_distance: m >= 1");
  return detail::int_pow(std::acos(relativistic_cos(xr, xf)), m);
}

// --------------------------------------------------------------------------
// Closed-form gradients (chain rule through arccos^m)
// --------------------------------------------------------------------------

namespace detail {

// m * arccos^(m-1)(A) * (-1/sqrt(1-A^2)), with A pulled off the boundary the
// same way the autodiff arccos does.
inline double acos_pow_chain(double a, int m) {
  const double edge = 1.0 - kCosClamp;
  const double ab = std::min(std::max(a, -edge), edge);
  const double angle = std::acos(ab);
  return static_cast<double>(m) * int_pow(angle, m - 1) * (-1.0 / std::sqrt(1.0 - ab * ab));
}

}  // namespace detail

inline VecN north_pole_distance_grad(const VecN& x, int m) {
  const double s = detail::sumsq(x);
  const double a = (s - 1.0) / (s + 1.0);
  const double chain = detail::acos_pow_chain(a, m);
  const double da_scale = 4.0 / ((s + 1.0) * (s + 1.0));  // dA/dx = 4x/(s+1)^2
  VecN g(x.size());
  for (size_t i = 0; i < x.size(); ++i) g[i] = chain * da_scale * x[i];
  return g;
}

inline void relativistic_distance_grad(const VecN& xr, const VecN& xf, int m, VecN* dxr,
                                       VecN* dxf) {
  const double sr = detail::sumsq(xr);
  const double sf = detail::sumsq(xf);
  const double d = detail::dot(xr, xf);
  const double den = (sr + 1.0) * (sf + 1.0);
  const double num = sr * sf - sr - sf + 4.0 * d + 1.0;
  const double a = num / den;
  const double chain = detail::acos_pow_chain(std::min(std::max(a, -1.0 + kCosClamp),
                                                       1.0 - kCosClamp),
                                              m);
  dxr->assign(xr.size(), 0.0);
  dxf->assign(xf.size(), 0.0);
  for (size_t i = 0; i < xr.size(); ++i) {
    // dA/dxr_i = dNum/dxr_i / den - A * dDen/dxr_i / den
    const double dnum_r = 2.0 * xr[i] * sf - 2.0 * xr[i] + 4.0 * xf[i];
    const double dden_r = 2.0 * xr[i] * (sf + 1.0);
    (*dxr)[i] = chain * (dnum_r - a * dden_r) / den;
    const double dnum_f = 2.0 * xf[i] * sr - 2.0 * xf[i] + 4.0 * xr[i];
    const double dden_f = 2.0 * xf[i] * (sr + 1.0);
    (*dxf)[i] = chain * (dnum_f - a * dden_f) / den;
  }
}

// --------------------------------------------------------------------------
// Batched adversarial losses (rows of [B,n] tensors are feature points;
// real/fake rows pair by batch index)
// --------------------------------------------------------------------------

namespace detail {

inline void require_batch(const Tensor& t, const char* who) {
  if (t.ndim() != 2) throw std::invalid_argument(std::string(who) + ": expects [B,n] features");
}

inline void require_batch_pair(const Tensor& a, const Tensor& b, const char* who) {
  require_batch(a, who);
  require_batch(b, who);
  if (a.dim(0) != b.dim(0)) throw std::invalid_argument(std::string(who) + ": batch size mismatch");
  if (a.dim(1) != b.dim(1))
    throw std::invalid_argument(std::string(who) + ": feature dimension mismatch");
}

inline VecN row(const Tensor& t, int64_t r) {
  VecN v(static_cast<size_t>(t.dim(1)));
  for (int64_t c = 0; c < t.dim(1); ++c) v[static_cast<size_t>(c)] = t.at2(r, c);
  return v;
}

}  // namespace detail

// sum_{m=1..M} E[d^m(N, T(x))]
inline double north_pole_moment_sum(const Tensor& feats, int M) {
  detail::require_batch(feats, "north_pole_moment_sum");
  double total = 0.0;
  for (int m = 1; m <= M; ++m) {
    double acc = 0.0;
    for (int64_t r = 0; r < feats.dim(0); ++r)
      acc += north_pole_distance(detail::row(feats, r), m);
    total += acc / static_cast<double>(feats.dim(0));
  }
  return total;
}

// sum_{m=1..M} E[d^m(T(x_r), T(x_f))] with rows paired by batch index.
inline double relativistic_moment_sum(const Tensor& real, const Tensor& fake, int M) {
  detail::require_batch_pair(real, fake, "relativistic_moment_sum");
  double total = 0.0;
  for (int m = 1; m <= M; ++m) {
    double acc = 0.0;
    for (int64_t r = 0; r < real.dim(0); ++r)
      acc += relativistic_distance(detail::row(real, r), detail::row(fake, r), m);
    total += acc / static_cast<double>(real.dim(0));
  }
  return total;
}

// Cross-product variant: the expectation runs over every (real, fake) pair.
inline double relativistic_moment_sum_cross(const Tensor& real, const Tensor& fake, int M) {
  detail::require_batch_pair(real, fake, "relativistic_moment_sum_cross");
  double total = 0.0;
  const int64_t b = real.dim(0);
  for (int m = 1; m <= M; ++m) {
    double acc = 0.0;
    for (int64_t r = 0; r < b; ++r)
      for (int64_t f = 0; f < b; ++f)
        acc += relativistic_distance(detail::row(real, r), detail::row(fake, f), m);
    total += acc / static_cast<double>(b * b);
  }
  return total;
}

inline double relativistic_term(const Tensor& real, const Tensor& fake,
                                const ReSphereConfig& cfg) {
  return cfg.pairing == RelPairing::kIndexPaired
             ? relativistic_moment_sum(real, fake, cfg.moments)
             : relativistic_moment_sum_cross(real, fake, cfg.moments);
}

// Adversarial part of the generator objective; the full stage-2 generator
// loss is perceptual_loss + cfg.adv_weight * this value.
inline double generator_adv_loss(const Tensor& real, const Tensor& fake,
                                 const ReSphereConfig& cfg) {
  detail::require_batch_pair(real, fake, "generator_adv_loss");
  return -north_pole_moment_sum(fake, cfg.moments) + relativistic_term(real, fake, cfg);
}

inline double discriminator_loss(const Tensor& real, const Tensor& fake,
                                 const ReSphereConfig& cfg) {
  detail::require_batch_pair(real, fake, "discriminator_loss");
  return north_pole_moment_sum(fake, cfg.moments) - north_pole_moment_sum(real, cfg.moments) -
         relativistic_term(real, fake, cfg);
}

// --------------------------------------------------------------------------
// Graph versions for training
// --------------------------------------------------------------------------

inline Var north_pole_moment_sum(Graph& g, Var feats, int M) {
  detail::require_batch(g.val(feats), "north_pole_moment_sum");
  Var s = g.sum_lastdim(g.square(feats));  // [B]
  Var cosv = g.div(g.add_scalar(s, -1.0), g.add_scalar(s, 1.0));
  Var angle = g.acosv(cosv);
  Var total;
  for (int m = 1; m <= M; ++m) {
    Var term = g.mean_all(g.powv(angle, static_cast<double>(m)));
    total = total.valid() ? g.add(total, term) : term;
  }
  return total;
}

inline Var relativistic_moment_sum(Graph& g, Var real, Var fake, int M) {
  detail::require_batch_pair(g.val(real), g.val(fake), "relativistic_moment_sum");
  Var sr = g.sum_lastdim(g.square(real));
  Var sf = g.sum_lastdim(g.square(fake));
  Var dot = g.sum_lastdim(g.mul(real, fake));
  Var num = g.add_scalar(
      g.add(g.sub(g.mul(sr, sf), g.add(sr, sf)), g.mul_scalar(dot, 4.0)), 1.0);
  Var den = g.mul(g.add_scalar(sr, 1.0), g.add_scalar(sf, 1.0));
  Var a = g.clampv(g.div(num, den), -1.0 + kCosClamp, 1.0 - kCosClamp);
  Var angle = g.acosv(a);
  Var total;
  for (int m = 1; m <= M; ++m) {
    Var term = g.mean_all(g.powv(angle, static_cast<double>(m)));
    total = total.valid() ? g.add(total, term) : term;
  }
  return total;
}

// Cross-product pairing: all BxB distances via outer products.
inline Var relativistic_moment_sum_cross(Graph& g, Var real, Var fake, int M) {
  detail::require_batch_pair(g.val(real), g.val(fake), "relativistic_moment_sum_cross");
  const int64_t b = g.val(real).dim(0);
  const int64_t n = g.val(real).dim(1);
  Var ones_col = g.constant(Tensor::full({1, b, 1}, 1.0));
  Var ones_row = g.constant(Tensor::full({1, 1, b}, 1.0));
  Var sr = g.reshape(g.sum_lastdim(g.square(real)), {1, b, 1});
  Var sf = g.reshape(g.sum_lastdim(g.square(fake)), {1, 1, b});
  Var dots = g.bmm(g.reshape(real, {1, b, n}), g.transpose12(g.reshape(fake, {1, b, n})));
  Var sr_sf = g.bmm(sr, sf);
  Var sr_grid = g.bmm(sr, ones_row);
  Var sf_grid = g.bmm(ones_col, sf);
  Var num = g.add_scalar(
      g.add(g.sub(sr_sf, g.add(sr_grid, sf_grid)), g.mul_scalar(dots, 4.0)), 1.0);
  Var den = g.bmm(g.add_scalar(sr, 1.0), g.add_scalar(sf, 1.0));
  Var a = g.clampv(g.div(num, den), -1.0 + kCosClamp, 1.0 - kCosClamp);
  Var angle = g.acosv(a);
  Var total;
  for (int m = 1; m <= M; ++m) {
    Var term = g.mean_all(g.powv(angle, static_cast<double>(m)));
    total = total.valid() ? g.add(total, term) : term;
  }
  return total;
}

inline Var relativistic_term(Graph& g, Var real, Var fake, const ReSphereConfig& cfg) {
  return cfg.pairing == RelPairing::kIndexPaired
             ? relativistic_moment_sum(g, real, fake, cfg.moments)
             : relativistic_moment_sum_cross(g, real, fake, cfg.moments);
}

inline Var generator_adv_loss(Graph& g, Var real, Var fake, const ReSphereConfig& cfg) {
  return g.add(g.neg(north_pole_moment_sum(g, fake, cfg.moments)),
               relativistic_term(g, real, fake, cfg));
}

inline Var discriminator_loss(Graph& g, Var real, Var fake, const ReSphereConfig& cfg) {
  return g.sub(g.sub(north_pole_moment_sum(g, fake, cfg.moments),
                     north_pole_moment_sum(g, real, cfg.moments)),
               relativistic_term(g, real, fake, cfg));
}

// --------------------------------------------------------------------------
// Gradient-check harness: closed-form gradients against central finite
// differences of the scalar distances.
// --------------------------------------------------------------------------

struct GradCheckReport {
  double max_rel_error = 0.0;
  double max_grad_abs = 0.0;

  bool pass(double tol = 1e-4) const {
    return std::isfinite(max_grad_abs) && max_rel_error < tol;
  }
};

namespace detail {

inline void update_report(GradCheckReport* rep, double analytic, double fd) {
  const double denom = std::max({std::abs(analytic), std::abs(fd), 1e-8});
  rep->max_rel_error = std::max(rep->max_rel_error, std::abs(analytic - fd) / denom);
  rep->max_grad_abs = std::max(rep->max_grad_abs, std::abs(analytic));
}

inline void require_non_degenerate(double a, const char* who) {
  if (std::abs(a) > 1.0 - 1e-3)
    throw std::invalid_argument(std::string(who) + ": point too close to the arccos singularity");
}

}  // namespace detail

inline GradCheckReport gradcheck_north_pole(const VecN& x, int m, double h = 1e-5) {
  detail::require_non_degenerate(north_pole_cos(x), "gradcheck_north_pole");
  const VecN analytic = north_pole_distance_grad(x, m);
  GradCheckReport rep;
  VecN p = x;
  for (size_t i = 0; i < x.size(); ++i) {
    p[i] = x[i] + h;
    const double fp = north_pole_distance(p, m);
    p[i] = x[i] - h;
    const double fm = north_pole_distance(p, m);
    p[i] = x[i];
    detail::update_report(&rep, analytic[i], (fp - fm) / (2.0 * h));
  }
  return rep;
}

inline GradCheckReport gradcheck_relativistic(const VecN& xr, const VecN& xf, int m,
                                              double h = 1e-5) {
  detail::require_non_degenerate(relativistic_cos(xr, xf), "gradcheck_relativistic");
  VecN dxr, dxf;
  relativistic_distance_grad(xr, xf, m, &dxr, &dxf);
  GradCheckReport rep;
  VecN pr = xr, pf = xf;
  for (size_t i = 0; i < xr.size(); ++i) {
    pr[i] = xr[i] + h;
    const double fp = relativistic_distance(pr, xf, m);
    pr[i] = xr[i] - h;
    const double fm = relativistic_distance(pr, xf, m);
    pr[i] = xr[i];
    detail::update_report(&rep, dxr[i], (fp - fm) / (2.0 * h));
  }
  for (size_t i = 0; i < xf.size(); ++i) {
    pf[i] = xf[i] + h;
    const double fp = relativistic_distance(xr, pf, m);
    pf[i] = xf[i] - h;
    const double fm = relativistic_distance(xr, pf, m);
    pf[i] = xf[i];
    detail::update_report(&rep, dxf[i], (fp - fm) / (2.0 * h));
  }
  return rep;
}

}  // namespace cvegan
