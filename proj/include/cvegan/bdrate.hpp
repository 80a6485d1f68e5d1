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
#include <array>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

namespace cvegan {

// Rate-distortion curves and the Bjontegaard delta-rate measure: log10-rate
// is fitted as a cubic function of quality for both curves and the fitted
// difference is averaged over the overlapping quality range. Negative
// results mean the test curve needs less rate at equal quality.

struct RDPoint {
  double bitrate_kbps = 0.0;
  double quality = 0.0;
};

struct RDCurve {
  std::vector<RDPoint> points;  // ascending bitrate
  std::string metric_id = "psnr";

  void validate() const {
    if (points.size() < 4)
      throw std::invalid_argument("RDCurve: need at least 4 points for the cubic fit");
    for (size_t i = 0; i < points.size(); ++i) {
      if (!(points[i].bitrate_kbps > 0.0))
        throw std::invalid_argument("RDCurve: bitrates must be positive");
      if (i > 0 && points[i].bitrate_kbps <= points[i - 1].bitrate_kbps)
        throw std::invalid_argument("RDCurve: bitrates must be strictly increasing");
      if (!std::isfinite(points[i].quality))
        throw std::invalid_argument("RDCurve: non-finite quality");
    }
  }

  // Quality should not decrease with bitrate; a violation is suspicious but
  // not an error.
  bool quality_monotone() const {
    for (size_t i = 1; i < points.size(); ++i)
      if (points[i].quality < points[i - 1].quality) return false;
    return true;
  }

  double min_quality() const {
    double m = points[0].quality;
    for (const RDPoint& p : points) m = std::min(m, p.quality);
    return m;
  }
  double max_quality() const {
    double m = points[0].quality;
    for (const RDPoint& p : points) m = std::max(m, p.quality);
    return m;
  }
};

enum class BdFitMethod { kCubic, kPiecewiseCubic };

namespace detail {

// Least-squares cubic fit of log10(rate) against quality, normalized so the
// integration range maps to [-1, 1]; keeps the normal equations conditioned
// for metrics whose values span tiny ranges (SSIM near 1).
inline std::array<double, 4> cubic_fit(const RDCurve& c, double q_center, double q_scale) {
  double a[4][5] = {};
  for (const RDPoint& p : c.points) {
    const double x = (p.quality - q_center) / q_scale;
    const double y = std::log10(p.bitrate_kbps);
    double xp[7];
    xp[0] = 1.0;
    for (int k = 1; k < 7; ++k) xp[k] = xp[k - 1] * x;
    for (int r = 0; r < 4; ++r) {
      for (int col = 0; col < 4; ++col) a[r][col] += xp[r + col];
      a[r][4] += xp[r] * y;
    }
  }
  // Gaussian elimination with partial pivoting.
  for (int col = 0; col < 4; ++col) {
    int pivot = col;
    for (int r = col + 1; r < 4; ++r)
      if (std::abs(a[r][col]) > std::abs(a[pivot][col])) pivot = r;
    if (std::abs(a[pivot][col]) < 1e-12)
      throw std::runtime_error("bd_rate: degenerate quality values (singular fit)");
    std::swap(a[col], a[pivot]);
    for (int r = 0; r < 4; ++r) {
      if (r == col) continue;
      const double f = a[r][col] / a[col][col];
      for (int k = col; k < 5; ++k) a[r][k] -= f * a[col][k];
    }
  }
  return {a[0][4] / a[0][0], a[1][4] / a[1][1], a[2][4] / a[2][2], a[3][4] / a[3][3]};
}

inline double poly_integral(const std::array<double, 4>& c, double lo, double hi) {
  auto anti = [&c](double x) {
    return c[0] * x + c[1] * x * x / 2.0 + c[2] * x * x * x / 3.0 + c[3] * x * x * x * x / 4.0;
  };
  return anti(hi) - anti(lo);
}

// Monotone piecewise-cubic Hermite coefficients (Fritsch-Carlson slopes) of
// log10(rate) as a function of quality; integrates analytically per segment.
class MonotoneCubic {
 public:
  explicit MonotoneCubic(const RDCurve& curve) {
    std::vector<RDPoint> pts = curve.points;
    std::sort(pts.begin(), pts.end(),
              [](const RDPoint& a, const RDPoint& b) { return a.quality < b.quality; });
    for (size_t i = 1; i < pts.size(); ++i)
      if (pts[i].quality <= pts[i - 1].quality)
        throw std::invalid_argument("bd_rate: piecewise fit needs distinct quality values");
    const size_t n = pts.size();
    x_.resize(n);
    y_.resize(n);
    for (size_t i = 0; i < n; ++i) {
      x_[i] = pts[i].quality;
      y_[i] = std::log10(pts[i].bitrate_kbps);
    }
    std::vector<double> d(n - 1), m(n);
    for (size_t i = 0; i + 1 < n; ++i) d[i] = (y_[i + 1] - y_[i]) / (x_[i + 1] - x_[i]);
    m[0] = d[0];
    m[n - 1] = d[n - 2];
    for (size_t i = 1; i + 1 < n; ++i)
      m[i] = (d[i - 1] * d[i] <= 0.0) ? 0.0 : 0.5 * (d[i - 1] + d[i]);
    for (size_t i = 0; i + 1 < n; ++i) {
      if (d[i] == 0.0) {
        m[i] = m[i + 1] = 0.0;
        continue;
      }
      const double alpha = m[i] / d[i], beta = m[i + 1] / d[i];
      const double s = alpha * alpha + beta * beta;
      if (s > 9.0) {
        const double tau = 3.0 / std::sqrt(s);
        m[i] = tau * alpha * d[i];
        m[i + 1] = tau * beta * d[i];
      }
    }
    slopes_ = std::move(m);
  }

  double integral(double lo, double hi) const {
    double total = 0.0;
    for (size_t i = 0; i + 1 < x_.size(); ++i) {
      const double a = std::max(lo, x_[i]);
      const double b = std::min(hi, x_[i + 1]);
      if (a >= b) continue;
      total += segment_integral(i, a, b);
    }
    return total;
  }

 private:
  double segment_integral(size_t i, double a, double b) const {
    const double h = x_[i + 1] - x_[i];
    // Hermite basis in t = (x - x_i)/h, expanded to monomial coefficients.
    const double c0 = y_[i];
    const double c1 = slopes_[i] * h;
    const double c2 = 3.0 * (y_[i + 1] - y_[i]) - (2.0 * slopes_[i] + slopes_[i + 1]) * h;
    const double c3 = 2.0 * (y_[i] - y_[i + 1]) + (slopes_[i] + slopes_[i + 1]) * h;
    auto anti = [&](double x) {
      const double t = (x - x_[i]) / h;
      const double t2 = t * t;
      return h * (c0 * t + c1 * t2 / 2.0 + c2 * t2 * t / 3.0 + c3 * t2 * t2 / 4.0);
    };
    return anti(b) - anti(a);
  }

  std::vector<double> x_, y_, slopes_;
};

}  // namespace detail

inline double bd_rate(const RDCurve& anchor, const RDCurve& test,
                      BdFitMethod method = BdFitMethod::kCubic) {
  anchor.validate();
  test.validate();
  const double lo = std::max(anchor.min_quality(), test.min_quality());
  const double hi = std::min(anchor.max_quality(), test.max_quality());
  if (!(lo < hi))
    throw std::invalid_argument("bd_rate: quality ranges do not overlap");
  double avg_diff = 0.0;
  if (method == BdFitMethod::kCubic) {
    const double center = 0.5 * (lo + hi);
    const double scale = 0.5 * (hi - lo);
    const std::array<double, 4> pa = detail::cubic_fit(anchor, center, scale);
    const std::array<double, 4> pt = detail::cubic_fit(test, center, scale);
    std::array<double, 4> diff{};
    for (size_t i = 0; i < 4; ++i) diff[i] = pt[i] - pa[i];
    avg_diff = 0.5 * detail::poly_integral(diff, -1.0, 1.0);
  } else {
    const detail::MonotoneCubic fa(anchor);
    const detail::MonotoneCubic ft(test);
    avg_diff = (ft.integral(lo, hi) - fa.integral(lo, hi)) / (hi - lo);
  }
  return (std::pow(10.0, avg_diff) - 1.0) * 100.0;
}

}  // namespace cvegan
