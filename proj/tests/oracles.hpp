#pragma once

// Test-only oracles. Everything here is deliberately independent of the
// library's gradient/attack/metric code paths: brute-force loops, central
// finite differences, closed forms.

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <vector>

namespace aelab::testing {

// Central finite differences of a scalar function at x.
inline std::vector<double> finite_difference(
    const std::function<double(std::span<const double>)>& f, std::vector<double> x,
    double h = 1e-5) {
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    double orig = x[i];
    x[i] = orig + h;
    double fp = f(x);
    x[i] = orig - h;
    double fm = f(x);
    x[i] = orig;
    g[i] = (fp - fm) / (2.0 * h);
  }
  return g;
}

// max relative error, with an absolute comparison for tiny reference values
inline double gradient_discrepancy(std::span<const double> analytic,
                                   std::span<const double> numeric, double tiny = 1e-8) {
  double worst = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    double a = analytic[i], n = numeric[i];
    double err = std::fabs(a - n);
    if (std::fabs(a) >= tiny) err /= std::fabs(a);
    worst = std::max(worst, err);
  }
  return worst;
}

// Direct sliding-window convolution, quadruple loop, no im2col.
inline std::vector<double> conv2d_reference(std::span<const double> x, int B, int Ci, int H, int W,
                                            std::span<const double> k, int Co, int kh, int kw,
                                            int stride, int pad) {
  const int Ho = (H + 2 * pad - kh) / stride + 1;
  const int Wo = (W + 2 * pad - kw) / stride + 1;
  std::vector<double> out(static_cast<std::size_t>(B) * Co * Ho * Wo, 0.0);
  for (int n = 0; n < B; ++n)
    for (int co = 0; co < Co; ++co)
      for (int oi = 0; oi < Ho; ++oi)
        for (int oj = 0; oj < Wo; ++oj) {
          double acc = 0.0;
          for (int ci = 0; ci < Ci; ++ci)
            for (int ki = 0; ki < kh; ++ki)
              for (int kj = 0; kj < kw; ++kj) {
                int ii = oi * stride - pad + ki;
                int jj = oj * stride - pad + kj;
                if (ii < 0 || ii >= H || jj < 0 || jj >= W) continue;
                acc += x[((static_cast<std::size_t>(n) * Ci + ci) * H + ii) * W + jj] *
                       k[((static_cast<std::size_t>(co) * Ci + ci) * kh + ki) * kw + kj];
              }
          out[((static_cast<std::size_t>(n) * Co + co) * Ho + oi) * Wo + oj] = acc;
        }
  return out;
}

// Spearman rank correlation; average ranks for ties.
inline double spearman_rho(std::span<const double> xs, std::span<const double> ys) {
  auto ranks = [](std::span<const double> v) {
    std::size_t n = v.size();
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
    std::vector<double> r(n);
    std::size_t i = 0;
    while (i < n) {
      std::size_t j = i;
      while (j + 1 < n && v[idx[j + 1]] == v[idx[i]]) ++j;
      double avg = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
      for (std::size_t k = i; k <= j; ++k) r[idx[k]] = avg;
      i = j + 1;
    }
    return r;
  };
  auto rx = ranks(xs), ry = ranks(ys);
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    mx += rx[i];
    my += ry[i];
  }
  mx /= static_cast<double>(rx.size());
  my /= static_cast<double>(ry.size());
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

}  // namespace aelab::testing
