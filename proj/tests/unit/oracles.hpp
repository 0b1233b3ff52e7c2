#pragma once

// Independent scalar implementations used as test oracles. Deliberately
// written without the library's kernels or tap tables.

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "ddrnet/tensor.hpp"

namespace oracle {

using ddrnet::Shape;
using ddrnet::Tensor64;

// Plain nested-loop cross-correlation with zero padding.
inline Tensor64 conv(const Tensor64& x, const Tensor64& w, const std::vector<double>& bias, int sh, int sw, int ph,
                     int pw) {
  const int64_t n = x.n(), c = x.c(), h = x.h(), wd = x.w();
  const int64_t o = w.shape()[0], kh = w.shape()[2], kw = w.shape()[3];
  const int64_t oh = (h + 2 * ph - kh) / sh + 1;
  const int64_t ow = (wd + 2 * pw - kw) / sw + 1;
  Tensor64 y(Shape{n, o, oh, ow});
  for (int64_t b = 0; b < n; ++b)
    for (int64_t oc = 0; oc < o; ++oc)
      for (int64_t i = 0; i < oh; ++i)
        for (int64_t j = 0; j < ow; ++j) {
          double s = bias.empty() ? 0.0 : bias[static_cast<size_t>(oc)];
          for (int64_t ic = 0; ic < c; ++ic)
            for (int64_t u = 0; u < kh; ++u)
              for (int64_t v = 0; v < kw; ++v) {
                const int64_t yy = i * sh - ph + u;
                const int64_t xx = j * sw - pw + v;
                if (yy < 0 || yy >= h || xx < 0 || xx >= wd) continue;
                s += x.at(b, ic, yy, xx) * w.at(oc, ic, u, v);
              }
          y.at(b, oc, i, j) = s;
        }
  return y;
}

// Window mean counting only cells inside the input.
inline Tensor64 avg_pool(const Tensor64& x, int k, int s, int p) {
  const int64_t oh = (x.h() + 2 * p - k) / s + 1;
  const int64_t ow = (x.w() + 2 * p - k) / s + 1;
  Tensor64 y(Shape{x.n(), x.c(), oh, ow});
  for (int64_t b = 0; b < x.n(); ++b)
    for (int64_t c = 0; c < x.c(); ++c)
      for (int64_t i = 0; i < oh; ++i)
        for (int64_t j = 0; j < ow; ++j) {
          double sum = 0.0;
          int cnt = 0;
          for (int u = 0; u < k; ++u)
            for (int v = 0; v < k; ++v) {
              const int64_t yy = i * s - p + u, xx = j * s - p + v;
              if (yy < 0 || yy >= x.h() || xx < 0 || xx >= x.w()) continue;
              sum += x.at(b, c, yy, xx);
              ++cnt;
            }
          y.at(b, c, i, j) = sum / cnt;
        }
  return y;
}

// Half-pixel bilinear sample, computed per output element.
inline double sample_axis(double dst, int64_t in, int64_t out, int64_t& lo, int64_t& hi) {
  double src = (dst + 0.5) * static_cast<double>(in) / static_cast<double>(out) - 0.5;
  if (src < 0) src = 0;
  lo = static_cast<int64_t>(std::floor(src));
  if (lo > in - 1) lo = in - 1;
  hi = std::min(lo + 1, in - 1);
  return src - static_cast<double>(lo);
}

inline Tensor64 bilinear(const Tensor64& x, int64_t oh, int64_t ow) {
  Tensor64 y(Shape{x.n(), x.c(), oh, ow});
  for (int64_t b = 0; b < x.n(); ++b)
    for (int64_t c = 0; c < x.c(); ++c)
      for (int64_t i = 0; i < oh; ++i)
        for (int64_t j = 0; j < ow; ++j) {
          int64_t y0, y1, x0, x1;
          const double fy = sample_axis(static_cast<double>(i), x.h(), oh, y0, y1);
          const double fx = sample_axis(static_cast<double>(j), x.w(), ow, x0, x1);
          const double top = x.at(b, c, y0, x0) * (1 - fx) + x.at(b, c, y0, x1) * fx;
          const double bot = x.at(b, c, y1, x0) * (1 - fx) + x.at(b, c, y1, x1) * fx;
          y.at(b, c, i, j) = top * (1 - fy) + bot * fy;
        }
  return y;
}

inline double max_abs_diff(const Tensor64& a, const Tensor64& b) {
  double m = 0;
  for (int64_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

template <typename T>
ddrnet::BasicTensor<T> random_tensor(const Shape& s, uint64_t seed, double scale = 1.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> d(0.0, scale);
  ddrnet::BasicTensor<T> t(s);
  for (auto& v : t.data()) v = static_cast<T>(d(rng));
  return t;
}

}  // namespace oracle
