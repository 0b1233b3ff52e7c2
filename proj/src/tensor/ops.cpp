#include "ddrnet/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "ddrnet/parallel.hpp"

namespace ddrnet {

void Conv2dParams::validate() const {
  if (out_channels < 1 || in_channels < 1) throw ShapeError("conv2d: channel counts must be >= 1");
  if (kh < 1 || kw < 1) throw ShapeError("conv2d: kernel extents must be >= 1");
  if (sh < 1 || sw < 1) throw ShapeError("conv2d: strides must be >= 1");
  if (ph < 0 || pw < 0) throw ShapeError("conv2d: padding must be >= 0");
}

template <typename T>
void BatchNormParams<T>::validate() const {
  const size_t c = gamma.size();
  if (beta.size() != c || running_mean.size() != c || running_var.size() != c) {
    throw ShapeError("batch_norm: gamma/beta/mean/var lengths differ");
  }
  if (!(epsilon >= 0.0)) throw ValueError("batch_norm: epsilon must be >= 0");
  for (size_t i = 0; i < c; ++i) {
    if (!(running_var[i] >= T{0})) {
      throw ValueError("batch_norm: running_var[" + std::to_string(i) + "] is negative");
    }
  }
}

template struct BatchNormParams<float>;
template struct BatchNormParams<double>;

int64_t window_out_extent(int64_t x, int k, int s, int p, const char* what) {
  const int64_t padded = x + 2 * static_cast<int64_t>(p);
  if (padded < k) {
    throw ShapeError(std::string(what) + ": kernel " + std::to_string(k) + " larger than padded input " +
                     std::to_string(padded));
  }
  return (padded - k) / s + 1;
}

namespace ops {
namespace {

void require_rank4(const Shape& s, const char* op) {
  if (s.rank() != 4) throw ShapeError(std::string(op) + ": expected rank-4 NCHW input, got " + s.str());
}

}  // namespace

template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& input, const BasicTensor<T>& weight, std::span<const T> bias,
                      const Conv2dParams& p) {
  p.validate();
  require_rank4(input.shape(), "conv2d");
  if (input.c() != p.in_channels) {
    throw ShapeError("conv2d: input channels " + std::to_string(input.c()) + " != in_channels " +
                     std::to_string(p.in_channels));
  }
  if (weight.shape() != p.weight_shape()) {
    throw ShapeError("conv2d: weight shape " + weight.shape().str() + " != expected " + p.weight_shape().str());
  }
  if (!bias.empty() && static_cast<int64_t>(bias.size()) != p.out_channels) {
    throw ShapeError("conv2d: bias length " + std::to_string(bias.size()) + " != out_channels " +
                     std::to_string(p.out_channels));
  }
  const int64_t H = input.h(), W = input.w();
  const int64_t OH = window_out_extent(H, p.kh, p.sh, p.ph, "conv2d height");
  const int64_t OW = window_out_extent(W, p.kw, p.sw, p.pw, "conv2d width");
  BasicTensor<T> out(Shape{input.n(), p.out_channels, OH, OW});
  const int64_t N = input.n(), C = p.in_channels, M = p.out_channels;

  parallel_for(0, N * M, [&](int64_t lo, int64_t hi) {
    for (int64_t job = lo; job < hi; ++job) {
      const int64_t n = job / M, oc = job % M;
      T* dst = out.plane(n, oc);
      for (int64_t ic = 0; ic < C; ++ic) {
        const T* src = input.plane(n, ic);
        for (int ky = 0; ky < p.kh; ++ky) {
          for (int kx = 0; kx < p.kw; ++kx) {
            const T wv = weight.at(oc, ic, ky, kx);
            // Output columns whose sampled input column lies inside [0, W).
            int64_t ow_lo = 0;
            while (ow_lo < OW && ow_lo * p.sw - p.pw + kx < 0) ++ow_lo;
            int64_t ow_hi = OW;
            while (ow_hi > ow_lo && (ow_hi - 1) * p.sw - p.pw + kx >= W) --ow_hi;
            for (int64_t oh = 0; oh < OH; ++oh) {
              const int64_t ih = oh * p.sh - p.ph + ky;
              if (ih < 0 || ih >= H) continue;
              const T* row = src + ih * W;
              const int64_t shift = kx - p.pw;
              T* orow = dst + oh * OW;
              for (int64_t ow = ow_lo; ow < ow_hi; ++ow) orow[ow] += wv * row[ow * p.sw + shift];
            }
          }
        }
      }
      if (!bias.empty()) {
        for (int64_t i = 0; i < OH * OW; ++i) dst[i] += bias[static_cast<size_t>(oc)];
      }
    }
  });
  return out;
}

template <typename T>
BasicTensor<T> affine_channels(const BasicTensor<T>& input, std::span<const T> scale, std::span<const T> shift) {
  require_rank4(input.shape(), "affine_channels");
  if (static_cast<int64_t>(scale.size()) != input.c() || static_cast<int64_t>(shift.size()) != input.c()) {
    throw ShapeError("affine_channels: parameter length does not match channel count " +
                     std::to_string(input.c()));
  }
  BasicTensor<T> out(input.shape());
  const int64_t hw = input.h() * input.w();
  for (int64_t n = 0; n < input.n(); ++n) {
    for (int64_t c = 0; c < input.c(); ++c) {
      const T* src = input.plane(n, c);
      T* dst = out.plane(n, c);
      const T a = scale[static_cast<size_t>(c)], b = shift[static_cast<size_t>(c)];
      for (int64_t i = 0; i < hw; ++i) dst[i] = src[i] * a + b;
    }
  }
  return out;
}

template <typename T>
BasicTensor<T> batch_norm_infer(const BasicTensor<T>& input, const BatchNormParams<T>& bn) {
  bn.validate();
  require_rank4(input.shape(), "batch_norm_infer");
  if (bn.channels() != input.c()) {
    throw ShapeError("batch_norm_infer: " + std::to_string(bn.channels()) + " statistics for " +
                     std::to_string(input.c()) + " channels");
  }
  BasicTensor<T> out(input.shape());
  const int64_t hw = input.h() * input.w();
  for (int64_t c = 0; c < input.c(); ++c) {
    const auto i = static_cast<size_t>(c);
    const T inv_std = static_cast<T>(1.0 / std::sqrt(static_cast<double>(bn.running_var[i]) + bn.epsilon));
    const T g = bn.gamma[i], mu = bn.running_mean[i], b = bn.beta[i];
    for (int64_t n = 0; n < input.n(); ++n) {
      const T* src = input.plane(n, c);
      T* dst = out.plane(n, c);
      for (int64_t k = 0; k < hw; ++k) dst[k] = g * ((src[k] - mu) * inv_std) + b;
    }
  }
  return out;
}

template <typename T>
BasicTensor<T> relu(const BasicTensor<T>& input) {
  BasicTensor<T> out(input.shape());
  const T* src = input.ptr();
  T* dst = out.ptr();
  for (int64_t i = 0; i < input.numel(); ++i) dst[i] = src[i] > T{0} ? src[i] : T{0};
  return out;
}

template <typename T>
BasicTensor<T> avg_pool2d(const BasicTensor<T>& input, const Pool2dParams& p) {
  require_rank4(input.shape(), "avg_pool2d");
  if (p.kh < 1 || p.kw < 1 || p.sh < 1 || p.sw < 1 || p.ph < 0 || p.pw < 0) {
    throw ShapeError("avg_pool2d: invalid kernel/stride/padding");
  }
  const int64_t H = input.h(), W = input.w();
  const int64_t OH = window_out_extent(H, p.kh, p.sh, p.ph, "avg_pool2d height");
  const int64_t OW = window_out_extent(W, p.kw, p.sw, p.pw, "avg_pool2d width");
  BasicTensor<T> out(Shape{input.n(), input.c(), OH, OW});
  for (int64_t n = 0; n < input.n(); ++n) {
    for (int64_t c = 0; c < input.c(); ++c) {
      const T* src = input.plane(n, c);
      T* dst = out.plane(n, c);
      for (int64_t oh = 0; oh < OH; ++oh) {
        const int64_t h0 = std::max<int64_t>(oh * p.sh - p.ph, 0);
        const int64_t h1 = std::min<int64_t>(oh * p.sh - p.ph + p.kh, H);
        for (int64_t ow = 0; ow < OW; ++ow) {
          const int64_t w0 = std::max<int64_t>(ow * p.sw - p.pw, 0);
          const int64_t w1 = std::min<int64_t>(ow * p.sw - p.pw + p.kw, W);
          T sum{0};
          for (int64_t y = h0; y < h1; ++y) {
            for (int64_t x = w0; x < w1; ++x) sum += src[y * W + x];
          }
          const int64_t count = std::max<int64_t>(h1 - h0, 0) * std::max<int64_t>(w1 - w0, 0);
          // A window made only of padding has no valid cells.
          dst[oh * OW + ow] = count > 0 ? sum / static_cast<T>(count) : T{0};
        }
      }
    }
  }
  return out;
}

template <typename T>
BasicTensor<T> global_avg_pool(const BasicTensor<T>& input) {
  require_rank4(input.shape(), "global_avg_pool");
  BasicTensor<T> out(Shape{input.n(), input.c(), 1, 1});
  const int64_t hw = input.h() * input.w();
  for (int64_t n = 0; n < input.n(); ++n) {
    for (int64_t c = 0; c < input.c(); ++c) {
      const T* src = input.plane(n, c);
      T sum{0};
      for (int64_t i = 0; i < hw; ++i) sum += src[i];
      out.at(n, c, 0, 0) = sum / static_cast<T>(hw);
    }
  }
  return out;
}

std::vector<LerpTap> half_pixel_taps(int64_t in, int64_t out) {
  std::vector<LerpTap> taps(static_cast<size_t>(out));
  const double scale = static_cast<double>(in) / static_cast<double>(out);
  for (int64_t o = 0; o < out; ++o) {
    double src = (static_cast<double>(o) + 0.5) * scale - 0.5;
    if (src < 0.0) src = 0.0;
    int64_t i0 = static_cast<int64_t>(src);
    if (i0 > in - 1) i0 = in - 1;
    const int64_t i1 = std::min(i0 + 1, in - 1);
    taps[static_cast<size_t>(o)] = {i0, i1, src - static_cast<double>(i0)};
  }
  return taps;
}

template <typename T>
BasicTensor<T> bilinear_resize(const BasicTensor<T>& input, int64_t out_h, int64_t out_w) {
  require_rank4(input.shape(), "bilinear_resize");
  if (out_h < 1 || out_w < 1) throw ShapeError("bilinear_resize: output extents must be >= 1");
  if (out_h == input.h() && out_w == input.w()) return input;
  const auto ty = half_pixel_taps(input.h(), out_h);
  const auto tx = half_pixel_taps(input.w(), out_w);
  BasicTensor<T> out(Shape{input.n(), input.c(), out_h, out_w});
  const int64_t W = input.w();
  for (int64_t n = 0; n < input.n(); ++n) {
    for (int64_t c = 0; c < input.c(); ++c) {
      const T* src = input.plane(n, c);
      T* dst = out.plane(n, c);
      for (int64_t oy = 0; oy < out_h; ++oy) {
        const auto& y = ty[static_cast<size_t>(oy)];
        const T fy = static_cast<T>(y.frac);
        const T* r0 = src + y.i0 * W;
        const T* r1 = src + y.i1 * W;
        for (int64_t ox = 0; ox < out_w; ++ox) {
          const auto& x = tx[static_cast<size_t>(ox)];
          const T fx = static_cast<T>(x.frac);
          const T top = r0[x.i0] + (r0[x.i1] - r0[x.i0]) * fx;
          const T bot = r1[x.i0] + (r1[x.i1] - r1[x.i0]) * fx;
          dst[oy * out_w + ox] = top + (bot - top) * fy;
        }
      }
    }
  }
  return out;
}

template <typename T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("add: shape mismatch " + a.shape().str() + " vs " + b.shape().str());
  }
  BasicTensor<T> out(a.shape());
  for (int64_t i = 0; i < a.numel(); ++i) out[i] = a[i] + b[i];
  return out;
}

template <typename T>
BasicTensor<T> concat_channels(std::span<const BasicTensor<T>* const> parts) {
  if (parts.empty()) throw ShapeError("concat_channels: no inputs");
  const Shape& s0 = parts[0]->shape();
  require_rank4(s0, "concat_channels");
  int64_t channels = 0;
  for (const auto* t : parts) {
    const Shape& s = t->shape();
    require_rank4(s, "concat_channels");
    if (s.n() != s0.n() || s.h() != s0.h() || s.w() != s0.w()) {
      throw ShapeError("concat_channels: N/H/W mismatch " + s.str() + " vs " + s0.str());
    }
    channels += s.c();
  }
  BasicTensor<T> out(Shape{s0.n(), channels, s0.h(), s0.w()});
  const int64_t hw = s0.h() * s0.w();
  for (int64_t n = 0; n < s0.n(); ++n) {
    int64_t c0 = 0;
    for (const auto* t : parts) {
      std::copy_n(t->plane(n, 0), t->c() * hw, out.plane(n, c0));
      c0 += t->c();
    }
  }
  return out;
}

template <typename T>
BasicTensor<T> linear(const BasicTensor<T>& input, const BasicTensor<T>& weight, std::span<const T> bias) {
  const Shape& s = input.shape();
  const bool flat4 = s.rank() == 4 && s.h() == 1 && s.w() == 1;
  if (s.rank() != 2 && !flat4) throw ShapeError("linear: expected N x C or N x C x 1 x 1 input, got " + s.str());
  if (weight.rank() != 2 || weight.shape()[1] != s[1]) {
    throw ShapeError("linear: weight shape " + weight.shape().str() + " incompatible with input features " +
                     std::to_string(s[1]));
  }
  const int64_t N = s[0], C = s[1], K = weight.shape()[0];
  if (!bias.empty() && static_cast<int64_t>(bias.size()) != K) throw ShapeError("linear: bias length mismatch");
  BasicTensor<T> out(flat4 ? Shape{N, K, 1, 1} : Shape{N, K});
  for (int64_t n = 0; n < N; ++n) {
    for (int64_t k = 0; k < K; ++k) {
      T acc{0};
      for (int64_t c = 0; c < C; ++c) acc += input[n * C + c] * weight[k * C + c];
      out[n * K + k] = acc + (bias.empty() ? T{0} : bias[static_cast<size_t>(k)]);
    }
  }
  return out;
}

template <typename T>
BasicTensor<T> softmax_channels(const BasicTensor<T>& input) {
  require_rank4(input.shape(), "softmax_channels");
  BasicTensor<T> out(input.shape());
  const int64_t C = input.c(), hw = input.h() * input.w();
  for (int64_t n = 0; n < input.n(); ++n) {
    const T* src = input.plane(n, 0);
    T* dst = out.plane(n, 0);
    for (int64_t p = 0; p < hw; ++p) {
      T mx = -std::numeric_limits<T>::infinity();
      for (int64_t c = 0; c < C; ++c) mx = std::max(mx, src[c * hw + p]);
      T sum{0};
      for (int64_t c = 0; c < C; ++c) {
        const T e = std::exp(src[c * hw + p] - mx);
        dst[c * hw + p] = e;
        sum += e;
      }
      for (int64_t c = 0; c < C; ++c) dst[c * hw + p] /= sum;
    }
  }
  return out;
}

template <typename T>
IndexTensor argmax_channels(const BasicTensor<T>& input) {
  require_rank4(input.shape(), "argmax_channels");
  IndexTensor out(Shape{input.n(), input.h(), input.w()});
  const int64_t C = input.c(), hw = input.h() * input.w();
  for (int64_t n = 0; n < input.n(); ++n) {
    const T* src = input.plane(n, 0);
    for (int64_t p = 0; p < hw; ++p) {
      int32_t best = 0;
      T best_v = src[p];
      for (int64_t c = 1; c < C; ++c) {
        if (src[c * hw + p] > best_v) {
          best_v = src[c * hw + p];
          best = static_cast<int32_t>(c);
        }
      }
      out[n * hw + p] = best;
    }
  }
  return out;
}

template <typename T>
BasicTensor<T> flip_horizontal(const BasicTensor<T>& input) {
  require_rank4(input.shape(), "flip_horizontal");
  BasicTensor<T> out(input.shape());
  const int64_t W = input.w();
  const int64_t rows = input.n() * input.c() * input.h();
  for (int64_t r = 0; r < rows; ++r) {
    const T* src = input.ptr() + r * W;
    T* dst = out.ptr() + r * W;
    for (int64_t x = 0; x < W; ++x) dst[x] = src[W - 1 - x];
  }
  return out;
}

#define DDRNET_INSTANTIATE_OPS(T)                                                                                \
  template BasicTensor<T> conv2d(const BasicTensor<T>&, const BasicTensor<T>&, std::span<const T>,             \
                                 const Conv2dParams&);                                                        \
  template BasicTensor<T> batch_norm_infer(const BasicTensor<T>&, const BatchNormParams<T>&);                  \
  template BasicTensor<T> affine_channels(const BasicTensor<T>&, std::span<const T>, std::span<const T>);      \
  template BasicTensor<T> relu(const BasicTensor<T>&);                                                         \
  template BasicTensor<T> avg_pool2d(const BasicTensor<T>&, const Pool2dParams&);                              \
  template BasicTensor<T> global_avg_pool(const BasicTensor<T>&);                                              \
  template BasicTensor<T> bilinear_resize(const BasicTensor<T>&, int64_t, int64_t);                            \
  template BasicTensor<T> add(const BasicTensor<T>&, const BasicTensor<T>&);                                   \
  template BasicTensor<T> concat_channels(std::span<const BasicTensor<T>* const>);                             \
  template BasicTensor<T> linear(const BasicTensor<T>&, const BasicTensor<T>&, std::span<const T>);            \
  template BasicTensor<T> softmax_channels(const BasicTensor<T>&);                                             \
  template IndexTensor argmax_channels(const BasicTensor<T>&);                                                 \
  template BasicTensor<T> flip_horizontal(const BasicTensor<T>&);

DDRNET_INSTANTIATE_OPS(float)
DDRNET_INSTANTIATE_OPS(double)

#undef DDRNET_INSTANTIATE_OPS

}  // namespace ops
}  // namespace ddrnet
