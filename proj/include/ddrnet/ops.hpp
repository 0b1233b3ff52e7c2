#pragma once

#include <cstdint>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include "ddrnet/tensor.hpp"

namespace ddrnet {

struct Conv2dParams {
  int64_t out_channels = 0;
  int64_t in_channels = 0;
  int kh = 1, kw = 1;
  int sh = 1, sw = 1;
  int ph = 0, pw = 0;
  bool has_bias = false;

  /// Square kernel with "same"-style padding (k-1)/2.
  static Conv2dParams square(int64_t in, int64_t out, int k, int stride = 1, bool bias = false) {
    return {out, in, k, k, stride, stride, (k - 1) / 2, (k - 1) / 2, bias};
  }

  Shape weight_shape() const { return Shape{out_channels, in_channels, kh, kw}; }
  void validate() const;
};

template <typename T>
struct BatchNormParams {
  std::vector<T> gamma, beta, running_mean, running_var;
  double epsilon = 1e-5;

  int64_t channels() const { return static_cast<int64_t>(gamma.size()); }
  void validate() const;

  static BatchNormParams identity(int64_t channels, double eps = 0.0) {
    const auto c = static_cast<size_t>(channels);
    return {std::vector<T>(c, T{1}), std::vector<T>(c, T{0}), std::vector<T>(c, T{0}), std::vector<T>(c, T{1}),
            eps};
  }
};

struct Pool2dParams {
  int kh = 1, kw = 1;
  int sh = 1, sw = 1;
  int ph = 0, pw = 0;

  static Pool2dParams square(int k, int stride, int pad) { return {k, k, stride, stride, pad, pad}; }
};

/// floor((x + 2p - k) / s) + 1; throws when the window does not fit.
int64_t window_out_extent(int64_t x, int k, int s, int p, const char* what = "window");

namespace ops {

/// Direct cross-correlation. Every output element accumulates over
/// (in_channel, ky, kx) in that order starting from zero; the bias is added last.
template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& input, const BasicTensor<T>& weight, std::span<const T> bias,
                      const Conv2dParams& params);

template <typename T>
BasicTensor<T> batch_norm_infer(const BasicTensor<T>& input, const BatchNormParams<T>& bn);

/// out[c] = x[c] * scale[c] + shift[c].
template <typename T>
BasicTensor<T> affine_channels(const BasicTensor<T>& input, std::span<const T> scale, std::span<const T> shift);

template <typename T>
BasicTensor<T> relu(const BasicTensor<T>& input);

/// Window mean; padded cells are excluded from the divisor.
template <typename T>
BasicTensor<T> avg_pool2d(const BasicTensor<T>& input, const Pool2dParams& params);

template <typename T>
BasicTensor<T> global_avg_pool(const BasicTensor<T>& input);

/// Source taps of one output coordinate: out = src[i0] * (1 - frac) + src[i1] * frac.
struct LerpTap {
  int64_t i0 = 0, i1 = 0;
  double frac = 0.0;
};

/// Half-pixel-centre taps for resizing an axis of `in` samples to `out`, clamped at the edges.
std::vector<LerpTap> half_pixel_taps(int64_t in, int64_t out);

/// Half-pixel-centre bilinear sampling with edge clamping (align_corners = false).
template <typename T>
BasicTensor<T> bilinear_resize(const BasicTensor<T>& input, int64_t out_h, int64_t out_w);

template <typename T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b);

template <typename T>
BasicTensor<T> concat_channels(std::span<const BasicTensor<T>* const> parts);

template <typename T>
BasicTensor<T> concat_channels(std::initializer_list<const BasicTensor<T>*> parts) {
  return concat_channels<T>(std::span<const BasicTensor<T>* const>(parts.begin(), parts.size()));
}

/// y = x W^T + b for x of shape N x C (or N x C x 1 x 1), W of shape out x C.
/// Output keeps the input's rank.
template <typename T>
BasicTensor<T> linear(const BasicTensor<T>& input, const BasicTensor<T>& weight, std::span<const T> bias);

template <typename T>
BasicTensor<T> softmax_channels(const BasicTensor<T>& input);

/// Per-pixel argmax over channels, ties to the lowest index. Output N x H x W.
template <typename T>
IndexTensor argmax_channels(const BasicTensor<T>& input);

/// Mirror along the W axis.
template <typename T>
BasicTensor<T> flip_horizontal(const BasicTensor<T>& input);

}  // namespace ops
}  // namespace ddrnet
