#pragma once

#include <utility>
#include <vector>

#include "recnet/tensor.hpp"

namespace recnet {

// Elementwise arithmetic on identically-shaped tensors.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
// Multiply by a compile-time-constant scalar (not differentiated in s).
Tensor scale(const Tensor& a, double s);
Tensor abs(const Tensor& a);

// Full reductions to a single-element tensor.
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);

// Same data, new dimensions (sizes must multiply out identically).
Tensor reshape(const Tensor& a, const std::vector<int>& new_shape);

Tensor sigmoid(const Tensor& a);

// out = x for x >= 0, slope * x below zero. The slope is a learned
// single-element tensor shared across the whole layer.
Tensor prelu(const Tensor& a, const Tensor& slope);

// x: (B, In), weight: (Out, In), bias: (Out) -> (B, Out).
Tensor dense(const Tensor& x, const Tensor& weight, const Tensor& bias);

// Valid (no-padding) cross-correlation.
// x: (B, Cin, H, W), weight: (Cout, Cin, kh, kw), bias: (Cout)
// -> (B, Cout, (H-kh)/sh+1, (W-kw)/sw+1).
Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias,
              int stride_h, int stride_w);

// Fractionally-strided convolution with an explicit output size.
// x: (B, Cin, H, W), weight: (Cin, Cout, kh, kw), bias: (Cout).
// The natural result covers (H-1)*sh+kh by (W-1)*sw+kw; rows/columns
// beyond that, up to (out_h, out_w), are appended as exact zeros at the
// bottom/right (bias included only over the natural region).
Tensor conv_transpose2d(const Tensor& x, const Tensor& weight,
                        const Tensor& bias, int stride_h, int stride_w,
                        int out_h, int out_w);

// Per-channel running statistics owned by a normalization layer.
struct BatchNormState {
  std::vector<float> running_mean;
  std::vector<float> running_var;

  BatchNormState() = default;
  explicit BatchNormState(int channels)
      : running_mean(channels, 0.0f), running_var(channels, 1.0f) {}
  int channels() const { return static_cast<int>(running_mean.size()); }
};

// Batch normalization over (B, H, W) per channel.
// Training mode normalizes with the batch statistics and folds them into
// the running estimates (unbiased variance, momentum blend); eval mode
// normalizes with the running estimates. Both modes differentiate through
// gamma/beta and the input.
Tensor batchnorm2d(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                   BatchNormState& state, bool training,
                   double momentum = 0.1, double eps = 1e-5);

// Forward differences along width (first) and height (second); the last
// column / row of the respective output is zero. x: (B, C, H, W) with
// H >= 2 and W >= 2.
std::pair<Tensor, Tensor> image_gradients(const Tensor& x);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator*(double s, const Tensor& a) { return scale(a, s); }
inline Tensor operator*(const Tensor& a, double s) { return scale(a, s); }

}  // namespace recnet
