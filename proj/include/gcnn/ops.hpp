#pragma once

#include <cmath>
#include <cstddef>

#include "gcnn/error.hpp"
#include "gcnn/tensor.hpp"

namespace gcnn {

// Ceil-mode pooling size: the last window may hang over the edge but must
// start inside the input.
inline std::size_t pool_output_size(std::size_t in, std::size_t window, std::size_t stride) {
  if (in == 0 || window == 0 || stride == 0)
    throw DimensionError("average pooling needs positive input, window and stride");
  std::size_t out = in <= window ? 1 : (in - window + stride - 1) / stride + 1;
  while (out > 1 && (out - 1) * stride >= in) --out;
  return out;
}

/// Average pooling; boundary windows average only their in-bounds elements.
template <typename T>
Tensor<T> avg_pool2d(const Tensor<T>& input, std::size_t window, std::size_t stride) {
  const std::size_t oh = pool_output_size(input.h(), window, stride);
  const std::size_t ow = pool_output_size(input.w(), window, stride);
  Tensor<T> out(input.n(), input.c(), oh, ow);
  for (std::size_t n = 0; n < input.n(); ++n)
    for (std::size_t c = 0; c < input.c(); ++c) {
      const T* src = input.plane(n, c);
      T* dst = out.plane(n, c);
      for (std::size_t y = 0; y < oh; ++y) {
        const std::size_t y1 = std::min(y * stride + window, input.h());
        for (std::size_t x = 0; x < ow; ++x) {
          const std::size_t x1 = std::min(x * stride + window, input.w());
          T sum = 0;
          for (std::size_t iy = y * stride; iy < y1; ++iy)
            for (std::size_t ix = x * stride; ix < x1; ++ix) sum += src[iy * input.w() + ix];
          dst[y * ow + x] = sum / static_cast<T>((y1 - y * stride) * (x1 - x * stride));
        }
      }
    }
  return out;
}

template <typename T>
Tensor<T> avg_pool2d_backward(const Tensor<T>& grad_out, const Shape& input_shape,
                              std::size_t window, std::size_t stride) {
  Tensor<T> grad_in(input_shape);
  const std::size_t oh = grad_out.h(), ow = grad_out.w();
  for (std::size_t n = 0; n < input_shape.n; ++n)
    for (std::size_t c = 0; c < input_shape.c; ++c) {
      const T* g = grad_out.plane(n, c);
      T* dst = grad_in.plane(n, c);
      for (std::size_t y = 0; y < oh; ++y) {
        const std::size_t y1 = std::min(y * stride + window, input_shape.h);
        for (std::size_t x = 0; x < ow; ++x) {
          const std::size_t x1 = std::min(x * stride + window, input_shape.w);
          const T share =
              g[y * ow + x] / static_cast<T>((y1 - y * stride) * (x1 - x * stride));
          for (std::size_t iy = y * stride; iy < y1; ++iy)
            for (std::size_t ix = x * stride; ix < x1; ++ix) dst[iy * input_shape.w + ix] += share;
        }
      }
    }
  return grad_in;
}

/// Nearest-neighbour upsampling by an integer factor, optionally cropped to
/// (out_h, out_w) (pass 0 to keep the full upsampled size).
template <typename T>
Tensor<T> nearest_upsample(const Tensor<T>& input, std::size_t factor, std::size_t out_h = 0,
                           std::size_t out_w = 0) {
  if (factor == 0) throw DimensionError("upsample factor must be >= 1");
  const std::size_t fh = input.h() * factor, fw = input.w() * factor;
  const std::size_t oh = out_h ? out_h : fh, ow = out_w ? out_w : fw;
  if (oh > fh || ow > fw)
    throw DimensionError("crop " + std::to_string(oh) + "x" + std::to_string(ow) +
                         " exceeds upsampled size " + std::to_string(fh) + "x" + std::to_string(fw));
  Tensor<T> out(input.n(), input.c(), oh, ow);
  for (std::size_t n = 0; n < input.n(); ++n)
    for (std::size_t c = 0; c < input.c(); ++c) {
      const T* src = input.plane(n, c);
      T* dst = out.plane(n, c);
      for (std::size_t y = 0; y < oh; ++y)
        for (std::size_t x = 0; x < ow; ++x) dst[y * ow + x] = src[(y / factor) * input.w() + x / factor];
    }
  return out;
}

template <typename T>
Tensor<T> nearest_upsample_backward(const Tensor<T>& grad_out, const Shape& input_shape,
                                    std::size_t factor) {
  Tensor<T> grad_in(input_shape);
  for (std::size_t n = 0; n < input_shape.n; ++n)
    for (std::size_t c = 0; c < input_shape.c; ++c) {
      const T* g = grad_out.plane(n, c);
      T* dst = grad_in.plane(n, c);
      for (std::size_t y = 0; y < grad_out.h(); ++y)
        for (std::size_t x = 0; x < grad_out.w(); ++x)
          dst[(y / factor) * input_shape.w + x / factor] += g[y * grad_out.w() + x];
    }
  return grad_in;
}

inline constexpr double kDefaultL2Epsilon = 1e-12;

/// Divides each channel vector by sqrt(|v|^2 + epsilon).
template <typename T>
Tensor<T> l2_normalize_channels(const Tensor<T>& input, double epsilon = kDefaultL2Epsilon) {
  if (!(epsilon > 0)) throw ValueError("l2 normalization epsilon must be positive");
  Tensor<T> out(input.shape());
  const std::size_t P = input.shape().plane();
  for (std::size_t n = 0; n < input.n(); ++n)
    for (std::size_t i = 0; i < P; ++i) {
      T ss = 0;
      for (std::size_t c = 0; c < input.c(); ++c) ss += input.plane(n, c)[i] * input.plane(n, c)[i];
      const T inv = T(1) / std::sqrt(ss + static_cast<T>(epsilon));
      for (std::size_t c = 0; c < input.c(); ++c) out.plane(n, c)[i] = input.plane(n, c)[i] * inv;
    }
  return out;
}

/// Backward of l2_normalize_channels given its input and output.
template <typename T>
Tensor<T> l2_normalize_channels_backward(const Tensor<T>& grad_out, const Tensor<T>& input,
                                         const Tensor<T>& output, double epsilon = kDefaultL2Epsilon) {
  Tensor<T> grad_in(input.shape());
  const std::size_t P = input.shape().plane();
  for (std::size_t n = 0; n < input.n(); ++n)
    for (std::size_t i = 0; i < P; ++i) {
      T ss = 0, gy = 0;
      for (std::size_t c = 0; c < input.c(); ++c) {
        ss += input.plane(n, c)[i] * input.plane(n, c)[i];
        gy += grad_out.plane(n, c)[i] * output.plane(n, c)[i];
      }
      const T inv = T(1) / std::sqrt(ss + static_cast<T>(epsilon));
      for (std::size_t c = 0; c < input.c(); ++c)
        grad_in.plane(n, c)[i] = (grad_out.plane(n, c)[i] - output.plane(n, c)[i] * gy) * inv;
    }
  return grad_in;
}

template <typename T>
T sigmoid(T x) {
  if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
  const T e = std::exp(x);
  return e / (T(1) + e);
}

template <typename T>
Tensor<T> relu(const Tensor<T>& input) {
  Tensor<T> out(input.shape());
  for (std::size_t i = 0; i < input.size(); ++i) out[i] = input[i] > T(0) ? input[i] : T(0);
  return out;
}

/// Gradient of relu given its output.
template <typename T>
Tensor<T> relu_backward(const Tensor<T>& grad_out, const Tensor<T>& output) {
  Tensor<T> g(output.shape());
  for (std::size_t i = 0; i < output.size(); ++i) g[i] = output[i] > T(0) ? grad_out[i] : T(0);
  return g;
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& input) {
  Tensor<T> out(input.shape());
  for (std::size_t i = 0; i < input.size(); ++i) out[i] = sigmoid(input[i]);
  return out;
}

template <typename T>
Tensor<T> elementwise_add(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape())
    throw DimensionError("elementwise_add shape mismatch: " + a.shape().str() + " vs " + b.shape().str());
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] + b[i];
  return out;
}

}  // namespace gcnn
