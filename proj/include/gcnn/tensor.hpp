#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "gcnn/error.hpp"

namespace gcnn {

struct Shape {
  std::size_t n = 0, c = 0, h = 0, w = 0;

  std::size_t numel() const { return n * c * h * w; }
  std::size_t plane() const { return h * w; }
  bool operator==(const Shape&) const = default;

  std::string str() const {
    return "(" + std::to_string(n) + "," + std::to_string(c) + "," + std::to_string(h) +
           "," + std::to_string(w) + ")";
  }
};

/// Dense NCHW tensor. Element (n,c,y,x) lives at ((n*C+c)*H+y)*W+x.
/// The scalar type picks the precision: float for training and benchmarks,
/// double for gradient checking.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T(0)) : shape_(shape), data_(shape.numel(), fill) {}
  Tensor(std::size_t n, std::size_t c, std::size_t h, std::size_t w, T fill = T(0))
      : Tensor(Shape{n, c, h, w}, fill) {}

  const Shape& shape() const { return shape_; }
  std::size_t n() const { return shape_.n; }
  std::size_t c() const { return shape_.c; }
  std::size_t h() const { return shape_.h; }
  std::size_t w() const { return shape_.w; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::size_t offset(std::size_t n, std::size_t c, std::size_t y, std::size_t x) const {
    return ((n * shape_.c + c) * shape_.h + y) * shape_.w + x;
  }
  T& at(std::size_t n, std::size_t c, std::size_t y, std::size_t x) {
    return data_[offset(n, c, y, x)];
  }
  const T& at(std::size_t n, std::size_t c, std::size_t y, std::size_t x) const {
    return data_[offset(n, c, y, x)];
  }
  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::span<T> values() { return data_; }
  std::span<const T> values() const { return data_; }

  /// Pointer to the (n, c) spatial plane.
  T* plane(std::size_t n, std::size_t c) { return data_.data() + (n * shape_.c + c) * shape_.plane(); }
  const T* plane(std::size_t n, std::size_t c) const {
    return data_.data() + (n * shape_.c + c) * shape_.plane();
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out(shape_);
    std::transform(data_.begin(), data_.end(), out.data(), [](T v) { return static_cast<U>(v); });
    return out;
  }

  bool operator==(const Tensor&) const = default;

 private:
  Shape shape_;
  std::vector<T> data_;
};

inline std::size_t conv_output_size(std::size_t in, std::size_t kernel, std::size_t stride,
                                    std::size_t padding) {
  if (stride == 0) throw DimensionError("stride must be positive");
  const std::size_t padded = in + 2 * padding;
  if (padded < kernel)
    throw DimensionError("kernel " + std::to_string(kernel) + " exceeds padded input " +
                         std::to_string(padded));
  return (padded - kernel) / stride + 1;
}

/// Convolution parameters shared by the dense and guided paths.
/// weights has shape (out, in, kh, kw); bias has out_channels entries.
template <typename T>
struct ConvLayer {
  std::size_t out_channels = 0;
  std::size_t in_channels = 0;
  std::size_t kernel_h = 0;
  std::size_t kernel_w = 0;
  std::size_t stride = 1;
  std::size_t padding = 0;
  Tensor<T> weights;
  std::vector<T> bias;

  static ConvLayer make(std::size_t out, std::size_t in, std::size_t kh, std::size_t kw,
                        std::size_t stride = 1, std::size_t padding = 0) {
    if (out == 0 || in == 0 || kh == 0 || kw == 0 || stride == 0)
      throw DimensionError("conv layer dimensions and stride must be positive");
    ConvLayer l;
    l.out_channels = out;
    l.in_channels = in;
    l.kernel_h = kh;
    l.kernel_w = kw;
    l.stride = stride;
    l.padding = padding;
    l.weights = Tensor<T>(out, in, kh, kw);
    l.bias.assign(out, T(0));
    return l;
  }

  std::size_t patch_size() const { return in_channels * kernel_h * kernel_w; }

  Shape output_shape(const Shape& input) const {
    if (input.c != in_channels)
      throw DimensionError("input shape " + input.str() + " does not match layer in_channels " +
                           std::to_string(in_channels) + " (weights " + weights.shape().str() + ")");
    return Shape{input.n, out_channels, conv_output_size(input.h, kernel_h, stride, padding),
                 conv_output_size(input.w, kernel_w, stride, padding)};
  }

  template <typename U>
  ConvLayer<U> cast() const {
    ConvLayer<U> l;
    l.out_channels = out_channels;
    l.in_channels = in_channels;
    l.kernel_h = kernel_h;
    l.kernel_w = kernel_w;
    l.stride = stride;
    l.padding = padding;
    l.weights = weights.template cast<U>();
    l.bias.assign(bias.begin(), bias.end());
    return l;
  }
};

/// Row-major matrix used for patch matrices and GEMM operands.
template <typename T>
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<T> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, T fill = T(0)) : rows(r), cols(c), data(r * c, fill) {}

  T& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  const T& operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
  T* row(std::size_t r) { return data.data() + r * cols; }
  const T* row(std::size_t r) const { return data.data() + r * cols; }
  bool operator==(const Matrix&) const = default;
};

}  // namespace gcnn
