#pragma once

#include <cstdint>
#include <vector>

#include "gcnn/conv.hpp"
#include "gcnn/mask.hpp"
#include "gcnn/ops.hpp"

namespace gcnn {

namespace detail {
inline void check_view(const MaskView& view, std::size_t h, std::size_t w, const char* what) {
  if (view.h != h || view.w != w)
    throw DimensionError(std::string(what) + ": mask view " + std::to_string(view.h) + "x" +
                         std::to_string(view.w) + " does not match spatial shape " +
                         std::to_string(h) + "x" + std::to_string(w));
}
}  // namespace detail

/// Patch rows for the true output locations only, plus the locations they
/// belong to (row-major order).
template <typename T>
struct GuidedPatches {
  std::vector<Matrix<T>> patches;  // one per batch item
  std::vector<std::uint32_t> locations;
};

template <typename T>
GuidedPatches<T> guided_im2col(const Tensor<T>& input, const ConvLayer<T>& layer, const MaskView& view) {
  const Shape os = layer.output_shape(input.shape());
  detail::check_view(view, os.h, os.w, "guided_im2col");
  GuidedPatches<T> out;
  out.locations = view.locations();
  for (std::size_t n = 0; n < input.n(); ++n) {
    Matrix<T> m(out.locations.size(), layer.patch_size());
    for (std::size_t r = 0; r < out.locations.size(); ++r) {
      const std::uint32_t loc = out.locations[r];
      detail::fill_patch_row(input, n, layer, loc / os.w, loc % os.w, m.row(r));
    }
    out.patches.push_back(std::move(m));
  }
  return out;
}

/// Convolution evaluated only where the view is true. Background outputs are
/// exactly 0 (no bias). The input is read as-is, including any zero-filled
/// background left by a previous guided layer.
template <typename T>
Tensor<T> guided_conv2d(const Tensor<T>& input, const ConvLayer<T>& layer, const MaskView& view) {
  const Shape os = layer.output_shape(input.shape());
  detail::check_view(view, os.h, os.w, "guided_conv2d");
  Tensor<T> out(os);
  const auto locs = view.locations();
  detail::conv_rows(input, layer, locs, out);
  return out;
}

/// Backward of guided_conv2d: background output cells contribute nothing;
/// bias gradient sums grad_out over true cells only.
template <typename T>
Tensor<T> guided_conv2d_backward(const Tensor<T>& grad_out, const Tensor<T>& input,
                                 const ConvLayer<T>& layer, const MaskView& view,
                                 ConvGrads<T>& grads, ConvBackwardOptions opts = {}) {
  const Shape os = layer.output_shape(input.shape());
  if (grad_out.shape() != os)
    throw DimensionError("grad_out shape " + grad_out.shape().str() + " != conv output " + os.str());
  detail::check_view(view, os.h, os.w, "guided_conv2d_backward");
  Tensor<T> grad_in(opts.input_grad ? input.shape() : Shape{});
  const auto locs = view.locations();
  detail::conv_rows_backward(input, layer, locs, grad_out, opts.input_grad ? &grad_in : nullptr, grads);
  return grad_in;
}

enum class PointwiseOp { kRelu, kSigmoid, kScale };

/// Applies `op` at true cells and zeroes the background. kScale leaves true
/// cells unchanged and multiplies the background by `factor`.
template <typename T>
Tensor<T> guided_pointwise(PointwiseOp op, const Tensor<T>& input, const MaskView& view, T factor = T(0)) {
  detail::check_view(view, input.h(), input.w(), "guided_pointwise");
  Tensor<T> out(input.shape());
  const std::size_t P = input.shape().plane();
  for (std::size_t n = 0; n < input.n(); ++n)
    for (std::size_t c = 0; c < input.c(); ++c) {
      const T* src = input.plane(n, c);
      T* dst = out.plane(n, c);
      for (std::size_t i = 0; i < P; ++i) {
        const T v = src[i];
        if (view.cells[i]) {
          switch (op) {
            case PointwiseOp::kRelu: dst[i] = v > T(0) ? v : T(0); break;
            case PointwiseOp::kSigmoid: dst[i] = sigmoid(v); break;
            case PointwiseOp::kScale: dst[i] = v; break;
          }
        } else {
          dst[i] = op == PointwiseOp::kScale ? v * factor : T(0);
        }
      }
    }
  return out;
}

/// Multiply-accumulate count of a convolution evaluated at `locations`
/// output cells per batch item.
inline std::uint64_t flop_count(std::size_t out_channels, std::size_t in_channels, std::size_t kh,
                                std::size_t kw, std::uint64_t locations) {
  return locations * out_channels * in_channels * kh * kw;
}

template <typename T>
std::uint64_t flop_count(const ConvLayer<T>& layer, const Shape& output) {
  return output.n * flop_count(layer.out_channels, layer.in_channels, layer.kernel_h, layer.kernel_w,
                               output.h * output.w);
}

template <typename T>
std::uint64_t flop_count(const ConvLayer<T>& layer, const Shape& output, const MaskView& view) {
  detail::check_view(view, output.h, output.w, "flop_count");
  return output.n * flop_count(layer.out_channels, layer.in_channels, layer.kernel_h, layer.kernel_w,
                               view.count());
}

}  // namespace gcnn
