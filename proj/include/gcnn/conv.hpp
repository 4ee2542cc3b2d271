#pragma once

#include <cstdint>
#include <cstring>
#include <numeric>
#include <span>
#include <vector>

#include "gcnn/gemm.hpp"
#include "gcnn/parallel.hpp"
#include "gcnn/tensor.hpp"

namespace gcnn {

/// Gradients of a convolution with respect to its parameters.
template <typename T>
struct ConvGrads {
  Tensor<T> weights;
  std::vector<T> bias;

  static ConvGrads zeros_like(const ConvLayer<T>& l) {
    return ConvGrads{Tensor<T>(l.weights.shape()), std::vector<T>(l.out_channels, T(0))};
  }
  void add(const ConvGrads& o) {
    for (std::size_t i = 0; i < weights.size(); ++i) weights[i] += o.weights[i];
    for (std::size_t i = 0; i < bias.size(); ++i) bias[i] += o.bias[i];
  }
};

namespace detail {

inline constexpr std::size_t kRowBlock = 64;

// One im2col row: the receptive field of output (oy, ox) laid out as
// (channel, ky, kx), zero where the window hangs over the padding.
template <typename T>
void fill_patch_row(const Tensor<T>& in, std::size_t n, const ConvLayer<T>& l, std::size_t oy,
                    std::size_t ox, T* row) {
  const auto H = static_cast<std::ptrdiff_t>(in.h());
  const auto W = static_cast<std::ptrdiff_t>(in.w());
  const auto kh = static_cast<std::ptrdiff_t>(l.kernel_h);
  const auto kw = static_cast<std::ptrdiff_t>(l.kernel_w);
  const auto y0 = static_cast<std::ptrdiff_t>(oy * l.stride) - static_cast<std::ptrdiff_t>(l.padding);
  const auto x0 = static_cast<std::ptrdiff_t>(ox * l.stride) - static_cast<std::ptrdiff_t>(l.padding);
  const bool x_inside = x0 >= 0 && x0 + kw <= W;
  for (std::size_t c = 0; c < l.in_channels; ++c) {
    const T* plane = in.plane(n, c);
    for (std::ptrdiff_t ky = 0; ky < kh; ++ky, row += kw) {
      const std::ptrdiff_t iy = y0 + ky;
      if (iy < 0 || iy >= H) {
        std::fill(row, row + kw, T(0));
        continue;
      }
      const T* src = plane + iy * W;
      if (x_inside) {
        std::memcpy(row, src + x0, static_cast<std::size_t>(kw) * sizeof(T));
      } else {
        for (std::ptrdiff_t kx = 0; kx < kw; ++kx) {
          const std::ptrdiff_t ix = x0 + kx;
          row[kx] = (ix >= 0 && ix < W) ? src[ix] : T(0);
        }
      }
    }
  }
}

// Transposed weights: K x O, so that patch rows times this give output rows.
template <typename T>
Matrix<T> filter_matrix(const ConvLayer<T>& l) {
  const std::size_t K = l.patch_size();
  Matrix<T> f(K, l.out_channels);
  for (std::size_t o = 0; o < l.out_channels; ++o)
    for (std::size_t k = 0; k < K; ++k) f(k, o) = l.weights[o * K + k];
  return f;
}

inline std::vector<std::uint32_t> all_locations(std::size_t count) {
  std::vector<std::uint32_t> v(count);
  std::iota(v.begin(), v.end(), 0u);
  return v;
}

// Computes output channels at the listed flat output locations and writes
// them into `out`, which must already have the conv output shape. Other
// locations are left untouched.
template <typename T>
void conv_rows(const Tensor<T>& in, const ConvLayer<T>& l, std::span<const std::uint32_t> locs,
               Tensor<T>& out) {
  const std::size_t K = l.patch_size();
  const std::size_t O = l.out_channels;
  const std::size_t Wo = out.w();
  if (locs.empty() || in.n() == 0) return;
  const Matrix<T> filt = filter_matrix(l);
  const std::size_t blocks_per_item = (locs.size() + kRowBlock - 1) / kRowBlock;
  const auto total = static_cast<std::ptrdiff_t>(blocks_per_item * in.n());
#pragma omp parallel num_threads(num_threads())
  {
    std::vector<T> patch(kRowBlock * K);
    std::vector<T> result(kRowBlock * O);
#pragma omp for schedule(static)
    for (std::ptrdiff_t t = 0; t < total; ++t) {
      const std::size_t n = static_cast<std::size_t>(t) / blocks_per_item;
      const std::size_t r0 = (static_cast<std::size_t>(t) % blocks_per_item) * kRowBlock;
      const std::size_t rows = std::min(kRowBlock, locs.size() - r0);
      for (std::size_t r = 0; r < rows; ++r) {
        const std::uint32_t loc = locs[r0 + r];
        fill_patch_row(in, n, l, loc / Wo, loc % Wo, patch.data() + r * K);
      }
      gemm_rows(rows, K, O, patch.data(), K, filt.data.data(), O, result.data(), O);
      for (std::size_t o = 0; o < O; ++o) {
        T* dst = out.plane(n, o);
        const T b = l.bias[o];
        for (std::size_t r = 0; r < rows; ++r) dst[locs[r0 + r]] = result[r * O + o] + b;
      }
    }
  }
}

// Backward of conv_rows: only the listed output locations contribute.
// Accumulates into grad_in (input shape) and grads. Serial, so the
// accumulation order is fixed.
template <typename T>
void conv_rows_backward(const Tensor<T>& in, const ConvLayer<T>& l,
                        std::span<const std::uint32_t> locs, const Tensor<T>& grad_out,
                        Tensor<T>* grad_in, ConvGrads<T>& grads) {
  const std::size_t K = l.patch_size();
  const std::size_t O = l.out_channels;
  const std::size_t Wo = grad_out.w();
  const auto H = static_cast<std::ptrdiff_t>(in.h());
  const auto W = static_cast<std::ptrdiff_t>(in.w());
  const auto kh = static_cast<std::ptrdiff_t>(l.kernel_h);
  const auto kw = static_cast<std::ptrdiff_t>(l.kernel_w);
  std::vector<T> patch(kRowBlock * K), g(kRowBlock * O), gpatch(kRowBlock * K);
  T* gw = grads.weights.data();
  for (std::size_t n = 0; n < in.n(); ++n) {
    for (std::size_t r0 = 0; r0 < locs.size(); r0 += kRowBlock) {
      const std::size_t rows = std::min(kRowBlock, locs.size() - r0);
      for (std::size_t r = 0; r < rows; ++r) {
        const std::uint32_t loc = locs[r0 + r];
        fill_patch_row(in, n, l, loc / Wo, loc % Wo, patch.data() + r * K);
        for (std::size_t o = 0; o < O; ++o) g[r * O + o] = grad_out.plane(n, o)[loc];
      }
      for (std::size_t r = 0; r < rows; ++r) {
        const T* gr = g.data() + r * O;
        const T* pr = patch.data() + r * K;
        for (std::size_t o = 0; o < O; ++o) {
          const T go = gr[o];
          grads.bias[o] += go;
          if (go == T(0)) continue;
          T* __restrict wrow = gw + o * K;
          for (std::size_t k = 0; k < K; ++k) wrow[k] += go * pr[k];
        }
      }
      if (!grad_in) continue;
      gemm_rows(rows, O, K, g.data(), O, l.weights.data(), K, gpatch.data(), K);
      for (std::size_t r = 0; r < rows; ++r) {
        const std::uint32_t loc = locs[r0 + r];
        const auto y0 = static_cast<std::ptrdiff_t>((loc / Wo) * l.stride) -
                        static_cast<std::ptrdiff_t>(l.padding);
        const auto x0 = static_cast<std::ptrdiff_t>((loc % Wo) * l.stride) -
                        static_cast<std::ptrdiff_t>(l.padding);
        const T* src = gpatch.data() + r * K;
        for (std::size_t c = 0; c < l.in_channels; ++c) {
          T* plane = grad_in->plane(n, c);
          for (std::ptrdiff_t ky = 0; ky < kh; ++ky) {
            const std::ptrdiff_t iy = y0 + ky;
            if (iy < 0 || iy >= H) {
              src += kw;
              continue;
            }
            for (std::ptrdiff_t kx = 0; kx < kw; ++kx, ++src) {
              const std::ptrdiff_t ix = x0 + kx;
              if (ix >= 0 && ix < W) plane[iy * W + ix] += *src;
            }
          }
        }
      }
    }
  }
}

}  // namespace detail

/// Dense im2col: one (H_out*W_out) x (in*kh*kw) patch matrix per batch item.
template <typename T>
std::vector<Matrix<T>> im2col(const Tensor<T>& input, const ConvLayer<T>& layer) {
  const Shape os = layer.output_shape(input.shape());
  std::vector<Matrix<T>> out;
  out.reserve(input.n());
  for (std::size_t n = 0; n < input.n(); ++n) {
    Matrix<T> m(os.h * os.w, layer.patch_size());
    for (std::size_t y = 0; y < os.h; ++y)
      for (std::size_t x = 0; x < os.w; ++x)
        detail::fill_patch_row(input, n, layer, y, x, m.row(y * os.w + x));
    out.push_back(std::move(m));
  }
  return out;
}

/// Cross-correlation with symmetric zero padding, computed as im2col + GEMM.
template <typename T>
Tensor<T> dense_conv2d(const Tensor<T>& input, const ConvLayer<T>& layer) {
  const Shape os = layer.output_shape(input.shape());
  Tensor<T> out(os);
  const auto locs = detail::all_locations(os.h * os.w);
  detail::conv_rows(input, layer, locs, out);
  return out;
}

struct ConvBackwardOptions {
  bool input_grad = true;
};

/// Dense convolution backward. Returns dL/dinput and accumulates parameter
/// gradients into `grads`.
template <typename T>
Tensor<T> dense_conv2d_backward(const Tensor<T>& grad_out, const Tensor<T>& input,
                                const ConvLayer<T>& layer, ConvGrads<T>& grads,
                                ConvBackwardOptions opts = {}) {
  const Shape os = layer.output_shape(input.shape());
  if (grad_out.shape() != os)
    throw DimensionError("grad_out shape " + grad_out.shape().str() + " != conv output " + os.str());
  Tensor<T> grad_in(opts.input_grad ? input.shape() : Shape{});
  const auto locs = detail::all_locations(os.h * os.w);
  detail::conv_rows_backward(input, layer, locs, grad_out, opts.input_grad ? &grad_in : nullptr,
                             grads);
  return grad_in;
}

}  // namespace gcnn
