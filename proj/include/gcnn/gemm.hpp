#pragma once

#include <cstddef>
#include <cstring>

#include "gcnn/error.hpp"
#include "gcnn/parallel.hpp"
#include "gcnn/tensor.hpp"

namespace gcnn {

namespace detail {

// c[m x n] = a[m x k] * b[k x n], all row-major with the given leading
// dimensions. Every output element accumulates a[i][0]*b[0][j],
// a[i][1]*b[1][j], ... in that order starting from zero, independent of how
// many rows the call covers or how the rows are blocked. The dense and guided
// convolutions both go through here, which is what makes them bit-identical.
template <typename T>
void gemm_rows(std::size_t m, std::size_t k, std::size_t n, const T* a, std::size_t lda,
               const T* b, std::size_t ldb, T* c, std::size_t ldc) {
  std::size_t i = 0;
  for (; i + 4 <= m; i += 4) {
    T* __restrict c0 = c + i * ldc;
    T* __restrict c1 = c0 + ldc;
    T* __restrict c2 = c1 + ldc;
    T* __restrict c3 = c2 + ldc;
    std::memset(c0, 0, n * sizeof(T));
    std::memset(c1, 0, n * sizeof(T));
    std::memset(c2, 0, n * sizeof(T));
    std::memset(c3, 0, n * sizeof(T));
    const T* a0 = a + i * lda;
    const T* a1 = a0 + lda;
    const T* a2 = a1 + lda;
    const T* a3 = a2 + lda;
    for (std::size_t p = 0; p < k; ++p) {
      const T* __restrict br = b + p * ldb;
      const T v0 = a0[p], v1 = a1[p], v2 = a2[p], v3 = a3[p];
      for (std::size_t j = 0; j < n; ++j) {
        const T bj = br[j];
        c0[j] += v0 * bj;
        c1[j] += v1 * bj;
        c2[j] += v2 * bj;
        c3[j] += v3 * bj;
      }
    }
  }
  for (; i < m; ++i) {
    T* __restrict c0 = c + i * ldc;
    std::memset(c0, 0, n * sizeof(T));
    const T* a0 = a + i * lda;
    for (std::size_t p = 0; p < k; ++p) {
      const T* __restrict br = b + p * ldb;
      const T v0 = a0[p];
      for (std::size_t j = 0; j < n; ++j) c0[j] += v0 * br[j];
    }
  }
}

}  // namespace detail

/// Plain matrix product with a fixed per-element accumulation order.
/// Parallelizes over row blocks; results are identical for any thread count.
template <typename T>
Matrix<T> gemm(const Matrix<T>& a, const Matrix<T>& b) {
  if (a.cols != b.rows)
    throw DimensionError("gemm inner dimensions disagree: " + std::to_string(a.rows) + "x" +
                         std::to_string(a.cols) + " * " + std::to_string(b.rows) + "x" +
                         std::to_string(b.cols));
  Matrix<T> c(a.rows, b.cols);
  if (a.rows == 0 || b.cols == 0) return c;
  constexpr std::ptrdiff_t kBlock = 64;
  const auto blocks = static_cast<std::ptrdiff_t>((a.rows + kBlock - 1) / kBlock);
#pragma omp parallel for schedule(static) num_threads(num_threads())
  for (std::ptrdiff_t blk = 0; blk < blocks; ++blk) {
    const std::size_t r0 = static_cast<std::size_t>(blk) * kBlock;
    const std::size_t rows = std::min<std::size_t>(kBlock, a.rows - r0);
    detail::gemm_rows(rows, a.cols, b.cols, a.row(r0), a.cols, b.data.data(), b.cols, c.row(r0),
                      c.cols);
  }
  return c;
}

}  // namespace gcnn
