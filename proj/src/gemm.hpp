#pragma once

#include <cstddef>
#include <vector>

// Small dense kernels with double-precision accumulation. Row-major, no
// aliasing between inputs and outputs.
namespace noisyforge::detail {

// R x J output tile held in registers: sum over p of a(i, p) * b[p][j],
// with a(i, p) = a[i * a_i + p * a_p]. store(r, j, value) receives each sum.
template <std::size_t R, std::size_t J, class Store>
inline void gemm_tile(std::size_t k, const float* a, std::size_t a_i, std::size_t a_p, const float* b,
                      std::size_t ldb, Store&& store) {
  double acc[R][J] = {};
  for (std::size_t p = 0; p < k; ++p) {
    double bv[J];
    for (std::size_t j = 0; j < J; ++j) bv[j] = b[p * ldb + j];
    for (std::size_t r = 0; r < R; ++r) {
      const double av = a[r * a_i + p * a_p];
      for (std::size_t j = 0; j < J; ++j) acc[r][j] += av * bv[j];
    }
  }
  for (std::size_t r = 0; r < R; ++r)
    for (std::size_t j = 0; j < J; ++j) store(r, j, acc[r][j]);
}

template <std::size_t R, class Store>
inline void gemm_rows(std::size_t i0, std::size_t k, std::size_t n, const float* a, std::size_t a_i, std::size_t a_p,
                      const float* b, Store& store) {
  const float* ar = a + i0 * a_i;
  std::size_t j = 0;
  for (; j + 16 <= n; j += 16)
    gemm_tile<R, 16>(k, ar, a_i, a_p, b + j, n, [&](std::size_t r, std::size_t c, double v) { store(i0 + r, j + c, v); });
  for (; j + 4 <= n; j += 4)
    gemm_tile<R, 4>(k, ar, a_i, a_p, b + j, n, [&](std::size_t r, std::size_t c, double v) { store(i0 + r, j + c, v); });
  for (; j < n; ++j)
    gemm_tile<R, 1>(k, ar, a_i, a_p, b + j, n, [&](std::size_t r, std::size_t c, double v) { store(i0 + r, j + c, v); });
}

// out(i, j) = sum_p a(i, p) * b[p * n + j] for an m x n output.
template <class Store>
inline void gemm_core(std::size_t m, std::size_t k, std::size_t n, const float* a, std::size_t a_i, std::size_t a_p,
                      const float* b, Store store) {
  std::size_t i = 0;
  for (; i + 4 <= m; i += 4) gemm_rows<4>(i, k, n, a, a_i, a_p, b, store);
  switch (m - i) {
    case 3: gemm_rows<3>(i, k, n, a, a_i, a_p, b, store); break;
    case 2: gemm_rows<2>(i, k, n, a, a_i, a_p, b, store); break;
    case 1: gemm_rows<1>(i, k, n, a, a_i, a_p, b, store); break;
    default: break;
  }
}

// c[m x n] = a[m x k] . b[k x n]
inline void gemm_nn(std::size_t m, std::size_t k, std::size_t n, const float* a, const float* b, float* c) {
  gemm_core(m, k, n, a, k, 1, b, [=](std::size_t i, std::size_t j, double v) { c[i * n + j] = static_cast<float>(v); });
}

// acc[m x n] += a[k x m]^T . b[k x n]
inline void gemm_tn_acc(std::size_t m, std::size_t k, std::size_t n, const float* a, const float* b,
                        double* acc) {
  gemm_core(m, k, n, a, 1, m, b, [=](std::size_t i, std::size_t j, double v) { acc[i * n + j] += v; });
}

// acc[m x n] += a[m x k] . b[n x k]^T
inline void gemm_nt_acc(std::size_t m, std::size_t k, std::size_t n, const float* a, const float* b,
                        double* acc) {
  std::vector<float> bt(k * n);
  for (std::size_t j = 0; j < n; ++j)
    for (std::size_t p = 0; p < k; ++p) bt[p * n + j] = b[j * k + p];
  gemm_core(m, k, n, a, k, 1, bt.data(), [=](std::size_t i, std::size_t j, double v) { acc[i * n + j] += v; });
}

}  // namespace noisyforge::detail
