// Copyright 2026 The mdmoe Authors
// SPDX-License-Identifier: Apache-2.0

#include "kernels_internal.hpp"
#include "mdmoe/kernels.hpp"

namespace mdmoe::kernels {
namespace reference {

template <class T>
T dot(std::size_t n, const T* x, const T* y) {
  T acc = 0;
  for (std::size_t i = 0; i < n; ++i) acc += x[i] * y[i];
  return acc;
}

template <class T>
void axpy(std::size_t n, T alpha, const T* x, T* y) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

template <class T>
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c) {
  for (std::size_t i = 0; i < m; ++i) {
    T* crow = c + i * n;
    const T* arow = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const T s = arow[p];
      if (s == T(0)) continue;
      axpy(n, s, b + p * n, crow);
    }
  }
}

template <class T>
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) c[i * n + j] += dot(k, a + i * k, b + j * k);
  }
}

template <class T>
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c) {
  for (std::size_t p = 0; p < k; ++p) {
    const T* arow = a + p * m;
    const T* brow = b + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      const T s = arow[i];
      if (s == T(0)) continue;
      axpy(n, s, brow, c + i * n);
    }
  }
}

#define MDMOE_INSTANTIATE(T)                                                             \
  template T dot<T>(std::size_t, const T*, const T*);                                    \
  template void axpy<T>(std::size_t, T, const T*, T*);                                   \
  template void gemm_nn<T>(std::size_t, std::size_t, std::size_t, const T*, const T*, T*); \
  template void gemm_nt<T>(std::size_t, std::size_t, std::size_t, const T*, const T*, T*); \
  template void gemm_tn<T>(std::size_t, std::size_t, std::size_t, const T*, const T*, T*);
MDMOE_INSTANTIATE(float)
MDMOE_INSTANTIATE(double)
#undef MDMOE_INSTANTIATE

}  // namespace reference

namespace detail {

KernelTable<float> scalar_table_f32() {
  return {&reference::gemm_nn<float>, &reference::gemm_nt<float>, &reference::gemm_tn<float>,
          &reference::dot<float>, &reference::axpy<float>};
}

KernelTable<double> scalar_table_f64() {
  return {&reference::gemm_nn<double>, &reference::gemm_nt<double>, &reference::gemm_tn<double>,
          &reference::dot<double>, &reference::axpy<double>};
}

}  // namespace detail
}  // namespace mdmoe::kernels
