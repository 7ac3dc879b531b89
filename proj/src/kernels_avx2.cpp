// Copyright 2026 The mdmoe Authors
// SPDX-License-Identifier: Apache-2.0
//
// AVX2 + FMA kernels. This translation unit is compiled with -mavx2 -mfma and
// must only be entered after a runtime CPU check.

#include <immintrin.h>

#include <vector>

#include "kernels_internal.hpp"

namespace mdmoe::kernels::detail {
namespace {

inline float hsum(__m256 v) {
  // Fixed pairwise order: (0+4, 1+5, 2+6, 3+7), then (01, 23), then final.
  __m128 lo = _mm256_castps256_ps128(v);
  __m128 hi = _mm256_extractf128_ps(v, 1);
  __m128 s = _mm_add_ps(lo, hi);
  __m128 sh = _mm_movehl_ps(s, s);
  s = _mm_add_ps(s, sh);
  sh = _mm_shuffle_ps(s, s, 0x1);
  s = _mm_add_ss(s, sh);
  return _mm_cvtss_f32(s);
}

inline double hsum(__m256d v) {
  __m128d lo = _mm256_castpd256_pd128(v);
  __m128d hi = _mm256_extractf128_pd(v, 1);
  __m128d s = _mm_add_pd(lo, hi);
  __m128d sh = _mm_unpackhi_pd(s, s);
  s = _mm_add_sd(s, sh);
  return _mm_cvtsd_f64(s);
}

float dot_f32(std::size_t n, const float* x, const float* y) {
  __m256 acc0 = _mm256_setzero_ps(), acc1 = _mm256_setzero_ps();
  __m256 acc2 = _mm256_setzero_ps(), acc3 = _mm256_setzero_ps();
  std::size_t i = 0;
  for (; i + 32 <= n; i += 32) {
    acc0 = _mm256_fmadd_ps(_mm256_loadu_ps(x + i), _mm256_loadu_ps(y + i), acc0);
    acc1 = _mm256_fmadd_ps(_mm256_loadu_ps(x + i + 8), _mm256_loadu_ps(y + i + 8), acc1);
    acc2 = _mm256_fmadd_ps(_mm256_loadu_ps(x + i + 16), _mm256_loadu_ps(y + i + 16), acc2);
    acc3 = _mm256_fmadd_ps(_mm256_loadu_ps(x + i + 24), _mm256_loadu_ps(y + i + 24), acc3);
  }
  for (; i + 8 <= n; i += 8) {
    acc0 = _mm256_fmadd_ps(_mm256_loadu_ps(x + i), _mm256_loadu_ps(y + i), acc0);
  }
  float acc = hsum(_mm256_add_ps(_mm256_add_ps(acc0, acc1), _mm256_add_ps(acc2, acc3)));
  for (; i < n; ++i) acc += x[i] * y[i];
  return acc;
}

double dot_f64(std::size_t n, const double* x, const double* y) {
  __m256d acc0 = _mm256_setzero_pd(), acc1 = _mm256_setzero_pd();
  __m256d acc2 = _mm256_setzero_pd(), acc3 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 16 <= n; i += 16) {
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i), acc0);
    acc1 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i + 4), _mm256_loadu_pd(y + i + 4), acc1);
    acc2 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i + 8), _mm256_loadu_pd(y + i + 8), acc2);
    acc3 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i + 12), _mm256_loadu_pd(y + i + 12), acc3);
  }
  for (; i + 4 <= n; i += 4) {
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i), acc0);
  }
  double acc = hsum(_mm256_add_pd(_mm256_add_pd(acc0, acc1), _mm256_add_pd(acc2, acc3)));
  for (; i < n; ++i) acc += x[i] * y[i];
  return acc;
}

void axpy_f32(std::size_t n, float alpha, const float* x, float* y) {
  const __m256 a = _mm256_set1_ps(alpha);
  std::size_t i = 0;
  for (; i + 16 <= n; i += 16) {
    _mm256_storeu_ps(y + i, _mm256_fmadd_ps(a, _mm256_loadu_ps(x + i), _mm256_loadu_ps(y + i)));
    _mm256_storeu_ps(y + i + 8,
                     _mm256_fmadd_ps(a, _mm256_loadu_ps(x + i + 8), _mm256_loadu_ps(y + i + 8)));
  }
  for (; i + 8 <= n; i += 8) {
    _mm256_storeu_ps(y + i, _mm256_fmadd_ps(a, _mm256_loadu_ps(x + i), _mm256_loadu_ps(y + i)));
  }
  for (; i < n; ++i) y[i] += alpha * x[i];
}

void axpy_f64(std::size_t n, double alpha, const double* x, double* y) {
  const __m256d a = _mm256_set1_pd(alpha);
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    _mm256_storeu_pd(y + i, _mm256_fmadd_pd(a, _mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
    _mm256_storeu_pd(y + i + 4,
                     _mm256_fmadd_pd(a, _mm256_loadu_pd(x + i + 4), _mm256_loadu_pd(y + i + 4)));
  }
  for (; i + 4 <= n; i += 4) {
    _mm256_storeu_pd(y + i, _mm256_fmadd_pd(a, _mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
  }
  for (; i < n; ++i) y[i] += alpha * x[i];
}

template <class T>
struct Lanes;

template <>
struct Lanes<float> {
  using V = __m256;
  static constexpr std::size_t kWidth = 8;
  static V load(const float* p) { return _mm256_loadu_ps(p); }
  static void store(float* p, V v) { _mm256_storeu_ps(p, v); }
  static V splat(float x) { return _mm256_set1_ps(x); }
  static V fma(V a, V b, V c) { return _mm256_fmadd_ps(a, b, c); }
};

template <>
struct Lanes<double> {
  using V = __m256d;
  static constexpr std::size_t kWidth = 4;
  static V load(const double* p) { return _mm256_loadu_pd(p); }
  static void store(double* p, V v) { _mm256_storeu_pd(p, v); }
  static V splat(double x) { return _mm256_set1_pd(x); }
  static V fma(V a, V b, V c) { return _mm256_fmadd_pd(a, b, c); }
};

// c[m x n] += A * b[k x n] where A(i, p) = a[i * ars + p * acs]. Tiles of
// 4 rows x 2 vectors stay in registers across the whole k loop; every
// output element still accumulates its k products in increasing p.
template <class T>
void gemm_blocked(std::size_t m, std::size_t n, std::size_t k, const T* a, std::size_t ars,
                  std::size_t acs, const T* b, T* c) {
  using L = Lanes<T>;
  using V = typename L::V;
  constexpr std::size_t W = L::kWidth;
  std::size_t i = 0;
  for (; i + 4 <= m; i += 4) {
    const T* a0 = a + i * ars;
    const T* a1 = a0 + ars;
    const T* a2 = a1 + ars;
    const T* a3 = a2 + ars;
    T* c0 = c + i * n;
    T* c1 = c0 + n;
    T* c2 = c1 + n;
    T* c3 = c2 + n;
    std::size_t j = 0;
    for (; j + 2 * W <= n; j += 2 * W) {
      V x00 = L::load(c0 + j), x01 = L::load(c0 + j + W);
      V x10 = L::load(c1 + j), x11 = L::load(c1 + j + W);
      V x20 = L::load(c2 + j), x21 = L::load(c2 + j + W);
      V x30 = L::load(c3 + j), x31 = L::load(c3 + j + W);
      for (std::size_t p = 0; p < k; ++p) {
        const V b0 = L::load(b + p * n + j);
        const V b1 = L::load(b + p * n + j + W);
        V s = L::splat(a0[p * acs]);
        x00 = L::fma(s, b0, x00);
        x01 = L::fma(s, b1, x01);
        s = L::splat(a1[p * acs]);
        x10 = L::fma(s, b0, x10);
        x11 = L::fma(s, b1, x11);
        s = L::splat(a2[p * acs]);
        x20 = L::fma(s, b0, x20);
        x21 = L::fma(s, b1, x21);
        s = L::splat(a3[p * acs]);
        x30 = L::fma(s, b0, x30);
        x31 = L::fma(s, b1, x31);
      }
      L::store(c0 + j, x00);
      L::store(c0 + j + W, x01);
      L::store(c1 + j, x10);
      L::store(c1 + j + W, x11);
      L::store(c2 + j, x20);
      L::store(c2 + j + W, x21);
      L::store(c3 + j, x30);
      L::store(c3 + j + W, x31);
    }
    for (; j + W <= n; j += W) {
      V x0 = L::load(c0 + j), x1 = L::load(c1 + j), x2 = L::load(c2 + j), x3 = L::load(c3 + j);
      for (std::size_t p = 0; p < k; ++p) {
        const V bv = L::load(b + p * n + j);
        x0 = L::fma(L::splat(a0[p * acs]), bv, x0);
        x1 = L::fma(L::splat(a1[p * acs]), bv, x1);
        x2 = L::fma(L::splat(a2[p * acs]), bv, x2);
        x3 = L::fma(L::splat(a3[p * acs]), bv, x3);
      }
      L::store(c0 + j, x0);
      L::store(c1 + j, x1);
      L::store(c2 + j, x2);
      L::store(c3 + j, x3);
    }
    for (; j < n; ++j) {
      for (std::size_t r = 0; r < 4; ++r) {
        const T* ar = a + (i + r) * ars;
        T acc = c[(i + r) * n + j];
        for (std::size_t p = 0; p < k; ++p) acc += ar[p * acs] * b[p * n + j];
        c[(i + r) * n + j] = acc;
      }
    }
  }
  for (; i < m; ++i) {
    const T* ar = a + i * ars;
    T* cr = c + i * n;
    std::size_t j = 0;
    for (; j + W <= n; j += W) {
      V x = L::load(cr + j);
      for (std::size_t p = 0; p < k; ++p) x = L::fma(L::splat(ar[p * acs]), L::load(b + p * n + j), x);
      L::store(cr + j, x);
    }
    for (; j < n; ++j) {
      T acc = cr[j];
      for (std::size_t p = 0; p < k; ++p) acc += ar[p * acs] * b[p * n + j];
      cr[j] = acc;
    }
  }
}

template <class T>
void gemm_nn_impl(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c) {
  gemm_blocked(m, n, k, a, k, 1, b, c);
}

template <class T>
void gemm_tn_impl(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c) {
  gemm_blocked(m, n, k, a, 1, m, b, c);
}

// c += a * b^T via a transposed copy of b, so the blocked kernel applies.
template <class T>
void gemm_nt_impl(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c) {
  thread_local std::vector<T> bt;
  bt.resize(k * n);
  for (std::size_t j = 0; j < n; ++j) {
    for (std::size_t p = 0; p < k; ++p) bt[p * n + j] = b[j * k + p];
  }
  gemm_blocked(m, n, k, a, k, 1, bt.data(), c);
}

void gemm_nn_f32(std::size_t m, std::size_t n, std::size_t k, const float* a, const float* b,
                 float* c) {
  gemm_nn_impl(m, n, k, a, b, c);
}
void gemm_nt_f32(std::size_t m, std::size_t n, std::size_t k, const float* a, const float* b,
                 float* c) {
  gemm_nt_impl(m, n, k, a, b, c);
}
void gemm_tn_f32(std::size_t m, std::size_t n, std::size_t k, const float* a, const float* b,
                 float* c) {
  gemm_tn_impl(m, n, k, a, b, c);
}
void gemm_nn_f64(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
                 double* c) {
  gemm_nn_impl(m, n, k, a, b, c);
}
void gemm_nt_f64(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
                 double* c) {
  gemm_nt_impl(m, n, k, a, b, c);
}
void gemm_tn_f64(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
                 double* c) {
  gemm_tn_impl(m, n, k, a, b, c);
}

}  // namespace

KernelTable<float> avx2_table_f32() {
  return {&gemm_nn_f32, &gemm_nt_f32, &gemm_tn_f32, &dot_f32, &axpy_f32};
}

KernelTable<double> avx2_table_f64() {
  return {&gemm_nn_f64, &gemm_nt_f64, &gemm_tn_f64, &dot_f64, &axpy_f64};
}

}  // namespace mdmoe::kernels::detail
