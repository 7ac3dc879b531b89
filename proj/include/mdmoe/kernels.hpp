// Copyright 2026 The mdmoe Authors
// SPDX-License-Identifier: Apache-2.0
//
// Dense inner-loop kernels. Every kernel has a scalar reference
// implementation and, where the host supports it, an AVX2+FMA variant. The
// variant is picked once at startup (override with MDMOE_KERNELS=scalar|avx2)
// and all variants use a fixed reduction order, so results are reproducible
// for a given selection. Scalar and SIMD results agree to rounding error, not
// bit for bit.

#pragma once

#include <cstddef>
#include <string_view>

namespace mdmoe::kernels {

enum class Isa { kScalar, kAvx2 };

bool isa_supported(Isa isa);
Isa active_isa();
// Throws std::runtime_error if the host cannot run `isa`.
void set_isa(Isa isa);
std::string_view isa_name(Isa isa);

// All matrices are dense row-major. The gemm kernels accumulate into `c`.

// c[m x n] += a[m x k] * b[k x n]
template <class T>
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c);
// c[m x n] += a[m x k] * b[n x k]^T
template <class T>
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c);
// c[m x n] += a[k x m]^T * b[k x n]
template <class T>
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c);

template <class T>
T dot(std::size_t n, const T* x, const T* y);
// y += alpha * x
template <class T>
void axpy(std::size_t n, T alpha, const T* x, T* y);

// Scalar reference implementations, callable regardless of the active ISA.
namespace reference {
template <class T>
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c);
template <class T>
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c);
template <class T>
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c);
template <class T>
T dot(std::size_t n, const T* x, const T* y);
template <class T>
void axpy(std::size_t n, T alpha, const T* x, T* y);
}  // namespace reference

}  // namespace mdmoe::kernels
