// Copyright 2026 The mdmoe Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>

namespace mdmoe::kernels::detail {

template <class T>
struct KernelTable {
  void (*gemm_nn)(std::size_t, std::size_t, std::size_t, const T*, const T*, T*);
  void (*gemm_nt)(std::size_t, std::size_t, std::size_t, const T*, const T*, T*);
  void (*gemm_tn)(std::size_t, std::size_t, std::size_t, const T*, const T*, T*);
  T (*dot)(std::size_t, const T*, const T*);
  void (*axpy)(std::size_t, T, const T*, T*);
};

KernelTable<float> scalar_table_f32();
KernelTable<double> scalar_table_f64();

// Defined only when the AVX2 translation unit is built.
KernelTable<float> avx2_table_f32();
KernelTable<double> avx2_table_f64();

}  // namespace mdmoe::kernels::detail
