// Copyright 2026 The mdmoe Authors
// SPDX-License-Identifier: Apache-2.0

#include "mdmoe/kernels.hpp"

#include <type_traits>
#include <cstdlib>
#include <stdexcept>
#include <string>

#include "kernels_internal.hpp"

namespace mdmoe::kernels {
namespace {

struct Tables {
  detail::KernelTable<float> f32;
  detail::KernelTable<double> f64;
};

Tables tables_for(Isa isa) {
#if defined(MDMOE_HAVE_AVX2)
  if (isa == Isa::kAvx2) return {detail::avx2_table_f32(), detail::avx2_table_f64()};
#endif
  (void)isa;
  return {detail::scalar_table_f32(), detail::scalar_table_f64()};
}

Isa initial_isa() {
  if (const char* env = std::getenv("MDMOE_KERNELS")) {
    const std::string v(env);
    if (v == "scalar") return Isa::kScalar;
    if (v == "avx2" && isa_supported(Isa::kAvx2)) return Isa::kAvx2;
  }
  return isa_supported(Isa::kAvx2) ? Isa::kAvx2 : Isa::kScalar;
}

struct State {
  Isa isa;
  Tables tables;
  State() : isa(initial_isa()), tables(tables_for(isa)) {}
};

State& state() {
  static State s;
  return s;
}

template <class T>
const detail::KernelTable<T>& table() {
  if constexpr (std::is_same_v<T, float>) {
    return state().tables.f32;
  } else {
    return state().tables.f64;
  }
}

}  // namespace

bool isa_supported(Isa isa) {
  switch (isa) {
    case Isa::kScalar:
      return true;
    case Isa::kAvx2:
#if defined(MDMOE_HAVE_AVX2)
      __builtin_cpu_init();
      return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
      return false;
#endif
  }
  return false;
}

Isa active_isa() { return state().isa; }

void set_isa(Isa isa) {
  if (!isa_supported(isa)) {
    throw std::runtime_error("kernel ISA not supported on this host: " + std::string(isa_name(isa)));
  }
  state().isa = isa;
  state().tables = tables_for(isa);
}

std::string_view isa_name(Isa isa) {
  switch (isa) {
    case Isa::kScalar:
      return "scalar";
    case Isa::kAvx2:
      return "avx2";
  }
  return "unknown";
}

template <class T>
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c) {
  table<T>().gemm_nn(m, n, k, a, b, c);
}
template <class T>
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c) {
  table<T>().gemm_nt(m, n, k, a, b, c);
}
template <class T>
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c) {
  table<T>().gemm_tn(m, n, k, a, b, c);
}
template <class T>
T dot(std::size_t n, const T* x, const T* y) {
  return table<T>().dot(n, x, y);
}
template <class T>
void axpy(std::size_t n, T alpha, const T* x, T* y) {
  table<T>().axpy(n, alpha, x, y);
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

}  // namespace mdmoe::kernels
