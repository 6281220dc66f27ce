// SPDX-License-Identifier: Apache-2.0
//
// Data-parallel inner loops. Each kernel has a scalar reference variant and,
// where the build and the CPU allow it, an AVX2 variant chosen at runtime.
//
// Every SIMD variant vectorizes across independent output elements only and
// keeps the per-element operation sequence of the scalar reference (no FMA,
// no reassociated reductions), so both variants are bitwise identical. The
// equivalence tests assert exactly that.
#pragma once

#include <cstddef>
#include <functional>
#include <string_view>

namespace ssar::kernels {

enum class Isa { scalar, avx2 };

std::string_view isa_name(Isa isa);
bool isa_supported(Isa isa);

/// Variant used by the tensor library. Defaults to the best supported ISA;
/// the SSAR_SIMD environment variable (scalar|avx2) overrides it.
Isa active_isa();
/// Falls back to scalar if the requested ISA is unsupported. Returns the ISA
/// actually selected.
Isa set_active_isa(Isa isa);

template <class T>
struct AdamParams {
  T lr;
  T beta1;
  T beta2;
  T eps;
  T bias_correction1;  // 1 - beta1^t
  T bias_correction2;  // 1 - beta2^t
};

template <class T>
struct Table {
  /// C[M,N] = (accumulate ? C : 0) + op(A)[M,K] * B[K,N]; op(A) = A or A^T.
  /// Row-major with leading dimensions. Each C element sums its K products
  /// in ascending k.
  void (*gemm)(bool trans_a, std::size_t m, std::size_t n, std::size_t k,
               const T* a, std::size_t lda, const T* b, std::size_t ldb, T* c,
               std::size_t ldc, bool accumulate);
  void (*add)(const T* a, const T* b, T* out, std::size_t n);
  void (*sub)(const T* a, const T* b, T* out, std::size_t n);
  void (*mul)(const T* a, const T* b, T* out, std::size_t n);
  void (*maximum)(const T* a, const T* b, T* out, std::size_t n);
  /// y += alpha * x
  void (*axpy)(T alpha, const T* x, T* y, std::size_t n);
  void (*scale)(T alpha, const T* x, T* out, std::size_t n);
  void (*relu)(const T* x, T* out, std::size_t n);
  /// out = x > 0 ? g : 0
  void (*relu_backward)(const T* x, const T* g, T* out, std::size_t n);
  void (*adam_update)(const AdamParams<T>& p, const T* grad, T* param, T* m,
                      T* v, std::size_t n);
};

template <class T>
const Table<T>& table(Isa isa);

/// Table for the active ISA.
template <class T>
const Table<T>& active() {
  return table<T>(active_isa());
}

/// Out-of-place transpose of a rows x cols row-major matrix.
template <class T>
void transpose(const T* src, std::size_t rows, std::size_t cols, T* dst);

/// Worker count for kernel-level parallel loops. Results never depend on it.
void set_num_workers(int workers);
int num_workers();

/// Runs body(i) for i in [0, n), splitting contiguous ranges across workers.
/// Bodies must write disjoint outputs.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body);

}  // namespace ssar::kernels
