// SPDX-License-Identifier: Apache-2.0
//
// Scalar reference kernels. These define the numerics; SIMD variants must
// reproduce them bit for bit.
#include <algorithm>
#include <cmath>

#include "kernels_impl.hpp"

namespace ssar::kernels::detail {
namespace {

template <class T>
void gemm(bool trans_a, std::size_t m, std::size_t n, std::size_t k,
          const T* a, std::size_t lda, const T* b, std::size_t ldb, T* c,
          std::size_t ldc, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) {
    T* crow = c + i * ldc;
    if (!accumulate) std::fill(crow, crow + n, T(0));
    for (std::size_t p = 0; p < k; ++p) {
      const T aip = trans_a ? a[p * lda + i] : a[i * lda + p];
      const T* brow = b + p * ldb;
      for (std::size_t j = 0; j < n; ++j) crow[j] = crow[j] + aip * brow[j];
    }
  }
}

template <class T>
void add(const T* a, const T* b, T* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = a[i] + b[i];
}
template <class T>
void sub(const T* a, const T* b, T* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = a[i] - b[i];
}
template <class T>
void mul(const T* a, const T* b, T* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = a[i] * b[i];
}
// Ties and NaN resolve to a, matching _mm256_max_p{s,d}(b, a) semantics.
template <class T>
void maximum(const T* a, const T* b, T* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = b[i] > a[i] ? b[i] : a[i];
}
template <class T>
void axpy(T alpha, const T* x, T* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] = y[i] + alpha * x[i];
}
template <class T>
void scale(T alpha, const T* x, T* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = alpha * x[i];
}
template <class T>
void relu(const T* x, T* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = x[i] > T(0) ? x[i] : T(0);
}
template <class T>
void relu_backward(const T* x, const T* g, T* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = x[i] > T(0) ? g[i] : T(0);
}
template <class T>
void adam_update(const AdamParams<T>& p, const T* grad, T* param, T* m, T* v,
                 std::size_t n) {
  const T omb1 = T(1) - p.beta1;
  const T omb2 = T(1) - p.beta2;
  for (std::size_t i = 0; i < n; ++i) {
    const T g = grad[i];
    const T mi = p.beta1 * m[i] + omb1 * g;
    const T vi = p.beta2 * v[i] + omb2 * (g * g);
    m[i] = mi;
    v[i] = vi;
    const T mhat = mi / p.bias_correction1;
    const T vhat = vi / p.bias_correction2;
    const T denom = std::sqrt(vhat) + p.eps;
    param[i] = param[i] - (p.lr * mhat) / denom;
  }
}

}  // namespace

template <class T>
Table<T> make_scalar_table() {
  return Table<T>{&gemm<T>, &add<T>,   &sub<T>,  &mul<T>,           &maximum<T>,
                  &axpy<T>, &scale<T>, &relu<T>, &relu_backward<T>, &adam_update<T>};
}

template Table<float> make_scalar_table<float>();
template Table<double> make_scalar_table<double>();

}  // namespace ssar::kernels::detail
