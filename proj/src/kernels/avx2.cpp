// SPDX-License-Identifier: Apache-2.0
//
// AVX2 kernels. Compiled with -mavx2 only (no -mfma): products and sums are
// issued as separate instructions to match the scalar reference exactly.
#include <immintrin.h>

#include <cmath>

#include "kernels_impl.hpp"

namespace ssar::kernels::detail {
namespace {

template <class T>
struct Vec;

template <>
struct Vec<float> {
  using reg = __m256;
  static constexpr std::size_t lanes = 8;
  static reg load(const float* p) { return _mm256_loadu_ps(p); }
  static void store(float* p, reg v) { _mm256_storeu_ps(p, v); }
  static reg set1(float x) { return _mm256_set1_ps(x); }
  static reg zero() { return _mm256_setzero_ps(); }
  static reg add(reg a, reg b) { return _mm256_add_ps(a, b); }
  static reg sub(reg a, reg b) { return _mm256_sub_ps(a, b); }
  static reg mul(reg a, reg b) { return _mm256_mul_ps(a, b); }
  static reg div(reg a, reg b) { return _mm256_div_ps(a, b); }
  static reg max(reg a, reg b) { return _mm256_max_ps(a, b); }
  static reg sqrt(reg a) { return _mm256_sqrt_ps(a); }
  static reg gt_zero_select(reg x, reg g) {
    const reg mask = _mm256_cmp_ps(x, zero(), _CMP_GT_OQ);
    return _mm256_and_ps(mask, g);
  }
};

template <>
struct Vec<double> {
  using reg = __m256d;
  static constexpr std::size_t lanes = 4;
  static reg load(const double* p) { return _mm256_loadu_pd(p); }
  static void store(double* p, reg v) { _mm256_storeu_pd(p, v); }
  static reg set1(double x) { return _mm256_set1_pd(x); }
  static reg zero() { return _mm256_setzero_pd(); }
  static reg add(reg a, reg b) { return _mm256_add_pd(a, b); }
  static reg sub(reg a, reg b) { return _mm256_sub_pd(a, b); }
  static reg mul(reg a, reg b) { return _mm256_mul_pd(a, b); }
  static reg div(reg a, reg b) { return _mm256_div_pd(a, b); }
  static reg max(reg a, reg b) { return _mm256_max_pd(a, b); }
  static reg sqrt(reg a) { return _mm256_sqrt_pd(a); }
  static reg gt_zero_select(reg x, reg g) {
    const reg mask = _mm256_cmp_pd(x, zero(), _CMP_GT_OQ);
    return _mm256_and_pd(mask, g);
  }
};

// Register-blocked micro kernel: ROWS rows of C by two vectors of columns.
template <class T, std::size_t ROWS>
inline void gemm_block(bool trans_a, std::size_t i0, std::size_t j0,
                       std::size_t k, const T* a, std::size_t lda, const T* b,
                       std::size_t ldb, T* c, std::size_t ldc,
                       bool accumulate) {
  using V = Vec<T>;
  constexpr std::size_t L = V::lanes;
  typename V::reg acc0[ROWS];
  typename V::reg acc1[ROWS];
  for (std::size_t r = 0; r < ROWS; ++r) {
    if (accumulate) {
      acc0[r] = V::load(c + (i0 + r) * ldc + j0);
      acc1[r] = V::load(c + (i0 + r) * ldc + j0 + L);
    } else {
      acc0[r] = V::zero();
      acc1[r] = V::zero();
    }
  }
  for (std::size_t p = 0; p < k; ++p) {
    const T* brow = b + p * ldb + j0;
    const auto b0 = V::load(brow);
    const auto b1 = V::load(brow + L);
    for (std::size_t r = 0; r < ROWS; ++r) {
      const std::size_t i = i0 + r;
      const auto av = V::set1(trans_a ? a[p * lda + i] : a[i * lda + p]);
      acc0[r] = V::add(acc0[r], V::mul(av, b0));
      acc1[r] = V::add(acc1[r], V::mul(av, b1));
    }
  }
  for (std::size_t r = 0; r < ROWS; ++r) {
    V::store(c + (i0 + r) * ldc + j0, acc0[r]);
    V::store(c + (i0 + r) * ldc + j0 + L, acc1[r]);
  }
}

template <class T>
inline void gemm_scalar_cols(bool trans_a, std::size_t i, std::size_t j0,
                             std::size_t j1, std::size_t k, const T* a,
                             std::size_t lda, const T* b, std::size_t ldb,
                             T* c, std::size_t ldc, bool accumulate) {
  T* crow = c + i * ldc;
  for (std::size_t j = j0; j < j1; ++j) {
    T acc = accumulate ? crow[j] : T(0);
    for (std::size_t p = 0; p < k; ++p) {
      const T aip = trans_a ? a[p * lda + i] : a[i * lda + p];
      acc = acc + aip * b[p * ldb + j];
    }
    crow[j] = acc;
  }
}

template <class T>
void gemm(bool trans_a, std::size_t m, std::size_t n, std::size_t k,
          const T* a, std::size_t lda, const T* b, std::size_t ldb, T* c,
          std::size_t ldc, bool accumulate) {
  constexpr std::size_t W = 2 * Vec<T>::lanes;
  const std::size_t n_vec = n - n % W;
  std::size_t i = 0;
  for (; i + 4 <= m; i += 4) {
    for (std::size_t j = 0; j < n_vec; j += W)
      gemm_block<T, 4>(trans_a, i, j, k, a, lda, b, ldb, c, ldc, accumulate);
  }
  for (; i < m; ++i) {
    for (std::size_t j = 0; j < n_vec; j += W)
      gemm_block<T, 1>(trans_a, i, j, k, a, lda, b, ldb, c, ldc, accumulate);
  }
  if (n_vec < n) {
    for (std::size_t r = 0; r < m; ++r)
      gemm_scalar_cols(trans_a, r, n_vec, n, k, a, lda, b, ldb, c, ldc,
                       accumulate);
  }
}

template <class T, class VecOp, class ScalarOp>
inline void binary(const T* a, const T* b, T* out, std::size_t n, VecOp vop,
                   ScalarOp sop) {
  using V = Vec<T>;
  std::size_t i = 0;
  for (; i + V::lanes <= n; i += V::lanes)
    V::store(out + i, vop(V::load(a + i), V::load(b + i)));
  for (; i < n; ++i) out[i] = sop(a[i], b[i]);
}

template <class T>
void add(const T* a, const T* b, T* out, std::size_t n) {
  using V = Vec<T>;
  binary(a, b, out, n, [](auto x, auto y) { return V::add(x, y); },
         [](T x, T y) { return x + y; });
}
template <class T>
void sub(const T* a, const T* b, T* out, std::size_t n) {
  using V = Vec<T>;
  binary(a, b, out, n, [](auto x, auto y) { return V::sub(x, y); },
         [](T x, T y) { return x - y; });
}
template <class T>
void mul(const T* a, const T* b, T* out, std::size_t n) {
  using V = Vec<T>;
  binary(a, b, out, n, [](auto x, auto y) { return V::mul(x, y); },
         [](T x, T y) { return x * y; });
}
template <class T>
void maximum(const T* a, const T* b, T* out, std::size_t n) {
  using V = Vec<T>;
  binary(a, b, out, n, [](auto x, auto y) { return V::max(y, x); },
         [](T x, T y) { return y > x ? y : x; });
}

template <class T>
void axpy(T alpha, const T* x, T* y, std::size_t n) {
  using V = Vec<T>;
  const auto av = V::set1(alpha);
  std::size_t i = 0;
  for (; i + V::lanes <= n; i += V::lanes)
    V::store(y + i, V::add(V::load(y + i), V::mul(av, V::load(x + i))));
  for (; i < n; ++i) y[i] = y[i] + alpha * x[i];
}

template <class T>
void scale(T alpha, const T* x, T* out, std::size_t n) {
  using V = Vec<T>;
  const auto av = V::set1(alpha);
  std::size_t i = 0;
  for (; i + V::lanes <= n; i += V::lanes)
    V::store(out + i, V::mul(av, V::load(x + i)));
  for (; i < n; ++i) out[i] = alpha * x[i];
}

template <class T>
void relu(const T* x, T* out, std::size_t n) {
  using V = Vec<T>;
  std::size_t i = 0;
  for (; i + V::lanes <= n; i += V::lanes) {
    const auto xv = V::load(x + i);
    V::store(out + i, V::gt_zero_select(xv, xv));
  }
  for (; i < n; ++i) out[i] = x[i] > T(0) ? x[i] : T(0);
}

template <class T>
void relu_backward(const T* x, const T* g, T* out, std::size_t n) {
  using V = Vec<T>;
  std::size_t i = 0;
  for (; i + V::lanes <= n; i += V::lanes)
    V::store(out + i, V::gt_zero_select(V::load(x + i), V::load(g + i)));
  for (; i < n; ++i) out[i] = x[i] > T(0) ? g[i] : T(0);
}

template <class T>
void adam_update(const AdamParams<T>& p, const T* grad, T* param, T* m, T* v,
                 std::size_t n) {
  using V = Vec<T>;
  const T omb1 = T(1) - p.beta1;
  const T omb2 = T(1) - p.beta2;
  const auto b1 = V::set1(p.beta1), b2 = V::set1(p.beta2);
  const auto o1 = V::set1(omb1), o2 = V::set1(omb2);
  const auto bc1 = V::set1(p.bias_correction1);
  const auto bc2 = V::set1(p.bias_correction2);
  const auto lr = V::set1(p.lr), eps = V::set1(p.eps);
  std::size_t i = 0;
  for (; i + V::lanes <= n; i += V::lanes) {
    const auto g = V::load(grad + i);
    const auto mi = V::add(V::mul(b1, V::load(m + i)), V::mul(o1, g));
    const auto vi =
        V::add(V::mul(b2, V::load(v + i)), V::mul(o2, V::mul(g, g)));
    V::store(m + i, mi);
    V::store(v + i, vi);
    const auto mhat = V::div(mi, bc1);
    const auto vhat = V::div(vi, bc2);
    const auto denom = V::add(V::sqrt(vhat), eps);
    const auto step = V::div(V::mul(lr, mhat), denom);
    V::store(param + i, V::sub(V::load(param + i), step));
  }
  for (; i < n; ++i) {
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
Table<T> make_avx2_table() {
  return Table<T>{&gemm<T>, &add<T>,   &sub<T>,  &mul<T>,           &maximum<T>,
                  &axpy<T>, &scale<T>, &relu<T>, &relu_backward<T>, &adam_update<T>};
}

template Table<float> make_avx2_table<float>();
template Table<double> make_avx2_table<double>();

}  // namespace ssar::kernels::detail
