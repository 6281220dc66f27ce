// SPDX-License-Identifier: Apache-2.0
//
// Scalar/SIMD equivalence. SIMD variants must match the scalar reference bit
// for bit on randomized shapes, including ragged tails.
#include <algorithm>
#include <cstring>
#include <random>
#include <vector>

#include "doctest.h"
#include "ssar/kernels.hpp"

using namespace ssar::kernels;

namespace {

template <class T>
std::vector<T> rand_vec(std::size_t n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> d(-2.0, 2.0);
  std::vector<T> v(n);
  for (auto& x : v) x = static_cast<T>(d(rng));
  return v;
}

template <class T>
bool bitwise_equal(const std::vector<T>& a, const std::vector<T>& b) {
  return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(T)) == 0;
}

template <class T>
void check_gemm_equivalence(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> dim(1, 45);
  const auto& ref = table<T>(Isa::scalar);
  const auto& simd = table<T>(Isa::avx2);
  for (int trial = 0; trial < 60; ++trial) {
    const std::size_t m = dim(rng), n = dim(rng), k = dim(rng);
    const bool trans_a = trial % 2 == 1;
    const bool accumulate = trial % 3 == 0;
    const auto a = rand_vec<T>(m * k, rng);
    const auto b = rand_vec<T>(k * n, rng);
    const auto c0 = rand_vec<T>(m * n, rng);
    auto c_ref = c0, c_simd = c0;
    const std::size_t lda = trans_a ? m : k;
    ref.gemm(trans_a, m, n, k, a.data(), lda, b.data(), n, c_ref.data(), n, accumulate);
    simd.gemm(trans_a, m, n, k, a.data(), lda, b.data(), n, c_simd.data(), n, accumulate);
    INFO("m=" << m << " n=" << n << " k=" << k << " trans_a=" << trans_a);
    CHECK(bitwise_equal(c_ref, c_simd));
  }
}

template <class T>
void check_elementwise_equivalence(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const auto& ref = table<T>(Isa::scalar);
  const auto& simd = table<T>(Isa::avx2);
  for (std::size_t n : {1u, 3u, 7u, 8u, 9u, 31u, 64u, 257u}) {
    auto a = rand_vec<T>(n, rng), b = rand_vec<T>(n, rng);
    if (n > 2) b[1] = a[1];  // exercise ties in maximum
    using Fn = void (*)(const T*, const T*, T*, std::size_t);
    for (auto [fr, fs] : {std::pair<Fn, Fn>{ref.add, simd.add}, {ref.sub, simd.sub},
                          {ref.mul, simd.mul}, {ref.maximum, simd.maximum},
                          {ref.relu_backward, simd.relu_backward}}) {
      std::vector<T> o1(n), o2(n);
      fr(a.data(), b.data(), o1.data(), n);
      fs(a.data(), b.data(), o2.data(), n);
      CHECK(bitwise_equal(o1, o2));
    }
    std::vector<T> r1(n), r2(n);
    ref.relu(a.data(), r1.data(), n);
    simd.relu(a.data(), r2.data(), n);
    CHECK(bitwise_equal(r1, r2));
    ref.scale(T(0.37), a.data(), r1.data(), n);
    simd.scale(T(0.37), a.data(), r2.data(), n);
    CHECK(bitwise_equal(r1, r2));
    auto y1 = b, y2 = b;
    ref.axpy(T(-1.3), a.data(), y1.data(), n);
    simd.axpy(T(-1.3), a.data(), y2.data(), n);
    CHECK(bitwise_equal(y1, y2));
  }
}

template <class T>
void check_adam_equivalence(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const std::size_t n = 203;
  const auto g = rand_vec<T>(n, rng);
  auto p1 = rand_vec<T>(n, rng), m1 = rand_vec<T>(n, rng), v1 = rand_vec<T>(n, rng);
  for (auto& x : v1) x = x * x;
  auto p2 = p1, m2 = m1, v2 = v1;
  const AdamParams<T> ap{T(1e-3), T(0.9), T(0.999), T(1e-8), T(1 - 0.9 * 0.9),
                         T(1 - 0.999 * 0.999)};
  table<T>(Isa::scalar).adam_update(ap, g.data(), p1.data(), m1.data(), v1.data(), n);
  table<T>(Isa::avx2).adam_update(ap, g.data(), p2.data(), m2.data(), v2.data(), n);
  CHECK(bitwise_equal(p1, p2));
  CHECK(bitwise_equal(m1, m2));
  CHECK(bitwise_equal(v1, v2));
}

}  // namespace

TEST_CASE("gemm: SIMD matches scalar reference bitwise") {
  if (!isa_supported(Isa::avx2)) {
    MESSAGE("AVX2 unavailable; equivalence test skipped");
    return;
  }
  check_gemm_equivalence<float>(11);
  check_gemm_equivalence<double>(12);
}

TEST_CASE("elementwise kernels: SIMD matches scalar reference bitwise") {
  if (!isa_supported(Isa::avx2)) return;
  check_elementwise_equivalence<float>(21);
  check_elementwise_equivalence<double>(22);
}

TEST_CASE("adam kernel: SIMD matches scalar reference bitwise") {
  if (!isa_supported(Isa::avx2)) return;
  check_adam_equivalence<float>(31);
  check_adam_equivalence<double>(32);
}

TEST_CASE("gemm scalar reference computes the matrix product") {
  const auto& k = table<double>(Isa::scalar);
  const std::vector<double> a{1, 2, 3, 4, 5, 6};  // 2x3
  const std::vector<double> b{1, 0, 0, 1, 1, 1};  // 3x2
  std::vector<double> c(4);
  k.gemm(false, 2, 2, 3, a.data(), 3, b.data(), 2, c.data(), 2, false);
  CHECK(c == std::vector<double>{4, 5, 10, 11});
  // A^T stored as 3x2
  const std::vector<double> at{1, 4, 2, 5, 3, 6};
  k.gemm(true, 2, 2, 3, at.data(), 2, b.data(), 2, c.data(), 2, true);
  CHECK(c == std::vector<double>{8, 10, 20, 22});
}

TEST_CASE("dispatch falls back to scalar and honours explicit selection") {
  const Isa before = active_isa();
  CHECK(set_active_isa(Isa::scalar) == Isa::scalar);
  CHECK(active_isa() == Isa::scalar);
  set_active_isa(before);
  CHECK(isa_name(Isa::avx2) == "avx2");
}

TEST_CASE("parallel_for covers every index once regardless of worker count") {
  for (int workers : {1, 2, 3, 8}) {
    set_num_workers(workers);
    std::vector<int> hits(37, 0);
    parallel_for(hits.size(), [&](std::size_t i) { hits[i] += 1; });
    CHECK(std::all_of(hits.begin(), hits.end(), [](int h) { return h == 1; }));
  }
  set_num_workers(1);
}

TEST_CASE("transpose") {
  const std::vector<float> src{1, 2, 3, 4, 5, 6};
  std::vector<float> dst(6);
  transpose(src.data(), 2, 3, dst.data());
  CHECK(dst == std::vector<float>{1, 4, 2, 5, 3, 6});
}
