// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <string>
#include <thread>
#include <vector>

#include "kernels_impl.hpp"

namespace ssar::kernels {
namespace {

Isa best_supported() {
  return isa_supported(Isa::avx2) ? Isa::avx2 : Isa::scalar;
}

Isa initial_isa() {
  if (const char* env = std::getenv("SSAR_SIMD")) {
    const std::string v(env);
    if (v == "scalar") return Isa::scalar;
    if (v == "avx2" && isa_supported(Isa::avx2)) return Isa::avx2;
  }
  return best_supported();
}

std::atomic<Isa>& active_slot() {
  static std::atomic<Isa> slot{initial_isa()};
  return slot;
}

std::atomic<int> g_workers{1};

}  // namespace

std::string_view isa_name(Isa isa) {
  switch (isa) {
    case Isa::scalar:
      return "scalar";
    case Isa::avx2:
      return "avx2";
  }
  return "unknown";
}

bool isa_supported(Isa isa) {
  switch (isa) {
    case Isa::scalar:
      return true;
    case Isa::avx2:
#if SSAR_HAVE_AVX2
      return __builtin_cpu_supports("avx2");
#else
      return false;
#endif
  }
  return false;
}

Isa active_isa() { return active_slot().load(std::memory_order_relaxed); }

Isa set_active_isa(Isa isa) {
  const Isa chosen = isa_supported(isa) ? isa : Isa::scalar;
  active_slot().store(chosen, std::memory_order_relaxed);
  return chosen;
}

template <class T>
const Table<T>& table(Isa isa) {
  static const Table<T> scalar = detail::make_scalar_table<T>();
#if SSAR_HAVE_AVX2
  static const Table<T> avx2 = detail::make_avx2_table<T>();
  if (isa == Isa::avx2 && isa_supported(Isa::avx2)) return avx2;
#else
  (void)isa;
#endif
  return scalar;
}

template const Table<float>& table<float>(Isa);
template const Table<double>& table<double>(Isa);

template <class T>
void transpose(const T* src, std::size_t rows, std::size_t cols, T* dst) {
  constexpr std::size_t B = 32;
  for (std::size_t r0 = 0; r0 < rows; r0 += B)
    for (std::size_t c0 = 0; c0 < cols; c0 += B) {
      const std::size_t r1 = std::min(rows, r0 + B);
      const std::size_t c1 = std::min(cols, c0 + B);
      for (std::size_t r = r0; r < r1; ++r)
        for (std::size_t c = c0; c < c1; ++c) dst[c * rows + r] = src[r * cols + c];
    }
}

template void transpose<float>(const float*, std::size_t, std::size_t, float*);
template void transpose<double>(const double*, std::size_t, std::size_t,
                                double*);

void set_num_workers(int workers) { g_workers.store(std::max(1, workers)); }
int num_workers() { return g_workers.load(); }

void parallel_for(std::size_t n,
                  const std::function<void(std::size_t)>& body) {
  const std::size_t workers =
      std::min<std::size_t>(n, static_cast<std::size_t>(num_workers()));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) body(i);
    return;
  }
  std::vector<std::thread> threads;
  threads.reserve(workers - 1);
  const std::size_t chunk = (n + workers - 1) / workers;
  auto run = [&](std::size_t begin) {
    const std::size_t end = std::min(n, begin + chunk);
    for (std::size_t i = begin; i < end; ++i) body(i);
  };
  for (std::size_t w = 1; w < workers; ++w) threads.emplace_back(run, w * chunk);
  run(0);
  for (auto& t : threads) t.join();
}

}  // namespace ssar::kernels
