// SPDX-License-Identifier: Apache-2.0
#include <cmath>

#include "ssar/nn.hpp"

namespace ssar::nn {
namespace {

void require_rank(const Shape& shape, const char* name) {
  if (shape.empty()) throw ShapeError(std::string(name) + ": rank-0 shape");
}

Tensor from_doubles(const Shape& shape, const std::vector<double>& v, DType dtype) {
  return Tensor::create(shape, v, dtype);
}

std::vector<double> gaussian(std::size_t n, double stddev, Rng& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  std::vector<double> v(n);
  for (auto& x : v) x = dist(rng);
  return v;
}

}  // namespace

std::pair<double, double> fans(const Shape& shape) {
  require_rank(shape, "fans");
  if (shape.size() == 1) return {double(shape[0]), double(shape[0])};
  double receptive = 1.0;
  for (std::size_t i = 2; i < shape.size(); ++i) receptive *= double(shape[i]);
  return {double(shape[1]) * receptive, double(shape[0]) * receptive};
}

Tensor init_zeros(const Shape& shape, DType dtype) {
  require_rank(shape, "init_zeros");
  return Tensor::zeros(shape, dtype);
}

Tensor init_xavier_normal(const Shape& shape, Rng& rng, DType dtype) {
  require_rank(shape, "init_xavier_normal");
  const auto [fan_in, fan_out] = fans(shape);
  const double stddev = std::sqrt(2.0 / (fan_in + fan_out));
  return from_doubles(shape, gaussian(static_cast<std::size_t>(numel(shape)), stddev, rng), dtype);
}

Tensor init_kaiming(const Shape& shape, Rng& rng, DType dtype) {
  require_rank(shape, "init_kaiming");
  const double stddev = std::sqrt(2.0 / fans(shape).first);
  return from_doubles(shape, gaussian(static_cast<std::size_t>(numel(shape)), stddev, rng), dtype);
}

Tensor init_orthogonal(const Shape& shape, Rng& rng, DType dtype) {
  require_rank(shape, "init_orthogonal");
  if (shape.size() < 2) throw ShapeError("init_orthogonal: needs rank >= 2");
  const auto rows = static_cast<std::size_t>(shape[0]);
  const auto cols = static_cast<std::size_t>(numel(shape)) / rows;
  // Orthonormalize the shorter side with modified Gram-Schmidt.
  const bool by_rows = rows <= cols;
  const std::size_t count = by_rows ? rows : cols;
  const std::size_t length = by_rows ? cols : rows;
  std::vector<double> g = gaussian(rows * cols, 1.0, rng);
  auto at = [&](std::size_t vec, std::size_t i) -> double& {
    return by_rows ? g[vec * cols + i] : g[i * cols + vec];
  };
  for (std::size_t v = 0; v < count; ++v) {
    for (std::size_t u = 0; u < v; ++u) {
      double dot = 0;
      for (std::size_t i = 0; i < length; ++i) dot += at(u, i) * at(v, i);
      for (std::size_t i = 0; i < length; ++i) at(v, i) -= dot * at(u, i);
    }
    double norm = 0;
    for (std::size_t i = 0; i < length; ++i) norm += at(v, i) * at(v, i);
    norm = std::sqrt(norm);
    if (norm < 1e-12) throw std::runtime_error("init_orthogonal: degenerate draw");
    for (std::size_t i = 0; i < length; ++i) at(v, i) /= norm;
  }
  return from_doubles(shape, g, dtype);
}

}  // namespace ssar::nn
