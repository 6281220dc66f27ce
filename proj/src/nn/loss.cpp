// SPDX-License-Identifier: Apache-2.0
#include <cmath>

#include "ssar/nn.hpp"

namespace ssar::nn {
namespace {
using GradList = std::vector<std::optional<Buffer>>;
using std::size_t;
}  // namespace

Tensor softmax_cross_entropy(const Tensor& logits, std::span<const std::int64_t> targets) {
  if (logits.rank() != 2) throw ShapeError("softmax_cross_entropy: expected B x K logits");
  const auto batch = static_cast<size_t>(logits.dim(0));
  const auto k = static_cast<size_t>(logits.dim(1));
  if (targets.size() != batch) throw ShapeError("softmax_cross_entropy: one target per row");
  for (auto t : targets)
    if (t < 0 || static_cast<size_t>(t) >= k)
      throw ShapeError("softmax_cross_entropy: target " + std::to_string(t) +
                       " outside [0, " + std::to_string(k) + ")");
  std::vector<std::int64_t> tgt(targets.begin(), targets.end());

  return visit_dtype(logits.dtype(), [&]<class T>() {
    const auto& x = buffer_as<T>(logits.buffer());
    std::vector<T> probs(x.size());
    T total = 0;
    for (size_t b = 0; b < batch; ++b) {
      const T* row = x.data() + b * k;
      T mx = row[0];
      for (size_t j = 1; j < k; ++j) mx = row[j] > mx ? row[j] : mx;
      T se = 0;
      for (size_t j = 0; j < k; ++j) se += std::exp(row[j] - mx);
      const T lse = mx + std::log(se);
      for (size_t j = 0; j < k; ++j) probs[b * k + j] = std::exp(row[j] - lse);
      total += lse - row[static_cast<size_t>(tgt[b])];
    }
    const T n = static_cast<T>(batch);
    return make_result({1}, Buffer{std::vector<T>{total / n}}, "softmax_cross_entropy",
                       {logits},
                       [probs = std::move(probs), tgt, batch, k, n](const Buffer& gbuf) {
      const T g = buffer_as<T>(gbuf)[0] / n;
      std::vector<T> gx(probs.size());
      for (size_t b = 0; b < batch; ++b)
        for (size_t j = 0; j < k; ++j) {
          const T onehot = static_cast<std::int64_t>(j) == tgt[b] ? T(1) : T(0);
          gx[b * k + j] = g * (probs[b * k + j] - onehot);
        }
      return GradList{Buffer{std::move(gx)}};
    });
  });
}

Tensor pixelwise_cross_entropy(const Tensor& logits, const Tensor& mask) {
  if (logits.rank() != 4 || logits.dim(1) != 2)
    throw ShapeError("pixelwise_cross_entropy: expected B x 2 x H x W logits");
  if (mask.rank() != 3 || mask.dim(0) != logits.dim(0) || mask.dim(1) != logits.dim(2) ||
      mask.dim(2) != logits.dim(3))
    throw ShapeError("pixelwise_cross_entropy: mask " + shape_str(mask.shape()) +
                     " does not match logits " + shape_str(logits.shape()));
  const auto batch = static_cast<size_t>(logits.dim(0));
  const auto plane = static_cast<size_t>(logits.dim(2) * logits.dim(3));
  std::vector<std::uint8_t> labels(batch * plane);
  for (size_t i = 0; i < labels.size(); ++i) {
    const double v = mask.flat(static_cast<std::int64_t>(i));
    if (v != 0.0 && v != 1.0)
      throw ShapeError("pixelwise_cross_entropy: mask values must be 0 or 1");
    labels[i] = v == 1.0 ? 1 : 0;
  }

  return visit_dtype(logits.dtype(), [&]<class T>() {
    const auto& x = buffer_as<T>(logits.buffer());
    std::vector<T> p_hand(batch * plane);
    T total = 0;
    for (size_t b = 0; b < batch; ++b) {
      const T* l0 = x.data() + (2 * b) * plane;
      const T* l1 = x.data() + (2 * b + 1) * plane;
      for (size_t i = 0; i < plane; ++i) {
        const T mx = l1[i] > l0[i] ? l1[i] : l0[i];
        const T lse = mx + std::log(std::exp(l0[i] - mx) + std::exp(l1[i] - mx));
        const size_t idx = b * plane + i;
        total += lse - (labels[idx] ? l1[i] : l0[i]);
        p_hand[idx] = std::exp(l1[i] - lse);
      }
    }
    const T n = static_cast<T>(batch * plane);
    return make_result({1}, Buffer{std::vector<T>{total / n}}, "pixelwise_cross_entropy",
                       {logits},
                       [p_hand = std::move(p_hand), labels = std::move(labels), batch, plane,
                        n](const Buffer& gbuf) {
      const T g = buffer_as<T>(gbuf)[0] / n;
      std::vector<T> gx(batch * 2 * plane);
      for (size_t b = 0; b < batch; ++b)
        for (size_t i = 0; i < plane; ++i) {
          const size_t idx = b * plane + i;
          const T p1 = p_hand[idx];
          const T y1 = labels[idx] ? T(1) : T(0);
          // d/dl1 = p1 - y1, d/dl0 = (1 - p1) - (1 - y1) = y1 - p1
          gx[(2 * b + 1) * plane + i] = g * (p1 - y1);
          gx[(2 * b) * plane + i] = g * (y1 - p1);
        }
      return GradList{Buffer{std::move(gx)}};
    });
  });
}

Tensor softmax_channels(const Tensor& logits) {
  if (logits.rank() < 2) throw ShapeError("softmax_channels: rank >= 2 required");
  const auto batch = static_cast<size_t>(logits.dim(0));
  const auto k = static_cast<size_t>(logits.dim(1));
  const size_t inner = static_cast<size_t>(logits.numel()) / (batch * k);
  return visit_dtype(logits.dtype(), [&]<class T>() {
    const auto& x = buffer_as<T>(logits.buffer());
    std::vector<T> out(x.size());
    for (size_t b = 0; b < batch; ++b)
      for (size_t i = 0; i < inner; ++i) {
        auto at = [&](size_t c) { return b * k * inner + c * inner + i; };
        T mx = x[at(0)];
        for (size_t c = 1; c < k; ++c) mx = x[at(c)] > mx ? x[at(c)] : mx;
        T se = 0;
        for (size_t c = 0; c < k; ++c) se += std::exp(x[at(c)] - mx);
        for (size_t c = 0; c < k; ++c) out[at(c)] = std::exp(x[at(c)] - mx) / se;
      }
    return Tensor::from_vector<T>(logits.shape(), std::move(out));
  });
}

}  // namespace ssar::nn
