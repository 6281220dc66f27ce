// SPDX-License-Identifier: Apache-2.0
//
// Differentiable tensor operations. Reductions run in ascending row-major
// index order.
#pragma once

#include <span>
#include <vector>

#include "ssar/tensor.hpp"

namespace ssar {

enum class BinaryOp { add, sub, mul, max };

/// Elementwise op. b must match a's shape, or equal it on a leading prefix of
/// axes and be 1 on all trailing axes (missing trailing axes count as 1).
Tensor elementwise(BinaryOp op, const Tensor& a, const Tensor& b);
inline Tensor add(const Tensor& a, const Tensor& b) { return elementwise(BinaryOp::add, a, b); }
inline Tensor sub(const Tensor& a, const Tensor& b) { return elementwise(BinaryOp::sub, a, b); }
inline Tensor mul(const Tensor& a, const Tensor& b) { return elementwise(BinaryOp::mul, a, b); }
inline Tensor maximum(const Tensor& a, const Tensor& b) { return elementwise(BinaryOp::max, a, b); }

Tensor scale(const Tensor& x, double alpha);
Tensor add_scalar(const Tensor& x, double value);

Tensor matmul(const Tensor& a, const Tensor& b);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

Tensor reshape(const Tensor& x, Shape shape);

Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor tanh(const Tensor& x);

/// Columns [start, start+len) of a rank-2 tensor.
Tensor slice_cols(const Tensor& x, std::int64_t start, std::int64_t len);
/// x[index] along axis 0, dropping that axis.
Tensor select(const Tensor& x, std::int64_t index);
/// Stacks equally shaped tensors along a new leading axis.
Tensor stack(const std::vector<Tensor>& parts);
/// Row i of the result is row i of steps[which[i]]; all steps are B x H.
Tensor take_rows(const std::vector<Tensor>& steps, std::span<const std::int64_t> which);

}  // namespace ssar
