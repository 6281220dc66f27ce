// SPDX-License-Identifier: Apache-2.0
#include <algorithm>

#include "ssar/nn.hpp"

namespace ssar::nn {

LstmState lstm_step(const Tensor& x, const LstmState& state, const LstmWeights& w) {
  if (x.rank() != 2 || state.h.rank() != 2 || state.c.rank() != 2)
    throw ShapeError("lstm_step: x, h and c must be rank 2");
  const auto hidden = state.h.dim(1);
  if (state.c.shape() != state.h.shape() || x.dim(0) != state.h.dim(0))
    throw ShapeError("lstm_step: batch or hidden size mismatch");
  if (w.w_ih.rank() != 2 || w.w_ih.dim(0) != 4 * hidden || w.w_ih.dim(1) != x.dim(1) ||
      w.w_hh.rank() != 2 || w.w_hh.dim(0) != 4 * hidden || w.w_hh.dim(1) != hidden ||
      w.b_ih.numel() != 4 * hidden || w.b_hh.numel() != 4 * hidden)
    throw ShapeError("lstm_step: weight shapes do not match input " + shape_str(x.shape()) +
                     " and hidden size " + std::to_string(hidden));

  const Tensor gates = add(linear(x, w.w_ih, w.b_ih), linear(state.h, w.w_hh, w.b_hh));
  const Tensor i = sigmoid(slice_cols(gates, 0, hidden));
  const Tensor f = sigmoid(slice_cols(gates, hidden, hidden));
  const Tensor g = tanh(slice_cols(gates, 2 * hidden, hidden));
  const Tensor o = sigmoid(slice_cols(gates, 3 * hidden, hidden));
  const Tensor c_next = add(mul(f, state.c), mul(i, g));
  const Tensor h_next = mul(o, tanh(c_next));
  return {h_next, c_next};
}

LstmOutput lstm_forward(const Tensor& seq, std::span<const std::int64_t> lengths,
                        std::span<const LstmWeights> layers) {
  if (seq.rank() != 3) throw ShapeError("lstm_forward: expected T x B x I input");
  if (layers.empty()) throw ShapeError("lstm_forward: no layers");
  const auto steps = seq.dim(0);
  const auto batch = seq.dim(1);
  if (static_cast<std::int64_t>(lengths.size()) != batch)
    throw ShapeError("lstm_forward: one length per batch item required");
  std::int64_t longest = 0;
  for (auto len : lengths) {
    if (len < 1) throw ShapeError("lstm_forward: sequence length must be >= 1");
    if (len > steps) throw ShapeError("lstm_forward: length exceeds padded T");
    longest = std::max(longest, len);
  }

  std::vector<Tensor> inputs;
  inputs.reserve(static_cast<std::size_t>(longest));
  for (std::int64_t t = 0; t < longest; ++t) inputs.push_back(select(seq, t));

  for (const auto& layer : layers) {
    const auto hidden = layer.w_hh.dim(1);
    LstmState state{Tensor::zeros({batch, hidden}, seq.dtype()),
                    Tensor::zeros({batch, hidden}, seq.dtype())};
    std::vector<Tensor> outputs;
    outputs.reserve(inputs.size());
    for (const auto& x : inputs) {
      state = lstm_step(x, state, layer);
      outputs.push_back(state.h);
    }
    inputs = std::move(outputs);
  }

  std::vector<std::int64_t> last(lengths.begin(), lengths.end());
  for (auto& v : last) v -= 1;
  LstmOutput out;
  out.final_hidden = take_rows(inputs, last);
  out.top_hidden = std::move(inputs);
  return out;
}

}  // namespace ssar::nn
