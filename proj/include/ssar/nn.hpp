// SPDX-License-Identifier: Apache-2.0
//
// Layers, losses, initializers and the Adam optimizer.
#pragma once

#include <cstdint>
#include <map>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "ssar/ops.hpp"
#include "ssar/tensor.hpp"

namespace ssar::nn {

using Rng = std::mt19937_64;

// ---------------------------------------------------------------------------
// Parameters

/// Named trainable tensors plus non-trainable buffers (batch-norm running
/// statistics), keyed by dot-separated layer path. Iteration is in path order.
class ParamStore {
 public:
  Tensor& add_param(const std::string& path, Tensor value);
  Tensor& add_buffer(const std::string& path, Tensor value);

  bool has_param(const std::string& path) const { return params_.count(path) != 0; }
  bool has_buffer(const std::string& path) const { return buffers_.count(path) != 0; }
  Tensor& param(const std::string& path);
  const Tensor& param(const std::string& path) const;
  Tensor& buffer(const std::string& path);
  const Tensor& buffer(const std::string& path) const;

  std::map<std::string, Tensor>& params() { return params_; }
  const std::map<std::string, Tensor>& params() const { return params_; }
  std::map<std::string, Tensor>& buffers() { return buffers_; }
  const std::map<std::string, Tensor>& buffers() const { return buffers_; }

  std::int64_t parameter_count() const;
  void zero_grad();
  /// Paths (params only) that start with prefix.
  std::vector<std::string> paths_with_prefix(const std::string& prefix) const;

 private:
  std::map<std::string, Tensor> params_;
  std::map<std::string, Tensor> buffers_;
};

// ---------------------------------------------------------------------------
// Layers

struct Conv2dOptions {
  std::int64_t stride = 1;
  std::int64_t pad_h = 0;
  std::int64_t pad_w = 0;
};

/// Cross-correlation. x: B x C x H x W, weight: O x C x k x k, bias: O or
/// undefined. Output spatial size floor((H + 2p - k) / s) + 1.
Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias,
              const Conv2dOptions& options);

/// Transposed convolution, the adjoint of conv2d with respect to its input.
/// weight: C_in x O x k x k. Output size (H - 1) s - 2 p + k per axis.
Tensor deconv2d(const Tensor& x, const Tensor& weight, const Tensor& bias,
                const Conv2dOptions& options);

std::int64_t conv_out_size(std::int64_t in, std::int64_t k, std::int64_t s, std::int64_t p);
std::int64_t deconv_out_size(std::int64_t in, std::int64_t k, std::int64_t s, std::int64_t p);

struct BatchNormOptions {
  double momentum = 0.1;
  double eps = 1e-5;
};

/// Per-channel normalization over B*H*W (rank-4) or B (rank-2 input B x C).
/// In training mode uses biased batch variance and updates running_mean /
/// running_var (unbiased) in place; in eval mode uses the running values.
Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  Tensor& running_mean, Tensor& running_var, bool training,
                  const BatchNormOptions& options = {});

/// Window max; padded cells are ignored. Gradient goes to the first maximal
/// cell in row-major window order.
Tensor max_pool2d(const Tensor& x, std::int64_t kernel, std::int64_t stride,
                  std::int64_t pad);

/// x: B x F, weight: F' x F, bias: F' or undefined.
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

/// Gate rows are ordered (input, forget, cell, output).
struct LstmWeights {
  Tensor w_ih;  // 4H x I
  Tensor w_hh;  // 4H x H
  Tensor b_ih;  // 4H
  Tensor b_hh;  // 4H
};

struct LstmState {
  Tensor h;
  Tensor c;
};

LstmState lstm_step(const Tensor& x, const LstmState& state, const LstmWeights& w);

struct LstmOutput {
  /// Top-layer hidden state per time step, each B x H.
  std::vector<Tensor> top_hidden;
  /// Row i is the top-layer hidden at step lengths[i] - 1.
  Tensor final_hidden;
};

/// seq: T x B x I, zero-padded past each item's length. Layers run in order;
/// each starts from zero state.
LstmOutput lstm_forward(const Tensor& seq, std::span<const std::int64_t> lengths,
                        std::span<const LstmWeights> layers);

// ---------------------------------------------------------------------------
// Losses

/// Mean over the batch of -log softmax(logits)[target], via max-shifted
/// log-sum-exp.
Tensor softmax_cross_entropy(const Tensor& logits, std::span<const std::int64_t> targets);

/// Two-class per-pixel cross entropy. logits: B x 2 x H x W (channel 0 =
/// context, 1 = hand); mask: B x H x W with values in {0, 1}. Mean over B*H*W.
Tensor pixelwise_cross_entropy(const Tensor& logits, const Tensor& mask);

/// Softmax over axis 1 of a B x K x ... tensor (no gradient).
Tensor softmax_channels(const Tensor& logits);

// ---------------------------------------------------------------------------
// Initializers

/// Rows orthonormal when rows <= cols, otherwise columns. Rank >= 2 shapes
/// are flattened to rows = shape[0].
Tensor init_orthogonal(const Shape& shape, Rng& rng, DType dtype = DType::f32);
/// Normal with std sqrt(2 / (fan_in + fan_out)).
Tensor init_xavier_normal(const Shape& shape, Rng& rng, DType dtype = DType::f32);
/// Normal with std sqrt(2 / fan_in).
Tensor init_kaiming(const Shape& shape, Rng& rng, DType dtype = DType::f32);
Tensor init_zeros(const Shape& shape, DType dtype = DType::f32);

/// (fan_in, fan_out) using the receptive-field convention for rank-4 shapes.
std::pair<double, double> fans(const Shape& shape);

// ---------------------------------------------------------------------------
// Optimizer

struct AdamOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

class Adam {
 public:
  explicit Adam(AdamOptions options = {}) : options_(options) {}

  /// One bias-corrected update of every named parameter that has a gradient.
  /// Throws (naming the path) on a non-finite gradient, before touching any
  /// parameter.
  void step(std::map<std::string, Tensor>& params, double lr);
  void step(ParamStore& store, double lr) { step(store.params(), lr); }

  std::int64_t step_count() const { return step_; }
  const AdamOptions& options() const { return options_; }

  struct Moments {
    Tensor m;
    Tensor v;
  };
  std::map<std::string, Moments>& moments() { return moments_; }
  const std::map<std::string, Moments>& moments() const { return moments_; }
  void set_step_count(std::int64_t t) { step_ = t; }

 private:
  AdamOptions options_;
  std::int64_t step_ = 0;
  std::map<std::string, Moments> moments_;
};

}  // namespace ssar::nn
