// SPDX-License-Identifier: Apache-2.0
//
// Encoder / decoder / embedding / sequence-classifier network.
//
// Parameter paths:
//   encoder.stem.{conv,bn}            7x7 s2 conv, then 3x3 s2 max-pool
//   encoder.layer1.{0,1}.*            basic blocks, stride 1
//   encoder.layer2.{0,1}.*            basic blocks, first one stride 2
//   encoder.conv3, encoder.conv4      3x3 s2 convs (+ bn3, bn4)
//   decoder.deconv1..5                4x4 s2 transposed convs, ReLU between
//   embed.fc1, embed.bn, embed.fc2    flatten (C,H,W row-major) -> hidden -> E
//   lstm.l<i>.*, lstm.fc              stacked LSTM and the class head
//
// Convolutions followed by batch norm carry no bias.
#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "ssar/nn.hpp"

namespace ssar {

struct ModelConfig {
  std::string preset = "paper";
  std::int64_t input_h = 126;
  std::int64_t input_w = 224;
  std::int64_t num_classes = 83;
  std::int64_t embedding_dim = 83;
  std::int64_t embed_hidden = 2048;
  std::int64_t lstm_hidden = 83;
  std::int64_t lstm_layers = 4;
  std::array<std::int64_t, 5> encoder_widths{64, 64, 128, 128, 256};
  std::array<std::int64_t, 5> decoder_widths{64, 32, 16, 8, 2};
  std::array<double, 3> norm_mean{0.5, 0.5, 0.5};
  std::array<double, 3> norm_std{0.5, 0.5, 0.5};

  static ModelConfig paper();
  /// 64x112 input, widths divided by four, five classes.
  static ModelConfig tiny();
  static ModelConfig from_preset(const std::string& name);

  /// Stable text form of every field; the checkpoint fingerprint hashes it.
  std::string canonical() const;
  std::uint32_t fingerprint() const;
};

/// Spatial sizes implied by a config. Throws ShapeError naming the first
/// layer whose arithmetic fails.
struct ModelGeometry {
  std::int64_t enc_h = 0, enc_w = 0;
  std::int64_t flatten = 0;
  std::int64_t final_pad_h = 0, final_pad_w = 0;
  /// (layer path, output shape without batch) in execution order.
  std::vector<std::pair<std::string, Shape>> layers;
};

ModelGeometry derive_geometry(const ModelConfig& config);

struct SsarModel {
  ModelConfig config;
  ModelGeometry geometry;
  nn::ParamStore params;
  /// Batch-norm mode: batch statistics when true, running statistics when false.
  bool training = false;
};

/// Fresh model. Conv and deconv weights Kaiming normal, linear weights Xavier
/// normal, LSTM input weights Xavier normal, every HxH block of the recurrent
/// weights orthogonal, biases zero, batch-norm gamma 1 / beta 0.
SsarModel build_model(const ModelConfig& config, std::uint64_t seed, DType dtype = DType::f32);

/// Re-draws the lstm.* parameters with the same policy (stage-2 start).
void reset_lstm(SsarModel& model, std::uint64_t seed);

/// uint8 RGB frames (N x H x W x 3, interleaved) to N x 3 x H x W normalized.
Tensor normalize_frames(const ModelConfig& config, const std::uint8_t* rgb, std::int64_t count,
                        DType dtype = DType::f32);

/// images: B x 3 x H x W normalized. Returns B x C x enc_h x enc_w.
Tensor encoder_forward(SsarModel& model, const Tensor& images);
/// hidden -> B x 2 x H x W logits (channel 0 context, 1 hand).
Tensor decoder_forward(SsarModel& model, const Tensor& hidden);
/// hidden -> B x embedding_dim.
Tensor embed(SsarModel& model, const Tensor& hidden);
/// embeddings: T x B x E, zero-padded past lengths. Returns B x K logits.
Tensor classify_sequence(SsarModel& model, const Tensor& embeddings,
                         std::span<const std::int64_t> lengths);

struct Recognition {
  std::int64_t label = 0;
  std::vector<double> probabilities;
  std::vector<double> logits;
};

/// Whole-sequence prediction from T x 3 x H x W normalized frames, in eval
/// mode and without gradients. The decoder is not run.
Recognition recognize(SsarModel& model, const Tensor& frames);

std::vector<nn::LstmWeights> lstm_weights(const SsarModel& model);

}  // namespace ssar
