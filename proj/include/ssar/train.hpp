// SPDX-License-Identifier: Apache-2.0
//
// Three-stage training, checkpoints, embedding archives and metrics logs.
#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ssar/data.hpp"
#include "ssar/model.hpp"

namespace ssar::train {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Named tensor files

/// Writes magic, version, tensors in the given order, CRC32 footer.
void write_tensor_file(const fs::path& path,
                       const std::vector<std::pair<std::string, Tensor>>& tensors);
std::vector<std::pair<std::string, Tensor>> read_tensor_file(const fs::path& path);

/// Progress needed to continue an interrupted run exactly.
struct TrainState {
  std::int64_t step = 0;
  double lr = 0;
  double best_val = -1;
  std::int64_t bad_evals = 0;
  bool lr_dropped = false;
  // loss-divergence tracking (stage 2)
  double window_sum = 0;
  std::int64_t window_count = 0;
  double last_window_mean = 0;
  std::int64_t windows_seen = 0;
  std::int64_t rising_windows = 0;
  /// Parameters and buffers at the best validation score so far.
  std::map<std::string, Tensor> best;
};

struct Checkpoint {
  std::uint32_t fingerprint = 0;
  std::int64_t stage = 0;
  std::map<std::string, Tensor> tensors;  // params and buffers by path
  std::optional<nn::Adam> adam;
  std::optional<TrainState> state;
};

/// Parameters and buffers of model (restricted to paths starting with
/// prefix), optional optimizer and progress.
void save_checkpoint(const fs::path& path, const SsarModel& model, std::int64_t stage,
                     const nn::Adam* adam = nullptr, const TrainState* state = nullptr,
                     const std::string& prefix = "");
Checkpoint read_checkpoint(const fs::path& path);

/// Copies checkpoint tensors into model after checking the fingerprint,
/// shapes and that every path exists in the model.
void apply_checkpoint(const Checkpoint& ckpt, SsarModel& model);

// ---------------------------------------------------------------------------
// Embedding archive

struct EmbeddedSequence {
  std::string id;
  std::int64_t label = 0;
  std::int64_t length = 0;
  std::vector<float> data;  // length x dim
};

struct EmbeddingArchive {
  std::int64_t dim = 0;
  std::vector<EmbeddedSequence> sequences;
};

void write_archive(const fs::path& path, const EmbeddingArchive& archive);
/// dim must match the writer's; a mismatch is reported as an error.
EmbeddingArchive read_archive(const fs::path& path, std::int64_t dim);

/// Per-frame embeddings in eval mode, no gradients.
EmbeddingArchive export_embeddings(SsarModel& model, const std::vector<data::Sequence>& seqs,
                                   std::int64_t batch_frames = 64);

// ---------------------------------------------------------------------------
// Metrics

struct MetricsRecord {
  std::int64_t step = 0;
  std::int64_t stage = 0;
  double loss = 0;
  double seg_loss = 0;
  double label_loss = 0;
  std::optional<double> val_accuracy;
  double lr = 0;
};

std::string to_json_line(const MetricsRecord& r);
MetricsRecord parse_json_line(const std::string& line);

// ---------------------------------------------------------------------------
// Stages

struct StageConfig {
  int stage = 1;
  double lr = 1e-6;
  /// Stage 2: learning rate after the drop; 0 disables dropping.
  double lr_after = 0;
  /// Stage 2: explicit drop step (> 0), otherwise the divergence trigger.
  std::int64_t lr_drop_step = 0;
  std::int64_t divergence_window = 200;
  std::int64_t divergence_windows = 3;
  std::int64_t batch_size = 100;
  std::int64_t max_epochs = 20;
  /// Stop after this many optimizer steps in total (0 = no limit); the run
  /// can then be resumed from its checkpoint.
  std::int64_t max_steps = 0;
  /// Validation every this many steps; 0 = once per epoch.
  std::int64_t eval_every = 0;
  std::int64_t patience = 5;
  /// Stop once the training loss of a step falls below this (0 = off).
  double target_loss = 0;
  std::uint64_t seed = 7;
  double seg_weight = 1.0;
  double label_weight = 1.0;
};

void validate(const StageConfig& cfg);

struct FrameSet {
  int height = 0, width = 0;
  std::vector<std::uint8_t> rgb;   // N x H x W x 3
  std::vector<std::uint8_t> mask;  // N x H x W in {0,1}
  std::vector<std::int64_t> labels;
  std::int64_t size() const { return static_cast<std::int64_t>(labels.size()); }
};

/// Frames whose mask has at least one hand pixel.
FrameSet frames_with_hand(const std::vector<data::Sequence>& seqs);

struct TrainResult {
  std::int64_t steps = 0;
  double best_val = -1;
  bool early_stopped = false;
  bool finished = false;  // false when stopped by max_steps
  std::vector<MetricsRecord> records;
};

using MetricsSink = std::function<void(const MetricsRecord&)>;

/// Resumable loop state passed in and out of each stage. A default-
/// constructed value starts a fresh run.
struct RunContext {
  nn::Adam adam;
  std::optional<TrainState> state;
  MetricsSink sink;
};

/// Encoder, decoder and embedding generator on shuffled frames; loss =
/// pixelwise CE + CE on the embedding as per-frame logits. Validation:
/// per-frame embedding argmax accuracy on val.
TrainResult train_stage1(SsarModel& model, const FrameSet& train, const FrameSet& val,
                         const StageConfig& cfg, RunContext& ctx);

/// LSTM and classifier head on stored embeddings; only lstm.* changes.
TrainResult train_stage2(SsarModel& model, const EmbeddingArchive& train,
                         const EmbeddingArchive& val, const StageConfig& cfg, RunContext& ctx);

/// Whole network, one sequence per step; loss = sequence CE + mean per-frame
/// segmentation CE. Batch norm uses running statistics.
TrainResult train_stage3(SsarModel& model, const std::vector<data::Sequence>& train,
                         const std::vector<data::Sequence>& val, const StageConfig& cfg,
                         RunContext& ctx);

/// Simple-embedding baseline: encoder + embed + LSTM end-to-end with the
/// sequence label loss only; the decoder is never used.
TrainResult train_simple(SsarModel& model, const std::vector<data::Sequence>& train,
                         const std::vector<data::Sequence>& val, const StageConfig& cfg,
                         RunContext& ctx);

// ---------------------------------------------------------------------------
// Shared evaluation helpers

/// Per-frame accuracy of argmax(embedding) against frame labels.
double frame_accuracy(SsarModel& model, const FrameSet& frames, std::int64_t batch = 64);
/// Sequence logits (N x K row-major) from archived embeddings.
std::vector<double> archive_logits(SsarModel& model, const EmbeddingArchive& archive,
                                   std::int64_t batch = 100);
std::vector<std::int64_t> argmax_rows(const std::vector<double>& logits, std::int64_t k);
double accuracy(const std::vector<std::int64_t>& predicted, const std::vector<std::int64_t>& truth);

}  // namespace ssar::train
