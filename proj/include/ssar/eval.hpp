// SPDX-License-Identifier: Apache-2.0
//
// Accuracy and confusion matrices, Grad-CAM, the three-mode ablation and
// report rendering.
#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ssar/data.hpp"
#include "ssar/model.hpp"
#include "ssar/train.hpp"

namespace ssar::eval {

namespace fs = std::filesystem;

/// Rows are true classes, columns predictions.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(std::int64_t k = 0);

  /// Throws std::out_of_range when either label is outside [0, k).
  void add(std::int64_t truth, std::int64_t predicted);

  std::int64_t classes() const { return k_; }
  std::int64_t at(std::int64_t truth, std::int64_t predicted) const;
  std::int64_t row_sum(std::int64_t truth) const;
  std::int64_t total() const { return total_; }
  std::int64_t trace() const;
  double accuracy() const;
  /// Throws std::logic_error if the row sums do not add up to total().
  void check() const;

 private:
  std::int64_t k_ = 0;
  std::int64_t total_ = 0;
  std::vector<std::int64_t> counts_;
};

struct ClassReport {
  std::int64_t label = 0;
  std::int64_t count = 0;
  std::int64_t correct = 0;
  /// Most frequent wrong prediction, -1 if none.
  std::int64_t most_confused = -1;
};

struct ScenarioReport {
  std::int64_t count = 0;
  std::int64_t correct = 0;
  double accuracy() const { return count ? static_cast<double>(correct) / count : 0.0; }
};

struct EvalReport {
  double accuracy = 0;
  ConfusionMatrix matrix;
  std::vector<ClassReport> per_class;
  std::map<std::string, ScenarioReport> scenarios;
  std::vector<std::string> ids;
  std::vector<std::int64_t> truth;
  std::vector<std::int64_t> predicted;
};

/// Builds the report from predictions; labels outside [0, k) throw.
EvalReport report_from_predictions(const std::vector<std::string>& ids,
                                   const std::vector<std::string>& scenarios,
                                   const std::vector<std::int64_t>& truth,
                                   const std::vector<std::int64_t>& predicted, std::int64_t k);

/// Sequence logits (N x K row-major) in eval mode. Sequences are embedded
/// one at a time and classified in padded batches of batch_size.
std::vector<double> sequence_logits(SsarModel& model, const std::vector<data::Sequence>& seqs,
                                    std::int64_t batch_size = 16);

/// One deterministic pass over seqs, optionally restricted to one scenario
/// ("walking" / "stationary"). Throws if nothing is left to evaluate.
EvalReport evaluate(SsarModel& model, const std::vector<data::Sequence>& seqs,
                    const std::optional<std::string>& scenario = std::nullopt,
                    std::int64_t batch_size = 16);

// ---------------------------------------------------------------------------
// Grad-CAM

struct CamMap {
  std::int64_t frame = 0;
  std::int64_t target_class = 0;
  std::int64_t h = 0, w = 0;  // encoder output resolution
  std::vector<double> coarse;  // h x w, in [0, 1]
  std::int64_t out_h = 0, out_w = 0;
  std::vector<double> upsampled;  // out_h x out_w, in [0, 1]
};

struct CamOptions {
  /// Defaults to the predicted class.
  std::optional<std::int64_t> target_class;
  /// Explain the per-frame embedding logit instead of the sequence logit.
  bool frame_level = false;
};

/// Channel weights are the spatial means of grad; the map is
/// ReLU(sum_k w_k A_k), min-max normalized. A constant map becomes all zero.
/// activations and grad: C x h x w.
std::vector<double> cam_from_gradients(const std::vector<double>& activations,
                                       const std::vector<double>& grad, std::int64_t c,
                                       std::int64_t h, std::int64_t w);

/// Bilinear resize with half-pixel centers (align_corners = false).
std::vector<double> upsample_bilinear(const std::vector<double>& src, std::int64_t h,
                                      std::int64_t w, std::int64_t out_h, std::int64_t out_w);

/// Attribution for one frame of a sequence, taken at the encoder output.
/// Other frames are held fixed. Throws std::out_of_range for a bad frame.
CamMap grad_cam(SsarModel& model, const data::Sequence& seq, std::int64_t frame_index,
                const CamOptions& options = {});

/// Fraction of the upsampled map's mass inside the bounding box of the mask
/// (H x W, nonzero = hand) grown by dilate pixels. Returns 0 for an empty
/// mask or an all-zero map.
double cam_mass_in_box(const CamMap& cam, const std::uint8_t* mask, std::int64_t dilate);

// ---------------------------------------------------------------------------
// Ablation

enum class AblationMode { simple_embedding, segmentation_based, full_finetune };

const char* mode_name(AblationMode mode);

struct PipelineConfig {
  train::StageConfig stage1, stage2, stage3, simple;
  std::uint64_t seed = 7;
};

/// Stage configs used for the tiny preset.
PipelineConfig tiny_pipeline(std::uint64_t seed = 7);

struct AblationEntry {
  AblationMode mode = AblationMode::simple_embedding;
  double accuracy = 0;
  std::int64_t count = 0;
  /// CRC32 of the evaluated ids and labels.
  std::uint32_t dataset = 0;
};

struct AblationReport {
  std::vector<AblationEntry> entries;  // simple, segmentation, fine-tune
};

std::uint32_t dataset_fingerprint(const std::vector<data::Sequence>& seqs);

/// Stages 1 and 2 (and 3 when finetune) on a fresh model.
SsarModel train_pipeline(const ModelConfig& config, const std::vector<data::Sequence>& train,
                         const std::vector<data::Sequence>& val, const PipelineConfig& cfg,
                         bool finetune);

/// Trains every mode from the same seed and evaluates each on test.
AblationReport ablation_run(const ModelConfig& config, const std::vector<data::Sequence>& train,
                            const std::vector<data::Sequence>& val,
                            const std::vector<data::Sequence>& test, const PipelineConfig& cfg);

/// Orders entries by mode. Throws on a missing or repeated mode or when the
/// entries were evaluated on different data.
AblationReport combine(std::vector<AblationEntry> entries);

std::string ablation_markdown(const AblationReport& report);

// ---------------------------------------------------------------------------
// Reports

/// Header row and column hold class indices; cell (i, j) counts true i
/// predicted j.
std::string confusion_csv(const ConfusionMatrix& m);

/// Heatmap blended over the RGB frame (H x W x 3).
std::vector<std::uint8_t> cam_overlay(const CamMap& cam, const std::uint8_t* rgb);

struct CamRender {
  std::string name;  // file stem
  CamMap cam;
  std::vector<std::uint8_t> rgb;  // out_h x out_w x 3
};

/// Writes confusion.csv, summary.md, summary.json and one PNG per cam.
void render_reports(const EvalReport& report, const std::vector<CamRender>& cams,
                    const fs::path& out_dir);

}  // namespace ssar::eval
