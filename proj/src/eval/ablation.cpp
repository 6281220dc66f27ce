// SPDX-License-Identifier: Apache-2.0
#include <zlib.h>

#include <algorithm>
#include <cstdio>
#include <stdexcept>

#include "ssar/eval.hpp"
#include "ssar/log.hpp"

namespace ssar::eval {

const char* mode_name(AblationMode mode) {
  switch (mode) {
    case AblationMode::simple_embedding: return "simple_embedding";
    case AblationMode::segmentation_based: return "segmentation_based";
    case AblationMode::full_finetune: return "full_finetune";
  }
  return "unknown";
}

PipelineConfig tiny_pipeline(std::uint64_t seed) {
  PipelineConfig p;
  p.seed = seed;
  p.stage1.stage = 1;
  p.stage1.lr = 1e-3;
  p.stage1.batch_size = 32;
  p.stage1.max_epochs = 8;
  p.stage1.patience = 5;

  p.stage2.stage = 2;
  p.stage2.lr = 1e-2;
  p.stage2.lr_after = 1e-3;
  p.stage2.batch_size = 20;
  p.stage2.max_epochs = 200;
  p.stage2.patience = 10;

  p.stage3.stage = 3;
  p.stage3.lr = 3e-5;
  p.stage3.max_epochs = 8;
  p.stage3.patience = 5;

  p.simple = p.stage3;
  p.simple.lr = 1e-3;
  for (auto* s : {&p.stage1, &p.stage2, &p.stage3, &p.simple}) s->seed = seed;
  return p;
}

std::uint32_t dataset_fingerprint(const std::vector<data::Sequence>& seqs) {
  uLong crc = crc32(0L, Z_NULL, 0);
  for (const auto& s : seqs) {
    const std::string key = s.id + ":" + std::to_string(s.label) + ";";
    crc = crc32(crc, reinterpret_cast<const Bytef*>(key.data()), static_cast<uInt>(key.size()));
  }
  return static_cast<std::uint32_t>(crc);
}

SsarModel train_pipeline(const ModelConfig& config, const std::vector<data::Sequence>& train,
                         const std::vector<data::Sequence>& val, const PipelineConfig& cfg,
                         bool finetune) {
  SsarModel m = build_model(config, cfg.seed);
  {
    train::RunContext ctx;
    train::train_stage1(m, train::frames_with_hand(train), train::frames_with_hand(val), cfg.stage1, ctx);
  }
  {
    const auto a_train = train::export_embeddings(m, train);
    const auto a_val = train::export_embeddings(m, val);
    reset_lstm(m, cfg.seed + 1);
    train::RunContext ctx;
    train::train_stage2(m, a_train, a_val, cfg.stage2, ctx);
  }
  if (finetune) {
    train::RunContext ctx;
    train::train_stage3(m, train, val, cfg.stage3, ctx);
  }
  return m;
}

AblationReport ablation_run(const ModelConfig& config, const std::vector<data::Sequence>& train,
                            const std::vector<data::Sequence>& val,
                            const std::vector<data::Sequence>& test, const PipelineConfig& cfg) {
  if (test.empty()) throw std::invalid_argument("ablation: empty evaluation split");
  const auto fp = dataset_fingerprint(test);
  std::vector<AblationEntry> entries;
  auto record = [&](AblationMode mode, SsarModel& m) {
    const auto r = evaluate(m, test);
    entries.push_back({mode, r.accuracy, r.matrix.total(), fp});
    log::info(std::string("ablation ") + mode_name(mode) + ": accuracy " + std::to_string(r.accuracy));
  };
  {
    SsarModel m = build_model(config, cfg.seed);
    train::RunContext ctx;
    train::train_simple(m, train, val, cfg.simple, ctx);
    record(AblationMode::simple_embedding, m);
  }
  // Fine-tuning continues from the stage-2 model, which is exactly what a
  // separate three-stage run with the same seed would produce.
  SsarModel m = train_pipeline(config, train, val, cfg, false);
  record(AblationMode::segmentation_based, m);
  train::RunContext ctx;
  train::train_stage3(m, train, val, cfg.stage3, ctx);
  record(AblationMode::full_finetune, m);
  return combine(std::move(entries));
}

AblationReport combine(std::vector<AblationEntry> entries) {
  if (entries.size() != 3) throw std::invalid_argument("ablation: expected exactly three modes");
  std::sort(entries.begin(), entries.end(),
            [](const auto& a, const auto& b) { return a.mode < b.mode; });
  for (size_t i = 0; i < entries.size(); ++i) {
    if (static_cast<int>(entries[i].mode) != static_cast<int>(i))
      throw std::invalid_argument("ablation: missing or repeated mode");
    if (entries[i].dataset != entries[0].dataset || entries[i].count != entries[0].count)
      throw std::invalid_argument(std::string("ablation: mode ") + mode_name(entries[i].mode) +
                                  " was evaluated on different data");
  }
  return {std::move(entries)};
}

std::string ablation_markdown(const AblationReport& report) {
  static const char* labels[] = {"Simple embedding (no decoder)", "Segmentation-based (stages 1-2)",
                                 "Full fine-tune (stages 1-3)"};
  std::string out = "| Method | Accuracy |\n|---|---|\n";
  char buf[32];
  for (const auto& e : report.entries) {
    std::snprintf(buf, sizeof buf, "%.4f", e.accuracy);
    out += std::string("| ") + labels[static_cast<int>(e.mode)] + " | " + buf + " |\n";
  }
  if (!report.entries.empty())
    out += "\nEvaluated on " + std::to_string(report.entries.front().count) + " sequences.\n";
  return out;
}

}  // namespace ssar::eval
