// SPDX-License-Identifier: Apache-2.0
//
// Run configuration: flat key=value text, one pair per line, '#' comments.
// Keys mirror ModelConfig fields plus per-stage training settings suffixed
// _stage1, _stage2, _stage3 or _simple (e.g. lr_stage1=1e-6). `preset`
// selects the defaults and is applied before any other key.
#pragma once

#include <filesystem>
#include <map>
#include <string>

#include "ssar/eval.hpp"
#include "ssar/model.hpp"

namespace ssar::config {

struct RunConfig {
  ModelConfig model;
  eval::PipelineConfig stages;
  std::uint64_t seed = 7;

  /// Paper-scale (126x224, 83 classes) or tiny defaults.
  static RunConfig preset(const std::string& name);

  /// Every key in a fixed order, `key=value` per line.
  std::string resolved() const;
};

/// Throws std::invalid_argument naming the line for syntax errors, unknown
/// keys and bad values.
RunConfig parse(const std::string& text);
RunConfig load(const std::filesystem::path& path);

/// Applies key=value overrides on top of cfg (same rules as parse).
void apply(RunConfig& cfg, const std::map<std::string, std::string>& values);

/// Sets seed and every stage seed.
void set_seed(RunConfig& cfg, std::uint64_t seed);

}  // namespace ssar::config
