// SPDX-License-Identifier: Apache-2.0
//
// Images, manifests, depth-derived masks, splits, batching and the synthetic
// gesture generator.
#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace ssar::data {

namespace fs = std::filesystem;

struct Image8 {
  int width = 0, height = 0, channels = 0;
  std::vector<std::uint8_t> pixels;  // row-major, channels interleaved
};

struct Image16 {
  int width = 0, height = 0;
  std::vector<std::uint16_t> pixels;
};

/// Reads an 8-bit PNG, converted to the requested channel count (1 or 3).
Image8 read_png8(const fs::path& path, int channels);
/// Reads a 16-bit single-channel PNG.
Image16 read_png16(const fs::path& path);
void write_png(const fs::path& path, const Image8& image);
void write_png(const fs::path& path, const Image16& image);

/// Mask value 1 where near_mm <= depth <= far_mm (0 means invalid), then
/// 8-connected components smaller than min_area_px are cleared.
Image8 depth_to_mask(const Image16& depth, int near_mm, int far_mm, int min_area_px);

// ---------------------------------------------------------------------------
// Manifest

struct SequenceRecord {
  std::string sequence_id;
  std::string subject;
  std::string scenario;  // stationary | walking
  std::int64_t label = 0;
  std::string split;     // train | val | test | empty
  std::string frames_dir;
  std::string depth_dir;
  std::string mask_dir;
  std::int64_t num_frames = 0;
};

struct Manifest {
  /// Directory the relative paths in records are resolved against.
  fs::path root;
  std::vector<SequenceRecord> records;
};

inline constexpr const char* kManifestHeader =
    "sequence_id,subject,scenario,label,split,frames_dir,depth_dir,mask_dir,num_frames";

Manifest read_manifest(const fs::path& path);
void write_manifest(const fs::path& path, const Manifest& manifest);

/// Frame file name for index i: %06d.png.
std::string frame_name(std::int64_t index);

// ---------------------------------------------------------------------------
// Splits

enum class Granularity { frame, sequence };

struct SplitCounts {
  std::int64_t train = 0, val = 0, test = 0;
};

/// val = floor(r_val n), test = floor(r_test n), train takes the remainder.
SplitCounts split_counts(std::int64_t n, const std::array<double, 3>& ratios);

/// Seeded permutation of 0..n-1 (Fisher-Yates on mt19937_64).
std::vector<std::int64_t> seeded_permutation(std::int64_t n, std::uint64_t seed);

/// Assigns records[i].split in place at sequence granularity.
void split_sequences(Manifest& manifest, const std::array<double, 3>& ratios, std::uint64_t seed);

struct FrameAssignment {
  std::int64_t sequence = 0;  // index into manifest records
  std::int64_t frame = 0;
  std::string split;
};

/// Frame-granularity split: every frame of every sequence shuffled together,
/// regardless of video order. Returned in (sequence, frame) order.
std::vector<FrameAssignment> split_frames(const Manifest& manifest,
                                          const std::array<double, 3>& ratios,
                                          std::uint64_t seed);

// ---------------------------------------------------------------------------
// In-memory sequences and batching

struct Sequence {
  std::string id;
  std::string scenario;
  std::string split;
  std::int64_t label = 0;
  std::int64_t length = 0;
  int height = 0, width = 0;
  std::vector<std::uint8_t> rgb;   // T x H x W x 3
  std::vector<std::uint8_t> mask;  // T x H x W, values {0,1}; empty if none
};

struct LoadOptions {
  int height = 0, width = 0;  // required frame size
  bool masks = true;          // fail when a mask is missing
  std::vector<std::string> splits;  // empty = all
};

/// Loads frames (and masks) of the selected records. Errors name the
/// sequence_id whose frames are missing or malformed. Decoding uses the
/// kernel worker pool; output order follows the manifest.
std::vector<Sequence> load_sequences(const Manifest& manifest, const LoadOptions& options);

template <class T>
struct PaddedBatch {
  std::int64_t t_max = 0;
  std::int64_t row = 0;               // elements per step per item
  std::vector<std::size_t> items;     // indices into the input list
  std::vector<std::int64_t> lengths;
  std::vector<std::int64_t> labels;
  std::vector<T> data;                // t_max x B x row, zero past lengths
};

template <class T>
struct SeqView {
  std::span<const T> data;  // length x row
  std::int64_t length = 0;
  std::int64_t label = 0;
};

/// Consecutive groups of batch_size in the given order; the last batch may be
/// smaller.
template <class T>
std::vector<PaddedBatch<T>> pad_and_batch(const std::vector<SeqView<T>>& seqs,
                                          std::int64_t row, std::size_t batch_size) {
  if (batch_size < 1) throw std::invalid_argument("pad_and_batch: batch_size must be >= 1");
  std::vector<PaddedBatch<T>> out;
  for (std::size_t start = 0; start < seqs.size(); start += batch_size) {
    PaddedBatch<T> b;
    b.row = row;
    const std::size_t end = std::min(seqs.size(), start + batch_size);
    for (std::size_t i = start; i < end; ++i) {
      b.items.push_back(i);
      b.lengths.push_back(seqs[i].length);
      b.labels.push_back(seqs[i].label);
      b.t_max = std::max(b.t_max, seqs[i].length);
    }
    const auto batch = static_cast<std::int64_t>(b.items.size());
    b.data.assign(static_cast<std::size_t>(b.t_max * batch * row), T(0));
    for (std::int64_t j = 0; j < batch; ++j) {
      const auto& s = seqs[b.items[static_cast<std::size_t>(j)]];
      for (std::int64_t t = 0; t < s.length; ++t)
        std::copy_n(s.data.begin() + t * row, row,
                    b.data.begin() + (t * batch + j) * row);
    }
    out.push_back(std::move(b));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic generator

struct SynthOptions {
  fs::path out_dir;
  int num_classes = 5;
  int train_per_class = 20;
  int val_per_class = 6;
  int test_per_class = 6;
  int min_length = 8;
  int max_length = 20;
  int height = 64;
  int width = 112;
  double walking_fraction = 0.5;
  bool distractors = false;
  std::uint64_t seed = 7;
};

/// Class c moves a bright elliptical blob along trajectory c % 5 (0 left to
/// right sweep, 1 up-down sweep, 2 circle, 3 diagonal, 4 right-to-left
/// zig-zag); classes 5..9 play the same paths backwards. Writes RGB frames,
/// 16-bit depth, ground-truth masks and manifest.csv under out_dir.
Manifest synth_generate(const SynthOptions& options);

}  // namespace ssar::data
