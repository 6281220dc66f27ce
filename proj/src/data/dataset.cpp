// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "ssar/data.hpp"
#include "ssar/kernels.hpp"

namespace ssar::data {
namespace {

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream s(line);
  while (std::getline(s, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

std::int64_t parse_int(const std::string& text, const std::string& what, int line) {
  std::size_t used = 0;
  std::int64_t v = 0;
  try {
    v = std::stoll(text, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != text.size())
    throw std::runtime_error("manifest line " + std::to_string(line) + ": bad " + what + " '" +
                             text + "'");
  return v;
}

}  // namespace

std::string frame_name(std::int64_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%06lld.png", static_cast<long long>(index));
  return buf;
}

Manifest read_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open manifest '" + path.string() + "'");
  Manifest m;
  m.root = path.parent_path();
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("manifest '" + path.string() + "' is empty");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kManifestHeader)
    throw std::runtime_error("manifest header mismatch; expected '" + std::string(kManifestHeader) + "'");
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto f = split_csv(line);
    if (f.size() != 9)
      throw std::runtime_error("manifest line " + std::to_string(lineno) + ": expected 9 fields");
    SequenceRecord r;
    r.sequence_id = f[0];
    r.subject = f[1];
    r.scenario = f[2];
    r.label = parse_int(f[3], "label", lineno);
    r.split = f[4];
    r.frames_dir = f[5];
    r.depth_dir = f[6];
    r.mask_dir = f[7];
    r.num_frames = parse_int(f[8], "num_frames", lineno);
    if (r.sequence_id.empty()) throw std::runtime_error("manifest line " + std::to_string(lineno) + ": empty sequence_id");
    if (r.scenario != "stationary" && r.scenario != "walking")
      throw std::runtime_error("manifest line " + std::to_string(lineno) + ": scenario must be stationary or walking");
    if (!r.split.empty() && r.split != "train" && r.split != "val" && r.split != "test")
      throw std::runtime_error("manifest line " + std::to_string(lineno) + ": unknown split '" + r.split + "'");
    if (r.label < 0) throw std::runtime_error("manifest line " + std::to_string(lineno) + ": negative label");
    if (r.num_frames < 1) throw std::runtime_error("manifest line " + std::to_string(lineno) + ": num_frames must be >= 1");
    m.records.push_back(std::move(r));
  }
  return m;
}

void write_manifest(const fs::path& path, const Manifest& m) {
  std::ostringstream out;
  out << kManifestHeader << '\n';
  for (const auto& r : m.records) {
    for (const auto* field : {&r.sequence_id, &r.subject, &r.scenario, &r.split, &r.frames_dir,
                              &r.depth_dir, &r.mask_dir})
      if (field->find(',') != std::string::npos || field->find('\n') != std::string::npos)
        throw std::invalid_argument("manifest field contains a comma or newline: '" + *field + "'");
    out << r.sequence_id << ',' << r.subject << ',' << r.scenario << ',' << r.label << ','
        << r.split << ',' << r.frames_dir << ',' << r.depth_dir << ',' << r.mask_dir << ','
        << r.num_frames << '\n';
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write manifest '" + path.string() + "'");
  f << out.str();
  if (!f) throw std::runtime_error("error writing manifest '" + path.string() + "'");
}

Image8 depth_to_mask(const Image16& depth, int near_mm, int far_mm, int min_area_px) {
  if (near_mm >= far_mm) throw std::invalid_argument("depth_to_mask: near_mm must be < far_mm");
  if (min_area_px < 0) throw std::invalid_argument("depth_to_mask: min_area_px must be >= 0");
  const int w = depth.width, h = depth.height;
  Image8 mask{w, h, 1, std::vector<std::uint8_t>(static_cast<size_t>(w * h), 0)};
  for (size_t i = 0; i < mask.pixels.size(); ++i) {
    const int d = depth.pixels[i];
    mask.pixels[i] = d != 0 && d >= near_mm && d <= far_mm;
  }
  std::vector<std::int32_t> label(mask.pixels.size(), -1);
  std::vector<std::int32_t> stack, component;
  for (int start = 0; start < w * h; ++start) {
    if (!mask.pixels[static_cast<size_t>(start)] || label[static_cast<size_t>(start)] >= 0) continue;
    component.clear();
    stack.assign(1, start);
    label[static_cast<size_t>(start)] = start;
    while (!stack.empty()) {
      const int p = stack.back();
      stack.pop_back();
      component.push_back(p);
      const int y = p / w, x = p % w;
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
          const int ny = y + dy, nx = x + dx;
          if (ny < 0 || ny >= h || nx < 0 || nx >= w) continue;
          const auto q = static_cast<size_t>(ny * w + nx);
          if (mask.pixels[q] && label[q] < 0) {
            label[q] = start;
            stack.push_back(static_cast<int>(q));
          }
        }
    }
    if (static_cast<int>(component.size()) < min_area_px)
      for (int p : component) mask.pixels[static_cast<size_t>(p)] = 0;
  }
  return mask;
}

SplitCounts split_counts(std::int64_t n, const std::array<double, 3>& r) {
  for (double v : r)
    if (v < 0) throw std::invalid_argument("split ratios must be non-negative");
  if (std::abs(r[0] + r[1] + r[2] - 1.0) > 1e-9)
    throw std::invalid_argument("split ratios must sum to 1");
  SplitCounts c;
  // small epsilon so 0.2 * 10 lands on 2 despite binary rounding
  c.val = static_cast<std::int64_t>(std::floor(r[1] * static_cast<double>(n) + 1e-9));
  c.test = static_cast<std::int64_t>(std::floor(r[2] * static_cast<double>(n) + 1e-9));
  c.train = n - c.val - c.test;
  return c;
}

std::vector<std::int64_t> seeded_permutation(std::int64_t n, std::uint64_t seed) {
  std::vector<std::int64_t> p(static_cast<size_t>(n));
  std::iota(p.begin(), p.end(), 0);
  std::mt19937_64 rng(seed);
  for (std::int64_t i = n - 1; i > 0; --i) {
    const auto j = static_cast<std::int64_t>(rng() % static_cast<std::uint64_t>(i + 1));
    std::swap(p[static_cast<size_t>(i)], p[static_cast<size_t>(j)]);
  }
  return p;
}

namespace {

const char* split_for_rank(std::int64_t rank, const SplitCounts& c) {
  if (rank < c.train) return "train";
  if (rank < c.train + c.val) return "val";
  return "test";
}

}  // namespace

void split_sequences(Manifest& m, const std::array<double, 3>& ratios, std::uint64_t seed) {
  const auto n = static_cast<std::int64_t>(m.records.size());
  if (n == 0) throw std::invalid_argument("split: empty manifest");
  const auto counts = split_counts(n, ratios);
  const auto perm = seeded_permutation(n, seed);
  for (std::int64_t rank = 0; rank < n; ++rank)
    m.records[static_cast<size_t>(perm[static_cast<size_t>(rank)])].split = split_for_rank(rank, counts);
}

std::vector<FrameAssignment> split_frames(const Manifest& m, const std::array<double, 3>& ratios,
                                          std::uint64_t seed) {
  std::vector<FrameAssignment> frames;
  for (size_t s = 0; s < m.records.size(); ++s)
    for (std::int64_t f = 0; f < m.records[s].num_frames; ++f)
      frames.push_back({static_cast<std::int64_t>(s), f, ""});
  const auto n = static_cast<std::int64_t>(frames.size());
  if (n == 0) throw std::invalid_argument("split: empty manifest");
  const auto counts = split_counts(n, ratios);
  const auto perm = seeded_permutation(n, seed);
  for (std::int64_t rank = 0; rank < n; ++rank)
    frames[static_cast<size_t>(perm[static_cast<size_t>(rank)])].split = split_for_rank(rank, counts);
  return frames;
}

std::vector<Sequence> load_sequences(const Manifest& m, const LoadOptions& o) {
  std::vector<const SequenceRecord*> chosen;
  for (const auto& r : m.records)
    if (o.splits.empty() ||
        std::find(o.splits.begin(), o.splits.end(), r.split) != o.splits.end())
      chosen.push_back(&r);
  std::vector<Sequence> out(chosen.size());
  std::vector<std::string> errors(chosen.size());
  auto load_one = [&](std::size_t i) {
    const auto& r = *chosen[i];
    Sequence& s = out[i];
    s.id = r.sequence_id;
    s.scenario = r.scenario;
    s.split = r.split;
    s.label = r.label;
    s.length = r.num_frames;
    s.height = o.height;
    s.width = o.width;
    const auto plane = static_cast<size_t>(o.height * o.width);
    try {
      s.rgb.resize(static_cast<size_t>(r.num_frames) * plane * 3);
      const bool with_mask = o.masks && !r.mask_dir.empty();
      if (o.masks && r.mask_dir.empty()) throw std::runtime_error("no mask_dir");
      if (with_mask) s.mask.resize(static_cast<size_t>(r.num_frames) * plane);
      for (std::int64_t t = 0; t < r.num_frames; ++t) {
        const auto rgb_path = m.root / r.frames_dir / frame_name(t);
        if (!fs::exists(rgb_path)) throw std::runtime_error("missing frame " + rgb_path.string());
        const auto img = read_png8(rgb_path, 3);
        if (img.width != o.width || img.height != o.height)
          throw std::runtime_error("frame " + rgb_path.string() + " is " + std::to_string(img.width) +
                                   "x" + std::to_string(img.height) + ", expected " +
                                   std::to_string(o.width) + "x" + std::to_string(o.height));
        std::copy(img.pixels.begin(), img.pixels.end(),
                  s.rgb.begin() + static_cast<std::ptrdiff_t>(static_cast<size_t>(t) * plane * 3));
        if (with_mask) {
          const auto mask_path = m.root / r.mask_dir / frame_name(t);
          if (!fs::exists(mask_path)) throw std::runtime_error("missing mask " + mask_path.string());
          const auto mk = read_png8(mask_path, 1);
          if (mk.width != o.width || mk.height != o.height)
            throw std::runtime_error("mask " + mask_path.string() + " does not match frame size");
          for (size_t p = 0; p < plane; ++p)
            s.mask[static_cast<size_t>(t) * plane + p] = mk.pixels[p] >= 128;
        }
      }
    } catch (const std::exception& e) {
      errors[i] = "sequence '" + r.sequence_id + "': " + e.what();
    }
  };
  kernels::parallel_for(chosen.size(), load_one);
  for (const auto& e : errors)
    if (!e.empty()) throw std::runtime_error(e);
  return out;
}

}  // namespace ssar::data
