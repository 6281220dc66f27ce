// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <cstdio>
#include <numbers>
#include <random>

#include "ssar/data.hpp"

namespace ssar::data {
namespace {

constexpr double kPi = std::numbers::pi;

struct Point {
  double x, y;  // fractions of width / height
};

Point trajectory(int kind, double u, double phase, double off) {
  switch (kind) {
    case 0:
      return {0.18 + 0.64 * u, 0.32 + off};
    case 1:
      return {0.5 + off, 0.22 + 0.56 * u};
    case 2: {
      const double a = 2 * kPi * u + phase;
      return {0.5 + 0.25 * std::cos(a), 0.5 + 0.26 * std::sin(a)};
    }
    case 3:
      return {0.2 + 0.6 * u, 0.24 + 0.52 * u + off * 0.5};
    default:
      return {0.82 - 0.64 * u, 0.62 + 0.16 * std::sin(4 * kPi * u)};
  }
}

// Deterministic per-pixel noise in [-1, 1].
double hash_noise(std::uint64_t a, std::uint64_t b, std::uint64_t c) {
  std::uint64_t h = a * 0x9E3779B97F4A7C15ull ^ (b + 0x632BE59BD9B4E019ull) * 0xBF58476D1CE4E5B9ull ^
                    (c + 0x94D049BB133111EBull) * 0xD6E8FEB86659FD93ull;
  h ^= h >> 31;
  h *= 0x94D049BB133111EBull;
  h ^= h >> 29;
  return static_cast<double>(h >> 11) / static_cast<double>(1ull << 52) - 1.0;
}

std::uint8_t clamp8(double v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 255.0)));
}

struct Wave {
  double fx, fy, phase, amp;
};

struct Distractor {
  double x, y, vx, vy, radius;
  std::array<double, 3> color;
};

struct Background {
  std::array<double, 3> base;
  std::array<std::array<Wave, 3>, 3> waves;
};

// Backgrounds come from a small pool shared by all classes so that scenery
// carries no label information.
std::vector<Background> background_pool(std::uint64_t seed, int size) {
  std::mt19937_64 rng(seed ^ 0xB4C6D8E0F1A3C5E7ull);
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  auto range = [&](double lo, double hi) { return lo + (hi - lo) * uni(rng); };
  std::vector<Background> pool(static_cast<size_t>(size));
  for (auto& b : pool) {
    b.base = {range(70, 150), range(70, 150), range(70, 150)};
    for (auto& ch : b.waves)
      for (auto& wv : ch) wv = {range(0.02, 0.15), range(0.02, 0.15), range(0, 2 * kPi), range(10, 30)};
  }
  return pool;
}

void write_sequence(const SynthOptions& o, const fs::path& root, const SequenceRecord& rec,
                    std::mt19937_64& rng, int kind, bool reversed, bool walking,
                    const std::vector<Background>& pool) {
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  auto range = [&](double lo, double hi) { return lo + (hi - lo) * uni(rng); };
  const int h = o.height, w = o.width;
  const auto plane = static_cast<size_t>(h * w);

  const Background& bg = pool[static_cast<size_t>(rng() % pool.size())];
  const auto& base = bg.base;
  const auto& waves = bg.waves;
  const double vx = walking ? (uni(rng) < 0.5 ? -1 : 1) * range(1.5, 3.0) * w / 112.0 : 0.0;
  const double vy = walking ? range(-1.0, 1.0) * h / 64.0 : 0.0;
  const double shake = walking ? range(1.0, 2.5) : 0.0;

  const double rx = 0.085 * w * range(0.95, 1.05), ry = 0.16 * h * range(0.95, 1.05);
  const std::array<double, 3> skin{range(220, 230), range(175, 185), range(145, 155)};
  const double phase = range(0, 2 * kPi), off = range(-0.04, 0.04);

  std::vector<Distractor> objects;
  if (o.distractors)
    for (int k = 0; k < 2; ++k)
      objects.push_back({range(0.1, 0.9) * w, range(0.1, 0.9) * h, range(-3, 3) * w / 112.0,
                         range(-2, 2) * h / 64.0, range(0.07, 0.11) * h,
                         {range(150, 255), range(150, 255), range(40, 120)}});

  std::uint64_t seq_key = 0xcbf29ce484222325ull;  // FNV-1a
  for (unsigned char ch : rec.sequence_id) seq_key = (seq_key ^ ch) * 0x100000001b3ull;
  fs::create_directories(root / rec.frames_dir);
  fs::create_directories(root / rec.depth_dir);
  fs::create_directories(root / rec.mask_dir);
  const std::int64_t T = rec.num_frames;
  for (std::int64_t t = 0; t < T; ++t) {
    double u = T > 1 ? static_cast<double>(t) / static_cast<double>(T - 1) : 0.0;
    if (reversed) u = 1.0 - u;
    const Point p = trajectory(kind, u, phase, off);
    const double cx = p.x * w, cy = p.y * h;
    const double ox = vx * static_cast<double>(t) + shake * std::sin(1.3 * static_cast<double>(t));
    const double oy = vy * static_cast<double>(t) + shake * std::cos(1.7 * static_cast<double>(t));

    Image8 rgb{w, h, 3, std::vector<std::uint8_t>(plane * 3)};
    Image8 mask{w, h, 1, std::vector<std::uint8_t>(plane, 0)};
    Image16 depth{w, h, std::vector<std::uint16_t>(plane)};
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const auto i = static_cast<size_t>(y * w + x);
        const double sx = x + ox, sy = y + oy;
        for (int ch = 0; ch < 3; ++ch) {
          double v = base[static_cast<size_t>(ch)];
          for (const auto& wv : waves[static_cast<size_t>(ch)])
            v += wv.amp * std::sin(wv.fx * sx + wv.fy * sy + wv.phase);
          v += 8 * hash_noise(seq_key, i * 3 + static_cast<size_t>(ch), static_cast<std::uint64_t>(t));
          rgb.pixels[i * 3 + static_cast<size_t>(ch)] = clamp8(v);
        }
        depth.pixels[i] = static_cast<std::uint16_t>(1500 + 300 * std::sin(0.05 * sx) * std::cos(0.07 * sy));
      }

    for (auto& d : objects) {
      d.x += d.vx;
      d.y += d.vy;
      if (d.x < 0 || d.x >= w) d.vx = -d.vx, d.x = std::clamp(d.x, 0.0, w - 1.0);
      if (d.y < 0 || d.y >= h) d.vy = -d.vy, d.y = std::clamp(d.y, 0.0, h - 1.0);
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
          const double dx = x + 0.5 - d.x, dy = y + 0.5 - d.y;
          if (dx * dx + dy * dy > d.radius * d.radius) continue;
          const auto i = static_cast<size_t>(y * w + x);
          for (size_t ch = 0; ch < 3; ++ch) rgb.pixels[i * 3 + ch] = clamp8(d.color[ch]);
          depth.pixels[i] = 900;
        }
    }

    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const double dx = (x + 0.5 - cx) / rx, dy = (y + 0.5 - cy) / ry;
        const double r2 = dx * dx + dy * dy;
        if (r2 > 1.0) continue;
        const auto i = static_cast<size_t>(y * w + x);
        const double shade = 1.0 - 0.25 * r2;
        for (size_t ch = 0; ch < 3; ++ch) rgb.pixels[i * 3 + ch] = clamp8(skin[ch] * shade);
        mask.pixels[i] = 1;
        depth.pixels[i] = static_cast<std::uint16_t>(300 + 60 * r2);
      }

    // Sensor artifacts away from the hand: near specks below the minimum
    // component area and invalid (zero) readings.
    std::mt19937_64 frame_rng(seq_key ^ (static_cast<std::uint64_t>(t) * 0x9E3779B97F4A7C15ull));
    auto far_from_hand = [&](int x, int y) {
      const double dx = (x + 0.5 - cx) / (1.6 * rx), dy = (y + 0.5 - cy) / (1.6 * ry);
      return dx * dx + dy * dy > 1.0;
    };
    for (int k = 0; k < 4; ++k) {
      const int sx = static_cast<int>(frame_rng() % static_cast<std::uint64_t>(w - 2));
      const int sy = static_cast<int>(frame_rng() % static_cast<std::uint64_t>(h - 2));
      if (!far_from_hand(sx, sy) || !far_from_hand(sx + 1, sy + 1)) continue;
      for (int dy = 0; dy < 2; ++dy)
        for (int dx = 0; dx < 2; ++dx) depth.pixels[static_cast<size_t>((sy + dy) * w + sx + dx)] = 250;
    }
    for (int k = 0; k < static_cast<int>(plane / 100); ++k) {
      const auto i = static_cast<size_t>(frame_rng() % plane);
      if (!mask.pixels[i]) depth.pixels[i] = 0;
    }

    for (auto& v : mask.pixels) v = v ? 255 : 0;
    const auto name = frame_name(t);
    write_png(root / rec.frames_dir / name, rgb);
    write_png(root / rec.mask_dir / name, mask);
    write_png(root / rec.depth_dir / name, depth);
  }
}

}  // namespace

Manifest synth_generate(const SynthOptions& o) {
  if (o.num_classes < 1 || o.num_classes > 10)
    throw std::invalid_argument("synth: classes must be in [1, 10]");
  if (o.min_length < 1 || o.max_length < o.min_length)
    throw std::invalid_argument("synth: invalid length range");
  if (o.train_per_class < 0 || o.val_per_class < 0 || o.test_per_class < 0 ||
      o.train_per_class + o.val_per_class + o.test_per_class < 1)
    throw std::invalid_argument("synth: need at least one sequence per class");
  if (o.height < 32 || o.width < 32) throw std::invalid_argument("synth: frames must be at least 32x32");
  if (o.walking_fraction < 0 || o.walking_fraction > 1)
    throw std::invalid_argument("synth: walking fraction must be in [0, 1]");

  fs::create_directories(o.out_dir);
  const auto pool = background_pool(o.seed, 6);
  Manifest m;
  m.root = o.out_dir;
  const int per_class = o.train_per_class + o.val_per_class + o.test_per_class;
  for (int c = 0; c < o.num_classes; ++c)
    for (int i = 0; i < per_class; ++i) {
      std::seed_seq seq{static_cast<std::uint32_t>(o.seed), static_cast<std::uint32_t>(o.seed >> 32),
                        static_cast<std::uint32_t>(c), static_cast<std::uint32_t>(i)};
      std::mt19937_64 rng(seq);
      char id[32];
      std::snprintf(id, sizeof id, "g%02d_%03d", c, i);
      SequenceRecord r;
      r.sequence_id = id;
      r.subject = "s" + std::to_string(i % 4);
      const bool walking = std::uniform_real_distribution<double>(0, 1)(rng) < o.walking_fraction;
      r.scenario = walking ? "walking" : "stationary";
      r.label = c;
      r.split = i < o.train_per_class                    ? "train"
                : i < o.train_per_class + o.val_per_class ? "val"
                                                          : "test";
      r.frames_dir = "frames/" + r.sequence_id;
      r.depth_dir = "depth/" + r.sequence_id;
      r.mask_dir = "masks/" + r.sequence_id;
      r.num_frames = std::uniform_int_distribution<int>(o.min_length, o.max_length)(rng);
      write_sequence(o, o.out_dir, r, rng, c % 5, c >= 5, walking, pool);
      m.records.push_back(std::move(r));
    }
  write_manifest(o.out_dir / "manifest.csv", m);
  return m;
}

}  // namespace ssar::data
