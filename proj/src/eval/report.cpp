// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>

#include "json.hpp"
#include "ssar/eval.hpp"

namespace ssar::eval {
namespace {

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
  f << text;
  if (!f.flush()) throw std::runtime_error("write failed: '" + path.string() + "'");
}

std::string fixed(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

// Jet-style ramp.
double ramp(double x) { return std::clamp(1.5 - std::abs(x), 0.0, 1.0); }

}  // namespace

std::string confusion_csv(const ConfusionMatrix& m) {
  std::string out = "true\\pred";
  for (std::int64_t j = 0; j < m.classes(); ++j) out += "," + std::to_string(j);
  out += "\n";
  for (std::int64_t i = 0; i < m.classes(); ++i) {
    out += std::to_string(i);
    for (std::int64_t j = 0; j < m.classes(); ++j) out += "," + std::to_string(m.at(i, j));
    out += "\n";
  }
  return out;
}

std::vector<std::uint8_t> cam_overlay(const CamMap& cam, const std::uint8_t* rgb) {
  const auto n = static_cast<size_t>(cam.out_h * cam.out_w);
  if (cam.upsampled.size() != n) throw std::invalid_argument("cam_overlay: map size mismatch");
  std::vector<std::uint8_t> out(n * 3);
  for (size_t i = 0; i < n; ++i) {
    const double v = std::clamp(cam.upsampled[i], 0.0, 1.0);
    const double heat[3] = {ramp(4 * v - 3), ramp(4 * v - 2), ramp(4 * v - 1)};
    for (size_t ch = 0; ch < 3; ++ch) {
      const double mixed = 0.5 * rgb[i * 3 + ch] + 0.5 * 255.0 * heat[ch];
      out[i * 3 + ch] = static_cast<std::uint8_t>(std::lround(std::clamp(mixed, 0.0, 255.0)));
    }
  }
  return out;
}

void render_reports(const EvalReport& report, const std::vector<CamRender>& cams,
                    const fs::path& out_dir) {
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw std::runtime_error("cannot create '" + out_dir.string() + "': " + ec.message());
  report.matrix.check();
  write_text(out_dir / "confusion.csv", confusion_csv(report.matrix));

  std::vector<std::string> cam_files;
  for (const auto& c : cams) {
    data::Image8 img;
    img.width = static_cast<int>(c.cam.out_w);
    img.height = static_cast<int>(c.cam.out_h);
    img.channels = 3;
    if (c.rgb.size() != static_cast<size_t>(img.width) * static_cast<size_t>(img.height) * 3)
      throw std::invalid_argument("render_reports: frame size does not match cam '" + c.name + "'");
    img.pixels = cam_overlay(c.cam, c.rgb.data());
    const std::string file = c.name + ".png";
    data::write_png(out_dir / file, img);
    cam_files.push_back(file);
  }

  std::string md = "# Evaluation\n\n";
  md += "Accuracy: " + fixed(report.accuracy) + " (" + std::to_string(report.matrix.trace()) + " / " +
        std::to_string(report.matrix.total()) + ")\n\n";
  md += "| Scenario | Sequences | Accuracy |\n|---|---|---|\n";
  for (const auto& [name, s] : report.scenarios)
    md += "| " + name + " | " + std::to_string(s.count) + " | " + fixed(s.accuracy()) + " |\n";
  md += "\n| Class | Sequences | Correct | Most confused with |\n|---|---|---|---|\n";
  for (const auto& c : report.per_class)
    md += "| " + std::to_string(c.label) + " | " + std::to_string(c.count) + " | " +
          std::to_string(c.correct) + " | " +
          (c.most_confused < 0 ? std::string("-") : std::to_string(c.most_confused)) + " |\n";
  md += "\nConfusion matrix: confusion.csv (rows true, columns predicted).\n";
  if (!cam_files.empty()) {
    md += "\n## Grad-CAM\n\n";
    for (size_t i = 0; i < cams.size(); ++i)
      md += "- " + cam_files[i] + ": frame " + std::to_string(cams[i].cam.frame) + ", class " +
            std::to_string(cams[i].cam.target_class) + "\n";
  }
  write_text(out_dir / "summary.md", md);

  nlohmann::ordered_json j;
  j["accuracy"] = report.accuracy;
  j["total"] = report.matrix.total();
  j["correct"] = report.matrix.trace();
  auto& sc = j["scenarios"] = nlohmann::ordered_json::object();
  for (const auto& [name, s] : report.scenarios)
    sc[name] = {{"count", s.count}, {"correct", s.correct}, {"accuracy", s.accuracy()}};
  auto& pc = j["per_class"] = nlohmann::ordered_json::array();
  for (const auto& c : report.per_class)
    pc.push_back({{"label", c.label}, {"count", c.count}, {"correct", c.correct},
                  {"most_confused", c.most_confused}});
  auto& rows = j["confusion"] = nlohmann::ordered_json::array();
  for (std::int64_t r = 0; r < report.matrix.classes(); ++r) {
    auto row = nlohmann::ordered_json::array();
    for (std::int64_t col = 0; col < report.matrix.classes(); ++col) row.push_back(report.matrix.at(r, col));
    rows.push_back(row);
  }
  auto& preds = j["predictions"] = nlohmann::ordered_json::array();
  for (size_t i = 0; i < report.ids.size(); ++i)
    preds.push_back({{"id", report.ids[i]}, {"label", report.truth[i]}, {"predicted", report.predicted[i]}});
  j["cams"] = cam_files;
  write_text(out_dir / "summary.json", j.dump(2) + "\n");
}

}  // namespace ssar::eval
