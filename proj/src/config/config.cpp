// SPDX-License-Identifier: Apache-2.0
#include "ssar/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>
#include <stdexcept>
#include <vector>

namespace ssar::config {
namespace {

template <class T>
T parse_number(const std::string& key, const std::string& v) {
  T out{};
  const auto* end = v.data() + v.size();
  auto [p, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || p != end || v.empty())
    throw std::invalid_argument("invalid value '" + v + "' for key '" + key + "'");
  return out;
}

template <class T>
std::string show(T v) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, p);
}

std::array<std::int64_t, 5> parse_widths(const std::string& key, const std::string& v) {
  std::array<std::int64_t, 5> out{};
  std::stringstream ss(v);
  std::string item;
  size_t i = 0;
  while (std::getline(ss, item, ',')) {
    if (i == 5) throw std::invalid_argument("key '" + key + "' takes five comma-separated widths");
    out[i++] = parse_number<std::int64_t>(key, item);
  }
  if (i != 5) throw std::invalid_argument("key '" + key + "' takes five comma-separated widths");
  return out;
}

std::string show_widths(const std::array<std::int64_t, 5>& w) {
  std::string s;
  for (size_t i = 0; i < w.size(); ++i) s += (i ? "," : "") + std::to_string(w[i]);
  return s;
}

struct Field {
  std::string key;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

template <class T, class Get>
Field number_field(std::string key, Get get) {
  return {key,
          [key, get](RunConfig& c, const std::string& v) { get(c) = parse_number<T>(key, v); },
          [get](const RunConfig& c) { return show(get(const_cast<RunConfig&>(c))); }};
}

const std::vector<Field>& fields() {
  static const std::vector<Field> all = [] {
    std::vector<Field> f;
    using I = std::int64_t;
    f.push_back(number_field<I>("input_h", [](RunConfig& c) -> I& { return c.model.input_h; }));
    f.push_back(number_field<I>("input_w", [](RunConfig& c) -> I& { return c.model.input_w; }));
    f.push_back(number_field<I>("num_classes", [](RunConfig& c) -> I& { return c.model.num_classes; }));
    f.push_back(number_field<I>("embedding_dim", [](RunConfig& c) -> I& { return c.model.embedding_dim; }));
    f.push_back(number_field<I>("embed_hidden", [](RunConfig& c) -> I& { return c.model.embed_hidden; }));
    f.push_back(number_field<I>("lstm_hidden", [](RunConfig& c) -> I& { return c.model.lstm_hidden; }));
    f.push_back(number_field<I>("lstm_layers", [](RunConfig& c) -> I& { return c.model.lstm_layers; }));
    f.push_back({"encoder_widths",
                 [](RunConfig& c, const std::string& v) { c.model.encoder_widths = parse_widths("encoder_widths", v); },
                 [](const RunConfig& c) { return show_widths(c.model.encoder_widths); }});
    f.push_back({"decoder_widths",
                 [](RunConfig& c, const std::string& v) { c.model.decoder_widths = parse_widths("decoder_widths", v); },
                 [](const RunConfig& c) { return show_widths(c.model.decoder_widths); }});

    const std::pair<const char*, train::StageConfig eval::PipelineConfig::*> stages[] = {
        {"stage1", &eval::PipelineConfig::stage1},
        {"stage2", &eval::PipelineConfig::stage2},
        {"stage3", &eval::PipelineConfig::stage3},
        {"simple", &eval::PipelineConfig::simple}};
    for (const auto& [suffix, member] : stages) {
      const std::string s = std::string("_") + suffix;
      auto st = [member](RunConfig& c) -> train::StageConfig& { return c.stages.*member; };
      f.push_back(number_field<double>("lr" + s, [st](RunConfig& c) -> double& { return st(c).lr; }));
      f.push_back(number_field<double>("lr_after" + s, [st](RunConfig& c) -> double& { return st(c).lr_after; }));
      f.push_back(number_field<I>("lr_drop_step" + s, [st](RunConfig& c) -> I& { return st(c).lr_drop_step; }));
      f.push_back(number_field<I>("divergence_window" + s, [st](RunConfig& c) -> I& { return st(c).divergence_window; }));
      f.push_back(number_field<I>("divergence_windows" + s, [st](RunConfig& c) -> I& { return st(c).divergence_windows; }));
      f.push_back(number_field<I>("batch_size" + s, [st](RunConfig& c) -> I& { return st(c).batch_size; }));
      f.push_back(number_field<I>("max_epochs" + s, [st](RunConfig& c) -> I& { return st(c).max_epochs; }));
      f.push_back(number_field<I>("max_steps" + s, [st](RunConfig& c) -> I& { return st(c).max_steps; }));
      f.push_back(number_field<I>("eval_every" + s, [st](RunConfig& c) -> I& { return st(c).eval_every; }));
      f.push_back(number_field<I>("patience" + s, [st](RunConfig& c) -> I& { return st(c).patience; }));
      f.push_back(number_field<double>("target_loss" + s, [st](RunConfig& c) -> double& { return st(c).target_loss; }));
      f.push_back(number_field<double>("seg_weight" + s, [st](RunConfig& c) -> double& { return st(c).seg_weight; }));
      f.push_back(number_field<double>("label_weight" + s, [st](RunConfig& c) -> double& { return st(c).label_weight; }));
    }
    return f;
  }();
  return all;
}

const Field* find_field(const std::string& key) {
  for (const auto& f : fields())
    if (f.key == key) return &f;
  return nullptr;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

// lines[i] is the source line of kv[i]; empty when the pairs came from code.
void apply_ordered(RunConfig& cfg, const std::vector<std::pair<std::string, std::string>>& kv,
                   const std::vector<int>& lines = {}) {
  auto guarded = [&](size_t i, auto&& fn) {
    try {
      fn();
    } catch (const std::invalid_argument& e) {
      if (lines.empty()) throw;
      throw std::invalid_argument("config line " + std::to_string(lines[i]) + ": " + e.what());
    }
  };
  for (size_t i = 0; i < kv.size(); ++i)
    if (kv[i].first == "preset") guarded(i, [&] { cfg = RunConfig::preset(kv[i].second); });
  for (size_t i = 0; i < kv.size(); ++i)
    if (kv[i].first == "seed")
      guarded(i, [&] { set_seed(cfg, parse_number<std::uint64_t>("seed", kv[i].second)); });
  for (size_t i = 0; i < kv.size(); ++i) {
    const auto& [k, v] = kv[i];
    if (k == "preset" || k == "seed") continue;
    const Field* f = find_field(k);
    if (!f) throw std::invalid_argument("unknown config key '" + k + "'");
    guarded(i, [&] { f->set(cfg, v); });
  }
  derive_geometry(cfg.model);
  for (const auto* s : {&cfg.stages.stage1, &cfg.stages.stage2, &cfg.stages.stage3, &cfg.stages.simple})
    train::validate(*s);
}

}  // namespace

RunConfig RunConfig::preset(const std::string& name) {
  RunConfig c;
  c.model = ModelConfig::from_preset(name);
  if (name == "tiny") {
    c.stages = eval::tiny_pipeline(c.seed);
    return c;
  }
  // Paper schedule: stage 1 at 1e-6 with batch 100, stage 2 at 1e-2 dropping
  // to 1e-3, stage 3 at 1e-3 with one sequence per step.
  auto& p = c.stages;
  p.seed = c.seed;
  p.stage1.stage = 1;
  p.stage1.lr = 1e-6;
  p.stage1.batch_size = 100;
  p.stage2.stage = 2;
  p.stage2.lr = 1e-2;
  p.stage2.lr_after = 1e-3;
  p.stage2.batch_size = 100;
  p.stage3.stage = 3;
  p.stage3.lr = 1e-3;
  p.stage3.batch_size = 1;
  p.simple = p.stage3;
  set_seed(c, c.seed);
  return c;
}

std::string RunConfig::resolved() const {
  std::string out = "preset=" + model.preset + "\nseed=" + std::to_string(seed) + "\n";
  for (const auto& f : fields()) out += f.key + "=" + f.get(*this) + "\n";
  return out;
}

void set_seed(RunConfig& cfg, std::uint64_t seed) {
  cfg.seed = seed;
  cfg.stages.seed = seed;
  for (auto* s : {&cfg.stages.stage1, &cfg.stages.stage2, &cfg.stages.stage3, &cfg.stages.simple})
    s->seed = seed;
}

RunConfig parse(const std::string& text) {
  std::vector<std::pair<std::string, std::string>> kv;
  std::vector<int> lines;
  std::istringstream in(text);
  std::string line;
  int n = 0;
  while (std::getline(in, line)) {
    ++n;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("config line " + std::to_string(n) + ": expected key=value");
    const auto key = trim(line.substr(0, eq));
    if (key != "preset" && key != "seed" && !find_field(key))
      throw std::invalid_argument("config line " + std::to_string(n) + ": unknown key '" + key + "'");
    for (const auto& [k, v] : kv)
      if (k == key)
        throw std::invalid_argument("config line " + std::to_string(n) + ": duplicate key '" + key + "'");
    kv.emplace_back(key, trim(line.substr(eq + 1)));
    lines.push_back(n);
  }
  RunConfig cfg = RunConfig::preset("paper");
  apply_ordered(cfg, kv, lines);
  return cfg;
}

RunConfig load(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot read config '" + path.string() + "'");
  std::stringstream ss;
  ss << f.rdbuf();
  try {
    return parse(ss.str());
  } catch (const std::invalid_argument& e) {
    throw std::invalid_argument(path.string() + ": " + e.what());
  }
}

void apply(RunConfig& cfg, const std::map<std::string, std::string>& values) {
  std::vector<std::pair<std::string, std::string>> kv(values.begin(), values.end());
  apply_ordered(cfg, kv);
}

}  // namespace ssar::config
