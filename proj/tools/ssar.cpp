// SPDX-License-Identifier: Apache-2.0
//
// ssar: command-line front end. Exit status 0 on success, 2 on usage errors,
// 1 on runtime failures; errors are one line on stderr:
//   error: usage: <message>
//   error: runtime: <message>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "ssar/config.hpp"
#include "ssar/data.hpp"
#include "ssar/eval.hpp"
#include "ssar/kernels.hpp"
#include "ssar/log.hpp"
#include "ssar/train.hpp"

namespace fs = std::filesystem;
using namespace ssar;

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string one_line(std::string s) {
  for (auto& c : s)
    if (c == '\n' || c == '\r') c = ' ';
  return s;
}

// Options shared by every command that builds a model.
struct ModelOpts {
  std::string config;
  std::string preset;
  std::vector<std::string> set;
  std::optional<std::uint64_t> seed;
};

void add_model_opts(CLI::App* app, ModelOpts& o) {
  app->add_option("--config", o.config, "Run configuration file (key=value lines)");
  app->add_option("--preset", o.preset, "Preset when no --config is given (paper|tiny)")
      ->default_str("paper");
  app->add_option("--set", o.set, "Override a config key, key=value (repeatable)");
  app->add_option("--seed", o.seed, "Seed for every random choice (overrides the config)");
}

config::RunConfig resolve(const ModelOpts& o) {
  config::RunConfig cfg;
  if (!o.config.empty()) {
    if (!o.preset.empty()) throw UsageError("--preset and --config are mutually exclusive");
    try {
      cfg = config::load(o.config);
    } catch (const std::invalid_argument& e) {
      throw UsageError(e.what());
    }
  } else {
    cfg = config::RunConfig::preset(o.preset.empty() ? "paper" : o.preset);
  }
  std::map<std::string, std::string> kv;
  for (const auto& s : o.set) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw UsageError("--set expects key=value, got '" + s + "'");
    kv[s.substr(0, eq)] = s.substr(eq + 1);
  }
  try {
    config::apply(cfg, kv);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  if (o.seed) config::set_seed(cfg, *o.seed);
  std::istringstream lines(cfg.resolved());
  for (std::string line; std::getline(lines, line);) log::info("config " + line);
  return cfg;
}

std::vector<data::Sequence> load_split(const data::Manifest& man, const ModelConfig& mc,
                                       const std::string& split, bool masks) {
  data::LoadOptions lo;
  lo.height = static_cast<int>(mc.input_h);
  lo.width = static_cast<int>(mc.input_w);
  lo.masks = masks;
  if (!split.empty() && split != "all") lo.splits = {split};
  return data::load_sequences(man, lo);
}

SsarModel load_model(const config::RunConfig& cfg, const std::string& ckpt_path) {
  SsarModel m = build_model(cfg.model, cfg.seed);
  train::apply_checkpoint(train::read_checkpoint(ckpt_path), m);
  return m;
}

std::array<double, 3> parse_ratios(const std::string& text) {
  std::array<double, 3> r{};
  std::stringstream ss(text);
  std::string item;
  size_t i = 0;
  while (std::getline(ss, item, ',')) {
    if (i == 3) throw UsageError("--ratios takes three comma-separated values");
    try {
      size_t used = 0;
      r[i] = std::stod(item, &used);
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw UsageError("--ratios: invalid number '" + item + "'");
    }
    ++i;
  }
  if (i != 3) throw UsageError("--ratios takes three comma-separated values");
  return r;
}

void ensure_parent(const std::string& path) {
  const auto dir = fs::path(path).parent_path();
  if (dir.empty()) return;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw std::runtime_error("cannot create '" + dir.string() + "': " + ec.message());
}

// ---------------------------------------------------------------------------

int run_synth(const data::SynthOptions& o) {
  data::Manifest man;
  try {
    man = data::synth_generate(o);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  std::printf("%zu sequences written to %s\n", man.records.size(), o.out_dir.string().c_str());
  return 0;
}

struct PrepOpts {
  std::string manifest;
  int near = 0, far = 0, min_area = 0;
};

int run_prep(const PrepOpts& o) {
  if (o.near < 0 || o.far < o.near) throw UsageError("need 0 <= --near-mm <= --far-mm");
  if (o.min_area < 0) throw UsageError("--min-area must be >= 0");
  auto man = data::read_manifest(o.manifest);
  bool changed = false;
  for (auto& r : man.records)
    if (r.mask_dir.empty()) {
      r.mask_dir = "masks/" + r.sequence_id;
      changed = true;
    }
  std::vector<std::string> errors(man.records.size());
  kernels::parallel_for(man.records.size(), [&](size_t i) {
    const auto& r = man.records[i];
    try {
      if (r.depth_dir.empty()) throw std::runtime_error("no depth_dir");
      fs::create_directories(man.root / r.mask_dir);
      for (std::int64_t t = 0; t < r.num_frames; ++t) {
        const auto name = data::frame_name(t);
        const auto depth = data::read_png16(man.root / r.depth_dir / name);
        auto mask = data::depth_to_mask(depth, o.near, o.far, o.min_area);
        for (auto& v : mask.pixels) v = v ? 255 : 0;
        data::write_png(man.root / r.mask_dir / name, mask);
      }
    } catch (const std::exception& e) {
      errors[i] = "sequence '" + r.sequence_id + "': " + e.what();
    }
  });
  for (const auto& e : errors)
    if (!e.empty()) throw std::runtime_error(e);
  if (changed) data::write_manifest(o.manifest, man);
  std::printf("masks written for %zu sequences\n", man.records.size());
  return 0;
}

struct SplitOpts {
  std::string manifest, ratios, granularity, out;
  std::uint64_t seed = 0;
};

int run_split(const SplitOpts& o) {
  const auto ratios = parse_ratios(o.ratios);
  if (o.granularity != "frame" && o.granularity != "sequence")
    throw UsageError("--granularity must be frame or sequence");
  try {
    data::split_counts(1, ratios);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  auto man = data::read_manifest(o.manifest);
  ensure_parent(o.out);
  if (o.granularity == "sequence") {
    data::split_sequences(man, ratios, o.seed);
    const fs::path out = o.out;
    // Relative paths in the manifest must keep resolving from the new file.
    const auto root = fs::weakly_canonical(man.root);
    const auto dir = fs::weakly_canonical(fs::absolute(out).parent_path());
    if (root != dir) {
      for (auto& r : man.records)
        for (auto* p : {&r.frames_dir, &r.depth_dir, &r.mask_dir})
          if (!p->empty()) *p = fs::relative(root / *p, dir).generic_string();
    }
    data::write_manifest(out, man);
    const auto c = data::split_counts(static_cast<std::int64_t>(man.records.size()), ratios);
    std::printf("train %lld val %lld test %lld sequences\n", static_cast<long long>(c.train),
                static_cast<long long>(c.val), static_cast<long long>(c.test));
  } else {
    const auto assign = data::split_frames(man, ratios, o.seed);
    std::ofstream f(o.out, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("cannot write '" + o.out + "'");
    f << "sequence_id,frame,split\n";
    std::map<std::string, std::int64_t> counts;
    for (const auto& a : assign) {
      f << man.records[static_cast<size_t>(a.sequence)].sequence_id << ',' << a.frame << ',' << a.split
        << '\n';
      ++counts[a.split];
    }
    if (!f.flush()) throw std::runtime_error("write failed: '" + o.out + "'");
    std::printf("train %lld val %lld test %lld frames\n", static_cast<long long>(counts["train"]),
                static_cast<long long>(counts["val"]), static_cast<long long>(counts["test"]));
  }
  return 0;
}

struct TrainOpts {
  ModelOpts model;
  int stage = 0;
  std::string manifest, embeddings, val_embeddings, ckpt_in, ckpt_out, metrics;
  std::int64_t max_steps = 0;
};

int run_train(const TrainOpts& o) {
  if (o.stage < 1 || o.stage > 3) throw UsageError("--stage must be 1, 2 or 3");
  if (o.stage == 2 && o.embeddings.empty()) throw UsageError("train --stage 2 requires --embeddings");
  if (o.stage != 2 && o.manifest.empty())
    throw UsageError("train --stage " + std::to_string(o.stage) + " requires --manifest");
  if (o.stage > 1 && o.ckpt_in.empty())
    throw UsageError("train --stage " + std::to_string(o.stage) + " requires --checkpoint-in");
  if (o.max_steps < 0) throw UsageError("--max-steps must be >= 0");
  const auto cfg = resolve(o.model);
  const auto& p = cfg.stages;
  train::StageConfig sc = o.stage == 1 ? p.stage1 : o.stage == 2 ? p.stage2 : p.stage3;
  sc.stage = o.stage;
  if (o.max_steps > 0) sc.max_steps = o.max_steps;

  SsarModel m = build_model(cfg.model, cfg.seed);
  train::RunContext ctx;
  bool resumed = false;
  if (!o.ckpt_in.empty()) {
    auto ck = train::read_checkpoint(o.ckpt_in);
    train::apply_checkpoint(ck, m);
    if (ck.stage == o.stage && ck.state) {
      if (ck.adam) ctx.adam = *ck.adam;
      ctx.state = std::move(ck.state);
      resumed = true;
      log::info("resuming stage " + std::to_string(o.stage) + " at step " +
                std::to_string(ctx.state->step));
    }
  }

  ensure_parent(o.ckpt_out);
  std::ofstream metrics;
  if (!o.metrics.empty()) {
    ensure_parent(o.metrics);
    metrics.open(o.metrics, resumed ? std::ios::app : std::ios::trunc);
    if (!metrics) throw std::runtime_error("cannot open metrics log '" + o.metrics + "'");
    ctx.sink = [&metrics](const train::MetricsRecord& r) { metrics << train::to_json_line(r) << '\n'; };
  }

  train::TrainResult result;
  if (o.stage == 2) {
    const auto tr = train::read_archive(o.embeddings, cfg.model.embedding_dim);
    train::EmbeddingArchive va;
    va.dim = cfg.model.embedding_dim;
    if (!o.val_embeddings.empty()) va = train::read_archive(o.val_embeddings, cfg.model.embedding_dim);
    if (!resumed) reset_lstm(m, cfg.seed + 1);
    result = train::train_stage2(m, tr, va, sc, ctx);
  } else {
    const auto man = data::read_manifest(o.manifest);
    const auto tr = load_split(man, cfg.model, "train", true);
    const auto va = load_split(man, cfg.model, "val", true);
    if (o.stage == 1)
      result = train::train_stage1(m, train::frames_with_hand(tr), train::frames_with_hand(va), sc, ctx);
    else
      result = train::train_stage3(m, tr, va, sc, ctx);
  }
  if (metrics.is_open() && !metrics.flush()) throw std::runtime_error("metrics log write failed");
  train::save_checkpoint(o.ckpt_out, m, o.stage, &ctx.adam, ctx.state ? &*ctx.state : nullptr);
  {
    std::ofstream f(o.ckpt_out + ".config", std::ios::binary | std::ios::trunc);
    f << cfg.resolved();
    if (!f.flush()) throw std::runtime_error("cannot write '" + o.ckpt_out + ".config'");
  }
  std::printf("stage %d: %lld steps, best val %.6f%s\n", o.stage, static_cast<long long>(result.steps),
              result.best_val, result.finished ? "" : " (paused at --max-steps)");
  return 0;
}

struct ExportOpts {
  ModelOpts model;
  std::string manifest, ckpt_in, split, out;
};

int run_export(const ExportOpts& o) {
  const auto cfg = resolve(o.model);
  auto m = load_model(cfg, o.ckpt_in);
  const auto man = data::read_manifest(o.manifest);
  const auto seqs = load_split(man, cfg.model, o.split, false);
  if (seqs.empty()) throw std::runtime_error("no sequences in split '" + o.split + "'");
  ensure_parent(o.out);
  train::write_archive(o.out, train::export_embeddings(m, seqs));
  std::printf("%zu sequences exported to %s\n", seqs.size(), o.out.c_str());
  return 0;
}

struct EvalOpts {
  ModelOpts model;
  std::string manifest, ckpt_in, split = "test", scenario, out;
  std::int64_t batch = 16;
};

int run_eval(const EvalOpts& o) {
  if (o.batch < 1) throw UsageError("--batch-size must be >= 1");
  const auto cfg = resolve(o.model);
  auto m = load_model(cfg, o.ckpt_in);
  const auto man = data::read_manifest(o.manifest);
  const auto seqs = load_split(man, cfg.model, o.split, false);
  const std::optional<std::string> scen = o.scenario.empty() ? std::nullopt : std::optional(o.scenario);
  const auto r = eval::evaluate(m, seqs, scen, o.batch);
  if (!o.out.empty()) eval::render_reports(r, {}, o.out);
  std::printf("accuracy %.6f (%lld/%lld)\n", r.accuracy, static_cast<long long>(r.matrix.trace()),
              static_cast<long long>(r.matrix.total()));
  for (const auto& [name, s] : r.scenarios)
    std::printf("%s %.6f (%lld/%lld)\n", name.c_str(), s.accuracy(), static_cast<long long>(s.correct),
                static_cast<long long>(s.count));
  return 0;
}

struct CamOpts {
  ModelOpts model;
  std::string manifest, ckpt_in, sequence, out;
  std::vector<std::int64_t> frames;
  std::optional<std::int64_t> target;
  bool frame_level = false;
};

int run_gradcam(const CamOpts& o) {
  const auto cfg = resolve(o.model);
  auto m = load_model(cfg, o.ckpt_in);
  const auto man = data::read_manifest(o.manifest);
  data::Manifest one{man.root, {}};
  for (const auto& r : man.records)
    if (r.sequence_id == o.sequence) one.records.push_back(r);
  if (one.records.empty()) throw std::runtime_error("sequence '" + o.sequence + "' not in manifest");
  const auto seq = load_split(one, cfg.model, "", false).front();
  std::vector<std::int64_t> frames = o.frames;
  if (frames.empty())
    for (std::int64_t t = 0; t < seq.length; ++t) frames.push_back(t);
  eval::CamOptions co;
  co.target_class = o.target;
  co.frame_level = o.frame_level;
  std::vector<eval::CamRender> cams;
  const auto frame_bytes = static_cast<size_t>(seq.height * seq.width * 3);
  for (auto t : frames) {
    auto cam = eval::grad_cam(m, seq, t, co);
    std::vector<std::uint8_t> rgb(seq.rgb.begin() + static_cast<std::ptrdiff_t>(static_cast<size_t>(t) * frame_bytes),
                                  seq.rgb.begin() + static_cast<std::ptrdiff_t>(static_cast<size_t>(t + 1) * frame_bytes));
    char name[64];
    std::snprintf(name, sizeof name, "cam_%06lld", static_cast<long long>(t));
    cams.push_back({name, std::move(cam), std::move(rgb)});
  }
  const auto r = eval::report_from_predictions({seq.id}, {seq.scenario}, {seq.label},
                                               {eval::evaluate(m, {seq}).predicted.front()},
                                               cfg.model.num_classes);
  eval::render_reports(r, cams, o.out);
  std::printf("%zu maps written to %s\n", cams.size(), o.out.c_str());
  return 0;
}

struct InferOpts {
  ModelOpts model;
  std::string ckpt_in, frames_dir, manifest, sequence;
};

int run_infer(const InferOpts& o) {
  if (o.frames_dir.empty() == o.sequence.empty())
    throw UsageError("infer needs exactly one of --frames or --sequence");
  if (!o.sequence.empty() && o.manifest.empty()) throw UsageError("--sequence requires --manifest");
  const auto cfg = resolve(o.model);
  auto m = load_model(cfg, o.ckpt_in);
  const auto h = cfg.model.input_h, w = cfg.model.input_w;
  std::vector<std::uint8_t> rgb;
  std::int64_t count = 0;
  if (!o.frames_dir.empty()) {
    for (;; ++count) {
      const fs::path p = fs::path(o.frames_dir) / data::frame_name(count);
      if (!fs::exists(p)) break;
      const auto img = data::read_png8(p, 3);
      if (img.width != w || img.height != h)
        throw std::runtime_error("frame " + p.string() + " does not match the model input size");
      rgb.insert(rgb.end(), img.pixels.begin(), img.pixels.end());
    }
    if (count == 0) throw std::runtime_error("no frames (000000.png ...) in '" + o.frames_dir + "'");
  } else {
    const auto man = data::read_manifest(o.manifest);
    data::Manifest one{man.root, {}};
    for (const auto& r : man.records)
      if (r.sequence_id == o.sequence) one.records.push_back(r);
    if (one.records.empty()) throw std::runtime_error("sequence '" + o.sequence + "' not in manifest");
    auto seq = load_split(one, cfg.model, "", false).front();
    rgb = std::move(seq.rgb);
    count = seq.length;
  }
  const auto dt = m.params.param("lstm.fc.weight").dtype();
  const auto rec = recognize(m, normalize_frames(cfg.model, rgb.data(), count, dt));
  nlohmann::ordered_json j;
  j["label"] = rec.label;
  j["frames"] = count;
  j["probabilities"] = rec.probabilities;
  j["logits"] = rec.logits;
  std::printf("%s\n", j.dump().c_str());
  return 0;
}

struct AblateOpts {
  ModelOpts model;
  std::string manifest, split = "test", out;
};

int run_ablate(const AblateOpts& o) {
  const auto cfg = resolve(o.model);
  const auto man = data::read_manifest(o.manifest);
  const auto tr = load_split(man, cfg.model, "train", true);
  const auto va = load_split(man, cfg.model, "val", true);
  const auto te = load_split(man, cfg.model, o.split, false);
  if (te.empty()) throw std::runtime_error("no sequences in split '" + o.split + "'");
  const auto report = eval::ablation_run(cfg.model, tr, va, te, cfg.stages);
  std::error_code ec;
  fs::create_directories(o.out, ec);
  if (ec) throw std::runtime_error("cannot create '" + o.out + "': " + ec.message());
  {
    std::ofstream f(fs::path(o.out) / "ablation.md", std::ios::binary | std::ios::trunc);
    f << "# Ablation\n\n" << eval::ablation_markdown(report);
    if (!f.flush()) throw std::runtime_error("cannot write ablation.md");
  }
  nlohmann::ordered_json j = nlohmann::ordered_json::array();
  for (const auto& e : report.entries)
    j.push_back({{"mode", eval::mode_name(e.mode)}, {"accuracy", e.accuracy}, {"sequences", e.count}});
  {
    std::ofstream f(fs::path(o.out) / "ablation.json", std::ios::binary | std::ios::trunc);
    f << j.dump(2) << '\n';
    if (!f.flush()) throw std::runtime_error("cannot write ablation.json");
  }
  for (const auto& e : report.entries) std::printf("%s %.6f\n", eval::mode_name(e.mode), e.accuracy);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Simultaneous hand segmentation and gesture recognition"};
  app.require_subcommand(1);
  app.option_defaults()->always_capture_default();
  int workers = 1;
  std::string log_level;
  app.add_option("--workers", workers, "Worker threads for data loading and kernels")
      ->check(CLI::PositiveNumber);
  app.add_option("--log", log_level, "Log level (error|info|debug); default from SSAR_LOG");

  data::SynthOptions so;
  std::string synth_out;
  auto* synth = app.add_subcommand("synth", "Generate the synthetic gesture dataset");
  synth->add_option("--out", synth_out, "Output directory")->required();
  synth->add_option("--classes", so.num_classes, "Number of classes (1-10)");
  synth->add_option("--train-per-class", so.train_per_class, "Training sequences per class");
  synth->add_option("--val-per-class", so.val_per_class, "Validation sequences per class");
  synth->add_option("--test-per-class", so.test_per_class, "Test sequences per class");
  synth->add_option("--min-length", so.min_length, "Shortest sequence");
  synth->add_option("--max-length", so.max_length, "Longest sequence");
  synth->add_option("--height", so.height, "Frame height");
  synth->add_option("--width", so.width, "Frame width");
  synth->add_option("--walking-fraction", so.walking_fraction, "Share of sequences with ego-motion");
  synth->add_flag("--distractors", so.distractors, "Add moving background objects");
  synth->add_option("--seed", so.seed, "Random seed");

  PrepOpts po;
  auto* prep = app.add_subcommand("prep-masks", "Threshold depth frames into hand masks");
  prep->add_option("--manifest", po.manifest, "Manifest CSV")->required();
  prep->add_option("--near-mm", po.near, "Nearest hand depth in mm")->required();
  prep->add_option("--far-mm", po.far, "Farthest hand depth in mm")->required();
  prep->add_option("--min-area", po.min_area, "Smallest kept component in pixels")->required();

  SplitOpts sp;
  auto* split = app.add_subcommand("split", "Assign train/val/test splits");
  split->add_option("--manifest", sp.manifest, "Manifest CSV")->required();
  split->add_option("--ratios", sp.ratios, "train,val,test ratios, e.g. 0.6,0.2,0.2")->required();
  split->add_option("--granularity", sp.granularity, "frame or sequence")
      ->required()
      ->check(CLI::IsMember({"frame", "sequence"}));
  split->add_option("--seed", sp.seed, "Random seed")->required();
  split->add_option("--out", sp.out, "Output manifest (sequence) or frame list CSV (frame)")->required();

  TrainOpts to;
  auto* trn = app.add_subcommand("train", "Run one training stage");
  add_model_opts(trn, to.model);
  trn->add_option("--stage", to.stage, "Stage 1, 2 or 3")->required()->check(CLI::Range(1, 3));
  trn->add_option("--manifest", to.manifest, "Manifest CSV (stages 1 and 3)");
  trn->add_option("--embeddings", to.embeddings, "Training embedding archive (stage 2)");
  trn->add_option("--val-embeddings", to.val_embeddings, "Validation embedding archive (stage 2)");
  trn->add_option("--checkpoint-in", to.ckpt_in, "Starting checkpoint (stages 2, 3; resume)");
  trn->add_option("--checkpoint-out", to.ckpt_out, "Checkpoint to write")->required();
  trn->add_option("--metrics", to.metrics, "JSON-lines metrics log");
  trn->add_option("--max-steps", to.max_steps, "Pause after this many steps in total (0 = run to the end)");

  ExportOpts eo;
  auto* exp = app.add_subcommand("embed-export", "Write per-frame embeddings of a split");
  add_model_opts(exp, eo.model);
  exp->add_option("--manifest", eo.manifest, "Manifest CSV")->required();
  exp->add_option("--checkpoint-in", eo.ckpt_in, "Model checkpoint")->required();
  exp->add_option("--split", eo.split, "train, val, test or all")->required();
  exp->add_option("--out", eo.out, "Archive to write")->required();

  EvalOpts ev;
  auto* evl = app.add_subcommand("eval", "Accuracy, confusion matrix and scenario breakdown");
  add_model_opts(evl, ev.model);
  evl->add_option("--manifest", ev.manifest, "Manifest CSV")->required();
  evl->add_option("--checkpoint-in", ev.ckpt_in, "Model checkpoint")->required();
  evl->add_option("--split", ev.split, "Split to evaluate");
  evl->add_option("--scenario", ev.scenario, "Only this scenario (stationary|walking)");
  evl->add_option("--batch-size", ev.batch, "Sequences per classifier batch");
  evl->add_option("--out", ev.out, "Report directory (confusion.csv, summary.md, summary.json)");

  CamOpts co;
  auto* cam = app.add_subcommand("gradcam", "Grad-CAM heatmaps for one sequence");
  add_model_opts(cam, co.model);
  cam->add_option("--manifest", co.manifest, "Manifest CSV")->required();
  cam->add_option("--checkpoint-in", co.ckpt_in, "Model checkpoint")->required();
  cam->add_option("--sequence", co.sequence, "sequence_id")->required();
  cam->add_option("--frame", co.frames, "Frame index (repeatable; default all)");
  cam->add_option("--class", co.target, "Target class (default: predicted)");
  cam->add_flag("--frame-level", co.frame_level, "Explain the per-frame embedding logit");
  cam->add_option("--out", co.out, "Output directory")->required();

  InferOpts io;
  auto* inf = app.add_subcommand("infer", "Classify one sequence");
  add_model_opts(inf, io.model);
  inf->add_option("--checkpoint-in", io.ckpt_in, "Model checkpoint")->required();
  inf->add_option("--frames", io.frames_dir, "Directory of 000000.png, 000001.png, ...");
  inf->add_option("--manifest", io.manifest, "Manifest CSV (with --sequence)");
  inf->add_option("--sequence", io.sequence, "sequence_id in the manifest");

  AblateOpts ao;
  auto* abl = app.add_subcommand("ablate", "Simple / segmentation-based / fine-tuned comparison");
  add_model_opts(abl, ao.model);
  abl->add_option("--manifest", ao.manifest, "Manifest CSV with train, val and test splits")->required();
  abl->add_option("--split", ao.split, "Split the three modes are evaluated on");
  abl->add_option("--out", ao.out, "Report directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::fprintf(stderr, "error: usage: %s\n", one_line(e.what()).c_str());
    return 2;
  }

  try {
    if (!log_level.empty()) log::set_level(log::parse_level(log_level));
    kernels::set_num_workers(workers);
    if (*synth) {
      so.out_dir = synth_out;
      return run_synth(so);
    }
    if (*prep) return run_prep(po);
    if (*split) return run_split(sp);
    if (*trn) return run_train(to);
    if (*exp) return run_export(eo);
    if (*evl) return run_eval(ev);
    if (*cam) return run_gradcam(co);
    if (*inf) return run_infer(io);
    if (*abl) return run_ablate(ao);
  } catch (const UsageError& e) {
    std::fprintf(stderr, "error: usage: %s\n", one_line(e.what()).c_str());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: runtime: %s\n", one_line(e.what()).c_str());
    return 1;
  }
  return 0;
}
