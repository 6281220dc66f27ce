// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "doctest.h"
#include "oracles.hpp"
#include "ssar/train.hpp"

using namespace ssar;
using namespace ssar::train;

namespace {

fs::path scratch(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("ssar_test_train_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

// Small synthetic set shared by the slower cases.
const std::vector<data::Sequence>& synth_sequences() {
  static const std::vector<data::Sequence> seqs = [] {
    data::SynthOptions o;
    o.out_dir = scratch("synth");
    o.train_per_class = 2;
    o.val_per_class = 1;
    o.test_per_class = 0;
    o.min_length = 6;
    o.max_length = 8;
    const auto m = data::synth_generate(o);
    return data::load_sequences(m, {o.height, o.width, true, {}});
  }();
  return seqs;
}

std::vector<data::Sequence> pick(const std::string& split) {
  std::vector<data::Sequence> out;
  for (const auto& s : synth_sequences())
    if (s.split == split) out.push_back(s);
  return out;
}

EmbeddingArchive random_archive(std::int64_t n, std::int64_t dim, std::uint64_t seed,
                                std::int64_t classes) {
  EmbeddingArchive a;
  a.dim = dim;
  for (std::int64_t i = 0; i < n; ++i) {
    EmbeddedSequence s{"seq" + std::to_string(i), i % classes, 3 + (i * 7) % 9, {}};
    for (double v : oracle::random_vec(static_cast<size_t>(s.length * dim), seed + static_cast<std::uint64_t>(i)))
      s.data.push_back(static_cast<float>(v));
    a.sequences.push_back(std::move(s));
  }
  return a;
}

std::map<std::string, std::vector<double>> values(const SsarModel& m) {
  std::map<std::string, std::vector<double>> out;
  for (const auto& [p, t] : m.params.params()) out[p] = t.to_vector();
  return out;
}

void flip_byte(const fs::path& p, std::streamoff at) {
  std::fstream f(p, std::ios::in | std::ios::out | std::ios::binary);
  f.seekg(at);
  char c = 0;
  f.read(&c, 1);
  c = static_cast<char>(c ^ 0x5a);
  f.seekp(at);
  f.write(&c, 1);
}

}  // namespace

TEST_CASE("tensor file round trip is bitwise") {
  const auto dir = scratch("tf");
  const auto a = oracle::random_tensor({3, 4}, 1, DType::f32, false);
  const auto b = oracle::random_tensor({2, 2, 2}, 2, DType::f64, false);
  write_tensor_file(dir / "t.bin", {{"a", a}, {"b.c", b}});
  const auto back = read_tensor_file(dir / "t.bin");
  REQUIRE(back.size() == 2);
  CHECK(back[0].first == "a");
  CHECK(back[1].first == "b.c");
  CHECK(back[0].second.dtype() == DType::f32);
  CHECK(back[1].second.dtype() == DType::f64);
  CHECK(back[0].second.shape() == a.shape());
  CHECK(back[0].second.to_vector() == a.to_vector());
  CHECK(back[1].second.to_vector() == b.to_vector());

  const auto size = static_cast<std::streamoff>(fs::file_size(dir / "t.bin"));
  flip_byte(dir / "t.bin", size / 2);
  CHECK_THROWS(read_tensor_file(dir / "t.bin"));
  fs::resize_file(dir / "t.bin", static_cast<std::uintmax_t>(size - 3));
  CHECK_THROWS(read_tensor_file(dir / "t.bin"));
  CHECK_THROWS(read_tensor_file(dir / "absent.bin"));
}

TEST_CASE("checkpoint round trip with optimizer and progress") {
  const auto dir = scratch("ckpt");
  auto m = build_model(ModelConfig::tiny(), 5);
  nn::Adam adam;
  TrainState st;
  st.step = 17;
  st.lr = 1e-3;
  st.best_val = 0.5;
  st.bad_evals = 2;
  st.lr_dropped = true;
  st.window_sum = 1.25;
  st.window_count = 3;
  st.best["lstm.fc.bias"] = m.params.param("lstm.fc.bias").clone();
  save_checkpoint(dir / "c.ckpt", m, 2, &adam, &st);

  const auto ck = read_checkpoint(dir / "c.ckpt");
  CHECK(ck.stage == 2);
  CHECK(ck.fingerprint == m.config.fingerprint());
  REQUIRE(ck.state);
  CHECK(ck.state->step == 17);
  CHECK(ck.state->lr == 1e-3);
  CHECK(ck.state->best_val == 0.5);
  CHECK(ck.state->bad_evals == 2);
  CHECK(ck.state->lr_dropped);
  CHECK(ck.state->window_sum == 1.25);
  CHECK(ck.state->window_count == 3);
  CHECK(ck.state->best.count("lstm.fc.bias") == 1);
  CHECK(ck.adam.has_value());

  auto fresh = build_model(ModelConfig::tiny(), 6);
  CHECK(values(fresh) != values(m));
  apply_checkpoint(ck, fresh);
  CHECK(values(fresh) == values(m));

  save_checkpoint(dir / "lstm.ckpt", m, 2, nullptr, nullptr, "lstm.");
  const auto part = read_checkpoint(dir / "lstm.ckpt");
  for (const auto& [p, t] : part.tensors) CHECK(p.rfind("lstm.", 0) == 0);
  CHECK_FALSE(part.state);

  auto other = ModelConfig::tiny();
  other.lstm_hidden = 16;
  auto mismatched = build_model(other, 1);
  CHECK_THROWS(apply_checkpoint(ck, mismatched));

  flip_byte(dir / "c.ckpt", 40);
  CHECK_THROWS(read_checkpoint(dir / "c.ckpt"));
}

TEST_CASE("embedding archive round trip") {
  const auto dir = scratch("archive");
  const auto a = random_archive(4, 5, 9, 5);
  write_archive(dir / "e.bin", a);
  const auto back = read_archive(dir / "e.bin", 5);
  CHECK(back.dim == 5);
  REQUIRE(back.sequences.size() == 4);
  for (size_t i = 0; i < 4; ++i) {
    CHECK(back.sequences[i].id == a.sequences[i].id);
    CHECK(back.sequences[i].label == a.sequences[i].label);
    CHECK(back.sequences[i].length == a.sequences[i].length);
    CHECK(back.sequences[i].data == a.sequences[i].data);
  }
  CHECK_THROWS(read_archive(dir / "e.bin", 6));
  flip_byte(dir / "e.bin", 30);
  CHECK_THROWS(read_archive(dir / "e.bin", 5));
}

TEST_CASE("metrics json lines") {
  MetricsRecord r{12, 2, 0.75, 0.0, 0.75, 0.5, 1e-3};
  const auto line = to_json_line(r);
  CHECK(line.find('\n') == std::string::npos);
  const auto back = parse_json_line(line);
  CHECK(back.step == 12);
  CHECK(back.stage == 2);
  CHECK(back.loss == 0.75);
  CHECK(back.label_loss == 0.75);
  REQUIRE(back.val_accuracy);
  CHECK(*back.val_accuracy == 0.5);
  CHECK(back.lr == 1e-3);

  r.val_accuracy.reset();
  r.loss = 0.1 + 0.2;
  const auto no_val = parse_json_line(to_json_line(r));
  CHECK_FALSE(no_val.val_accuracy);
  CHECK(no_val.loss == r.loss);
  CHECK_THROWS(parse_json_line("{\"step\":"));
}

TEST_CASE("stage config validation") {
  StageConfig c;
  CHECK_NOTHROW(validate(c));
  c.batch_size = 0;
  CHECK_THROWS(validate(c));
  c = {};
  c.lr = -1;
  CHECK_THROWS(validate(c));
  c = {};
  c.seg_weight = -0.5;
  CHECK_THROWS(validate(c));
}

TEST_CASE("first stage-1 loss is pixel CE plus frame CE") {
  const auto train = pick("train");
  auto frames = frames_with_hand({train[0]});
  // keep four frames, one batch
  const auto plane = static_cast<size_t>(frames.height * frames.width);
  frames.rgb.resize(4 * plane * 3);
  frames.mask.resize(4 * plane);
  frames.labels.resize(4);

  auto oracle_model = build_model(ModelConfig::tiny(), 3, DType::f64);
  double expected = 0;
  {
    NoGradGuard ng;
    oracle_model.training = true;
    const Tensor hidden =
        encoder_forward(oracle_model, normalize_frames(oracle_model.config, frames.rgb.data(), 4, DType::f64));
    const auto logits = decoder_forward(oracle_model, hidden).to_vector();
    const auto emb = embed(oracle_model, hidden).to_vector();
    double seg = 0;
    for (size_t n = 0; n < 4; ++n)
      for (size_t i = 0; i < plane; ++i)
        seg += oracle::cross_entropy({logits[(n * 2) * plane + i], logits[(n * 2 + 1) * plane + i]},
                                     frames.mask[n * plane + i] ? 1 : 0);
    seg /= static_cast<double>(4 * plane);
    double label = 0;
    for (size_t n = 0; n < 4; ++n)
      label += oracle::cross_entropy(std::vector<double>(emb.begin() + static_cast<std::ptrdiff_t>(n * 5),
                                                         emb.begin() + static_cast<std::ptrdiff_t>(n * 5 + 5)),
                                     static_cast<int>(frames.labels[n]));
    expected = seg + label / 4;
  }

  auto m = build_model(ModelConfig::tiny(), 3, DType::f64);
  StageConfig cfg;
  cfg.stage = 1;
  cfg.lr = 1e-3;
  cfg.batch_size = 4;
  cfg.max_epochs = 1;
  RunContext ctx;
  const auto r = train_stage1(m, frames, {}, cfg, ctx);
  REQUIRE(r.records.size() == 1);
  CHECK(r.records[0].loss == doctest::Approx(expected).epsilon(1e-10));
  CHECK(r.records[0].loss == r.records[0].seg_loss + r.records[0].label_loss);
}

TEST_CASE("stage-1 total loss is the exact sum of its parts") {
  const auto frames = frames_with_hand(pick("train"));
  auto m = build_model(ModelConfig::tiny(), 4);
  StageConfig cfg;
  cfg.stage = 1;
  cfg.lr = 1e-3;
  cfg.batch_size = 8;
  cfg.max_steps = 4;
  RunContext ctx;
  const auto r = train_stage1(m, frames, {}, cfg, ctx);
  REQUIRE(r.records.size() == 4);
  for (const auto& rec : r.records) {
    CHECK(rec.seg_loss > 0);
    CHECK(rec.label_loss > 0);
    CHECK(static_cast<float>(rec.loss) ==
          static_cast<float>(rec.seg_loss) + static_cast<float>(rec.label_loss));
  }
  CHECK_FALSE(r.finished);
}

TEST_CASE("resumed stage 1 matches an uninterrupted run") {
  const auto dir = scratch("resume");
  const auto train = frames_with_hand(pick("train"));
  const auto val = frames_with_hand(pick("val"));
  StageConfig cfg;
  cfg.stage = 1;
  cfg.lr = 1e-3;
  cfg.batch_size = 16;
  cfg.max_epochs = 2;
  cfg.eval_every = 3;

  auto whole = build_model(ModelConfig::tiny(), 8);
  RunContext c1;
  const auto r1 = train_stage1(whole, train, val, cfg, c1);
  REQUIRE(r1.steps > 4);

  auto part = build_model(ModelConfig::tiny(), 8);
  RunContext c2;
  auto first = cfg;
  first.max_steps = 4;
  const auto r2a = train_stage1(part, train, val, first, c2);
  CHECK_FALSE(r2a.finished);
  save_checkpoint(dir / "p.ckpt", part, 1, &c2.adam, &*c2.state);

  const auto ck = read_checkpoint(dir / "p.ckpt");
  auto resumed = build_model(ModelConfig::tiny(), 99);
  apply_checkpoint(ck, resumed);
  RunContext c3;
  c3.adam = *ck.adam;
  c3.state = ck.state;
  const auto r2b = train_stage1(resumed, train, val, cfg, c3);
  CHECK(r2b.finished);
  CHECK(r2b.steps == r1.steps);

  REQUIRE(r2a.records.size() + r2b.records.size() == r1.records.size());
  for (size_t i = 0; i < r1.records.size(); ++i) {
    const auto& b = i < r2a.records.size() ? r2a.records[i] : r2b.records[i - r2a.records.size()];
    CHECK(b.loss == r1.records[i].loss);
    CHECK(b.val_accuracy == r1.records[i].val_accuracy);
  }
  CHECK(values(resumed) == values(whole));
}

TEST_CASE("stage 2 overfits one sequence and touches only the LSTM") {
  auto m = build_model(ModelConfig::tiny(), 12);
  const auto before = values(m);
  const auto a = random_archive(1, 5, 40, 5);
  StageConfig cfg;
  cfg.stage = 2;
  cfg.lr = 1e-2;
  cfg.batch_size = 1;
  cfg.max_epochs = 100;
  cfg.patience = 1000;
  cfg.target_loss = 1e-3;
  RunContext ctx;
  const auto r = train_stage2(m, a, a, cfg, ctx);
  CHECK(r.records.back().loss < 1e-3);
  CHECK(r.best_val == 1.0);
  const auto after = values(m);
  for (const auto& [p, v] : after) {
    INFO(p);
    if (p.rfind("lstm.", 0) == 0 && p.find("bias") == std::string::npos && p.find("b_") == std::string::npos)
      CHECK(v != before.at(p));
    if (p.rfind("lstm.", 0) != 0) CHECK(v == before.at(p));
  }
}

TEST_CASE("stage 2 learning rate drops at the configured step") {
  auto m = build_model(ModelConfig::tiny(), 13);
  const auto a = random_archive(6, 5, 50, 5);
  StageConfig cfg;
  cfg.stage = 2;
  cfg.lr = 1e-2;
  cfg.lr_after = 1e-3;
  cfg.lr_drop_step = 3;
  cfg.batch_size = 2;
  cfg.max_epochs = 2;
  RunContext ctx;
  const auto r = train_stage2(m, a, EmbeddingArchive{5, {}}, cfg, ctx);
  REQUIRE(r.records.size() == 6);
  for (size_t i = 0; i < 6; ++i) CHECK(r.records[i].lr == (i < 3 ? 1e-2 : 1e-3));
  CHECK(ctx.state->lr_dropped);
}

TEST_CASE("stage 2 divergence trigger drops on rising window means") {
  auto m = build_model(ModelConfig::tiny(), 14);
  const auto a = random_archive(8, 5, 60, 5);
  StageConfig cfg;
  cfg.stage = 2;
  // absurd rate: the loss climbs after the first updates
  cfg.lr = 5.0;
  cfg.lr_after = 1e-4;
  cfg.divergence_window = 1;
  cfg.divergence_windows = 1;
  cfg.batch_size = 8;
  cfg.max_epochs = 40;
  RunContext ctx;
  const auto r = train_stage2(m, a, EmbeddingArchive{5, {}}, cfg, ctx);
  // the drop happens on the first step whose loss exceeds the previous one
  std::int64_t expected = -1;
  for (size_t i = 1; i < r.records.size(); ++i)
    if (r.records[i].loss > r.records[i - 1].loss) {
      expected = static_cast<std::int64_t>(i);
      break;
    }
  REQUIRE(expected > 0);
  for (size_t i = 0; i < r.records.size(); ++i)
    CHECK(r.records[i].lr == (static_cast<std::int64_t>(i) <= expected ? 5.0 : 1e-4));
}

TEST_CASE("early stopping restores the best parameters") {
  auto m = build_model(ModelConfig::tiny(), 15);
  auto train = random_archive(1, 5, 70, 5);
  train.sequences[0].label = 0;
  auto val = train;
  val.sequences[0].label = 3;
  const auto start = values(m);
  StageConfig cfg;
  cfg.stage = 2;
  cfg.lr = 1e-2;
  cfg.batch_size = 1;
  cfg.max_epochs = 500;
  cfg.eval_every = 1;
  cfg.patience = 4;
  RunContext ctx;
  const auto r = train_stage2(m, train, val, cfg, ctx);
  CHECK(r.early_stopped);
  CHECK(r.finished);
  bool improved = false;
  for (const auto& rec : r.records) improved |= rec.val_accuracy && *rec.val_accuracy > ctx.state->best_val;
  CHECK_FALSE(improved);
  if (r.best_val == 0.0) {
    // nothing beat the initial score
    CHECK(r.steps == 4);
    CHECK(values(m) == start);
  }
}

TEST_CASE("non-finite loss stops with the step number") {
  auto m = build_model(ModelConfig::tiny(), 16);
  auto a = random_archive(2, 5, 80, 5);
  a.sequences[1].data[0] = std::numeric_limits<float>::quiet_NaN();
  StageConfig cfg;
  cfg.stage = 2;
  cfg.lr = 1e-2;
  cfg.batch_size = 2;
  RunContext ctx;
  try {
    train_stage2(m, a, EmbeddingArchive{5, {}}, cfg, ctx);
    FAIL("expected error");
  } catch (const std::runtime_error& e) {
    INFO(e.what());
    CHECK(std::string(e.what()).find("step 0") != std::string::npos);
  }
}

TEST_CASE("stage 3 loss adds sequence and segmentation terms") {
  const auto train = pick("train");
  auto m = build_model(ModelConfig::tiny(), 17);
  StageConfig cfg;
  cfg.stage = 3;
  cfg.lr = 1e-5;
  cfg.batch_size = 1;
  cfg.max_steps = 3;
  RunContext ctx;
  const auto before = values(m);
  const auto r = train_stage3(m, train, {}, cfg, ctx);
  REQUIRE(r.records.size() == 3);
  for (const auto& rec : r.records) {
    CHECK(rec.seg_loss > 0);
    CHECK(rec.label_loss > 0);
    CHECK(static_cast<float>(rec.loss) ==
          static_cast<float>(rec.seg_loss) + static_cast<float>(rec.label_loss));
  }
  const auto after = values(m);
  for (const char* p : {"encoder.stem.conv.weight", "decoder.deconv5.weight", "embed.fc1.weight",
                        "lstm.l0.w_ih", "lstm.fc.weight"})
    CHECK(after.at(p) != before.at(p));
}

TEST_CASE("simple baseline leaves the decoder alone") {
  const auto train = pick("train");
  auto m = build_model(ModelConfig::tiny(), 18);
  const auto before = values(m);
  StageConfig cfg;
  cfg.stage = 3;
  cfg.lr = 1e-3;
  cfg.batch_size = 1;
  cfg.max_steps = 2;
  RunContext ctx;
  const auto r = train_simple(m, train, {}, cfg, ctx);
  for (const auto& rec : r.records) CHECK(rec.seg_loss == 0.0);
  const auto after = values(m);
  for (const auto& [p, v] : after)
    if (p.rfind("decoder.", 0) == 0) CHECK(v == before.at(p));
  CHECK(after.at("encoder.stem.conv.weight") != before.at("encoder.stem.conv.weight"));
}

TEST_CASE("export and archive logits agree with direct classification") {
  const auto val = pick("val");
  auto m = build_model(ModelConfig::tiny(), 19);
  const auto archive = export_embeddings(m, val, 3);
  REQUIRE(archive.sequences.size() == val.size());
  const auto logits = archive_logits(m, archive, 2);
  for (size_t i = 0; i < val.size(); ++i) {
    const auto rec = recognize(m, normalize_frames(m.config, val[i].rgb.data(), val[i].length));
    for (size_t k = 0; k < 5; ++k) CHECK(logits[i * 5 + k] == doctest::Approx(rec.logits[k]).epsilon(1e-5));
  }
  CHECK(argmax_rows({0, 2, 1, 5, 4, 3}, 3) == std::vector<std::int64_t>{1, 0});
  CHECK(accuracy({1, 2, 3, 4}, {1, 0, 3, 0}) == 0.5);
}
