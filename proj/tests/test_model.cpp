// SPDX-License-Identifier: Apache-2.0
#include <cmath>

#include "doctest.h"
#include "oracles.hpp"
#include "ssar/gradcheck.hpp"
#include "ssar/model.hpp"

using namespace ssar;

namespace {

// Independent shape arithmetic.
std::int64_t conv_len(std::int64_t n, std::int64_t k, std::int64_t s, std::int64_t p) {
  return (n + 2 * p - k) / s + 1;
}
std::int64_t deconv_len(std::int64_t n, std::int64_t k, std::int64_t s, std::int64_t p) {
  return (n - 1) * s - 2 * p + k;
}

std::pair<std::int64_t, std::int64_t> encoder_hw(std::int64_t h, std::int64_t w) {
  h = conv_len(h, 7, 2, 3), w = conv_len(w, 7, 2, 3);  // stem
  h = conv_len(h, 3, 2, 1), w = conv_len(w, 3, 2, 1);  // pool
  h = conv_len(h, 3, 2, 1), w = conv_len(w, 3, 2, 1);  // layer2
  h = conv_len(h, 3, 2, 1), w = conv_len(w, 3, 2, 1);  // conv3
  h = conv_len(h, 3, 2, 1), w = conv_len(w, 3, 2, 1);  // conv4
  return {h, w};
}

std::vector<std::uint8_t> random_frames(std::int64_t n, std::int64_t h, std::int64_t w,
                                        std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<std::uint8_t> v(static_cast<size_t>(n * h * w * 3));
  for (auto& x : v) x = static_cast<std::uint8_t>(rng() & 0xff);
  return v;
}

}  // namespace

TEST_CASE("paper preset shapes") {
  const auto cfg = ModelConfig::paper();
  const auto g = derive_geometry(cfg);
  CHECK(g.enc_h == 4);
  CHECK(g.enc_w == 7);
  CHECK(g.flatten == 7168);
  CHECK(g.final_pad_h == 2);
  CHECK(g.final_pad_w == 1);

  // 126x224 -> 63x112 -> 32x56 -> 16x28 -> 8x14 -> 4x7
  const std::vector<std::pair<std::string, Shape>> expected_encoder = {
      {"encoder.stem.conv", {64, 63, 112}}, {"encoder.stem.pool", {64, 32, 56}},
      {"encoder.layer1", {64, 32, 56}},     {"encoder.layer2", {128, 16, 28}},
      {"encoder.conv3", {128, 8, 14}},      {"encoder.conv4", {256, 4, 7}}};
  for (size_t i = 0; i < expected_encoder.size(); ++i) {
    CHECK(g.layers[i].first == expected_encoder[i].first);
    CHECK(g.layers[i].second == expected_encoder[i].second);
  }
  // 4x7 -> 8x14 -> 16x28 -> 32x56 -> 64x112 -> 126x224
  const std::vector<Shape> expected_decoder = {
      {64, 8, 14}, {32, 16, 28}, {16, 32, 56}, {8, 64, 112}, {2, 126, 224}};
  for (size_t i = 0; i < expected_decoder.size(); ++i)
    CHECK(g.layers[6 + i].second == expected_decoder[i]);
}

TEST_CASE("paper preset forward shapes and parameter count") {
  auto m = build_model(ModelConfig::paper(), 7);
  std::int64_t total = 0;
  for (const auto& [p, t] : m.params.params()) total += t.numel();
  CHECK(m.params.parameter_count() == total);
  CHECK(m.params.param("embed.fc1.weight").shape() == Shape{2048, 7168});
  CHECK(m.params.param("embed.fc2.weight").shape() == Shape{83, 2048});
  CHECK(m.params.param("lstm.l3.w_hh").shape() == Shape{4 * 83, 83});
  CHECK(m.params.param("lstm.fc.weight").shape() == Shape{83, 83});

  NoGradGuard ng;
  const auto rgb = random_frames(2, 126, 224, 1);
  const Tensor hidden = encoder_forward(m, normalize_frames(m.config, rgb.data(), 2));
  CHECK(hidden.shape() == Shape{2, 256, 4, 7});
  CHECK(decoder_forward(m, hidden).shape() == Shape{2, 2, 126, 224});
  const Tensor e = embed(m, hidden);
  CHECK(e.shape() == Shape{2, 83});

  for (std::int64_t len : {5, 17, 40, 73}) {
    const Tensor seq = oracle::random_tensor({len, 1, 83}, static_cast<std::uint64_t>(len), DType::f32, false);
    const std::int64_t lengths[] = {len};
    CHECK(classify_sequence(m, seq, lengths).shape() == Shape{1, 83});
  }
}

TEST_CASE("tiny preset geometry follows the same rules") {
  const auto cfg = ModelConfig::tiny();
  const auto g = derive_geometry(cfg);
  const auto [h, w] = encoder_hw(64, 112);
  CHECK(g.enc_h == h);
  CHECK(g.enc_w == w);
  CHECK(g.flatten == cfg.encoder_widths[4] * h * w);
  CHECK(g.flatten == 512);
  std::int64_t dh = h, dw = w;
  for (int i = 0; i < 4; ++i) dh = deconv_len(dh, 4, 2, 1), dw = deconv_len(dw, 4, 2, 1);
  CHECK(deconv_len(dh, 4, 2, g.final_pad_h) == 64);
  CHECK(deconv_len(dw, 4, 2, g.final_pad_w) == 112);

  auto m = build_model(cfg, 3);
  NoGradGuard ng;
  const auto rgb = random_frames(3, 64, 112, 2);
  const Tensor hidden = encoder_forward(m, normalize_frames(cfg, rgb.data(), 3));
  CHECK(hidden.shape() == Shape{3, 64, h, w});
  CHECK(decoder_forward(m, hidden).shape() == Shape{3, 2, 64, 112});
  CHECK(embed(m, hidden).shape() == Shape{3, 5});
}

TEST_CASE("invalid geometry names the failing layer") {
  auto cfg = ModelConfig::tiny();
  cfg.input_h = 10;
  cfg.input_w = 10;
  try {
    derive_geometry(cfg);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    CHECK(std::string(e.what()).find("encoder.conv4") != std::string::npos);
  }
  CHECK_THROWS_AS(build_model(cfg, 1), ShapeError);

  auto bad = ModelConfig::tiny();
  bad.decoder_widths[4] = 3;
  CHECK_THROWS_AS(derive_geometry(bad), ShapeError);
  CHECK_THROWS_AS(ModelConfig::from_preset("huge"), std::invalid_argument);
}

TEST_CASE("wrong input dims are rejected") {
  auto m = build_model(ModelConfig::tiny(), 1);
  NoGradGuard ng;
  CHECK_THROWS_AS(encoder_forward(m, Tensor::zeros({1, 3, 60, 112})), ShapeError);
  CHECK_THROWS_AS(encoder_forward(m, Tensor::zeros({1, 1, 64, 112})), ShapeError);
  CHECK_THROWS_AS(decoder_forward(m, Tensor::zeros({1, 64, 3, 4})), ShapeError);
}

TEST_CASE("forward is deterministic and seeds control initialization") {
  const auto cfg = ModelConfig::tiny();
  auto a = build_model(cfg, 11);
  auto b = build_model(cfg, 11);
  auto c = build_model(cfg, 12);
  for (const auto& [p, t] : a.params.params()) CHECK(t.to_vector() == b.params.param(p).to_vector());
  CHECK(a.params.param("encoder.stem.conv.weight").to_vector() !=
        c.params.param("encoder.stem.conv.weight").to_vector());

  NoGradGuard ng;
  const auto rgb = random_frames(2, 64, 112, 5);
  const auto x = normalize_frames(cfg, rgb.data(), 2);
  CHECK(embed(a, encoder_forward(a, x)).to_vector() == embed(b, encoder_forward(b, x)).to_vector());
}

TEST_CASE("recurrent weight blocks start orthogonal, biases zero") {
  auto m = build_model(ModelConfig::tiny(), 4);
  const auto hdim = m.config.lstm_hidden;
  for (std::int64_t l = 0; l < m.config.lstm_layers; ++l) {
    const auto p = "lstm.l" + std::to_string(l);
    const auto w = m.params.param(p + ".w_hh").to_vector();
    for (std::int64_t g = 0; g < 4; ++g) {
      double worst = 0;
      for (std::int64_t i = 0; i < hdim; ++i)
        for (std::int64_t j = 0; j < hdim; ++j) {
          double dot = 0;
          for (std::int64_t k = 0; k < hdim; ++k)
            dot += w[static_cast<size_t>((g * hdim + i) * hdim + k)] *
                   w[static_cast<size_t>((g * hdim + j) * hdim + k)];
          worst = std::max(worst, std::abs(dot - (i == j ? 1.0 : 0.0)));
        }
      CHECK(worst < 1e-5);
    }
    for (double v : m.params.param(p + ".b_ih").to_vector()) CHECK(v == 0.0);
    for (double v : m.params.param(p + ".b_hh").to_vector()) CHECK(v == 0.0);
  }
}

TEST_CASE("normalization uses the config constants") {
  auto cfg = ModelConfig::tiny();
  std::vector<std::uint8_t> px(static_cast<size_t>(64 * 112 * 3), 0);
  px[0] = 255;  // (y 0, x 0, red)
  px[1] = 51;   // green
  const auto x = normalize_frames(cfg, px.data(), 1);
  CHECK(x.shape() == Shape{1, 3, 64, 112});
  CHECK(x.at({0, 0, 0, 0}) == doctest::Approx(1.0));
  CHECK(x.at({0, 1, 0, 0}) == doctest::Approx((0.2 - 0.5) / 0.5));
  CHECK(x.at({0, 2, 0, 0}) == doctest::Approx(-1.0));
}

TEST_CASE("padded batch classification matches solo classification") {
  auto m = build_model(ModelConfig::tiny(), 21);
  NoGradGuard ng;
  const std::vector<std::int64_t> lengths = {5, 17, 40, 73, 1};
  const std::int64_t t_max = 73, batch = 5, e = m.config.embedding_dim;
  std::vector<std::vector<double>> seqs;
  std::vector<double> padded(static_cast<size_t>(t_max * batch * e), 0.0);
  for (std::int64_t b = 0; b < batch; ++b) {
    seqs.push_back(oracle::random_vec(static_cast<size_t>(lengths[b] * e), 100 + b, -2, 2));
    for (std::int64_t t = 0; t < lengths[b]; ++t)
      for (std::int64_t k = 0; k < e; ++k)
        padded[static_cast<size_t>((t * batch + b) * e + k)] = seqs[b][static_cast<size_t>(t * e + k)];
  }
  const auto together = classify_sequence(m, Tensor::create({t_max, batch, e}, padded), lengths).to_vector();
  for (std::int64_t b = 0; b < batch; ++b) {
    const std::int64_t len[] = {lengths[b]};
    const auto solo = classify_sequence(m, Tensor::create({lengths[b], 1, e}, seqs[b]), len).to_vector();
    size_t arg_solo = 0, arg_batch = 0;
    for (std::int64_t k = 0; k < m.config.num_classes; ++k) {
      const double v = together[static_cast<size_t>(b * m.config.num_classes + k)];
      CHECK(std::abs(v - solo[static_cast<size_t>(k)]) <= 1e-6);
      if (solo[static_cast<size_t>(k)] > solo[arg_solo]) arg_solo = static_cast<size_t>(k);
      if (v > together[static_cast<size_t>(b * m.config.num_classes) + arg_batch]) arg_batch = static_cast<size_t>(k);
    }
    CHECK(arg_solo == arg_batch);
  }
}

TEST_CASE("recognition ignores the decoder") {
  auto m = build_model(ModelConfig::tiny(), 8);
  const auto rgb = random_frames(6, 64, 112, 9);
  const auto x = normalize_frames(m.config, rgb.data(), 6);
  const auto before = recognize(m, x);
  for (auto& [p, t] : m.params.params())
    if (p.rfind("decoder.", 0) == 0)
      for (auto& v : t.mutable_values<float>()) v = 0.0f;
  const auto after = recognize(m, x);
  CHECK(before.label == after.label);
  CHECK(before.logits == after.logits);
  CHECK(before.probabilities == after.probabilities);
  double s = 0;
  for (double p : after.probabilities) s += p;
  CHECK(s == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("one joint backward reaches every parameter group") {
  auto m = build_model(ModelConfig::tiny(), 31);
  m.training = false;
  const auto rgb = random_frames(4, 64, 112, 3);
  const Tensor hidden = encoder_forward(m, normalize_frames(m.config, rgb.data(), 4));
  std::vector<double> mask(static_cast<size_t>(4 * 64 * 112));
  for (size_t i = 0; i < mask.size(); ++i) mask[i] = (i / 7) % 3 == 0;
  const Tensor seg = nn::pixelwise_cross_entropy(decoder_forward(m, hidden),
                                                 Tensor::create({4, 64, 112}, mask));
  const std::int64_t len[] = {4};
  const std::int64_t target[] = {2};
  const Tensor label = nn::softmax_cross_entropy(
      classify_sequence(m, reshape(embed(m, hidden), {4, 1, 5}), len), target);
  backward(add(seg, label));
  for (const auto& [p, t] : m.params.params()) {
    double norm = 0;
    for (double g : t.grad().to_vector()) norm += g * g;
    INFO(p);
    CHECK(norm > 0);
  }
}

TEST_CASE("gradcheck encoder to embedding on the tiny preset") {
  // Running statistics: with two frames the embedding BN output is +-1 and
  // nearly flat, which makes the difference quotient meaningless.
  auto m = build_model(ModelConfig::tiny(), 41, DType::f64);
  m.training = false;
  const auto rgb = random_frames(2, 64, 112, 6);
  const Tensor x = normalize_frames(m.config, rgb.data(), 2, DType::f64);
  const Tensor proj = oracle::random_tensor({2, 5}, 77, DType::f64, false);
  std::vector<Tensor> params;
  for (auto& [p, t] : m.params.params())
    if (p.rfind("encoder.", 0) == 0 || p.rfind("embed.", 0) == 0) params.push_back(t);
  GradCheckOptions o;
  o.max_elements = 3;
  o.seed = 5;
  o.eps = 1e-6;
  const auto report =
      finite_diff_check([&] { return sum(mul(embed(m, encoder_forward(m, x)), proj)); }, params, o);
  INFO(report.failure);
  CHECK(report.passed);
}

TEST_CASE("reset_lstm redraws only the classifier") {
  auto m = build_model(ModelConfig::tiny(), 2);
  const auto enc = m.params.param("encoder.stem.conv.weight").to_vector();
  const auto lstm = m.params.param("lstm.l0.w_ih").to_vector();
  reset_lstm(m, 99);
  CHECK(m.params.param("encoder.stem.conv.weight").to_vector() == enc);
  CHECK(m.params.param("lstm.l0.w_ih").to_vector() != lstm);
}

TEST_CASE("fingerprint tracks the config") {
  CHECK(ModelConfig::tiny().fingerprint() == ModelConfig::tiny().fingerprint());
  CHECK(ModelConfig::tiny().fingerprint() != ModelConfig::paper().fingerprint());
  auto c = ModelConfig::tiny();
  c.lstm_layers = 2;
  CHECK(c.fingerprint() != ModelConfig::tiny().fingerprint());
}
