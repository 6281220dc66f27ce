// SPDX-License-Identifier: Apache-2.0
#include "ssar/model.hpp"

#include <zlib.h>

#include <algorithm>
#include <sstream>

namespace ssar {
namespace {

using nn::Conv2dOptions;

std::string dims(std::int64_t h, std::int64_t w) {
  return std::to_string(h) + "x" + std::to_string(w);
}

}  // namespace

ModelConfig ModelConfig::paper() { return ModelConfig{}; }

ModelConfig ModelConfig::tiny() {
  ModelConfig c;
  c.preset = "tiny";
  c.input_h = 64;
  c.input_w = 112;
  c.num_classes = 5;
  c.embedding_dim = 5;
  c.embed_hidden = 512;
  c.lstm_hidden = 32;
  c.lstm_layers = 4;
  c.encoder_widths = {16, 16, 32, 32, 64};
  c.decoder_widths = {64, 32, 16, 8, 2};
  return c;
}

ModelConfig ModelConfig::from_preset(const std::string& name) {
  if (name == "paper") return paper();
  if (name == "tiny") return tiny();
  throw std::invalid_argument("unknown preset '" + name + "' (expected paper or tiny)");
}

std::string ModelConfig::canonical() const {
  std::ostringstream s;
  s.precision(17);
  s << "preset=" << preset << ";input_h=" << input_h << ";input_w=" << input_w
    << ";num_classes=" << num_classes << ";embedding_dim=" << embedding_dim
    << ";embed_hidden=" << embed_hidden << ";lstm_hidden=" << lstm_hidden
    << ";lstm_layers=" << lstm_layers << ";encoder_widths=";
  for (auto w : encoder_widths) s << w << ',';
  s << ";decoder_widths=";
  for (auto w : decoder_widths) s << w << ',';
  s << ";norm_mean=";
  for (auto v : norm_mean) s << v << ',';
  s << ";norm_std=";
  for (auto v : norm_std) s << v << ',';
  return s.str();
}

std::uint32_t ModelConfig::fingerprint() const {
  const std::string text = canonical();
  return static_cast<std::uint32_t>(
      crc32(0L, reinterpret_cast<const Bytef*>(text.data()), static_cast<uInt>(text.size())));
}

ModelGeometry derive_geometry(const ModelConfig& c) {
  auto fail = [](const std::string& path, const std::string& why) {
    throw ShapeError(path + ": " + why);
  };
  if (c.input_h < 1 || c.input_w < 1) fail("input", "non-positive size");
  if (c.num_classes < 2) fail("lstm.fc", "need at least two classes");
  if (c.embedding_dim < 1 || c.embed_hidden < 1 || c.lstm_hidden < 1 || c.lstm_layers < 1)
    fail("embed", "non-positive layer size");
  for (auto w : c.encoder_widths)
    if (w < 1) fail("encoder", "non-positive channel width");
  for (auto w : c.decoder_widths)
    if (w < 1) fail("decoder", "non-positive channel width");
  if (c.decoder_widths[4] != 2) fail("decoder.deconv5", "must produce 2 channels");
  for (double s : c.norm_std)
    if (!(s > 0)) fail("input", "normalization std must be > 0");

  ModelGeometry g;
  std::int64_t h = c.input_h, w = c.input_w;
  // A stride-2 layer that sees a 1-pixel axis no longer downsamples: the
  // encoder has collapsed for this input size.
  auto step = [&](const std::string& path, std::int64_t k, std::int64_t s, std::int64_t p,
                  std::int64_t channels) {
    if (s > 1 && (h < 2 || w < 2))
      fail(path, "input " + dims(h, w) + " too small to downsample");
    const auto oh = nn::conv_out_size(h, k, s, p), ow = nn::conv_out_size(w, k, s, p);
    if (oh < 1 || ow < 1) fail(path, "output " + dims(oh, ow) + " below 1");
    h = oh;
    w = ow;
    g.layers.emplace_back(path, Shape{channels, h, w});
  };
  const auto& ew = c.encoder_widths;
  step("encoder.stem.conv", 7, 2, 3, ew[0]);
  step("encoder.stem.pool", 3, 2, 1, ew[0]);
  step("encoder.layer1", 3, 1, 1, ew[1]);
  step("encoder.layer2", 3, 2, 1, ew[2]);
  step("encoder.conv3", 3, 2, 1, ew[3]);
  step("encoder.conv4", 3, 2, 1, ew[4]);
  g.enc_h = h;
  g.enc_w = w;
  g.flatten = ew[4] * h * w;

  for (int i = 0; i < 4; ++i) {
    h = nn::deconv_out_size(h, 4, 2, 1);
    w = nn::deconv_out_size(w, 4, 2, 1);
    g.layers.emplace_back("decoder.deconv" + std::to_string(i + 1),
                          Shape{c.decoder_widths[static_cast<size_t>(i)], h, w});
  }
  // Last layer: pick the padding that lands exactly on the input size.
  auto final_pad = [&](std::int64_t in, std::int64_t target, const char* axis) {
    const std::int64_t twice = 2 * (in - 1) + 4 - target;
    if (twice < 0 || twice % 2 != 0)
      fail("decoder.deconv5", std::string("cannot reach input ") + axis + " " +
                                  std::to_string(target) + " from " + std::to_string(in));
    return twice / 2;
  };
  g.final_pad_h = final_pad(h, c.input_h, "height");
  g.final_pad_w = final_pad(w, c.input_w, "width");
  g.layers.emplace_back("decoder.deconv5", Shape{2, c.input_h, c.input_w});
  g.layers.emplace_back("embed.fc2", Shape{c.embedding_dim});
  return g;
}

namespace {

void add_conv(nn::ParamStore& ps, nn::Rng& rng, DType dt, const std::string& path,
              std::int64_t out, std::int64_t in, std::int64_t k) {
  ps.add_param(path + ".weight", nn::init_kaiming({out, in, k, k}, rng, dt));
}

void add_bn(nn::ParamStore& ps, DType dt, const std::string& path, std::int64_t channels) {
  ps.add_param(path + ".weight", Tensor::full({channels}, 1.0, dt));
  ps.add_param(path + ".bias", Tensor::zeros({channels}, dt));
  ps.add_buffer(path + ".running_mean", Tensor::zeros({channels}, dt));
  ps.add_buffer(path + ".running_var", Tensor::full({channels}, 1.0, dt));
}

void add_block(nn::ParamStore& ps, nn::Rng& rng, DType dt, const std::string& path,
               std::int64_t in, std::int64_t out, bool downsample) {
  add_conv(ps, rng, dt, path + ".conv1", out, in, 3);
  add_bn(ps, dt, path + ".bn1", out);
  add_conv(ps, rng, dt, path + ".conv2", out, out, 3);
  add_bn(ps, dt, path + ".bn2", out);
  if (downsample) {
    add_conv(ps, rng, dt, path + ".downsample.conv", out, in, 1);
    add_bn(ps, dt, path + ".downsample.bn", out);
  }
}

void add_lstm(nn::ParamStore& ps, nn::Rng& rng, DType dt, const ModelConfig& c) {
  const auto hidden = c.lstm_hidden;
  for (std::int64_t l = 0; l < c.lstm_layers; ++l) {
    const std::string p = "lstm.l" + std::to_string(l);
    const auto in = l == 0 ? c.embedding_dim : hidden;
    ps.add_param(p + ".w_ih", nn::init_xavier_normal({4 * hidden, in}, rng, dt));
    auto w_hh = Tensor::zeros({4 * hidden, hidden}, dt);
    visit_dtype(dt, [&]<class T>() {
      auto dst = w_hh.mutable_values<T>();
      for (int gate = 0; gate < 4; ++gate) {
        const auto block = nn::init_orthogonal({hidden, hidden}, rng, dt);
        const auto src = block.values<T>();
        std::copy(src.begin(), src.end(),
                  dst.begin() + static_cast<std::ptrdiff_t>(gate * hidden * hidden));
      }
    });
    ps.add_param(p + ".w_hh", w_hh);
    ps.add_param(p + ".b_ih", nn::init_zeros({4 * hidden}, dt));
    ps.add_param(p + ".b_hh", nn::init_zeros({4 * hidden}, dt));
  }
  ps.add_param("lstm.fc.weight", nn::init_xavier_normal({c.num_classes, hidden}, rng, dt));
  ps.add_param("lstm.fc.bias", nn::init_zeros({c.num_classes}, dt));
}

Tensor bn(SsarModel& m, const std::string& path, const Tensor& x) {
  auto& ps = m.params;
  return nn::batch_norm(x, ps.param(path + ".weight"), ps.param(path + ".bias"),
                        ps.buffer(path + ".running_mean"), ps.buffer(path + ".running_var"),
                        m.training);
}

Tensor conv(SsarModel& m, const std::string& path, const Tensor& x, std::int64_t stride,
            std::int64_t pad) {
  return nn::conv2d(x, m.params.param(path + ".weight"), Tensor(), {stride, pad, pad});
}

Tensor block(SsarModel& m, const std::string& path, const Tensor& x, std::int64_t stride) {
  Tensor out = relu(bn(m, path + ".bn1", conv(m, path + ".conv1", x, stride, 1)));
  out = bn(m, path + ".bn2", conv(m, path + ".conv2", out, 1, 1));
  Tensor shortcut = x;
  if (m.params.has_param(path + ".downsample.conv.weight"))
    shortcut = bn(m, path + ".downsample.bn", conv(m, path + ".downsample.conv", x, stride, 0));
  return relu(add(out, shortcut));
}

}  // namespace

SsarModel build_model(const ModelConfig& config, std::uint64_t seed, DType dt) {
  SsarModel m;
  m.config = config;
  m.geometry = derive_geometry(config);
  nn::Rng rng(seed);
  auto& ps = m.params;
  const auto& ew = config.encoder_widths;
  add_conv(ps, rng, dt, "encoder.stem.conv", ew[0], 3, 7);
  add_bn(ps, dt, "encoder.stem.bn", ew[0]);
  add_block(ps, rng, dt, "encoder.layer1.0", ew[0], ew[1], ew[0] != ew[1]);
  add_block(ps, rng, dt, "encoder.layer1.1", ew[1], ew[1], false);
  add_block(ps, rng, dt, "encoder.layer2.0", ew[1], ew[2], true);
  add_block(ps, rng, dt, "encoder.layer2.1", ew[2], ew[2], false);
  add_conv(ps, rng, dt, "encoder.conv3", ew[3], ew[2], 3);
  add_bn(ps, dt, "encoder.bn3", ew[3]);
  add_conv(ps, rng, dt, "encoder.conv4", ew[4], ew[3], 3);
  add_bn(ps, dt, "encoder.bn4", ew[4]);

  std::int64_t in = ew[4];
  for (int i = 0; i < 5; ++i) {
    const std::string p = "decoder.deconv" + std::to_string(i + 1);
    const auto out = config.decoder_widths[static_cast<size_t>(i)];
    // Stored C_in x O x k x k. With stride 2 each output pixel sees only
    // C_in * k^2 / 4 taps, so the Kaiming std is doubled to match that fan-in.
    const Tensor w = scale(nn::init_kaiming({out, in, 4, 4}, rng, dt), 2.0);
    ps.add_param(p + ".weight", Tensor::from_buffer({in, out, 4, 4}, w.buffer()));
    ps.add_param(p + ".bias", nn::init_zeros({out}, dt));
    in = out;
  }

  ps.add_param("embed.fc1.weight",
               nn::init_xavier_normal({config.embed_hidden, m.geometry.flatten}, rng, dt));
  add_bn(ps, dt, "embed.bn", config.embed_hidden);
  ps.add_param("embed.fc2.weight",
               nn::init_xavier_normal({config.embedding_dim, config.embed_hidden}, rng, dt));
  ps.add_param("embed.fc2.bias", nn::init_zeros({config.embedding_dim}, dt));

  add_lstm(ps, rng, dt, config);
  return m;
}

void reset_lstm(SsarModel& model, std::uint64_t seed) {
  nn::ParamStore fresh;
  nn::Rng rng(seed);
  const DType dt = model.params.param("lstm.fc.weight").dtype();
  add_lstm(fresh, rng, dt, model.config);
  for (auto& [path, t] : fresh.params()) model.params.param(path) = t;
}

Tensor normalize_frames(const ModelConfig& c, const std::uint8_t* rgb, std::int64_t count,
                        DType dt) {
  const auto plane = static_cast<size_t>(c.input_h * c.input_w);
  return visit_dtype(dt, [&]<class T>() {
    std::vector<T> out(static_cast<size_t>(count) * 3 * plane);
    for (std::int64_t n = 0; n < count; ++n) {
      const std::uint8_t* src = rgb + static_cast<size_t>(n) * plane * 3;
      T* dst = out.data() + static_cast<size_t>(n) * 3 * plane;
      for (size_t ch = 0; ch < 3; ++ch) {
        const T mean = static_cast<T>(c.norm_mean[ch]);
        const T inv = static_cast<T>(1.0 / c.norm_std[ch]);
        for (size_t i = 0; i < plane; ++i)
          dst[ch * plane + i] = (static_cast<T>(src[i * 3 + ch]) / T(255) - mean) * inv;
      }
    }
    return Tensor::from_vector<T>({count, 3, c.input_h, c.input_w}, std::move(out));
  });
}

Tensor encoder_forward(SsarModel& m, const Tensor& images) {
  const auto& c = m.config;
  if (images.rank() != 4 || images.dim(1) != 3 || images.dim(2) != c.input_h ||
      images.dim(3) != c.input_w)
    throw ShapeError("encoder: expected B x 3 x " + dims(c.input_h, c.input_w) + " input, got " +
                     shape_str(images.shape()));
  Tensor x = relu(bn(m, "encoder.stem.bn", conv(m, "encoder.stem.conv", images, 2, 3)));
  x = nn::max_pool2d(x, 3, 2, 1);
  x = block(m, "encoder.layer1.0", x, 1);
  x = block(m, "encoder.layer1.1", x, 1);
  x = block(m, "encoder.layer2.0", x, 2);
  x = block(m, "encoder.layer2.1", x, 1);
  x = relu(bn(m, "encoder.bn3", conv(m, "encoder.conv3", x, 2, 1)));
  return relu(bn(m, "encoder.bn4", conv(m, "encoder.conv4", x, 2, 1)));
}

Tensor decoder_forward(SsarModel& m, const Tensor& hidden) {
  const auto& g = m.geometry;
  if (hidden.rank() != 4 || hidden.dim(1) != m.config.encoder_widths[4] ||
      hidden.dim(2) != g.enc_h || hidden.dim(3) != g.enc_w)
    throw ShapeError("decoder: unexpected hidden shape " + shape_str(hidden.shape()));
  Tensor x = hidden;
  for (int i = 1; i <= 5; ++i) {
    const std::string p = "decoder.deconv" + std::to_string(i);
    const Conv2dOptions opt = i < 5 ? Conv2dOptions{2, 1, 1}
                                    : Conv2dOptions{2, g.final_pad_h, g.final_pad_w};
    x = nn::deconv2d(x, m.params.param(p + ".weight"), m.params.param(p + ".bias"), opt);
    if (i < 5) x = relu(x);
  }
  return x;
}

Tensor embed(SsarModel& m, const Tensor& hidden) {
  const auto& g = m.geometry;
  if (hidden.rank() != 4 || hidden.dim(1) * hidden.dim(2) * hidden.dim(3) != g.flatten)
    throw ShapeError("embed: unexpected hidden shape " + shape_str(hidden.shape()));
  const Tensor flat = reshape(hidden, {hidden.dim(0), g.flatten});
  Tensor x = nn::linear(flat, m.params.param("embed.fc1.weight"), Tensor());
  x = relu(bn(m, "embed.bn", x));
  return nn::linear(x, m.params.param("embed.fc2.weight"), m.params.param("embed.fc2.bias"));
}

std::vector<nn::LstmWeights> lstm_weights(const SsarModel& m) {
  std::vector<nn::LstmWeights> layers;
  for (std::int64_t l = 0; l < m.config.lstm_layers; ++l) {
    const std::string p = "lstm.l" + std::to_string(l);
    layers.push_back({m.params.param(p + ".w_ih"), m.params.param(p + ".w_hh"),
                      m.params.param(p + ".b_ih"), m.params.param(p + ".b_hh")});
  }
  return layers;
}

Tensor classify_sequence(SsarModel& m, const Tensor& embeddings,
                         std::span<const std::int64_t> lengths) {
  if (embeddings.rank() != 3 || embeddings.dim(2) != m.config.embedding_dim)
    throw ShapeError("classify_sequence: expected T x B x " +
                     std::to_string(m.config.embedding_dim) + " embeddings, got " +
                     shape_str(embeddings.shape()));
  const auto layers = lstm_weights(m);
  const auto out = nn::lstm_forward(embeddings, lengths, layers);
  return nn::linear(out.final_hidden, m.params.param("lstm.fc.weight"),
                    m.params.param("lstm.fc.bias"));
}

Recognition recognize(SsarModel& m, const Tensor& frames) {
  if (frames.rank() != 4 || frames.dim(0) < 1)
    throw ShapeError("recognize: expected a non-empty T x 3 x H x W sequence");
  NoGradGuard no_grad;
  const bool was_training = m.training;
  m.training = false;
  Tensor logits;
  try {
    const Tensor e = embed(m, encoder_forward(m, frames));
    const std::int64_t len[] = {frames.dim(0)};
    logits = classify_sequence(m, reshape(e, {frames.dim(0), 1, m.config.embedding_dim}), len);
  } catch (...) {
    m.training = was_training;
    throw;
  }
  m.training = was_training;
  Recognition r;
  r.logits = logits.to_vector();
  r.probabilities = nn::softmax_channels(logits).to_vector();
  r.label = std::max_element(r.logits.begin(), r.logits.end()) - r.logits.begin();
  return r;
}

}  // namespace ssar
