// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "ssar/eval.hpp"

namespace ssar::eval {

ConfusionMatrix::ConfusionMatrix(std::int64_t k) : k_(k), counts_(static_cast<size_t>(k * k), 0) {
  if (k < 0) throw std::invalid_argument("confusion matrix: negative class count");
}

void ConfusionMatrix::add(std::int64_t truth, std::int64_t predicted) {
  if (truth < 0 || truth >= k_)
    throw std::out_of_range("label " + std::to_string(truth) + " outside [0, " +
                            std::to_string(k_) + ")");
  if (predicted < 0 || predicted >= k_)
    throw std::out_of_range("prediction " + std::to_string(predicted) + " outside [0, " +
                            std::to_string(k_) + ")");
  ++counts_[static_cast<size_t>(truth * k_ + predicted)];
  ++total_;
}

std::int64_t ConfusionMatrix::at(std::int64_t truth, std::int64_t predicted) const {
  if (truth < 0 || truth >= k_ || predicted < 0 || predicted >= k_)
    throw std::out_of_range("confusion matrix index out of range");
  return counts_[static_cast<size_t>(truth * k_ + predicted)];
}

std::int64_t ConfusionMatrix::row_sum(std::int64_t truth) const {
  std::int64_t s = 0;
  for (std::int64_t j = 0; j < k_; ++j) s += at(truth, j);
  return s;
}

std::int64_t ConfusionMatrix::trace() const {
  std::int64_t s = 0;
  for (std::int64_t i = 0; i < k_; ++i) s += at(i, i);
  return s;
}

double ConfusionMatrix::accuracy() const {
  return total_ ? static_cast<double>(trace()) / static_cast<double>(total_) : 0.0;
}

void ConfusionMatrix::check() const {
  std::int64_t s = 0;
  for (std::int64_t i = 0; i < k_; ++i) s += row_sum(i);
  if (s != total_) throw std::logic_error("confusion matrix rows do not sum to the total");
}

EvalReport report_from_predictions(const std::vector<std::string>& ids,
                                   const std::vector<std::string>& scenarios,
                                   const std::vector<std::int64_t>& truth,
                                   const std::vector<std::int64_t>& predicted, std::int64_t k) {
  if (truth.size() != predicted.size() || ids.size() != truth.size() ||
      scenarios.size() != truth.size())
    throw std::invalid_argument("evaluate: mismatched result lengths");
  if (truth.empty()) throw std::invalid_argument("evaluate: no sequences to evaluate");
  EvalReport r;
  r.matrix = ConfusionMatrix(k);
  for (size_t i = 0; i < truth.size(); ++i) {
    r.matrix.add(truth[i], predicted[i]);
    auto& sc = r.scenarios[scenarios[i]];
    ++sc.count;
    sc.correct += truth[i] == predicted[i];
  }
  r.matrix.check();
  for (std::int64_t c = 0; c < k; ++c) {
    ClassReport cr{c, r.matrix.row_sum(c), r.matrix.at(c, c), -1};
    std::int64_t worst = 0;
    for (std::int64_t j = 0; j < k; ++j)
      if (j != c && r.matrix.at(c, j) > worst) {
        worst = r.matrix.at(c, j);
        cr.most_confused = j;
      }
    r.per_class.push_back(cr);
  }
  r.accuracy = r.matrix.accuracy();
  r.ids = ids;
  r.truth = truth;
  r.predicted = predicted;
  return r;
}

std::vector<double> sequence_logits(SsarModel& model, const std::vector<data::Sequence>& seqs,
                                    std::int64_t batch_size) {
  if (batch_size < 1) throw std::invalid_argument("evaluate: batch size must be >= 1");
  const auto archive = train::export_embeddings(model, seqs);
  return train::archive_logits(model, archive, batch_size);
}

EvalReport evaluate(SsarModel& model, const std::vector<data::Sequence>& seqs,
                    const std::optional<std::string>& scenario, std::int64_t batch_size) {
  std::vector<data::Sequence> picked;
  for (const auto& s : seqs)
    if (!scenario || s.scenario == *scenario) picked.push_back(s);
  if (picked.empty())
    throw std::invalid_argument(scenario ? "evaluate: no sequences with scenario '" + *scenario + "'"
                                         : std::string("evaluate: no sequences to evaluate"));
  const auto k = model.config.num_classes;
  std::vector<std::string> ids, scen;
  std::vector<std::int64_t> truth;
  for (const auto& s : picked) {
    if (s.label < 0 || s.label >= k)
      throw std::out_of_range("sequence '" + s.id + "': label " + std::to_string(s.label) +
                              " outside [0, " + std::to_string(k) + ")");
    ids.push_back(s.id);
    scen.push_back(s.scenario);
    truth.push_back(s.label);
  }
  const auto pred = train::argmax_rows(sequence_logits(model, picked, batch_size), k);
  return report_from_predictions(ids, scen, truth, pred, k);
}

// ---------------------------------------------------------------------------

std::vector<double> cam_from_gradients(const std::vector<double>& a, const std::vector<double>& g,
                                       std::int64_t c, std::int64_t h, std::int64_t w) {
  const auto plane = static_cast<size_t>(h * w);
  if (a.size() != static_cast<size_t>(c) * plane || g.size() != a.size())
    throw std::invalid_argument("grad_cam: activation / gradient size mismatch");
  std::vector<double> map(plane, 0.0);
  for (size_t k = 0; k < static_cast<size_t>(c); ++k) {
    double wk = 0;
    for (size_t i = 0; i < plane; ++i) wk += g[k * plane + i];
    wk /= static_cast<double>(plane);
    for (size_t i = 0; i < plane; ++i) map[i] += wk * a[k * plane + i];
  }
  for (auto& v : map) v = std::max(v, 0.0);
  const auto [lo, hi] = std::minmax_element(map.begin(), map.end());
  const double mn = *lo, range = *hi - *lo;
  if (!(range > 0) || !std::isfinite(range)) return std::vector<double>(plane, 0.0);
  for (auto& v : map) v = (v - mn) / range;
  return map;
}

std::vector<double> upsample_bilinear(const std::vector<double>& src, std::int64_t h,
                                      std::int64_t w, std::int64_t out_h, std::int64_t out_w) {
  if (h < 1 || w < 1 || out_h < 1 || out_w < 1 || src.size() != static_cast<size_t>(h * w))
    throw std::invalid_argument("upsample_bilinear: bad sizes");
  auto axis = [](std::int64_t o, std::int64_t in, std::int64_t out, std::int64_t& i0,
                 std::int64_t& i1, double& f) {
    double x = (static_cast<double>(o) + 0.5) * static_cast<double>(in) / static_cast<double>(out) - 0.5;
    x = std::max(x, 0.0);
    i0 = std::min(static_cast<std::int64_t>(x), in - 1);
    i1 = std::min(i0 + 1, in - 1);
    f = x - static_cast<double>(i0);
  };
  std::vector<double> out(static_cast<size_t>(out_h * out_w));
  for (std::int64_t y = 0; y < out_h; ++y) {
    std::int64_t y0, y1;
    double fy;
    axis(y, h, out_h, y0, y1, fy);
    for (std::int64_t x = 0; x < out_w; ++x) {
      std::int64_t x0, x1;
      double fx;
      axis(x, w, out_w, x0, x1, fx);
      const auto v = [&](std::int64_t r, std::int64_t c) { return src[static_cast<size_t>(r * w + c)]; };
      const double top = v(y0, x0) * (1 - fx) + v(y0, x1) * fx;
      const double bot = v(y1, x0) * (1 - fx) + v(y1, x1) * fx;
      out[static_cast<size_t>(y * out_w + x)] = top * (1 - fy) + bot * fy;
    }
  }
  return out;
}

CamMap grad_cam(SsarModel& model, const data::Sequence& seq, std::int64_t frame_index,
                const CamOptions& options) {
  if (frame_index < 0 || frame_index >= seq.length)
    throw std::out_of_range("grad_cam: frame " + std::to_string(frame_index) +
                            " outside sequence '" + seq.id + "' of length " +
                            std::to_string(seq.length));
  if (seq.height != model.config.input_h || seq.width != model.config.input_w)
    throw std::invalid_argument("grad_cam: sequence '" + seq.id + "' frame size does not match the model");
  const auto dt = model.params.param("lstm.fc.weight").dtype();
  const auto k = model.config.num_classes;
  const auto e = model.config.embedding_dim;
  const bool was_training = model.training;
  model.training = false;

  Tensor hidden, others;
  {
    NoGradGuard no_grad;
    hidden = encoder_forward(model, normalize_frames(model.config, seq.rgb.data(), seq.length, dt));
    others = embed(model, hidden);
  }
  const auto c = hidden.dim(1), h = hidden.dim(2), w = hidden.dim(3);
  const auto plane = static_cast<size_t>(c * h * w);
  std::vector<double> all = hidden.to_vector();
  std::vector<double> act(all.begin() + static_cast<std::ptrdiff_t>(frame_index) * static_cast<std::ptrdiff_t>(plane),
                          all.begin() + static_cast<std::ptrdiff_t>(frame_index + 1) * static_cast<std::ptrdiff_t>(plane));
  Tensor leaf = Tensor::create({1, c, h, w}, act, dt);
  leaf.set_requires_grad(true);
  const Tensor emb_f = embed(model, leaf);

  Tensor logits;
  std::int64_t width = 0;
  if (options.frame_level) {
    logits = reshape(emb_f, {e});
    width = e;
  } else {
    std::vector<Tensor> rows;
    for (std::int64_t t = 0; t < seq.length; ++t)
      rows.push_back(t == frame_index ? select(emb_f, 0) : select(others, t));
    const std::int64_t len[] = {seq.length};
    logits = reshape(classify_sequence(model, reshape(stack(rows), {seq.length, 1, e}), len), {k});
    width = k;
  }
  const auto lv = logits.to_vector();
  std::int64_t target = std::max_element(lv.begin(), lv.end()) - lv.begin();
  if (options.target_class) target = *options.target_class;
  if (target < 0 || target >= width) {
    model.training = was_training;
    throw std::out_of_range("grad_cam: target class " + std::to_string(target) + " out of range");
  }
  std::vector<double> onehot(static_cast<size_t>(width), 0.0);
  onehot[static_cast<size_t>(target)] = 1.0;
  model.params.zero_grad();
  backward(sum(mul(logits, Tensor::create({width}, onehot, dt))));
  const auto grad = leaf.grad().to_vector();
  model.params.zero_grad();
  model.training = was_training;

  CamMap cam;
  cam.frame = frame_index;
  cam.target_class = target;
  cam.h = h;
  cam.w = w;
  cam.coarse = cam_from_gradients(act, grad, c, h, w);
  cam.out_h = seq.height;
  cam.out_w = seq.width;
  cam.upsampled = upsample_bilinear(cam.coarse, h, w, cam.out_h, cam.out_w);
  return cam;
}

double cam_mass_in_box(const CamMap& cam, const std::uint8_t* mask, std::int64_t dilate) {
  std::int64_t r0 = cam.out_h, r1 = -1, c0 = cam.out_w, c1 = -1;
  for (std::int64_t y = 0; y < cam.out_h; ++y)
    for (std::int64_t x = 0; x < cam.out_w; ++x)
      if (mask[y * cam.out_w + x]) {
        r0 = std::min(r0, y);
        r1 = std::max(r1, y);
        c0 = std::min(c0, x);
        c1 = std::max(c1, x);
      }
  if (r1 < 0) return 0.0;
  r0 -= dilate;
  r1 += dilate;
  c0 -= dilate;
  c1 += dilate;
  double inside = 0, total = 0;
  for (std::int64_t y = 0; y < cam.out_h; ++y)
    for (std::int64_t x = 0; x < cam.out_w; ++x) {
      const double v = cam.upsampled[static_cast<size_t>(y * cam.out_w + x)];
      total += v;
      if (y >= r0 && y <= r1 && x >= c0 && x <= c1) inside += v;
    }
  return total > 0 ? inside / total : 0.0;
}

}  // namespace ssar::eval
