// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <cmath>
#include <sstream>

#include "ssar/log.hpp"
#include "ssar/train.hpp"

namespace ssar::train {
namespace {

DType model_dtype(const SsarModel& m) { return m.params.param("lstm.fc.weight").dtype(); }

std::uint64_t epoch_seed(std::uint64_t seed, std::int64_t epoch) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ull * static_cast<std::uint64_t>(epoch + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

class EpochOrder {
 public:
  EpochOrder(std::int64_t n, std::uint64_t seed) : n_(n), seed_(seed) {}
  const std::vector<std::int64_t>& get(std::int64_t epoch) {
    if (epoch != epoch_) {
      order_ = data::seeded_permutation(n_, epoch_seed(seed_, epoch));
      epoch_ = epoch;
    }
    return order_;
  }

 private:
  std::int64_t n_;
  std::uint64_t seed_;
  std::int64_t epoch_ = -1;
  std::vector<std::int64_t> order_;
};

std::map<std::string, Tensor> trainable(SsarModel& m, const std::string& prefix) {
  std::map<std::string, Tensor> out;
  for (auto& [p, t] : m.params.params())
    if (p.compare(0, prefix.size(), prefix) == 0) out.emplace(p, t);
  return out;
}

std::map<std::string, Tensor> snapshot(const SsarModel& m, const std::string& prefix) {
  std::map<std::string, Tensor> out;
  for (const auto& [p, t] : m.params.params())
    if (p.compare(0, prefix.size(), prefix) == 0) out.emplace(p, t.clone());
  for (const auto& [p, t] : m.params.buffers())
    if (p.compare(0, prefix.size(), prefix) == 0) out.emplace(p, t.clone());
  return out;
}

void restore(SsarModel& m, const std::map<std::string, Tensor>& saved) {
  for (const auto& [p, src] : saved) {
    Tensor& dst = m.params.has_param(p) ? m.params.param(p) : m.params.buffer(p);
    visit_dtype(src.dtype(), [&]<class T>() {
      const auto s = src.values<T>();
      std::copy(s.begin(), s.end(), dst.mutable_values<T>().begin());
    });
  }
}

struct StepLosses {
  double loss = 0, seg = 0, label = 0;
};

std::string fmt(double v) {
  std::ostringstream s;
  s << v;
  return s.str();
}

void check_finite(int stage, std::int64_t step, const StepLosses& l) {
  if (!std::isfinite(l.loss))
    throw std::runtime_error("stage " + std::to_string(stage) + ": non-finite loss at step " +
                             std::to_string(step) + " (loss " + fmt(l.loss) + ", seg_loss " +
                             fmt(l.seg) + ", label_loss " + fmt(l.label) + ")");
}

using StepFn = std::function<StepLosses(std::int64_t epoch, std::int64_t index, double lr)>;
using EvalFn = std::function<double()>;

// Epoch/step bookkeeping, validation, early stopping, lr drop and metrics.
TrainResult run_loop(SsarModel& model, const StageConfig& cfg, RunContext& ctx,
                     std::int64_t steps_per_epoch, const StepFn& step_fn, const EvalFn& evaluate,
                     const std::string& prefix) {
  validate(cfg);
  TrainResult result;
  const bool has_val = static_cast<bool>(evaluate);
  TrainState st;
  if (ctx.state) {
    st = *ctx.state;
  } else {
    st.lr = cfg.lr;
    if (has_val) {
      st.best_val = evaluate();
      st.best = snapshot(model, prefix);
      log::info("stage " + std::to_string(cfg.stage) + ": initial val accuracy " + fmt(st.best_val));
    }
  }
  const std::int64_t total = steps_per_epoch * cfg.max_epochs;
  bool stop = false;
  result.finished = true;
  while (!stop && st.step < total) {
    if (cfg.max_steps > 0 && st.step >= cfg.max_steps) {
      result.finished = false;
      break;
    }
    const std::int64_t epoch = st.step / steps_per_epoch, index = st.step % steps_per_epoch;
    const StepLosses l = step_fn(epoch, index, st.lr);
    check_finite(cfg.stage, st.step, l);
    ++st.step;
    MetricsRecord rec{st.step, cfg.stage, l.loss, l.seg, l.label, std::nullopt, st.lr};

    if (cfg.lr_after > 0 && !st.lr_dropped) {
      bool drop = false;
      if (cfg.lr_drop_step > 0) {
        drop = st.step >= cfg.lr_drop_step;
      } else {
        st.window_sum += l.loss;
        if (++st.window_count == cfg.divergence_window) {
          const double mean = st.window_sum / static_cast<double>(st.window_count);
          st.rising_windows = st.windows_seen > 0 && mean > st.last_window_mean ? st.rising_windows + 1 : 0;
          st.last_window_mean = mean;
          ++st.windows_seen;
          st.window_sum = 0;
          st.window_count = 0;
          drop = st.rising_windows >= cfg.divergence_windows;
        }
      }
      if (drop) {
        st.lr = cfg.lr_after;
        st.lr_dropped = true;
        log::info("stage " + std::to_string(cfg.stage) + ": learning rate -> " + fmt(st.lr) +
                  " at step " + std::to_string(st.step));
      }
    }

    const bool eval_now = has_val && (cfg.eval_every > 0 ? st.step % cfg.eval_every == 0
                                                         : index == steps_per_epoch - 1);
    if (eval_now) {
      const double acc = evaluate();
      rec.val_accuracy = acc;
      if (acc > st.best_val) {
        st.best_val = acc;
        st.best = snapshot(model, prefix);
        st.bad_evals = 0;
      } else if (++st.bad_evals >= cfg.patience) {
        result.early_stopped = true;
        stop = true;
      }
      log::info("stage " + std::to_string(cfg.stage) + " step " + std::to_string(st.step) +
                ": loss " + fmt(l.loss) + " val accuracy " + fmt(acc));
    } else {
      log::debug("stage " + std::to_string(cfg.stage) + " step " + std::to_string(st.step) +
                 ": loss " + fmt(l.loss));
    }
    if (ctx.sink) ctx.sink(rec);
    result.records.push_back(rec);
    if (cfg.target_loss > 0 && l.loss < cfg.target_loss) stop = true;
  }
  if (result.finished && has_val && !st.best.empty()) restore(model, st.best);
  result.steps = st.step;
  result.best_val = st.best_val;
  ctx.state = std::move(st);
  return result;
}

std::int64_t batches(std::int64_t n, std::int64_t b) {
  std::int64_t k = (n + b - 1) / b;
  // A trailing batch of one frame has no batch-norm variance; fold it away.
  if (k > 1 && n % b == 1) --k;
  return k;
}

Tensor mask_tensor(const std::uint8_t* mask, std::int64_t count, std::int64_t h, std::int64_t w,
                   DType dt) {
  const auto n = static_cast<size_t>(count * h * w);
  return visit_dtype(dt, [&]<class T>() {
    std::vector<T> v(n);
    for (size_t i = 0; i < n; ++i) v[i] = mask[i] ? T(1) : T(0);
    return Tensor::from_vector<T>({count, h, w}, std::move(v));
  });
}

Tensor weighted_sum(const Tensor& seg, const Tensor& label, const StageConfig& cfg) {
  if (cfg.seg_weight == 1.0 && cfg.label_weight == 1.0) return add(seg, label);
  return add(scale(seg, cfg.seg_weight), scale(label, cfg.label_weight));
}

Tensor sequence_frames(const SsarModel& m, const data::Sequence& s) {
  return normalize_frames(m.config, s.rgb.data(), s.length, model_dtype(m));
}

double sequence_accuracy(SsarModel& m, const std::vector<data::Sequence>& seqs) {
  const auto archive = export_embeddings(m, seqs);
  const auto pred = argmax_rows(archive_logits(m, archive), m.config.num_classes);
  std::vector<std::int64_t> truth;
  for (const auto& s : seqs) truth.push_back(s.label);
  return accuracy(pred, truth);
}

void check_sequences(const SsarModel& m, const std::vector<data::Sequence>& seqs, const char* what) {
  for (const auto& s : seqs) {
    if (s.height != m.config.input_h || s.width != m.config.input_w)
      throw std::runtime_error(std::string(what) + ": sequence '" + s.id +
                               "' frame size does not match the model input");
    if (s.label < 0 || s.label >= m.config.num_classes)
      throw std::runtime_error(std::string(what) + ": sequence '" + s.id + "' label out of range");
  }
}

}  // namespace

void validate(const StageConfig& c) {
  if (c.stage < 1 || c.stage > 3) throw std::invalid_argument("stage must be 1, 2 or 3");
  if (!(c.lr > 0)) throw std::invalid_argument("lr must be > 0");
  if (c.lr_after < 0) throw std::invalid_argument("lr_after must be >= 0");
  if (c.patience < 1) throw std::invalid_argument("patience must be >= 1");
  if (c.batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
  if (c.max_epochs < 1) throw std::invalid_argument("max_epochs must be >= 1");
  if (c.max_steps < 0 || c.eval_every < 0 || c.lr_drop_step < 0)
    throw std::invalid_argument("step counts must be >= 0");
  if (c.divergence_window < 1 || c.divergence_windows < 1)
    throw std::invalid_argument("divergence window settings must be >= 1");
  if (c.seg_weight < 0 || c.label_weight < 0) throw std::invalid_argument("loss weights must be >= 0");
}

FrameSet frames_with_hand(const std::vector<data::Sequence>& seqs) {
  FrameSet f;
  for (const auto& s : seqs) {
    if (s.mask.empty()) throw std::runtime_error("sequence '" + s.id + "' has no masks");
    if (f.height == 0) {
      f.height = s.height;
      f.width = s.width;
    } else if (f.height != s.height || f.width != s.width) {
      throw std::runtime_error("sequence '" + s.id + "' frame size differs from the others");
    }
    const auto plane = static_cast<size_t>(s.height * s.width);
    for (std::int64_t t = 0; t < s.length; ++t) {
      const auto* m = s.mask.data() + static_cast<size_t>(t) * plane;
      if (std::none_of(m, m + plane, [](std::uint8_t v) { return v != 0; })) continue;
      const auto* rgb = s.rgb.data() + static_cast<size_t>(t) * plane * 3;
      f.rgb.insert(f.rgb.end(), rgb, rgb + plane * 3);
      f.mask.insert(f.mask.end(), m, m + plane);
      f.labels.push_back(s.label);
    }
  }
  return f;
}

EmbeddingArchive export_embeddings(SsarModel& m, const std::vector<data::Sequence>& seqs,
                                   std::int64_t batch_frames) {
  check_sequences(m, seqs, "embed-export");
  NoGradGuard no_grad;
  const bool was = m.training;
  m.training = false;
  EmbeddingArchive a;
  a.dim = m.config.embedding_dim;
  const auto frame_bytes = static_cast<size_t>(m.config.input_h * m.config.input_w * 3);
  for (const auto& s : seqs) {
    if (s.length < 1 || s.rgb.size() != static_cast<size_t>(s.length) * frame_bytes)
      throw std::runtime_error("embed-export: sequence '" + s.id + "' has missing frames");
    EmbeddedSequence e{s.id, s.label, s.length, {}};
    for (std::int64_t t0 = 0; t0 < s.length; t0 += batch_frames) {
      const auto n = std::min(batch_frames, s.length - t0);
      const Tensor x = normalize_frames(m.config, s.rgb.data() + static_cast<size_t>(t0) * frame_bytes, n,
                                        model_dtype(m));
      const Tensor emb = embed(m, encoder_forward(m, x));
      for (double v : emb.to_vector()) e.data.push_back(static_cast<float>(v));
    }
    a.sequences.push_back(std::move(e));
  }
  m.training = was;
  return a;
}

double frame_accuracy(SsarModel& m, const FrameSet& f, std::int64_t batch) {
  if (f.size() == 0) throw std::invalid_argument("frame_accuracy: no frames");
  NoGradGuard no_grad;
  const bool was = m.training;
  m.training = false;
  const auto frame_bytes = static_cast<size_t>(f.height * f.width * 3);
  std::int64_t correct = 0;
  const auto k = m.config.embedding_dim;
  for (std::int64_t i0 = 0; i0 < f.size(); i0 += batch) {
    const auto n = std::min(batch, f.size() - i0);
    const Tensor x = normalize_frames(m.config, f.rgb.data() + static_cast<size_t>(i0) * frame_bytes, n,
                                      model_dtype(m));
    const auto pred = argmax_rows(embed(m, encoder_forward(m, x)).to_vector(), k);
    for (std::int64_t j = 0; j < n; ++j)
      correct += pred[static_cast<size_t>(j)] == f.labels[static_cast<size_t>(i0 + j)];
  }
  m.training = was;
  return static_cast<double>(correct) / static_cast<double>(f.size());
}

std::vector<double> archive_logits(SsarModel& m, const EmbeddingArchive& a, std::int64_t batch) {
  if (a.dim != m.config.embedding_dim)
    throw std::runtime_error("embedding dim " + std::to_string(a.dim) + " does not match model input " +
                             std::to_string(m.config.embedding_dim));
  NoGradGuard no_grad;
  std::vector<data::SeqView<float>> views;
  for (const auto& s : a.sequences) views.push_back({s.data, s.length, s.label});
  std::vector<double> out;
  for (const auto& b : data::pad_and_batch(views, a.dim, static_cast<size_t>(batch))) {
    const auto bs = static_cast<std::int64_t>(b.items.size());
    Tensor x = Tensor::from_vector<float>({b.t_max, bs, a.dim}, b.data).to(model_dtype(m));
    const auto logits = classify_sequence(m, x, b.lengths).to_vector();
    out.insert(out.end(), logits.begin(), logits.end());
  }
  return out;
}

std::vector<std::int64_t> argmax_rows(const std::vector<double>& logits, std::int64_t k) {
  std::vector<std::int64_t> out;
  for (size_t i = 0; i + static_cast<size_t>(k) <= logits.size(); i += static_cast<size_t>(k))
    out.push_back(std::max_element(logits.begin() + static_cast<std::ptrdiff_t>(i),
                                   logits.begin() + static_cast<std::ptrdiff_t>(i) + k) -
                  (logits.begin() + static_cast<std::ptrdiff_t>(i)));
  return out;
}

double accuracy(const std::vector<std::int64_t>& p, const std::vector<std::int64_t>& t) {
  if (p.size() != t.size() || p.empty()) throw std::invalid_argument("accuracy: size mismatch or empty");
  std::int64_t c = 0;
  for (size_t i = 0; i < p.size(); ++i) c += p[i] == t[i];
  return static_cast<double>(c) / static_cast<double>(p.size());
}

TrainResult train_stage1(SsarModel& m, const FrameSet& train, const FrameSet& val,
                         const StageConfig& cfg, RunContext& ctx) {
  if (train.size() < 2) throw std::runtime_error("stage 1: need at least two training frames");
  if (train.height != m.config.input_h || train.width != m.config.input_w)
    throw std::runtime_error("stage 1: frame size does not match the model input");
  for (auto l : train.labels)
    if (l < 0 || l >= m.config.embedding_dim)
      throw std::runtime_error("stage 1: frame label outside the embedding width");
  const auto dt = model_dtype(m);
  const auto h = m.config.input_h, w = m.config.input_w;
  const auto frame_bytes = static_cast<size_t>(h * w * 3), plane = static_cast<size_t>(h * w);
  const auto bs = std::min(cfg.batch_size, train.size());
  const auto spe = batches(train.size(), bs);
  auto params = trainable(m, "");
  EpochOrder order(train.size(), cfg.seed);

  auto step = [&](std::int64_t epoch, std::int64_t index, double lr) {
    const auto& perm = order.get(epoch);
    const auto begin = index * bs;
    const auto end = index == spe - 1 ? train.size() : begin + bs;
    const auto n = end - begin;
    std::vector<std::uint8_t> rgb(static_cast<size_t>(n) * frame_bytes), mask(static_cast<size_t>(n) * plane);
    std::vector<std::int64_t> labels;
    for (std::int64_t j = 0; j < n; ++j) {
      const auto f = static_cast<size_t>(perm[static_cast<size_t>(begin + j)]);
      std::copy_n(train.rgb.begin() + static_cast<std::ptrdiff_t>(f * frame_bytes), frame_bytes,
                  rgb.begin() + static_cast<std::ptrdiff_t>(static_cast<size_t>(j) * frame_bytes));
      std::copy_n(train.mask.begin() + static_cast<std::ptrdiff_t>(f * plane), plane,
                  mask.begin() + static_cast<std::ptrdiff_t>(static_cast<size_t>(j) * plane));
      labels.push_back(train.labels[f]);
    }
    m.training = true;
    m.params.zero_grad();
    const Tensor hidden = encoder_forward(m, normalize_frames(m.config, rgb.data(), n, dt));
    const Tensor seg = nn::pixelwise_cross_entropy(decoder_forward(m, hidden),
                                                   mask_tensor(mask.data(), n, h, w, dt));
    const Tensor label = nn::softmax_cross_entropy(embed(m, hidden), labels);
    const Tensor loss = weighted_sum(seg, label, cfg);
    StepLosses l{loss.item(), seg.item(), label.item()};
    if (std::isfinite(l.loss)) {
      backward(loss);
      ctx.adam.step(params, lr);
    }
    m.training = false;
    return l;
  };
  EvalFn eval;
  if (val.size() > 0) eval = [&] { return frame_accuracy(m, val); };
  return run_loop(m, cfg, ctx, spe, step, eval, "");
}

TrainResult train_stage2(SsarModel& m, const EmbeddingArchive& train, const EmbeddingArchive& val,
                         const StageConfig& cfg, RunContext& ctx) {
  if (train.sequences.empty()) throw std::runtime_error("stage 2: empty training archive");
  for (const auto* a : {&train, &val})
    if (a->dim != m.config.embedding_dim)
      throw std::runtime_error("stage 2: archive embedding dim " + std::to_string(a->dim) +
                               " does not match LSTM input " + std::to_string(m.config.embedding_dim));
  for (const auto& s : train.sequences)
    if (s.label < 0 || s.label >= m.config.num_classes)
      throw std::runtime_error("stage 2: sequence '" + s.id + "' label out of range");
  const auto dt = model_dtype(m);
  const auto n = static_cast<std::int64_t>(train.sequences.size());
  const auto bs = std::min(cfg.batch_size, n);
  const auto spe = (n + bs - 1) / bs;
  auto params = trainable(m, "lstm.");
  EpochOrder order(n, cfg.seed);
  const auto dim = train.dim;

  auto step = [&](std::int64_t epoch, std::int64_t index, double lr) {
    const auto& perm = order.get(epoch);
    std::vector<data::SeqView<float>> views;
    for (std::int64_t j = index * bs; j < std::min(n, (index + 1) * bs); ++j) {
      const auto& s = train.sequences[static_cast<size_t>(perm[static_cast<size_t>(j)])];
      views.push_back({s.data, s.length, s.label});
    }
    const auto b = std::move(data::pad_and_batch(views, dim, views.size()).front());
    m.params.zero_grad();
    const Tensor x = Tensor::from_vector<float>({b.t_max, static_cast<std::int64_t>(views.size()), dim},
                                                b.data).to(dt);
    const Tensor loss = nn::softmax_cross_entropy(classify_sequence(m, x, b.lengths), b.labels);
    StepLosses l{loss.item(), 0.0, loss.item()};
    if (std::isfinite(l.loss)) {
      backward(loss);
      ctx.adam.step(params, lr);
    }
    return l;
  };
  EvalFn eval;
  if (!val.sequences.empty()) {
    std::vector<std::int64_t> truth;
    for (const auto& s : val.sequences) truth.push_back(s.label);
    eval = [&m, &val, truth] {
      return accuracy(argmax_rows(archive_logits(m, val), m.config.num_classes), truth);
    };
  }
  return run_loop(m, cfg, ctx, spe, step, eval, "lstm.");
}

namespace {

TrainResult sequence_stage(SsarModel& m, const std::vector<data::Sequence>& train,
                           const std::vector<data::Sequence>& val, const StageConfig& cfg,
                           RunContext& ctx, bool with_decoder) {
  const char* what = with_decoder ? "stage 3" : "simple";
  if (train.empty()) throw std::runtime_error(std::string(what) + ": no training sequences");
  check_sequences(m, train, what);
  check_sequences(m, val, what);
  if (with_decoder)
    for (const auto& s : train)
      if (s.mask.empty()) throw std::runtime_error("stage 3: sequence '" + s.id + "' has no masks");
  const auto dt = model_dtype(m);
  const auto n = static_cast<std::int64_t>(train.size());
  std::map<std::string, Tensor> params;
  for (auto& [p, t] : m.params.params())
    if (with_decoder || p.rfind("decoder.", 0) != 0) params.emplace(p, t);
  EpochOrder order(n, cfg.seed);

  auto step = [&](std::int64_t epoch, std::int64_t index, double lr) {
    const auto& s = train[static_cast<size_t>(order.get(epoch)[static_cast<size_t>(index)])];
    // Stage 3 fine-tunes with frozen normalization statistics; the baseline
    // trains from scratch and needs batch statistics.
    m.training = !with_decoder;
    m.params.zero_grad();
    const Tensor hidden = encoder_forward(m, sequence_frames(m, s));
    const Tensor emb = embed(m, hidden);
    const std::int64_t len[] = {s.length};
    const std::int64_t target[] = {s.label};
    const Tensor label = nn::softmax_cross_entropy(
        classify_sequence(m, reshape(emb, {s.length, 1, m.config.embedding_dim}), len), target);
    Tensor loss = label;
    double seg_value = 0;
    if (with_decoder) {
      const Tensor seg = nn::pixelwise_cross_entropy(
          decoder_forward(m, hidden),
          mask_tensor(s.mask.data(), s.length, m.config.input_h, m.config.input_w, dt));
      seg_value = seg.item();
      loss = weighted_sum(seg, label, cfg);
    } else if (cfg.label_weight != 1.0) {
      loss = scale(label, cfg.label_weight);
    }
    StepLosses l{loss.item(), seg_value, label.item()};
    if (std::isfinite(l.loss)) {
      backward(loss);
      ctx.adam.step(params, lr);
    }
    m.training = false;
    return l;
  };
  EvalFn eval;
  if (!val.empty()) eval = [&] { return sequence_accuracy(m, val); };
  return run_loop(m, cfg, ctx, n, step, eval, "");
}

}  // namespace

TrainResult train_stage3(SsarModel& m, const std::vector<data::Sequence>& train,
                         const std::vector<data::Sequence>& val, const StageConfig& cfg,
                         RunContext& ctx) {
  return sequence_stage(m, train, val, cfg, ctx, true);
}

TrainResult train_simple(SsarModel& m, const std::vector<data::Sequence>& train,
                         const std::vector<data::Sequence>& val, const StageConfig& cfg,
                         RunContext& ctx) {
  return sequence_stage(m, train, val, cfg, ctx, false);
}

}  // namespace ssar::train
