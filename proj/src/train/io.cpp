// SPDX-License-Identifier: Apache-2.0
#include <zlib.h>

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include "json.hpp"
#include "ssar/train.hpp"

static_assert(std::endian::native == std::endian::little, "file formats assume a little-endian host");

namespace ssar::train {
namespace {

constexpr char kTensorMagic[8] = {'S', 'S', 'A', 'R', 'C', 'K', 'P', 'T'};
constexpr char kArchiveMagic[8] = {'S', 'S', 'A', 'R', 'E', 'M', 'B', '1'};
constexpr std::uint32_t kVersion = 1;

class Writer {
 public:
  void bytes(const void* p, size_t n) {
    const auto* b = static_cast<const char*>(p);
    out_.insert(out_.end(), b, b + n);
  }
  template <class T>
  void pod(T v) {
    bytes(&v, sizeof v);
  }
  void finish_and_write(const fs::path& path) {
    const auto crc = static_cast<std::uint32_t>(
        crc32(0L, reinterpret_cast<const Bytef*>(out_.data()), static_cast<uInt>(out_.size())));
    pod(crc);
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("cannot write '" + path.string() + "'");
    f.write(out_.data(), static_cast<std::streamsize>(out_.size()));
    if (!f) throw std::runtime_error("error writing '" + path.string() + "'");
  }

 private:
  std::vector<char> out_;
};

class Reader {
 public:
  Reader(const fs::path& path, const char* what) : what_(what) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open " + std::string(what) + " '" + path.string() + "'");
    data_.assign(std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>());
    if (data_.size() < 12) throw std::runtime_error(std::string(what) + " '" + path.string() + "' is truncated");
    std::uint32_t stored;
    std::memcpy(&stored, data_.data() + data_.size() - 4, 4);
    const auto crc = static_cast<std::uint32_t>(crc32(
        0L, reinterpret_cast<const Bytef*>(data_.data()), static_cast<uInt>(data_.size() - 4)));
    if (crc != stored)
      throw std::runtime_error(std::string(what) + " '" + path.string() +
                               "': CRC mismatch (corrupted or truncated file)");
    end_ = data_.size() - 4;
  }
  void bytes(void* p, size_t n) {
    if (n > end_ - pos_) throw std::runtime_error(std::string(what_) + ": unexpected end of data");
    std::memcpy(p, data_.data() + pos_, n);
    pos_ += n;
  }
  template <class T>
  T pod() {
    T v;
    bytes(&v, sizeof v);
    return v;
  }
  bool done() const { return pos_ == end_; }

 private:
  const char* what_;
  std::vector<char> data_;
  size_t pos_ = 0, end_ = 0;
};

Tensor scalar(double v) { return Tensor::create({1}, {v}, DType::f64); }

}  // namespace

void write_tensor_file(const fs::path& path,
                       const std::vector<std::pair<std::string, Tensor>>& tensors) {
  Writer w;
  w.bytes(kTensorMagic, 8);
  w.pod<std::uint32_t>(kVersion);
  w.pod<std::uint32_t>(static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, t] : tensors) {
    if (name.size() > 0xffff) throw std::invalid_argument("tensor name too long: " + name);
    w.pod<std::uint16_t>(static_cast<std::uint16_t>(name.size()));
    w.bytes(name.data(), name.size());
    w.pod<std::uint8_t>(static_cast<std::uint8_t>(t.dtype()));
    w.pod<std::uint8_t>(static_cast<std::uint8_t>(t.rank()));
    for (auto d : t.shape()) w.pod<std::uint64_t>(static_cast<std::uint64_t>(d));
    visit_dtype(t.dtype(), [&]<class T>() {
      const auto v = t.values<T>();
      w.bytes(v.data(), v.size() * sizeof(T));
    });
  }
  w.finish_and_write(path);
}

std::vector<std::pair<std::string, Tensor>> read_tensor_file(const fs::path& path) {
  Reader r(path, "checkpoint");
  char magic[8];
  r.bytes(magic, 8);
  if (std::memcmp(magic, kTensorMagic, 8) != 0)
    throw std::runtime_error("checkpoint '" + path.string() + "': bad magic");
  const auto version = r.pod<std::uint32_t>();
  if (version != kVersion)
    throw std::runtime_error("checkpoint '" + path.string() + "': unsupported version " +
                             std::to_string(version));
  const auto count = r.pod<std::uint32_t>();
  std::vector<std::pair<std::string, Tensor>> out;
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name(r.pod<std::uint16_t>(), '\0');
    r.bytes(name.data(), name.size());
    const auto dtype = r.pod<std::uint8_t>();
    if (dtype > 1) throw std::runtime_error("checkpoint: tensor '" + name + "' has unknown dtype");
    const auto rank = r.pod<std::uint8_t>();
    Shape shape(rank);
    for (auto& d : shape) {
      d = static_cast<std::int64_t>(r.pod<std::uint64_t>());
      if (d < 1 || d > (std::int64_t{1} << 40))
        throw std::runtime_error("checkpoint: tensor '" + name + "' has invalid dims");
    }
    out.emplace_back(name, visit_dtype(static_cast<DType>(dtype), [&]<class T>() {
      std::vector<T> v(static_cast<size_t>(numel(shape)));
      r.bytes(v.data(), v.size() * sizeof(T));
      return Tensor::from_vector<T>(shape, std::move(v));
    }));
  }
  if (!r.done()) throw std::runtime_error("checkpoint '" + path.string() + "': trailing data");
  return out;
}

void save_checkpoint(const fs::path& path, const SsarModel& model, std::int64_t stage,
                     const nn::Adam* adam, const TrainState* state, const std::string& prefix) {
  std::vector<std::pair<std::string, Tensor>> t;
  t.emplace_back("meta.fingerprint", scalar(model.config.fingerprint()));
  t.emplace_back("meta.stage", scalar(static_cast<double>(stage)));
  auto wanted = [&](const std::string& p) { return p.compare(0, prefix.size(), prefix) == 0; };
  std::map<std::string, Tensor> all;
  for (const auto& [p, v] : model.params.params())
    if (wanted(p)) all.emplace(p, v);
  for (const auto& [p, v] : model.params.buffers())
    if (wanted(p)) all.emplace(p, v);
  for (const auto& [p, v] : all) t.emplace_back(p, v.detach());
  if (adam) {
    t.emplace_back("adam.step", scalar(static_cast<double>(adam->step_count())));
    for (const auto& [p, m] : adam->moments()) {
      t.emplace_back("adam.m." + p, m.m);
      t.emplace_back("adam.v." + p, m.v);
    }
  }
  if (state) {
    t.emplace_back("train.step", scalar(static_cast<double>(state->step)));
    t.emplace_back("train.lr", scalar(state->lr));
    t.emplace_back("train.best_val", scalar(state->best_val));
    t.emplace_back("train.bad_evals", scalar(static_cast<double>(state->bad_evals)));
    t.emplace_back("train.lr_dropped", scalar(state->lr_dropped ? 1 : 0));
    t.emplace_back("train.window_sum", scalar(state->window_sum));
    t.emplace_back("train.window_count", scalar(static_cast<double>(state->window_count)));
    t.emplace_back("train.last_window_mean", scalar(state->last_window_mean));
    t.emplace_back("train.windows_seen", scalar(static_cast<double>(state->windows_seen)));
    t.emplace_back("train.rising_windows", scalar(static_cast<double>(state->rising_windows)));
    for (const auto& [p, v] : state->best) t.emplace_back("best." + p, v);
  }
  write_tensor_file(path, t);
}

Checkpoint read_checkpoint(const fs::path& path) {
  Checkpoint c;
  std::map<std::string, double> meta;
  bool has_adam = false, has_state = false;
  nn::Adam adam;
  TrainState st;
  for (auto& [name, t] : read_tensor_file(path)) {
    auto starts = [&](const char* p) { return name.rfind(p, 0) == 0; };
    if (starts("meta.") || name == "adam.step" ||
        (starts("train.") && name.find('.', 6) == std::string::npos)) {
      if (t.numel() != 1) throw std::runtime_error("checkpoint: '" + name + "' must be a scalar");
      meta[name] = t.item();
      has_adam |= name == "adam.step";
      has_state |= starts("train.");
    } else if (starts("adam.m.")) {
      adam.moments()[name.substr(7)].m = t;
      has_adam = true;
    } else if (starts("adam.v.")) {
      adam.moments()[name.substr(7)].v = t;
      has_adam = true;
    } else if (starts("best.")) {
      st.best[name.substr(5)] = t;
      has_state = true;
    } else {
      c.tensors[name] = t;
    }
  }
  if (!meta.count("meta.fingerprint") || !meta.count("meta.stage"))
    throw std::runtime_error("checkpoint '" + path.string() + "': missing meta entries");
  c.fingerprint = static_cast<std::uint32_t>(meta["meta.fingerprint"]);
  c.stage = static_cast<std::int64_t>(meta["meta.stage"]);
  if (has_adam) {
    for (const auto& [p, m] : adam.moments())
      if (!m.m.defined() || !m.v.defined())
        throw std::runtime_error("checkpoint: incomplete optimizer state for '" + p + "'");
    adam.set_step_count(static_cast<std::int64_t>(meta["adam.step"]));
    c.adam = std::move(adam);
  }
  if (has_state) {
    auto get = [&](const char* k) {
      auto it = meta.find(k);
      if (it == meta.end()) throw std::runtime_error(std::string("checkpoint: missing ") + k);
      return it->second;
    };
    st.step = static_cast<std::int64_t>(get("train.step"));
    st.lr = get("train.lr");
    st.best_val = get("train.best_val");
    st.bad_evals = static_cast<std::int64_t>(get("train.bad_evals"));
    st.lr_dropped = get("train.lr_dropped") != 0;
    st.window_sum = get("train.window_sum");
    st.window_count = static_cast<std::int64_t>(get("train.window_count"));
    st.last_window_mean = get("train.last_window_mean");
    st.windows_seen = static_cast<std::int64_t>(get("train.windows_seen"));
    st.rising_windows = static_cast<std::int64_t>(get("train.rising_windows"));
    c.state = std::move(st);
  }
  return c;
}

void apply_checkpoint(const Checkpoint& ckpt, SsarModel& model) {
  if (ckpt.fingerprint != model.config.fingerprint())
    throw std::runtime_error("checkpoint fingerprint " + std::to_string(ckpt.fingerprint) +
                             " does not match model config (" + model.config.preset + ", " +
                             std::to_string(model.config.fingerprint()) + ")");
  for (const auto& [path, src] : ckpt.tensors) {
    Tensor* dst = model.params.has_param(path)    ? &model.params.param(path)
                  : model.params.has_buffer(path) ? &model.params.buffer(path)
                                                  : nullptr;
    if (!dst) throw std::runtime_error("checkpoint: unknown tensor path '" + path + "'");
    if (dst->shape() != src.shape() || dst->dtype() != src.dtype())
      throw std::runtime_error("checkpoint: tensor '" + path + "' is " + shape_str(src.shape()) +
                               ", model expects " + shape_str(dst->shape()));
    visit_dtype(src.dtype(), [&]<class T>() {
      const auto s = src.values<T>();
      std::copy(s.begin(), s.end(), dst->mutable_values<T>().begin());
    });
  }
}

void write_archive(const fs::path& path, const EmbeddingArchive& a) {
  Writer w;
  w.bytes(kArchiveMagic, 8);
  w.pod<std::uint32_t>(static_cast<std::uint32_t>(a.sequences.size()));
  for (const auto& s : a.sequences) {
    if (static_cast<std::int64_t>(s.data.size()) != s.length * a.dim)
      throw std::invalid_argument("archive: sequence '" + s.id + "' has inconsistent size");
    if (s.id.size() > 0xffff) throw std::invalid_argument("archive: id too long");
    w.pod<std::uint16_t>(static_cast<std::uint16_t>(s.id.size()));
    w.bytes(s.id.data(), s.id.size());
    w.pod<std::uint32_t>(static_cast<std::uint32_t>(s.label));
    w.pod<std::uint32_t>(static_cast<std::uint32_t>(s.length));
    w.bytes(s.data.data(), s.data.size() * sizeof(float));
  }
  w.finish_and_write(path);
}

EmbeddingArchive read_archive(const fs::path& path, std::int64_t dim) {
  Reader r(path, "embedding archive");
  char magic[8];
  r.bytes(magic, 8);
  if (std::memcmp(magic, kArchiveMagic, 8) != 0)
    throw std::runtime_error("embedding archive '" + path.string() + "': bad magic");
  EmbeddingArchive a;
  a.dim = dim;
  const auto count = r.pod<std::uint32_t>();
  try {
    for (std::uint32_t i = 0; i < count; ++i) {
      EmbeddedSequence s;
      s.id.resize(r.pod<std::uint16_t>());
      r.bytes(s.id.data(), s.id.size());
      s.label = r.pod<std::uint32_t>();
      s.length = r.pod<std::uint32_t>();
      if (s.length < 1) throw std::runtime_error("empty sequence");
      s.data.resize(static_cast<size_t>(s.length * dim));
      r.bytes(s.data.data(), s.data.size() * sizeof(float));
      a.sequences.push_back(std::move(s));
    }
    if (!r.done()) throw std::runtime_error("trailing data");
  } catch (const std::runtime_error& e) {
    throw std::runtime_error("embedding archive '" + path.string() +
                             "' does not match embedding dim " + std::to_string(dim) + " (" +
                             e.what() + ")");
  }
  return a;
}

std::string to_json_line(const MetricsRecord& r) {
  nlohmann::ordered_json j;
  j["step"] = r.step;
  j["stage"] = r.stage;
  j["loss"] = r.loss;
  j["seg_loss"] = r.seg_loss;
  j["label_loss"] = r.label_loss;
  if (r.val_accuracy) j["val_accuracy"] = *r.val_accuracy;
  j["lr"] = r.lr;
  return j.dump();
}

MetricsRecord parse_json_line(const std::string& line) {
  const auto j = nlohmann::json::parse(line);
  MetricsRecord r;
  r.step = j.at("step").get<std::int64_t>();
  r.stage = j.at("stage").get<std::int64_t>();
  r.loss = j.at("loss").get<double>();
  r.seg_loss = j.at("seg_loss").get<double>();
  r.label_loss = j.at("label_loss").get<double>();
  if (j.contains("val_accuracy")) r.val_accuracy = j.at("val_accuracy").get<double>();
  r.lr = j.at("lr").get<double>();
  return r;
}

}  // namespace ssar::train
