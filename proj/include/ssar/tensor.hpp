// SPDX-License-Identifier: Apache-2.0
//
// Dense row-major tensor with reverse-mode automatic differentiation.
//
// A Tensor is a cheap handle onto shared immutable storage. Operations on
// tensors that require gradients record a GradNode holding the inputs and a
// backward rule; ssar::backward() replays those rules in reverse topological
// order. The only sanctioned in-place writers are the optimizer, checkpoint
// loading, batch-norm running statistics and the finite-difference checker,
// all of which go through mutable_values().
#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

namespace ssar {

enum class DType : std::uint8_t { f32 = 0, f64 = 1 };

const char* dtype_name(DType d);

using Shape = std::vector<std::int64_t>;

std::int64_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Raised for shape, dtype and argument-precondition violations.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

using Buffer = std::variant<std::vector<float>, std::vector<double>>;

template <class T>
std::vector<T>& buffer_as(Buffer& b) {
  return std::get<std::vector<T>>(b);
}
template <class T>
const std::vector<T>& buffer_as(const Buffer& b) {
  return std::get<std::vector<T>>(b);
}

Buffer make_buffer(DType dtype, std::size_t n);
DType buffer_dtype(const Buffer& b);
std::size_t buffer_size(const Buffer& b);

template <class T>
constexpr DType dtype_of() {
  static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
  return std::is_same_v<T, float> ? DType::f32 : DType::f64;
}

/// Calls f.template operator()<T>() with T matching the runtime dtype.
template <class F>
decltype(auto) visit_dtype(DType d, F&& f) {
  if (d == DType::f32) return f.template operator()<float>();
  return f.template operator()<double>();
}

class Tensor;

/// One recorded operation. backward maps the output gradient to one optional
/// gradient per input (nullopt when the input receives nothing).
struct GradNode {
  std::string op;
  std::vector<Tensor> inputs;
  std::function<std::vector<std::optional<Buffer>>(const Buffer&)> backward;
};

struct TensorImpl {
  Shape shape;
  DType dtype = DType::f32;
  std::shared_ptr<Buffer> data;
  bool requires_grad = false;
  std::unique_ptr<Buffer> grad;
  std::shared_ptr<GradNode> node;
};

class Tensor {
 public:
  Tensor() = default;

  /// Row-major construction; values are converted to dtype.
  static Tensor create(Shape shape, const std::vector<double>& values,
                       DType dtype = DType::f32);
  static Tensor from_buffer(Shape shape, Buffer data);
  template <class T>
  static Tensor from_vector(Shape shape, std::vector<T> values) {
    return from_buffer(std::move(shape), Buffer{std::move(values)});
  }
  static Tensor zeros(Shape shape, DType dtype = DType::f32);
  static Tensor full(Shape shape, double value, DType dtype = DType::f32);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl().shape; }
  std::int64_t dim(int axis) const;
  std::size_t rank() const { return impl().shape.size(); }
  std::int64_t numel() const { return ssar::numel(impl().shape); }
  DType dtype() const { return impl().dtype; }

  const Buffer& buffer() const { return *impl().data; }

  template <class T>
  std::span<const T> values() const {
    check_dtype(dtype_of<T>());
    return buffer_as<T>(*impl().data);
  }
  /// In-place write access; see the file comment for who may use it.
  template <class T>
  std::span<T> mutable_values() {
    check_dtype(dtype_of<T>());
    return buffer_as<T>(*impl().data);
  }

  /// Element at flat row-major index, widened to double.
  double flat(std::int64_t index) const;
  double at(std::initializer_list<std::int64_t> index) const;
  double item() const;
  std::vector<double> to_vector() const;

  bool requires_grad() const { return impl().requires_grad; }
  Tensor& set_requires_grad(bool on);
  bool is_leaf() const { return impl().node == nullptr; }
  const std::shared_ptr<GradNode>& grad_fn() const { return impl().node; }

  bool has_grad() const { return impl().grad != nullptr; }
  /// Gradient as a plain tensor (no graph); throws when absent.
  Tensor grad() const;
  const Buffer* grad_buffer() const { return impl().grad.get(); }
  Buffer* mutable_grad_buffer() { return impl().grad.get(); }
  void zero_grad();
  void accumulate_grad(const Buffer& g);

  /// Same storage, no graph history.
  Tensor detach() const;
  /// Deep copy of the values, no graph history.
  Tensor clone() const;
  Tensor to(DType dtype) const;

  TensorImpl* id() const { return impl_.get(); }

 private:
  explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}
  TensorImpl& impl() const;
  void check_dtype(DType d) const;

  std::shared_ptr<TensorImpl> impl_;

  friend Tensor make_result(Shape, Buffer, std::string,
                            std::vector<Tensor>,
                            std::function<std::vector<std::optional<Buffer>>(
                                const Buffer&)>);
};

/// Builds an op result. A graph node is attached only when gradient mode is on
/// and at least one input requires grad.
Tensor make_result(
    Shape shape, Buffer data, std::string op, std::vector<Tensor> inputs,
    std::function<std::vector<std::optional<Buffer>>(const Buffer&)> backward);

/// Reverse-mode sweep from a one-element loss. Leaf gradients accumulate
/// (sum) into any gradient already present.
void backward(const Tensor& loss);

bool grad_enabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

}  // namespace ssar
