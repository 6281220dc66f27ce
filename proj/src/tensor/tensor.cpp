// SPDX-License-Identifier: Apache-2.0
#include "ssar/tensor.hpp"

#include <algorithm>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "ssar/kernels.hpp"

namespace ssar {
namespace {

thread_local bool t_grad_enabled = true;

template <class T>
void accumulate_into(Buffer& dst, const Buffer& src) {
  auto& d = buffer_as<T>(dst);
  const auto& s = buffer_as<T>(src);
  kernels::active<T>().add(d.data(), s.data(), d.data(), d.size());
}

void accumulate(Buffer& dst, const Buffer& src) {
  if (buffer_dtype(dst) != buffer_dtype(src) ||
      buffer_size(dst) != buffer_size(src))
    throw ShapeError("gradient accumulation: buffer mismatch");
  visit_dtype(buffer_dtype(dst),
              [&]<class T>() { accumulate_into<T>(dst, src); });
}

}  // namespace

const char* dtype_name(DType d) { return d == DType::f32 ? "f32" : "f64"; }

std::int64_t numel(const Shape& shape) {
  std::int64_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

Buffer make_buffer(DType dtype, std::size_t n) {
  if (dtype == DType::f32) return Buffer{std::vector<float>(n, 0.0f)};
  return Buffer{std::vector<double>(n, 0.0)};
}

DType buffer_dtype(const Buffer& b) {
  return b.index() == 0 ? DType::f32 : DType::f64;
}

std::size_t buffer_size(const Buffer& b) {
  return std::visit([](const auto& v) { return v.size(); }, b);
}

Tensor Tensor::from_buffer(Shape shape, Buffer data) {
  for (auto d : shape)
    if (d < 1) throw ShapeError("tensor dims must be >= 1, got " + shape_str(shape));
  if (static_cast<std::size_t>(ssar::numel(shape)) != buffer_size(data))
    throw ShapeError("shape " + shape_str(shape) + " does not match " +
                     std::to_string(buffer_size(data)) + " values");
  auto impl = std::make_shared<TensorImpl>();
  impl->dtype = buffer_dtype(data);
  impl->shape = std::move(shape);
  impl->data = std::make_shared<Buffer>(std::move(data));
  return Tensor(std::move(impl));
}

Tensor Tensor::create(Shape shape, const std::vector<double>& values,
                      DType dtype) {
  if (dtype == DType::f64) return from_buffer(std::move(shape), Buffer{values});
  return from_buffer(std::move(shape),
                     Buffer{std::vector<float>(values.begin(), values.end())});
}

Tensor Tensor::zeros(Shape shape, DType dtype) {
  const auto n = static_cast<std::size_t>(ssar::numel(shape));
  return from_buffer(std::move(shape), make_buffer(dtype, n));
}

Tensor Tensor::full(Shape shape, double value, DType dtype) {
  const auto n = static_cast<std::size_t>(ssar::numel(shape));
  if (dtype == DType::f64)
    return from_buffer(std::move(shape), Buffer{std::vector<double>(n, value)});
  return from_buffer(std::move(shape),
                     Buffer{std::vector<float>(n, static_cast<float>(value))});
}

TensorImpl& Tensor::impl() const {
  if (!impl_) throw std::logic_error("use of undefined tensor");
  return *impl_;
}

void Tensor::check_dtype(DType d) const {
  if (impl().dtype != d)
    throw ShapeError(std::string("dtype mismatch: tensor is ") +
                     dtype_name(impl().dtype) + ", requested " + dtype_name(d));
}

std::int64_t Tensor::dim(int axis) const {
  const auto r = static_cast<int>(rank());
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r) throw ShapeError("axis out of range");
  return impl().shape[static_cast<std::size_t>(axis)];
}

double Tensor::flat(std::int64_t index) const {
  if (index < 0 || index >= numel()) throw ShapeError("flat index out of range");
  return std::visit(
      [&](const auto& v) { return static_cast<double>(v[static_cast<std::size_t>(index)]); },
      buffer());
}

double Tensor::at(std::initializer_list<std::int64_t> index) const {
  if (index.size() != rank()) throw ShapeError("index rank mismatch");
  std::int64_t flat_index = 0;
  std::size_t axis = 0;
  for (auto i : index) {
    const auto d = impl().shape[axis++];
    if (i < 0 || i >= d) throw ShapeError("index out of range");
    flat_index = flat_index * d + i;
  }
  return flat(flat_index);
}

double Tensor::item() const {
  if (numel() != 1) throw ShapeError("item() needs a one-element tensor");
  return flat(0);
}

std::vector<double> Tensor::to_vector() const {
  return std::visit(
      [](const auto& v) { return std::vector<double>(v.begin(), v.end()); },
      buffer());
}

Tensor& Tensor::set_requires_grad(bool on) {
  if (!is_leaf()) throw std::logic_error("requires_grad can only be set on leaves");
  impl().requires_grad = on;
  return *this;
}

Tensor Tensor::grad() const {
  if (!impl().grad) throw std::logic_error("tensor has no gradient");
  return from_buffer(impl().shape, *impl().grad);
}

void Tensor::zero_grad() { impl().grad.reset(); }

void Tensor::accumulate_grad(const Buffer& g) {
  auto& self = impl();
  if (!self.grad)
    self.grad = std::make_unique<Buffer>(g);
  else
    accumulate(*self.grad, g);
}

Tensor Tensor::detach() const {
  auto impl2 = std::make_shared<TensorImpl>();
  impl2->shape = impl().shape;
  impl2->dtype = impl().dtype;
  impl2->data = impl().data;
  return Tensor(std::move(impl2));
}

Tensor Tensor::clone() const { return from_buffer(impl().shape, *impl().data); }

Tensor Tensor::to(DType dtype) const {
  if (dtype == impl().dtype) return clone();
  return create(impl().shape, to_vector(), dtype);
}

Tensor make_result(
    Shape shape, Buffer data, std::string op, std::vector<Tensor> inputs,
    std::function<std::vector<std::optional<Buffer>>(const Buffer&)> backward) {
  Tensor out = Tensor::from_buffer(std::move(shape), std::move(data));
  if (!t_grad_enabled) return out;
  const bool any = std::any_of(inputs.begin(), inputs.end(), [](const Tensor& t) {
    return t.defined() && t.requires_grad();
  });
  if (!any) return out;
  auto node = std::make_shared<GradNode>();
  node->op = std::move(op);
  node->inputs = std::move(inputs);
  node->backward = std::move(backward);
  out.impl_->requires_grad = true;
  out.impl_->node = std::move(node);
  return out;
}

void backward(const Tensor& loss) {
  if (loss.numel() != 1)
    throw ShapeError("backward() needs a scalar loss, got " + shape_str(loss.shape()));
  if (!loss.requires_grad())
    throw std::logic_error("backward(): loss does not require grad");

  // Post-order DFS: every tensor appears after all of its inputs.
  std::vector<Tensor> order;
  std::unordered_set<TensorImpl*> visited;
  std::vector<std::pair<Tensor, std::size_t>> stack;
  stack.emplace_back(loss, 0);
  visited.insert(loss.id());
  while (!stack.empty()) {
    auto& [t, next] = stack.back();
    const auto& node = t.grad_fn();
    if (node && next < node->inputs.size()) {
      const Tensor child = node->inputs[next++];
      if (child.defined() && child.requires_grad() && visited.insert(child.id()).second)
        stack.emplace_back(child, 0);
      continue;
    }
    order.push_back(t);
    stack.pop_back();
  }

  std::unordered_map<TensorImpl*, Buffer> grads;
  grads.emplace(loss.id(), visit_dtype(loss.dtype(), [&]<class T>() {
                  return Buffer{std::vector<T>(1, T(1))};
                }));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    const Tensor& t = *it;
    const auto& node = t.grad_fn();
    if (!node) continue;
    auto found = grads.find(t.id());
    if (found == grads.end()) continue;
    auto input_grads = node->backward(found->second);
    grads.erase(found);
    for (std::size_t i = 0; i < node->inputs.size() && i < input_grads.size(); ++i) {
      const Tensor& in = node->inputs[i];
      if (!in.defined() || !in.requires_grad() || !input_grads[i]) continue;
      auto& g = *input_grads[i];
      if (buffer_size(g) != static_cast<std::size_t>(in.numel()))
        throw std::logic_error("backward rule for '" + node->op +
                               "' produced a wrongly sized gradient");
      auto slot = grads.find(in.id());
      if (slot == grads.end())
        grads.emplace(in.id(), std::move(g));
      else
        accumulate(slot->second, g);
    }
  }

  // Leaves are flushed once, after all contributions are summed.
  for (const Tensor& t : order) {
    if (!t.is_leaf()) continue;
    Tensor leaf = t;
    auto found = grads.find(t.id());
    if (found != grads.end())
      leaf.accumulate_grad(found->second);
    else if (!leaf.has_grad())
      leaf.accumulate_grad(make_buffer(t.dtype(), static_cast<std::size_t>(t.numel())));
  }
}

bool grad_enabled() { return t_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }

}  // namespace ssar
