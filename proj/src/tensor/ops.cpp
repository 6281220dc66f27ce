// SPDX-License-Identifier: Apache-2.0
#include "ssar/ops.hpp"

#include <cmath>

#include "ssar/kernels.hpp"

namespace ssar {
namespace {

using GradList = std::vector<std::optional<Buffer>>;

template <class T>
const std::vector<T>& vals(const Tensor& t) {
  return buffer_as<T>(t.buffer());
}

void require_same_dtype(const Tensor& a, const Tensor& b, const char* op) {
  if (a.dtype() != b.dtype())
    throw ShapeError(std::string(op) + ": dtype mismatch");
}

// Returns the size of the contiguous block of `a` each element of `b` covers
// (1 when shapes are equal).
std::size_t broadcast_block(const Shape& a, const Shape& b) {
  if (a == b) return 1;
  if (b.size() > a.size()) throw ShapeError("cannot broadcast " + shape_str(b) + " to " + shape_str(a));
  std::size_t prefix = 0;
  while (prefix < b.size() && b[prefix] == a[prefix]) ++prefix;
  for (std::size_t i = prefix; i < b.size(); ++i)
    if (b[i] != 1) throw ShapeError("cannot broadcast " + shape_str(b) + " to " + shape_str(a));
  std::int64_t block = 1;
  for (std::size_t i = prefix; i < a.size(); ++i) block *= a[i];
  return static_cast<std::size_t>(block);
}

template <class T>
T apply(BinaryOp op, T x, T y) {
  switch (op) {
    case BinaryOp::add: return x + y;
    case BinaryOp::sub: return x - y;
    case BinaryOp::mul: return x * y;
    case BinaryOp::max: return y > x ? y : x;
  }
  return x;
}

const char* op_name(BinaryOp op) {
  switch (op) {
    case BinaryOp::add: return "add";
    case BinaryOp::sub: return "sub";
    case BinaryOp::mul: return "mul";
    case BinaryOp::max: return "max";
  }
  return "?";
}

}  // namespace

Tensor elementwise(BinaryOp op, const Tensor& a, const Tensor& b) {
  require_same_dtype(a, b, op_name(op));
  const std::size_t block = broadcast_block(a.shape(), b.shape());
  return visit_dtype(a.dtype(), [&]<class T>() {
    const auto& av = vals<T>(a);
    const auto& bv = vals<T>(b);
    std::vector<T> out(av.size());
    const auto& k = kernels::active<T>();
    if (block == 1) {
      switch (op) {
        case BinaryOp::add: k.add(av.data(), bv.data(), out.data(), out.size()); break;
        case BinaryOp::sub: k.sub(av.data(), bv.data(), out.data(), out.size()); break;
        case BinaryOp::mul: k.mul(av.data(), bv.data(), out.data(), out.size()); break;
        case BinaryOp::max: k.maximum(av.data(), bv.data(), out.data(), out.size()); break;
      }
    } else {
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = apply(op, av[i], bv[i / block]);
    }
    return make_result(a.shape(), Buffer{std::move(out)}, op_name(op), {a, b},
                       [a, b, op, block](const Buffer& gbuf) {
      const auto& g = buffer_as<T>(gbuf);
      const auto& av = vals<T>(a);
      const auto& bv = vals<T>(b);
      std::vector<T> ga(g.size()), gb_full(g.size());
      for (std::size_t i = 0; i < g.size(); ++i) {
        const T bi = bv[i / block];
        switch (op) {
          case BinaryOp::add: ga[i] = g[i]; gb_full[i] = g[i]; break;
          case BinaryOp::sub: ga[i] = g[i]; gb_full[i] = -g[i]; break;
          case BinaryOp::mul: ga[i] = g[i] * bi; gb_full[i] = g[i] * av[i]; break;
          case BinaryOp::max: {
            const bool b_wins = bi > av[i];
            ga[i] = b_wins ? T(0) : g[i];
            gb_full[i] = b_wins ? g[i] : T(0);
            break;
          }
        }
      }
      if (block == 1) return GradList{Buffer{std::move(ga)}, Buffer{std::move(gb_full)}};
      std::vector<T> gb(bv.size(), T(0));
      for (std::size_t i = 0; i < g.size(); ++i) gb[i / block] += gb_full[i];
      return GradList{Buffer{std::move(ga)}, Buffer{std::move(gb)}};
    });
  });
}

Tensor scale(const Tensor& x, double alpha) {
  return visit_dtype(x.dtype(), [&]<class T>() {
    const auto& xv = vals<T>(x);
    std::vector<T> out(xv.size());
    kernels::active<T>().scale(static_cast<T>(alpha), xv.data(), out.data(), out.size());
    return make_result(x.shape(), Buffer{std::move(out)}, "scale", {x},
                       [alpha](const Buffer& gbuf) {
      const auto& g = buffer_as<T>(gbuf);
      std::vector<T> gx(g.size());
      kernels::active<T>().scale(static_cast<T>(alpha), g.data(), gx.data(), gx.size());
      return GradList{Buffer{std::move(gx)}};
    });
  });
}

Tensor add_scalar(const Tensor& x, double value) {
  return visit_dtype(x.dtype(), [&]<class T>() {
    const auto& xv = vals<T>(x);
    std::vector<T> out(xv.size());
    const T c = static_cast<T>(value);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] + c;
    return make_result(x.shape(), Buffer{std::move(out)}, "add_scalar", {x},
                       [](const Buffer& g) { return GradList{g}; });
  });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_same_dtype(a, b, "matmul");
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
    throw ShapeError("matmul: incompatible shapes " + shape_str(a.shape()) + " x " +
                     shape_str(b.shape()));
  const auto m = static_cast<std::size_t>(a.dim(0));
  const auto k = static_cast<std::size_t>(a.dim(1));
  const auto n = static_cast<std::size_t>(b.dim(1));
  return visit_dtype(a.dtype(), [&]<class T>() {
    std::vector<T> out(m * n);
    kernels::active<T>().gemm(false, m, n, k, vals<T>(a).data(), k, vals<T>(b).data(), n,
                              out.data(), n, false);
    return make_result({a.dim(0), b.dim(1)}, Buffer{std::move(out)}, "matmul", {a, b},
                       [a, b, m, n, k](const Buffer& gbuf) {
      const auto& g = buffer_as<T>(gbuf);
      const auto& kt = kernels::active<T>();
      GradList grads(2);
      if (a.requires_grad()) {
        std::vector<T> bt(n * k);
        kernels::transpose(vals<T>(b).data(), k, n, bt.data());
        std::vector<T> ga(m * k);
        kt.gemm(false, m, k, n, g.data(), n, bt.data(), k, ga.data(), k, false);
        grads[0] = Buffer{std::move(ga)};
      }
      if (b.requires_grad()) {
        std::vector<T> gb(k * n);
        kt.gemm(true, k, n, m, vals<T>(a).data(), k, g.data(), n, gb.data(), n, false);
        grads[1] = Buffer{std::move(gb)};
      }
      return grads;
    });
  });
}

Tensor sum(const Tensor& x) {
  return visit_dtype(x.dtype(), [&]<class T>() {
    T acc = 0;
    for (T v : vals<T>(x)) acc += v;
    const auto n = static_cast<std::size_t>(x.numel());
    return make_result({1}, Buffer{std::vector<T>{acc}}, "sum", {x},
                       [n](const Buffer& g) {
      return GradList{Buffer{std::vector<T>(n, buffer_as<T>(g)[0])}};
    });
  });
}

Tensor mean(const Tensor& x) {
  return visit_dtype(x.dtype(), [&]<class T>() {
    T acc = 0;
    for (T v : vals<T>(x)) acc += v;
    const auto n = static_cast<std::size_t>(x.numel());
    const T count = static_cast<T>(n);
    return make_result({1}, Buffer{std::vector<T>{acc / count}}, "mean", {x},
                       [n, count](const Buffer& g) {
      return GradList{Buffer{std::vector<T>(n, buffer_as<T>(g)[0] / count)}};
    });
  });
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (numel(shape) != x.numel())
    throw ShapeError("reshape: " + shape_str(x.shape()) + " -> " + shape_str(shape));
  return make_result(std::move(shape), x.buffer(), "reshape", {x},
                     [](const Buffer& g) { return GradList{g}; });
}

Tensor relu(const Tensor& x) {
  return visit_dtype(x.dtype(), [&]<class T>() {
    const auto& xv = vals<T>(x);
    std::vector<T> out(xv.size());
    kernels::active<T>().relu(xv.data(), out.data(), out.size());
    return make_result(x.shape(), Buffer{std::move(out)}, "relu", {x},
                       [x](const Buffer& gbuf) {
      const auto& g = buffer_as<T>(gbuf);
      std::vector<T> gx(g.size());
      kernels::active<T>().relu_backward(vals<T>(x).data(), g.data(), gx.data(), gx.size());
      return GradList{Buffer{std::move(gx)}};
    });
  });
}

Tensor sigmoid(const Tensor& x) {
  return visit_dtype(x.dtype(), [&]<class T>() {
    const auto& xv = vals<T>(x);
    std::vector<T> y(xv.size());
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = T(1) / (T(1) + std::exp(-xv[i]));
    auto saved = y;
    return make_result(x.shape(), Buffer{std::move(y)}, "sigmoid", {x},
                       [saved = std::move(saved)](const Buffer& gbuf) {
      const auto& g = buffer_as<T>(gbuf);
      std::vector<T> gx(g.size());
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] = g[i] * saved[i] * (T(1) - saved[i]);
      return GradList{Buffer{std::move(gx)}};
    });
  });
}

Tensor tanh(const Tensor& x) {
  return visit_dtype(x.dtype(), [&]<class T>() {
    const auto& xv = vals<T>(x);
    std::vector<T> y(xv.size());
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = std::tanh(xv[i]);
    auto saved = y;
    return make_result(x.shape(), Buffer{std::move(y)}, "tanh", {x},
                       [saved = std::move(saved)](const Buffer& gbuf) {
      const auto& g = buffer_as<T>(gbuf);
      std::vector<T> gx(g.size());
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] = g[i] * (T(1) - saved[i] * saved[i]);
      return GradList{Buffer{std::move(gx)}};
    });
  });
}

Tensor slice_cols(const Tensor& x, std::int64_t start, std::int64_t len) {
  if (x.rank() != 2 || start < 0 || len < 1 || start + len > x.dim(1))
    throw ShapeError("slice_cols: bad range for " + shape_str(x.shape()));
  const auto rows = static_cast<std::size_t>(x.dim(0));
  const auto cols = static_cast<std::size_t>(x.dim(1));
  const auto s = static_cast<std::size_t>(start);
  const auto l = static_cast<std::size_t>(len);
  return visit_dtype(x.dtype(), [&]<class T>() {
    const auto& xv = vals<T>(x);
    std::vector<T> out(rows * l);
    for (std::size_t r = 0; r < rows; ++r)
      std::copy_n(xv.begin() + static_cast<std::ptrdiff_t>(r * cols + s), l,
                  out.begin() + static_cast<std::ptrdiff_t>(r * l));
    return make_result({x.dim(0), len}, Buffer{std::move(out)}, "slice_cols", {x},
                       [rows, cols, s, l](const Buffer& gbuf) {
      const auto& g = buffer_as<T>(gbuf);
      std::vector<T> gx(rows * cols, T(0));
      for (std::size_t r = 0; r < rows; ++r)
        std::copy_n(g.begin() + static_cast<std::ptrdiff_t>(r * l), l,
                    gx.begin() + static_cast<std::ptrdiff_t>(r * cols + s));
      return GradList{Buffer{std::move(gx)}};
    });
  });
}

Tensor select(const Tensor& x, std::int64_t index) {
  if (x.rank() < 2 || index < 0 || index >= x.dim(0))
    throw ShapeError("select: index out of range for " + shape_str(x.shape()));
  Shape out_shape(x.shape().begin() + 1, x.shape().end());
  const auto inner = static_cast<std::size_t>(numel(out_shape));
  const auto offset = static_cast<std::size_t>(index) * inner;
  const auto total = static_cast<std::size_t>(x.numel());
  return visit_dtype(x.dtype(), [&]<class T>() {
    const auto& xv = vals<T>(x);
    std::vector<T> out(xv.begin() + static_cast<std::ptrdiff_t>(offset),
                       xv.begin() + static_cast<std::ptrdiff_t>(offset + inner));
    return make_result(std::move(out_shape), Buffer{std::move(out)}, "select", {x},
                       [inner, offset, total](const Buffer& gbuf) {
      const auto& g = buffer_as<T>(gbuf);
      std::vector<T> gx(total, T(0));
      std::copy(g.begin(), g.end(), gx.begin() + static_cast<std::ptrdiff_t>(offset));
      (void)inner;
      return GradList{Buffer{std::move(gx)}};
    });
  });
}

Tensor stack(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("stack: no inputs");
  const Shape& part_shape = parts.front().shape();
  for (const auto& p : parts)
    if (p.shape() != part_shape || p.dtype() != parts.front().dtype())
      throw ShapeError("stack: inputs differ in shape or dtype");
  Shape out_shape{static_cast<std::int64_t>(parts.size())};
  out_shape.insert(out_shape.end(), part_shape.begin(), part_shape.end());
  const auto inner = static_cast<std::size_t>(numel(part_shape));
  const auto count = parts.size();
  return visit_dtype(parts.front().dtype(), [&]<class T>() {
    std::vector<T> out;
    out.reserve(inner * count);
    for (const auto& p : parts) {
      const auto& v = vals<T>(p);
      out.insert(out.end(), v.begin(), v.end());
    }
    return make_result(std::move(out_shape), Buffer{std::move(out)}, "stack", parts,
                       [inner, count](const Buffer& gbuf) {
      const auto& g = buffer_as<T>(gbuf);
      GradList grads;
      grads.reserve(count);
      for (std::size_t i = 0; i < count; ++i)
        grads.emplace_back(Buffer{std::vector<T>(
            g.begin() + static_cast<std::ptrdiff_t>(i * inner),
            g.begin() + static_cast<std::ptrdiff_t>((i + 1) * inner))});
      return grads;
    });
  });
}

Tensor take_rows(const std::vector<Tensor>& steps, std::span<const std::int64_t> which) {
  if (steps.empty()) throw ShapeError("take_rows: no steps");
  const Shape& s = steps.front().shape();
  if (s.size() != 2 || static_cast<std::size_t>(s[0]) != which.size())
    throw ShapeError("take_rows: steps must be B x H with B == which.size()");
  for (const auto& t : steps)
    if (t.shape() != s) throw ShapeError("take_rows: step shapes differ");
  for (auto w : which)
    if (w < 0 || static_cast<std::size_t>(w) >= steps.size())
      throw ShapeError("take_rows: step index out of range");
  const auto rows = static_cast<std::size_t>(s[0]);
  const auto cols = static_cast<std::size_t>(s[1]);
  std::vector<std::int64_t> idx(which.begin(), which.end());
  return visit_dtype(steps.front().dtype(), [&]<class T>() {
    std::vector<T> out(rows * cols);
    for (std::size_t r = 0; r < rows; ++r) {
      const auto& v = vals<T>(steps[static_cast<std::size_t>(idx[r])]);
      std::copy_n(v.begin() + static_cast<std::ptrdiff_t>(r * cols), cols,
                  out.begin() + static_cast<std::ptrdiff_t>(r * cols));
    }
    const auto count = steps.size();
    return make_result(s, Buffer{std::move(out)}, "take_rows", steps,
                       [idx, rows, cols, count](const Buffer& gbuf) {
      const auto& g = buffer_as<T>(gbuf);
      GradList grads(count);
      for (std::size_t r = 0; r < rows; ++r) {
        auto& slot = grads[static_cast<std::size_t>(idx[r])];
        if (!slot) slot = Buffer{std::vector<T>(rows * cols, T(0))};
        auto& dst = buffer_as<T>(*slot);
        std::copy_n(g.begin() + static_cast<std::ptrdiff_t>(r * cols), cols,
                    dst.begin() + static_cast<std::ptrdiff_t>(r * cols));
      }
      return grads;
    });
  });
}

}  // namespace ssar
