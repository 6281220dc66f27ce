// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <limits>

#include "ssar/kernels.hpp"
#include "ssar/nn.hpp"

namespace ssar::nn {
namespace {

using GradList = std::vector<std::optional<Buffer>>;
using std::size_t;

}  // namespace

Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  Tensor& running_mean, Tensor& running_var, bool training,
                  const BatchNormOptions& options) {
  if (x.rank() != 4 && x.rank() != 2)
    throw ShapeError("batch_norm: expected B x C or B x C x H x W, got " + shape_str(x.shape()));
  const auto batch = static_cast<size_t>(x.dim(0));
  const auto channels = static_cast<size_t>(x.dim(1));
  const size_t plane = x.rank() == 4 ? static_cast<size_t>(x.dim(2) * x.dim(3)) : 1;
  for (const Tensor* t : {&gamma, &beta, static_cast<const Tensor*>(&running_mean),
                          static_cast<const Tensor*>(&running_var)})
    if (t->rank() != 1 || static_cast<size_t>(t->dim(0)) != channels || t->dtype() != x.dtype())
      throw ShapeError("batch_norm: per-channel tensor shape mismatch");
  const size_t count = batch * plane;
  if (training && count == 1)
    throw ShapeError("batch_norm: a single value per channel has no batch variance");

  return visit_dtype(x.dtype(), [&]<class T>() {
    const auto& xv = buffer_as<T>(x.buffer());
    const auto& gv = buffer_as<T>(gamma.buffer());
    const auto& bv = buffer_as<T>(beta.buffer());
    const T eps = static_cast<T>(options.eps);
    std::vector<T> mean(channels), inv_std(channels);
    if (training) {
      auto rm = running_mean.mutable_values<T>();
      auto rv = running_var.mutable_values<T>();
      const T n = static_cast<T>(count);
      const T mom = static_cast<T>(options.momentum);
      for (size_t c = 0; c < channels; ++c) {
        T acc = 0;
        for (size_t b = 0; b < batch; ++b) {
          const T* p = xv.data() + (b * channels + c) * plane;
          for (size_t i = 0; i < plane; ++i) acc += p[i];
        }
        const T mu = acc / n;
        T sq = 0;
        for (size_t b = 0; b < batch; ++b) {
          const T* p = xv.data() + (b * channels + c) * plane;
          for (size_t i = 0; i < plane; ++i) {
            const T d = p[i] - mu;
            sq += d * d;
          }
        }
        const T var = sq / n;
        mean[c] = mu;
        inv_std[c] = T(1) / std::sqrt(var + eps);
        rm[c] = (T(1) - mom) * rm[c] + mom * mu;
        rv[c] = (T(1) - mom) * rv[c] + mom * (sq / (n - T(1)));
      }
    } else {
      const auto& rm = buffer_as<T>(running_mean.buffer());
      const auto& rv = buffer_as<T>(running_var.buffer());
      for (size_t c = 0; c < channels; ++c) {
        mean[c] = rm[c];
        inv_std[c] = T(1) / std::sqrt(rv[c] + eps);
      }
    }

    std::vector<T> xhat(xv.size()), out(xv.size());
    for (size_t b = 0; b < batch; ++b)
      for (size_t c = 0; c < channels; ++c) {
        const size_t off = (b * channels + c) * plane;
        for (size_t i = 0; i < plane; ++i) {
          const T h = (xv[off + i] - mean[c]) * inv_std[c];
          xhat[off + i] = h;
          out[off + i] = gv[c] * h + bv[c];
        }
      }

    return make_result(x.shape(), Buffer{std::move(out)}, "batch_norm", {x, gamma, beta},
                       [x, gamma, beta, xhat = std::move(xhat), inv_std = std::move(inv_std),
                        training, batch, channels, plane, count](const Buffer& gbuf) {
      const auto& g = buffer_as<T>(gbuf);
      const auto& gv = buffer_as<T>(gamma.buffer());
      std::vector<T> dgamma(channels, T(0)), dbeta(channels, T(0));
      for (size_t c = 0; c < channels; ++c) {
        T sg = 0, sgx = 0;
        for (size_t b = 0; b < batch; ++b) {
          const size_t off = (b * channels + c) * plane;
          for (size_t i = 0; i < plane; ++i) {
            sg += g[off + i];
            sgx += g[off + i] * xhat[off + i];
          }
        }
        dbeta[c] = sg;
        dgamma[c] = sgx;
      }
      GradList grads(3);
      if (x.requires_grad()) {
        std::vector<T> gx(g.size());
        const T n = static_cast<T>(count);
        for (size_t c = 0; c < channels; ++c) {
          const T scale = gv[c] * inv_std[c];
          for (size_t b = 0; b < batch; ++b) {
            const size_t off = (b * channels + c) * plane;
            for (size_t i = 0; i < plane; ++i) {
              if (training) {
                // dx = gamma * inv_std / n * (n g - sum g - xhat sum(g xhat))
                gx[off + i] = scale / n *
                              (n * g[off + i] - dbeta[c] - xhat[off + i] * dgamma[c]);
              } else {
                gx[off + i] = scale * g[off + i];
              }
            }
          }
        }
        grads[0] = Buffer{std::move(gx)};
      }
      if (gamma.requires_grad()) grads[1] = Buffer{std::move(dgamma)};
      if (beta.requires_grad()) grads[2] = Buffer{std::move(dbeta)};
      return grads;
    });
  });
}

Tensor max_pool2d(const Tensor& x, std::int64_t kernel, std::int64_t stride, std::int64_t pad) {
  if (x.rank() != 4) throw ShapeError("max_pool2d: expected rank-4 input");
  if (kernel < 1 || stride < 1 || pad < 0 || pad >= kernel)
    throw ShapeError("max_pool2d: invalid kernel/stride/padding");
  const auto oh = conv_out_size(x.dim(2), kernel, stride, pad);
  const auto ow = conv_out_size(x.dim(3), kernel, stride, pad);
  if (oh < 1 || ow < 1) throw ShapeError("max_pool2d: output size < 1");
  const auto planes = static_cast<size_t>(x.dim(0) * x.dim(1));
  const auto h = x.dim(2), w = x.dim(3);
  const size_t out_plane = static_cast<size_t>(oh * ow);
  const size_t in_plane = static_cast<size_t>(h * w);

  return visit_dtype(x.dtype(), [&]<class T>() {
    const auto& xv = buffer_as<T>(x.buffer());
    std::vector<T> out(planes * out_plane);
    std::vector<std::int64_t> argmax(out.size());
    for (size_t p = 0; p < planes; ++p) {
      const T* src = xv.data() + p * in_plane;
      for (std::int64_t i = 0; i < oh; ++i)
        for (std::int64_t j = 0; j < ow; ++j) {
          T best = -std::numeric_limits<T>::infinity();
          std::int64_t best_idx = -1;
          for (std::int64_t ki = 0; ki < kernel; ++ki) {
            const std::int64_t r = i * stride - pad + ki;
            if (r < 0 || r >= h) continue;
            for (std::int64_t kj = 0; kj < kernel; ++kj) {
              const std::int64_t c = j * stride - pad + kj;
              if (c < 0 || c >= w) continue;
              const T v = src[r * w + c];
              if (best_idx < 0 || v > best) {
                best = v;
                best_idx = r * w + c;
              }
            }
          }
          const size_t o = p * out_plane + static_cast<size_t>(i * ow + j);
          out[o] = best;
          argmax[o] = static_cast<std::int64_t>(p * in_plane) + best_idx;
        }
    }
    const auto total = static_cast<size_t>(x.numel());
    return make_result({x.dim(0), x.dim(1), oh, ow}, Buffer{std::move(out)}, "max_pool2d", {x},
                       [argmax = std::move(argmax), total](const Buffer& gbuf) {
      const auto& g = buffer_as<T>(gbuf);
      std::vector<T> gx(total, T(0));
      for (size_t o = 0; o < g.size(); ++o) gx[static_cast<size_t>(argmax[o])] += g[o];
      return GradList{Buffer{std::move(gx)}};
    });
  });
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  if (x.rank() != 2 || weight.rank() != 2 || x.dim(1) != weight.dim(1))
    throw ShapeError("linear: input " + shape_str(x.shape()) + " does not match weight " +
                     shape_str(weight.shape()));
  if (x.dtype() != weight.dtype()) throw ShapeError("linear: dtype mismatch");
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != weight.dim(0)))
    throw ShapeError("linear: bias shape mismatch");
  const auto batch = static_cast<size_t>(x.dim(0));
  const auto in_f = static_cast<size_t>(x.dim(1));
  const auto out_f = static_cast<size_t>(weight.dim(0));

  return visit_dtype(x.dtype(), [&]<class T>() {
    const auto& xv = buffer_as<T>(x.buffer());
    const auto& wv = buffer_as<T>(weight.buffer());
    std::vector<T> wt(in_f * out_f);
    kernels::transpose(wv.data(), out_f, in_f, wt.data());
    std::vector<T> out(batch * out_f);
    kernels::active<T>().gemm(false, batch, out_f, in_f, xv.data(), in_f, wt.data(), out_f,
                              out.data(), out_f, false);
    if (bias.defined()) {
      const auto& bv = buffer_as<T>(bias.buffer());
      for (size_t b = 0; b < batch; ++b)
        kernels::active<T>().add(out.data() + b * out_f, bv.data(), out.data() + b * out_f, out_f);
    }
    return make_result({x.dim(0), weight.dim(0)}, Buffer{std::move(out)}, "linear",
                       {x, weight, bias},
                       [x, weight, bias, batch, in_f, out_f](const Buffer& gbuf) {
      const auto& g = buffer_as<T>(gbuf);
      const auto& kt = kernels::active<T>();
      GradList grads(3);
      if (x.requires_grad()) {
        std::vector<T> gx(batch * in_f);
        kt.gemm(false, batch, in_f, out_f, g.data(), out_f,
                buffer_as<T>(weight.buffer()).data(), in_f, gx.data(), in_f, false);
        grads[0] = Buffer{std::move(gx)};
      }
      if (weight.requires_grad()) {
        std::vector<T> gw(out_f * in_f);
        kt.gemm(true, out_f, in_f, batch, g.data(), out_f, buffer_as<T>(x.buffer()).data(),
                in_f, gw.data(), in_f, false);
        grads[1] = Buffer{std::move(gw)};
      }
      if (bias.defined() && bias.requires_grad()) {
        std::vector<T> gb(out_f, T(0));
        for (size_t b = 0; b < batch; ++b)
          kt.add(gb.data(), g.data() + b * out_f, gb.data(), out_f);
        grads[2] = Buffer{std::move(gb)};
      }
      return grads;
    });
  });
}

}  // namespace ssar::nn
