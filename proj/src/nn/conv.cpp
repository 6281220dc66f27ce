// SPDX-License-Identifier: Apache-2.0
//
// conv2d / deconv2d via im2col + GEMM. Batch items run in parallel for the
// forward pass and the input gradient; the weight gradient accumulates over
// the batch in ascending order inside one GEMM chain, so results never depend
// on the worker count.
#include <algorithm>

#include "ssar/kernels.hpp"
#include "ssar/nn.hpp"

namespace ssar::nn {
namespace {

using GradList = std::vector<std::optional<Buffer>>;
using std::size_t;

struct Geometry {
  size_t channels, height, width;  // image side
  size_t kernel, stride, pad_h, pad_w;
  size_t out_h, out_w;             // column side
};

// col[(c*k + ki)*k + kj][oh*out_w + ow] = img[c][oh*s - ph + ki][ow*s - pw + kj]
template <class T>
void im2col(const T* img, const Geometry& g, T* col) {
  const size_t plane = g.out_h * g.out_w;
  for (size_t c = 0; c < g.channels; ++c)
    for (size_t ki = 0; ki < g.kernel; ++ki)
      for (size_t kj = 0; kj < g.kernel; ++kj) {
        T* dst = col + ((c * g.kernel + ki) * g.kernel + kj) * plane;
        for (size_t oh = 0; oh < g.out_h; ++oh) {
          const auto ih = static_cast<std::ptrdiff_t>(oh * g.stride + ki) -
                          static_cast<std::ptrdiff_t>(g.pad_h);
          T* row = dst + oh * g.out_w;
          if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(g.height)) {
            std::fill(row, row + g.out_w, T(0));
            continue;
          }
          const T* src = img + (c * g.height + static_cast<size_t>(ih)) * g.width;
          for (size_t ow = 0; ow < g.out_w; ++ow) {
            const auto iw = static_cast<std::ptrdiff_t>(ow * g.stride + kj) -
                            static_cast<std::ptrdiff_t>(g.pad_w);
            row[ow] = (iw < 0 || iw >= static_cast<std::ptrdiff_t>(g.width))
                          ? T(0)
                          : src[iw];
          }
        }
      }
}

// Adjoint of im2col: img (pre-zeroed) += scatter(col).
template <class T>
void col2im(const T* col, const Geometry& g, T* img) {
  const size_t plane = g.out_h * g.out_w;
  for (size_t c = 0; c < g.channels; ++c)
    for (size_t ki = 0; ki < g.kernel; ++ki)
      for (size_t kj = 0; kj < g.kernel; ++kj) {
        const T* src = col + ((c * g.kernel + ki) * g.kernel + kj) * plane;
        for (size_t oh = 0; oh < g.out_h; ++oh) {
          const auto ih = static_cast<std::ptrdiff_t>(oh * g.stride + ki) -
                          static_cast<std::ptrdiff_t>(g.pad_h);
          if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(g.height)) continue;
          T* dst = img + (c * g.height + static_cast<size_t>(ih)) * g.width;
          for (size_t ow = 0; ow < g.out_w; ++ow) {
            const auto iw = static_cast<std::ptrdiff_t>(ow * g.stride + kj) -
                            static_cast<std::ptrdiff_t>(g.pad_w);
            if (iw < 0 || iw >= static_cast<std::ptrdiff_t>(g.width)) continue;
            dst[iw] += src[oh * g.out_w + ow];
          }
        }
      }
}

template <class T>
void add_channel_bias(T* out, const T* bias, size_t batch, size_t channels, size_t plane) {
  for (size_t b = 0; b < batch; ++b)
    for (size_t c = 0; c < channels; ++c) {
      T* p = out + (b * channels + c) * plane;
      const T v = bias[c];
      for (size_t i = 0; i < plane; ++i) p[i] = p[i] + v;
    }
}

template <class T>
std::vector<T> channel_bias_grad(const std::vector<T>& g, size_t batch, size_t channels,
                                 size_t plane) {
  std::vector<T> gb(channels, T(0));
  for (size_t b = 0; b < batch; ++b)
    for (size_t c = 0; c < channels; ++c) {
      const T* p = g.data() + (b * channels + c) * plane;
      T acc = gb[c];
      for (size_t i = 0; i < plane; ++i) acc += p[i];
      gb[c] = acc;
    }
  return gb;
}

// C[m x n] += A[m x k] * B[k x n] with rows split across workers.
template <class T>
void gemm_accumulate_rows(size_t m, size_t n, size_t k, const T* a, const T* b, T* c) {
  const auto& kt = kernels::active<T>();
  const size_t chunks = std::min<size_t>(m, static_cast<size_t>(kernels::num_workers()));
  if (chunks <= 1) {
    kt.gemm(false, m, n, k, a, k, b, n, c, n, true);
    return;
  }
  const size_t rows = (m + chunks - 1) / chunks;
  kernels::parallel_for(chunks, [&](size_t ci) {
    const size_t r0 = ci * rows;
    if (r0 >= m) return;
    const size_t r1 = std::min(m, r0 + rows);
    kt.gemm(false, r1 - r0, n, k, a + r0 * k, k, b, n, c + r0 * n, n, true);
  });
}

void check_conv_args(const Tensor& x, const Tensor& w, const Tensor& bias,
                     const Conv2dOptions& o, bool transposed) {
  const char* name = transposed ? "deconv2d" : "conv2d";
  if (x.rank() != 4 || w.rank() != 4)
    throw ShapeError(std::string(name) + ": expected rank-4 input and weight");
  if (w.dim(2) != w.dim(3)) throw ShapeError(std::string(name) + ": kernel must be square");
  if (x.dtype() != w.dtype()) throw ShapeError(std::string(name) + ": dtype mismatch");
  if (x.dim(1) != w.dim(0 + (transposed ? 0 : 1)))
    throw ShapeError(std::string(name) + ": channel mismatch, input " + shape_str(x.shape()) +
                     " weight " + shape_str(w.shape()));
  if (o.stride < 1 || o.pad_h < 0 || o.pad_w < 0)
    throw ShapeError(std::string(name) + ": invalid stride/padding");
  const auto out_channels = transposed ? w.dim(1) : w.dim(0);
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != out_channels || bias.dtype() != x.dtype()))
    throw ShapeError(std::string(name) + ": bias shape mismatch");
}

}  // namespace

std::int64_t conv_out_size(std::int64_t in, std::int64_t k, std::int64_t s, std::int64_t p) {
  const std::int64_t span = in + 2 * p - k;
  if (span < 0) return 0;
  return span / s + 1;
}

std::int64_t deconv_out_size(std::int64_t in, std::int64_t k, std::int64_t s, std::int64_t p) {
  return (in - 1) * s - 2 * p + k;
}

Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias,
              const Conv2dOptions& o) {
  check_conv_args(x, weight, bias, o, false);
  const auto k = weight.dim(2);
  const auto oh = conv_out_size(x.dim(2), k, o.stride, o.pad_h);
  const auto ow = conv_out_size(x.dim(3), k, o.stride, o.pad_w);
  if (oh < 1 || ow < 1)
    throw ShapeError("conv2d: output size < 1 for input " + shape_str(x.shape()) +
                     " and kernel " + std::to_string(k));
  const Geometry geo{static_cast<size_t>(x.dim(1)), static_cast<size_t>(x.dim(2)),
                     static_cast<size_t>(x.dim(3)), static_cast<size_t>(k),
                     static_cast<size_t>(o.stride), static_cast<size_t>(o.pad_h),
                     static_cast<size_t>(o.pad_w), static_cast<size_t>(oh),
                     static_cast<size_t>(ow)};
  const auto batch = static_cast<size_t>(x.dim(0));
  const auto out_c = static_cast<size_t>(weight.dim(0));

  return visit_dtype(x.dtype(), [&]<class T>() {
    const size_t ckk = geo.channels * geo.kernel * geo.kernel;
    const size_t plane = geo.out_h * geo.out_w;
    const size_t in_size = geo.channels * geo.height * geo.width;
    const auto& xv = buffer_as<T>(x.buffer());
    const auto& wv = buffer_as<T>(weight.buffer());
    std::vector<T> out(batch * out_c * plane);
    kernels::parallel_for(batch, [&](size_t b) {
      std::vector<T> col(ckk * plane);
      im2col(xv.data() + b * in_size, geo, col.data());
      kernels::active<T>().gemm(false, out_c, plane, ckk, wv.data(), ckk, col.data(), plane,
                                out.data() + b * out_c * plane, plane, false);
    });
    if (bias.defined())
      add_channel_bias(out.data(), buffer_as<T>(bias.buffer()).data(), batch, out_c, plane);

    return make_result({x.dim(0), weight.dim(0), oh, ow}, Buffer{std::move(out)}, "conv2d",
                       {x, weight, bias},
                       [x, weight, bias, geo, batch, out_c, ckk, plane, in_size](const Buffer& gbuf) {
      const auto& g = buffer_as<T>(gbuf);
      const auto& xv = buffer_as<T>(x.buffer());
      const auto& wv = buffer_as<T>(weight.buffer());
      GradList grads(3);
      if (x.requires_grad()) {
        std::vector<T> gx(batch * in_size, T(0));
        kernels::parallel_for(batch, [&](size_t b) {
          std::vector<T> dcol(ckk * plane);
          kernels::active<T>().gemm(true, ckk, plane, out_c, wv.data(), ckk,
                                    g.data() + b * out_c * plane, plane, dcol.data(), plane,
                                    false);
          col2im(dcol.data(), geo, gx.data() + b * in_size);
        });
        grads[0] = Buffer{std::move(gx)};
      }
      if (weight.requires_grad()) {
        std::vector<T> gw(out_c * ckk, T(0));
        std::vector<T> col(ckk * plane), col_t(plane * ckk);
        for (size_t b = 0; b < batch; ++b) {
          im2col(xv.data() + b * in_size, geo, col.data());
          kernels::transpose(col.data(), ckk, plane, col_t.data());
          gemm_accumulate_rows(out_c, ckk, plane, g.data() + b * out_c * plane, col_t.data(),
                               gw.data());
        }
        grads[1] = Buffer{std::move(gw)};
      }
      if (bias.defined() && bias.requires_grad())
        grads[2] = Buffer{channel_bias_grad(g, batch, out_c, plane)};
      return grads;
    });
  });
}

Tensor deconv2d(const Tensor& x, const Tensor& weight, const Tensor& bias,
                const Conv2dOptions& o) {
  check_conv_args(x, weight, bias, o, true);
  const auto k = weight.dim(2);
  const auto oh = deconv_out_size(x.dim(2), k, o.stride, o.pad_h);
  const auto ow = deconv_out_size(x.dim(3), k, o.stride, o.pad_w);
  if (oh < 1 || ow < 1)
    throw ShapeError("deconv2d: non-positive output size for input " + shape_str(x.shape()));
  // Conv geometry seen from the output image: convolving the output with the
  // same kernel/stride/padding yields exactly the input's spatial size.
  const Geometry geo{static_cast<size_t>(weight.dim(1)), static_cast<size_t>(oh),
                     static_cast<size_t>(ow), static_cast<size_t>(k),
                     static_cast<size_t>(o.stride), static_cast<size_t>(o.pad_h),
                     static_cast<size_t>(o.pad_w), static_cast<size_t>(x.dim(2)),
                     static_cast<size_t>(x.dim(3))};
  const auto batch = static_cast<size_t>(x.dim(0));
  const auto in_c = static_cast<size_t>(x.dim(1));

  return visit_dtype(x.dtype(), [&]<class T>() {
    const size_t okk = geo.channels * geo.kernel * geo.kernel;
    const size_t in_plane = geo.out_h * geo.out_w;
    const size_t out_size = geo.channels * geo.height * geo.width;
    const auto& xv = buffer_as<T>(x.buffer());
    const auto& wv = buffer_as<T>(weight.buffer());
    std::vector<T> out(batch * out_size, T(0));
    kernels::parallel_for(batch, [&](size_t b) {
      std::vector<T> col(okk * in_plane);
      kernels::active<T>().gemm(true, okk, in_plane, in_c, wv.data(), okk,
                                xv.data() + b * in_c * in_plane, in_plane, col.data(),
                                in_plane, false);
      col2im(col.data(), geo, out.data() + b * out_size);
    });
    const size_t out_plane = geo.height * geo.width;
    if (bias.defined())
      add_channel_bias(out.data(), buffer_as<T>(bias.buffer()).data(), batch, geo.channels,
                       out_plane);

    return make_result({x.dim(0), weight.dim(1), oh, ow}, Buffer{std::move(out)}, "deconv2d",
                       {x, weight, bias},
                       [x, weight, bias, geo, batch, in_c, okk, in_plane, out_size,
                        out_plane](const Buffer& gbuf) {
      const auto& g = buffer_as<T>(gbuf);
      const auto& xv = buffer_as<T>(x.buffer());
      const auto& wv = buffer_as<T>(weight.buffer());
      GradList grads(3);
      if (x.requires_grad()) {
        std::vector<T> gx(batch * in_c * in_plane);
        kernels::parallel_for(batch, [&](size_t b) {
          std::vector<T> gcol(okk * in_plane);
          im2col(g.data() + b * out_size, geo, gcol.data());
          kernels::active<T>().gemm(false, in_c, in_plane, okk, wv.data(), okk, gcol.data(),
                                    in_plane, gx.data() + b * in_c * in_plane, in_plane, false);
        });
        grads[0] = Buffer{std::move(gx)};
      }
      if (weight.requires_grad()) {
        std::vector<T> gw(in_c * okk, T(0));
        std::vector<T> gcol(okk * in_plane), gcol_t(in_plane * okk);
        for (size_t b = 0; b < batch; ++b) {
          im2col(g.data() + b * out_size, geo, gcol.data());
          kernels::transpose(gcol.data(), okk, in_plane, gcol_t.data());
          gemm_accumulate_rows(in_c, okk, in_plane, xv.data() + b * in_c * in_plane,
                               gcol_t.data(), gw.data());
        }
        grads[1] = Buffer{std::move(gw)};
      }
      if (bias.defined() && bias.requires_grad())
        grads[2] = Buffer{channel_bias_grad(g, batch, geo.channels, out_plane)};
      return grads;
    });
  });
}

}  // namespace ssar::nn
