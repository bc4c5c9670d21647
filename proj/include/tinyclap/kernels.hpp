#pragma once

// Forward and backward kernels on plain tensors. Layouts are NCHW for
// feature maps and (batch, features) for dense inputs. Tape-recorded
// versions live in autodiff.hpp.
//
// Output sizes follow the usual convolution arithmetic:
//   out = floor((in + 2 * padding - kernel) / stride) + 1

#include <algorithm>
#include <array>
#include <cmath>
#include <string>

#include "tinyclap/tensor.hpp"

namespace tinyclap::kernels {

struct ConvGeometry {
  Index batch, in_channels, height, width;
  Index out_channels, kernel_h, kernel_w;
  Index stride, padding;
  Index out_h, out_w;

  Index patch() const { return in_channels * kernel_h * kernel_w; }
  Index out_plane() const { return out_h * out_w; }
  bool pointwise() const { return kernel_h == 1 && kernel_w == 1 && stride == 1 && padding == 0; }
};

inline Index conv_out_size(Index in, Index kernel, Index stride, Index padding) {
  return (in + 2 * padding - kernel) / stride + 1;
}

template <typename Scalar>
ConvGeometry conv_geometry(const Tensor<Scalar>& x, const Tensor<Scalar>& w, Index stride, Index padding,
                           bool depthwise) {
  if (x.rank() != 4) throw ContractError("conv2d: input must be NCHW, got " + to_string(x.shape()));
  if (w.rank() != 4) throw ContractError("conv2d: kernel must be OIHW, got " + to_string(w.shape()));
  if (stride < 1 || padding < 0) throw ContractError("conv2d: stride must be >= 1 and padding >= 0");
  ConvGeometry g{x.dim(0), x.dim(1), x.dim(2), x.dim(3), w.dim(0), w.dim(2), w.dim(3), stride, padding, 0, 0};
  if (depthwise) {
    if (w.dim(0) != x.dim(1) || w.dim(1) != 1)
      throw ContractError("depthwise_conv2d: kernel " + to_string(w.shape()) + " incompatible with input " +
                          to_string(x.shape()));
  } else if (w.dim(1) != x.dim(1)) {
    throw ContractError("conv2d: kernel " + to_string(w.shape()) + " incompatible with input " +
                        to_string(x.shape()));
  }
  g.out_h = conv_out_size(g.height, g.kernel_h, stride, padding);
  g.out_w = conv_out_size(g.width, g.kernel_w, stride, padding);
  if (g.out_h < 1 || g.out_w < 1)
    throw ContractError("conv2d: input " + to_string(x.shape()) + " too small for kernel " + to_string(w.shape()));
  return g;
}

namespace detail {

template <typename Scalar>
void im2col(const Scalar* x, const ConvGeometry& g, RowMajorMatrix<Scalar>& cols) {
  cols.resize(g.patch(), g.out_plane());
  for (Index c = 0; c < g.in_channels; ++c) {
    const Scalar* plane = x + c * g.height * g.width;
    for (Index kh = 0; kh < g.kernel_h; ++kh) {
      for (Index kw = 0; kw < g.kernel_w; ++kw) {
        Scalar* row = cols.data() + ((c * g.kernel_h + kh) * g.kernel_w + kw) * g.out_plane();
        for (Index oh = 0; oh < g.out_h; ++oh) {
          const Index ih = oh * g.stride - g.padding + kh;
          Scalar* dst = row + oh * g.out_w;
          if (ih < 0 || ih >= g.height) {
            std::fill(dst, dst + g.out_w, Scalar(0));
            continue;
          }
          for (Index ow = 0; ow < g.out_w; ++ow) {
            const Index iw = ow * g.stride - g.padding + kw;
            dst[ow] = (iw >= 0 && iw < g.width) ? plane[ih * g.width + iw] : Scalar(0);
          }
        }
      }
    }
  }
}

template <typename Scalar>
void col2im_add(const RowMajorMatrix<Scalar>& cols, const ConvGeometry& g, Scalar* dx) {
  for (Index c = 0; c < g.in_channels; ++c) {
    Scalar* plane = dx + c * g.height * g.width;
    for (Index kh = 0; kh < g.kernel_h; ++kh) {
      for (Index kw = 0; kw < g.kernel_w; ++kw) {
        const Scalar* row = cols.data() + ((c * g.kernel_h + kh) * g.kernel_w + kw) * g.out_plane();
        for (Index oh = 0; oh < g.out_h; ++oh) {
          const Index ih = oh * g.stride - g.padding + kh;
          if (ih < 0 || ih >= g.height) continue;
          for (Index ow = 0; ow < g.out_w; ++ow) {
            const Index iw = ow * g.stride - g.padding + kw;
            if (iw >= 0 && iw < g.width) plane[ih * g.width + iw] += row[oh * g.out_w + ow];
          }
        }
      }
    }
  }
}

}  // namespace detail

/// Dense 2-D convolution (cross-correlation), no bias. x: NCHW, w: OIHW.
template <typename Scalar>
Tensor<Scalar> conv2d(const Tensor<Scalar>& x, const Tensor<Scalar>& w, Index stride, Index padding) {
  const ConvGeometry g = conv_geometry(x, w, stride, padding, false);
  Tensor<Scalar> y({g.batch, g.out_channels, g.out_h, g.out_w});
  const auto weights = w.matrix(g.out_channels, g.patch());
  RowMajorMatrix<Scalar> cols;
  for (Index n = 0; n < g.batch; ++n) {
    const Scalar* xn = x.raw() + n * g.in_channels * g.height * g.width;
    Eigen::Map<RowMajorMatrix<Scalar>> yn(y.raw() + n * g.out_channels * g.out_plane(), g.out_channels,
                                          g.out_plane());
    if (g.pointwise()) {
      yn.noalias() = weights * Eigen::Map<const RowMajorMatrix<Scalar>>(xn, g.in_channels, g.out_plane());
    } else {
      detail::im2col(xn, g, cols);
      yn.noalias() = weights * cols;
    }
  }
  return y;
}

/// Accumulates input and kernel gradients of conv2d. Either output pointer may be null.
template <typename Scalar>
void conv2d_backward(const Tensor<Scalar>& x, const Tensor<Scalar>& w, Index stride, Index padding,
                     const Tensor<Scalar>& grad_y, Tensor<Scalar>* grad_x, Tensor<Scalar>* grad_w) {
  const ConvGeometry g = conv_geometry(x, w, stride, padding, false);
  const auto weights = w.matrix(g.out_channels, g.patch());
  RowMajorMatrix<Scalar> cols, dcols;
  for (Index n = 0; n < g.batch; ++n) {
    const Scalar* xn = x.raw() + n * g.in_channels * g.height * g.width;
    Eigen::Map<const RowMajorMatrix<Scalar>> gy(grad_y.raw() + n * g.out_channels * g.out_plane(),
                                                g.out_channels, g.out_plane());
    if (g.pointwise()) {
      Eigen::Map<const RowMajorMatrix<Scalar>> xm(xn, g.in_channels, g.out_plane());
      if (grad_w) grad_w->matrix(g.out_channels, g.patch()).noalias() += gy * xm.transpose();
      if (grad_x) {
        Eigen::Map<RowMajorMatrix<Scalar>> dx(grad_x->raw() + n * g.in_channels * g.out_plane(), g.in_channels,
                                              g.out_plane());
        dx.noalias() += weights.transpose() * gy;
      }
      continue;
    }
    if (grad_w) {
      detail::im2col(xn, g, cols);
      grad_w->matrix(g.out_channels, g.patch()).noalias() += gy * cols.transpose();
    }
    if (grad_x) {
      dcols.noalias() = weights.transpose() * gy;
      detail::col2im_add(dcols, g, grad_x->raw() + n * g.in_channels * g.height * g.width);
    }
  }
}

/// Per-channel 2-D convolution. x: NCHW, w: (C, 1, KH, KW).
template <typename Scalar>
Tensor<Scalar> depthwise_conv2d(const Tensor<Scalar>& x, const Tensor<Scalar>& w, Index stride, Index padding) {
  const ConvGeometry g = conv_geometry(x, w, stride, padding, true);
  Tensor<Scalar> y({g.batch, g.in_channels, g.out_h, g.out_w});
  for (Index n = 0; n < g.batch; ++n) {
    for (Index c = 0; c < g.in_channels; ++c) {
      const Scalar* plane = x.raw() + (n * g.in_channels + c) * g.height * g.width;
      const Scalar* k = w.raw() + c * g.kernel_h * g.kernel_w;
      Scalar* out = y.raw() + (n * g.in_channels + c) * g.out_plane();
      for (Index oh = 0; oh < g.out_h; ++oh) {
        for (Index ow = 0; ow < g.out_w; ++ow) {
          Scalar acc(0);
          for (Index kh = 0; kh < g.kernel_h; ++kh) {
            const Index ih = oh * g.stride - g.padding + kh;
            if (ih < 0 || ih >= g.height) continue;
            for (Index kw = 0; kw < g.kernel_w; ++kw) {
              const Index iw = ow * g.stride - g.padding + kw;
              if (iw >= 0 && iw < g.width) acc += plane[ih * g.width + iw] * k[kh * g.kernel_w + kw];
            }
          }
          out[oh * g.out_w + ow] = acc;
        }
      }
    }
  }
  return y;
}

template <typename Scalar>
void depthwise_conv2d_backward(const Tensor<Scalar>& x, const Tensor<Scalar>& w, Index stride, Index padding,
                               const Tensor<Scalar>& grad_y, Tensor<Scalar>* grad_x, Tensor<Scalar>* grad_w) {
  const ConvGeometry g = conv_geometry(x, w, stride, padding, true);
  for (Index n = 0; n < g.batch; ++n) {
    for (Index c = 0; c < g.in_channels; ++c) {
      const Index plane_off = (n * g.in_channels + c) * g.height * g.width;
      const Scalar* plane = x.raw() + plane_off;
      const Scalar* k = w.raw() + c * g.kernel_h * g.kernel_w;
      const Scalar* gy = grad_y.raw() + (n * g.in_channels + c) * g.out_plane();
      Scalar* dk = grad_w ? grad_w->raw() + c * g.kernel_h * g.kernel_w : nullptr;
      Scalar* dx = grad_x ? grad_x->raw() + plane_off : nullptr;
      for (Index oh = 0; oh < g.out_h; ++oh) {
        for (Index ow = 0; ow < g.out_w; ++ow) {
          const Scalar go = gy[oh * g.out_w + ow];
          if (go == Scalar(0)) continue;
          for (Index kh = 0; kh < g.kernel_h; ++kh) {
            const Index ih = oh * g.stride - g.padding + kh;
            if (ih < 0 || ih >= g.height) continue;
            for (Index kw = 0; kw < g.kernel_w; ++kw) {
              const Index iw = ow * g.stride - g.padding + kw;
              if (iw < 0 || iw >= g.width) continue;
              if (dk) dk[kh * g.kernel_w + kw] += go * plane[ih * g.width + iw];
              if (dx) dx[ih * g.width + iw] += go * k[kh * g.kernel_w + kw];
            }
          }
        }
      }
    }
  }
}

/// y = x W^T + b. x: (N, in), W: (out, in), b: (out) or empty.
template <typename Scalar>
Tensor<Scalar> linear(const Tensor<Scalar>& x, const Tensor<Scalar>& w, const Tensor<Scalar>* b) {
  if (x.rank() != 2 || w.rank() != 2 || x.dim(1) != w.dim(1))
    throw ContractError("linear: input " + to_string(x.shape()) + " incompatible with weight " +
                        to_string(w.shape()));
  if (b && (b->rank() != 1 || b->dim(0) != w.dim(0)))
    throw ContractError("linear: bias " + to_string(b->shape()) + " incompatible with weight " +
                        to_string(w.shape()));
  const Index n = x.dim(0), in = x.dim(1), out = w.dim(0);
  Tensor<Scalar> y({n, out});
  auto ym = y.matrix(n, out);
  ym.noalias() = x.matrix(n, in) * w.matrix(out, in).transpose();
  if (b) ym.rowwise() += b->data().transpose();
  return y;
}

template <typename Scalar>
void linear_backward(const Tensor<Scalar>& x, const Tensor<Scalar>& w, const Tensor<Scalar>& grad_y,
                     Tensor<Scalar>* grad_x, Tensor<Scalar>* grad_w, Tensor<Scalar>* grad_b) {
  const Index n = x.dim(0), in = x.dim(1), out = w.dim(0);
  const auto gy = grad_y.matrix(n, out);
  if (grad_x) grad_x->matrix(n, in).noalias() += gy * w.matrix(out, in);
  if (grad_w) grad_w->matrix(out, in).noalias() += gy.transpose() * x.matrix(n, in);
  if (grad_b) grad_b->data() += gy.colwise().sum().transpose();
}

enum class BatchNormMode { kTrain, kEval };

struct BatchNormOptions {
  double momentum = 0.1;
  double eps = 1e-5;
};

/// Saved state needed by the backward pass.
template <typename Scalar>
struct BatchNormCache {
  Tensor<Scalar> normalized;  // x_hat
  Vector<Scalar> inv_std;     // per channel
  BatchNormMode mode = BatchNormMode::kEval;
};

/// Batch normalization over (N, H, W) per channel. In train mode the batch
/// statistics normalize the input and the running statistics are updated in
/// place (running variance uses the unbiased estimate).
template <typename Scalar>
Tensor<Scalar> batchnorm2d(const Tensor<Scalar>& x, const Tensor<Scalar>& gamma, const Tensor<Scalar>& beta,
                           Tensor<Scalar>& running_mean, Tensor<Scalar>& running_var, BatchNormMode mode,
                           const BatchNormOptions& opts = {}, BatchNormCache<Scalar>* cache = nullptr) {
  if (x.rank() != 4) throw ContractError("batchnorm2d: input must be NCHW, got " + to_string(x.shape()));
  const Index n = x.dim(0), c = x.dim(1), plane = x.dim(2) * x.dim(3);
  for (const Tensor<Scalar>* t : std::array<const Tensor<Scalar>*, 4>{&gamma, &beta, &running_mean, &running_var})
    if (t->rank() != 1 || t->dim(0) != c)
      throw ContractError("batchnorm2d: per-channel tensor " + to_string(t->shape()) + " incompatible with input " +
                          to_string(x.shape()));
  const Index count = n * plane;
  if (mode == BatchNormMode::kTrain && count < 2)
    throw ContractError("batchnorm2d: train mode needs more than one value per channel, input " +
                        to_string(x.shape()));

  Vector<Scalar> mean(c), inv_std(c);
  if (mode == BatchNormMode::kTrain) {
    for (Index ch = 0; ch < c; ++ch) {
      Scalar sum(0);
      for (Index b = 0; b < n; ++b) {
        const Scalar* p = x.raw() + (b * c + ch) * plane;
        sum += Eigen::Map<const Vector<Scalar>>(p, plane).sum();
      }
      const Scalar mu = sum / Scalar(count);
      Scalar sq(0);
      for (Index b = 0; b < n; ++b) {
        const Scalar* p = x.raw() + (b * c + ch) * plane;
        sq += (Eigen::Map<const Vector<Scalar>>(p, plane).array() - mu).square().sum();
      }
      const Scalar var = sq / Scalar(count);
      mean[ch] = mu;
      inv_std[ch] = Scalar(1) / std::sqrt(var + Scalar(opts.eps));
      const Scalar m = Scalar(opts.momentum);
      running_mean[ch] = (Scalar(1) - m) * running_mean[ch] + m * mu;
      running_var[ch] = (Scalar(1) - m) * running_var[ch] + m * sq / Scalar(count - 1);
    }
  } else {
    mean = running_mean.data();
    inv_std = (running_var.data().array() + Scalar(opts.eps)).rsqrt().matrix();
  }

  Tensor<Scalar> y(x.shape());
  Tensor<Scalar> xhat;
  if (cache) xhat = Tensor<Scalar>(x.shape());
  for (Index b = 0; b < n; ++b) {
    for (Index ch = 0; ch < c; ++ch) {
      const Index off = (b * c + ch) * plane;
      Eigen::Map<const Vector<Scalar>> in(x.raw() + off, plane);
      Eigen::Map<Vector<Scalar>> out(y.raw() + off, plane);
      out = ((in.array() - mean[ch]) * inv_std[ch]).matrix();
      if (cache) Eigen::Map<Vector<Scalar>>(xhat.raw() + off, plane) = out;
      out = (out.array() * gamma[ch] + beta[ch]).matrix();
    }
  }
  if (cache) {
    cache->normalized = std::move(xhat);
    cache->inv_std = std::move(inv_std);
    cache->mode = mode;
  }
  return y;
}

template <typename Scalar>
void batchnorm2d_backward(const Tensor<Scalar>& gamma, const BatchNormCache<Scalar>& cache,
                          const Tensor<Scalar>& grad_y, Tensor<Scalar>* grad_x, Tensor<Scalar>* grad_gamma,
                          Tensor<Scalar>* grad_beta) {
  const Tensor<Scalar>& xhat = cache.normalized;
  const Index n = xhat.dim(0), c = xhat.dim(1), plane = xhat.dim(2) * xhat.dim(3);
  const Scalar count = Scalar(n * plane);
  for (Index ch = 0; ch < c; ++ch) {
    Scalar sum_g(0), sum_gx(0);
    for (Index b = 0; b < n; ++b) {
      const Index off = (b * c + ch) * plane;
      Eigen::Map<const Vector<Scalar>> g(grad_y.raw() + off, plane);
      Eigen::Map<const Vector<Scalar>> xh(xhat.raw() + off, plane);
      sum_g += g.sum();
      sum_gx += g.dot(xh);
    }
    if (grad_gamma) (*grad_gamma)[ch] += sum_gx;
    if (grad_beta) (*grad_beta)[ch] += sum_g;
    if (!grad_x) continue;
    const Scalar scale = gamma[ch] * cache.inv_std[ch];
    for (Index b = 0; b < n; ++b) {
      const Index off = (b * c + ch) * plane;
      Eigen::Map<const Vector<Scalar>> g(grad_y.raw() + off, plane);
      Eigen::Map<const Vector<Scalar>> xh(xhat.raw() + off, plane);
      Eigen::Map<Vector<Scalar>> dx(grad_x->raw() + off, plane);
      if (cache.mode == BatchNormMode::kTrain)
        dx.array() += scale * (g.array() - sum_g / count - xh.array() * (sum_gx / count));
      else
        dx.array() += scale * g.array();
    }
  }
}

template <typename Scalar>
Tensor<Scalar> relu(const Tensor<Scalar>& x) {
  return Tensor<Scalar>(x.shape(), x.data().cwiseMax(Scalar(0)));
}

template <typename Scalar>
Tensor<Scalar> relu_grad(const Tensor<Scalar>& x, const Tensor<Scalar>& grad_y) {
  return Tensor<Scalar>(x.shape(), (x.data().array() > Scalar(0)).select(grad_y.data(), Scalar(0)));
}

/// x * relu6(x + 3) / 6
template <typename Scalar>
Tensor<Scalar> hswish(const Tensor<Scalar>& x) {
  auto a = x.data().array();
  return Tensor<Scalar>(x.shape(), (a * (a + Scalar(3)).cwiseMax(Scalar(0)).cwiseMin(Scalar(6)) / Scalar(6)).matrix());
}

template <typename Scalar>
Tensor<Scalar> hswish_grad(const Tensor<Scalar>& x, const Tensor<Scalar>& grad_y) {
  Tensor<Scalar> g(x.shape());
  for (Index i = 0; i < x.size(); ++i) {
    const Scalar v = x[i];
    const Scalar d = v <= Scalar(-3) ? Scalar(0) : v >= Scalar(3) ? Scalar(1) : (Scalar(2) * v + Scalar(3)) / Scalar(6);
    g[i] = d * grad_y[i];
  }
  return g;
}

template <typename Scalar>
Tensor<Scalar> sigmoid(const Tensor<Scalar>& x) {
  Tensor<Scalar> y(x.shape());
  for (Index i = 0; i < x.size(); ++i) {
    const Scalar v = x[i];
    if (v >= Scalar(0)) {
      y[i] = Scalar(1) / (Scalar(1) + std::exp(-v));
    } else {
      const Scalar e = std::exp(v);
      y[i] = e / (Scalar(1) + e);
    }
  }
  return y;
}

/// Gradient expressed through the forward output y = sigmoid(x).
template <typename Scalar>
Tensor<Scalar> sigmoid_grad(const Tensor<Scalar>& y, const Tensor<Scalar>& grad_y) {
  return Tensor<Scalar>(y.shape(), (grad_y.data().array() * y.data().array() * (Scalar(1) - y.data().array())).matrix());
}

/// (N, C, H, W) -> (N, C)
template <typename Scalar>
Tensor<Scalar> global_avg_pool(const Tensor<Scalar>& x) {
  if (x.rank() != 4) throw ContractError("global_avg_pool: input must be NCHW, got " + to_string(x.shape()));
  const Index nc = x.dim(0) * x.dim(1), plane = x.dim(2) * x.dim(3);
  Tensor<Scalar> y({x.dim(0), x.dim(1)});
  y.data() = x.matrix(nc, plane).rowwise().mean();
  return y;
}

template <typename Scalar>
void global_avg_pool_backward(const Shape& x_shape, const Tensor<Scalar>& grad_y, Tensor<Scalar>& grad_x) {
  const Index nc = x_shape[0] * x_shape[1], plane = x_shape[2] * x_shape[3];
  grad_x.matrix(nc, plane).colwise() += grad_y.data() / Scalar(plane);
}

/// Splits a shape around `axis` into (outer, axis length, inner).
inline std::array<Index, 3> split_axis(const Shape& shape, int axis) {
  const int rank = static_cast<int>(shape.size());
  if (axis < 0) axis += rank;
  if (axis < 0 || axis >= rank)
    throw ContractError("axis " + std::to_string(axis) + " out of range for shape " + to_string(shape));
  Index outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= shape[i];
  for (int i = axis + 1; i < rank; ++i) inner *= shape[i];
  return {outer, shape[axis], inner};
}

inline constexpr double kNormalizeEps = 1e-12;

/// x / max(||x||_2, 1e-12) along `axis`; zero vectors map to zero.
template <typename Scalar>
Tensor<Scalar> l2_normalize(const Tensor<Scalar>& x, int axis) {
  const auto [outer, len, inner] = split_axis(x.shape(), axis);
  Tensor<Scalar> y(x.shape());
  for (Index o = 0; o < outer; ++o) {
    for (Index i = 0; i < inner; ++i) {
      const Index base = o * len * inner + i;
      Scalar sq(0);
      for (Index k = 0; k < len; ++k) sq += x[base + k * inner] * x[base + k * inner];
      const Scalar q = std::max(std::sqrt(sq), Scalar(kNormalizeEps));
      for (Index k = 0; k < len; ++k) y[base + k * inner] = x[base + k * inner] / q;
    }
  }
  return y;
}

template <typename Scalar>
void l2_normalize_backward(const Tensor<Scalar>& x, int axis, const Tensor<Scalar>& grad_y, Tensor<Scalar>& grad_x) {
  const auto [outer, len, inner] = split_axis(x.shape(), axis);
  for (Index o = 0; o < outer; ++o) {
    for (Index i = 0; i < inner; ++i) {
      const Index base = o * len * inner + i;
      Scalar sq(0), xg(0);
      for (Index k = 0; k < len; ++k) {
        const Index j = base + k * inner;
        sq += x[j] * x[j];
        xg += x[j] * grad_y[j];
      }
      const Scalar r = std::sqrt(sq);
      // Below the guard the map is linear (x / eps).
      const bool guarded = !(r > Scalar(kNormalizeEps));
      const Scalar q = guarded ? Scalar(kNormalizeEps) : r;
      const Scalar coupling = guarded ? Scalar(0) : xg / (r * r * r);
      for (Index k = 0; k < len; ++k) {
        const Index j = base + k * inner;
        grad_x[j] += grad_y[j] / q - x[j] * coupling;
      }
    }
  }
}

}  // namespace tinyclap::kernels
