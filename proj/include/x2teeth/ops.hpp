#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "x2teeth/blas.hpp"
#include "x2teeth/tensor.hpp"

// Differentiable operations used by the three subnets. Every op takes the
// tape it records onto as its first argument.
namespace x2t {

namespace detail {

using Extent3 = std::array<std::int64_t, 3>;

inline std::int64_t prod3(const Extent3& e) { return e[0] * e[1] * e[2]; }

// Geometry of a strided, zero-padded cross-correlation over up to three
// spatial axes. 2D convolutions use a leading axis of extent 1.
struct ConvGeometry {
  std::int64_t channels = 0;
  Extent3 in{1, 1, 1};
  Extent3 out{1, 1, 1};
  Extent3 kernel{1, 1, 1};
  Extent3 stride{1, 1, 1};
  Extent3 pad{0, 0, 0};

  std::int64_t in_size() const { return prod3(in); }
  std::int64_t out_size() const { return prod3(out); }
  std::int64_t col_rows() const { return channels * prod3(kernel); }
};

inline std::int64_t conv_out_extent(std::int64_t in, std::int64_t k, std::int64_t s,
                                    std::int64_t p) {
  const std::int64_t span = in + 2 * p - k;
  if (span < 0) return 0;
  return span / s + 1;
}

// col[(c, kd, kh, kw), (od, oh, ow)] = img[c, od*s - p + kd, ...] or 0.
template <class T>
void im2col(const T* img, const ConvGeometry& g, T* col) {
  const auto [ID, IH, IW] = g.in;
  const auto [OD, OH, OW] = g.out;
  const auto [KD, KH, KW] = g.kernel;
  const std::int64_t P = g.out_size();
  std::int64_t r = 0;
  for (std::int64_t c = 0; c < g.channels; ++c) {
    for (std::int64_t kd = 0; kd < KD; ++kd) {
      for (std::int64_t kh = 0; kh < KH; ++kh) {
        for (std::int64_t kw = 0; kw < KW; ++kw, ++r) {
          T* row = col + r * P;
          for (std::int64_t od = 0; od < OD; ++od) {
            const std::int64_t id = od * g.stride[0] - g.pad[0] + kd;
            T* dst_d = row + od * OH * OW;
            if (id < 0 || id >= ID) {
              std::fill(dst_d, dst_d + OH * OW, T(0));
              continue;
            }
            for (std::int64_t oh = 0; oh < OH; ++oh) {
              const std::int64_t ih = oh * g.stride[1] - g.pad[1] + kh;
              T* dst = dst_d + oh * OW;
              if (ih < 0 || ih >= IH) {
                std::fill(dst, dst + OW, T(0));
                continue;
              }
              const T* src = img + ((c * ID + id) * IH + ih) * IW;
              for (std::int64_t ow = 0; ow < OW; ++ow) {
                const std::int64_t iw = ow * g.stride[2] - g.pad[2] + kw;
                dst[ow] = (iw >= 0 && iw < IW) ? src[iw] : T(0);
              }
            }
          }
        }
      }
    }
  }
}

// Adjoint of im2col: scatters (accumulates) columns back into the image.
template <class T>
void col2im(const T* col, const ConvGeometry& g, T* img) {
  const auto [ID, IH, IW] = g.in;
  const auto [OD, OH, OW] = g.out;
  const auto [KD, KH, KW] = g.kernel;
  const std::int64_t P = g.out_size();
  std::int64_t r = 0;
  for (std::int64_t c = 0; c < g.channels; ++c) {
    for (std::int64_t kd = 0; kd < KD; ++kd) {
      for (std::int64_t kh = 0; kh < KH; ++kh) {
        for (std::int64_t kw = 0; kw < KW; ++kw, ++r) {
          const T* row = col + r * P;
          for (std::int64_t od = 0; od < OD; ++od) {
            const std::int64_t id = od * g.stride[0] - g.pad[0] + kd;
            if (id < 0 || id >= ID) continue;
            for (std::int64_t oh = 0; oh < OH; ++oh) {
              const std::int64_t ih = oh * g.stride[1] - g.pad[1] + kh;
              if (ih < 0 || ih >= IH) continue;
              const T* src = row + (od * OH + oh) * OW;
              T* dst = img + ((c * ID + id) * IH + ih) * IW;
              for (std::int64_t ow = 0; ow < OW; ++ow) {
                const std::int64_t iw = ow * g.stride[2] - g.pad[2] + kw;
                if (iw >= 0 && iw < IW) dst[iw] += src[ow];
              }
            }
          }
        }
      }
    }
  }
}

template <class T>
void gemm(bool ta, bool tb, std::int64_t m, std::int64_t n, std::int64_t k, const T* a,
          const T* b, T beta, T* c) {
  const auto lda = static_cast<int>(ta ? m : k);
  const auto ldb = static_cast<int>(tb ? k : n);
  blas::gemm(ta, tb, static_cast<int>(m), static_cast<int>(n), static_cast<int>(k), T(1), a,
             lda, b, ldb, beta, c, static_cast<int>(n));
}

// Lifts rank-R spatial parameters (R = 2 or 3) into the 3-axis geometry.
template <std::size_t R>
Extent3 lift(const std::array<int, R>& v, std::int64_t fill) {
  Extent3 e{fill, fill, fill};
  for (std::size_t i = 0; i < R; ++i) e[3 - R + i] = v[i];
  return e;
}

template <std::size_t R>
Extent3 spatial_of(const Shape& s) {
  Extent3 e{1, 1, 1};
  for (std::size_t i = 0; i < R; ++i) e[3 - R + i] = s[2 + i];
  return e;
}

template <std::size_t R>
void check_conv_args(const char* op, const Shape& x, const Shape& w, const Shape& b,
                     std::int64_t in_channel_axis_of_w, const std::array<int, R>& stride,
                     const std::array<int, R>& pad) {
  if (x.size() != R + 2) {
    throw ShapeError(std::string(op) + ": input must have rank " + std::to_string(R + 2) +
                     ", got " + to_string(x));
  }
  if (w.size() != R + 2) {
    throw ShapeError(std::string(op) + ": kernel must have rank " + std::to_string(R + 2) +
                     ", got " + to_string(w));
  }
  if (x[1] != w[in_channel_axis_of_w]) {
    throw ShapeError(std::string(op) + ": input channels " + std::to_string(x[1]) +
                     " do not match kernel " + to_string(w));
  }
  const std::int64_t out_channels = w[1 - in_channel_axis_of_w];
  if (b.size() != 1 || b[0] != out_channels) {
    throw ShapeError(std::string(op) + ": bias must have shape [" +
                     std::to_string(out_channels) + "], got " + to_string(b));
  }
  for (std::size_t i = 0; i < R; ++i) {
    if (stride[i] <= 0) throw ShapeError(std::string(op) + ": stride must be positive");
    if (pad[i] < 0) throw ShapeError(std::string(op) + ": padding must be non-negative");
  }
}

template <class T, std::size_t R>
Tensor<T> conv_forward(Tape<T>& tape, const Tensor<T>& x, const Tensor<T>& w,
                       const Tensor<T>& b, const std::array<int, R>& stride,
                       const std::array<int, R>& pad, const char* op) {
  check_conv_args<R>(op, x.shape(), w.shape(), b.shape(), 1, stride, pad);
  ConvGeometry g;
  g.channels = x.dim(1);
  g.in = spatial_of<R>(x.shape());
  g.kernel = spatial_of<R>(w.shape());
  g.stride = lift<R>(stride, 1);
  g.pad = lift<R>(pad, 0);
  Shape out_shape{x.dim(0), w.dim(0)};
  for (std::size_t i = 0; i < 3; ++i) {
    g.out[i] = conv_out_extent(g.in[i], g.kernel[i], g.stride[i], g.pad[i]);
    if (g.out[i] < 1) {
      throw ShapeError(std::string(op) + ": non-positive output extent for input " +
                       to_string(x.shape()) + " and kernel " + to_string(w.shape()));
    }
  }
  for (std::size_t i = 3 - R; i < 3; ++i) out_shape.push_back(g.out[i]);

  const std::int64_t N = x.dim(0), O = w.dim(0), CK = g.col_rows(), P = g.out_size();
  const std::int64_t in_stride = g.channels * g.in_size();
  Tensor<T> y(out_shape);
  std::vector<T> col(static_cast<std::size_t>(CK * P));
  for (std::int64_t n = 0; n < N; ++n) {
    im2col(x.data() + n * in_stride, g, col.data());
    T* yn = y.data() + n * O * P;
    gemm<T>(false, false, O, P, CK, w.data(), col.data(), T(0), yn);
    for (std::int64_t o = 0; o < O; ++o) {
      const T bo = b.values()[o];
      for (std::int64_t p = 0; p < P; ++p) yn[o * P + p] += bo;
    }
  }

  return tape.record(op, {x, w, b}, y, [x, w, b, y, g, N, O, CK, P, in_stride]() mutable {
    const auto gy = y.grad();
    std::vector<T> col(static_cast<std::size_t>(CK * P));
    std::vector<T> dcol;
    if (x.requires_grad()) dcol.resize(col.size());
    for (std::int64_t n = 0; n < N; ++n) {
      const T* gyn = gy.data() + n * O * P;
      if (w.requires_grad()) {
        im2col(x.data() + n * in_stride, g, col.data());
        gemm<T>(false, true, O, CK, P, gyn, col.data(), T(1), w.grad_mut().data());
      }
      if (x.requires_grad()) {
        gemm<T>(true, false, CK, P, O, w.data(), gyn, T(0), dcol.data());
        col2im(dcol.data(), g, x.grad_mut().data() + n * in_stride);
      }
      if (b.requires_grad()) {
        auto gb = b.grad_mut();
        for (std::int64_t o = 0; o < O; ++o) {
          T s = 0;
          for (std::int64_t p = 0; p < P; ++p) s += gyn[o * P + p];
          gb[o] += s;
        }
      }
    }
  });
}

// Transposed convolution: the adjoint of conv_forward's linear map for the
// same kernel. Kernel layout [in_channels, out_channels, k...].
template <class T, std::size_t R>
Tensor<T> conv_transpose_forward(Tape<T>& tape, const Tensor<T>& x, const Tensor<T>& w,
                                 const Tensor<T>& b, const std::array<int, R>& stride,
                                 const std::array<int, R>& pad, const char* op) {
  check_conv_args<R>(op, x.shape(), w.shape(), b.shape(), 0, stride, pad);
  ConvGeometry g;
  g.channels = w.dim(1);
  g.out = spatial_of<R>(x.shape());
  g.kernel = spatial_of<R>(w.shape());
  g.stride = lift<R>(stride, 1);
  g.pad = lift<R>(pad, 0);
  Shape out_shape{x.dim(0), w.dim(1)};
  for (std::size_t i = 0; i < 3; ++i) {
    g.in[i] = (g.out[i] - 1) * g.stride[i] - 2 * g.pad[i] + g.kernel[i];
    if (g.in[i] < 1) {
      throw ShapeError(std::string(op) + ": non-positive output extent for input " +
                       to_string(x.shape()) + " and kernel " + to_string(w.shape()));
    }
  }
  for (std::size_t i = 3 - R; i < 3; ++i) out_shape.push_back(g.in[i]);

  const std::int64_t N = x.dim(0), O = w.dim(0), C = g.channels, CK = g.col_rows();
  const std::int64_t P = g.out_size(), Q = g.in_size();
  Tensor<T> y(out_shape);
  std::vector<T> col(static_cast<std::size_t>(CK * P));
  for (std::int64_t n = 0; n < N; ++n) {
    gemm<T>(true, false, CK, P, O, w.data(), x.data() + n * O * P, T(0), col.data());
    T* yn = y.data() + n * C * Q;
    col2im(col.data(), g, yn);
    for (std::int64_t c = 0; c < C; ++c) {
      const T bc = b.values()[c];
      for (std::int64_t q = 0; q < Q; ++q) yn[c * Q + q] += bc;
    }
  }

  return tape.record(op, {x, w, b}, y, [x, w, b, y, g, N, O, C, CK, P, Q]() mutable {
    const auto gy = y.grad();
    std::vector<T> col(static_cast<std::size_t>(CK * P));
    for (std::int64_t n = 0; n < N; ++n) {
      const T* gyn = gy.data() + n * C * Q;
      if (x.requires_grad() || w.requires_grad()) im2col(gyn, g, col.data());
      if (x.requires_grad()) {
        gemm<T>(false, false, O, P, CK, w.data(), col.data(), T(1),
                x.grad_mut().data() + n * O * P);
      }
      if (w.requires_grad()) {
        gemm<T>(false, true, O, CK, P, x.data() + n * O * P, col.data(), T(1),
                w.grad_mut().data());
      }
      if (b.requires_grad()) {
        auto gb = b.grad_mut();
        for (std::int64_t c = 0; c < C; ++c) {
          T s = 0;
          for (std::int64_t q = 0; q < Q; ++q) s += gyn[c * Q + q];
          gb[c] += s;
        }
      }
    }
  });
}

}  // namespace detail

/// 2D cross-correlation. x: N×C×H×W, w: O×C×Kh×Kw, b: O.
template <class T>
Tensor<T> conv2d(Tape<T>& tape, const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b,
                 std::array<int, 2> stride = {1, 1}, std::array<int, 2> pad = {0, 0}) {
  return detail::conv_forward<T, 2>(tape, x, w, b, stride, pad, "conv2d");
}

/// Adjoint of conv2d. x: N×O×H×W, w: O×C×Kh×Kw, b: C.
/// Output extent (H-1)*s - 2p + Kh.
template <class T>
Tensor<T> conv_transpose2d(Tape<T>& tape, const Tensor<T>& x, const Tensor<T>& w,
                           const Tensor<T>& b, std::array<int, 2> stride = {1, 1},
                           std::array<int, 2> pad = {0, 0}) {
  return detail::conv_transpose_forward<T, 2>(tape, x, w, b, stride, pad, "conv_transpose2d");
}

template <class T>
Tensor<T> conv3d(Tape<T>& tape, const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b,
                 std::array<int, 3> stride = {1, 1, 1}, std::array<int, 3> pad = {0, 0, 0}) {
  return detail::conv_forward<T, 3>(tape, x, w, b, stride, pad, "conv3d");
}

template <class T>
Tensor<T> conv_transpose3d(Tape<T>& tape, const Tensor<T>& x, const Tensor<T>& w,
                           const Tensor<T>& b, std::array<int, 3> stride = {1, 1, 1},
                           std::array<int, 3> pad = {0, 0, 0}) {
  return detail::conv_transpose_forward<T, 3>(tape, x, w, b, stride, pad, "conv_transpose3d");
}

template <class T>
Tensor<T> relu(Tape<T>& tape, const Tensor<T>& x) {
  Tensor<T> y(x.shape());
  auto xv = x.values();
  auto yv = y.values();
  for (std::size_t i = 0; i < xv.size(); ++i) yv[i] = xv[i] > T(0) ? xv[i] : T(0);
  return tape.record("relu", {x}, y, [x, y]() mutable {
    if (!x.requires_grad()) return;
    auto gx = x.grad_mut();
    auto gy = y.grad();
    auto xv = x.values();
    for (std::size_t i = 0; i < gx.size(); ++i) {
      if (xv[i] > T(0)) gx[i] += gy[i];
    }
  });
}

/// Per-sample, per-channel normalisation over the spatial axes of an
/// N×C×... tensor: (x - mean) / sqrt(var + eps), no affine terms.
template <class T>
Tensor<T> instance_norm(Tape<T>& tape, const Tensor<T>& x, double eps = 1e-5) {
  if (x.rank() < 3) throw ShapeError("instance_norm: expected N×C×spatial, got " + to_string(x.shape()));
  const std::int64_t groups = x.dim(0) * x.dim(1);
  const std::int64_t n = x.numel() / groups;
  Tensor<T> y(x.shape());
  std::vector<T> inv_std(static_cast<std::size_t>(groups));
  auto xv = x.values();
  auto yv = y.values();
  for (std::int64_t g = 0; g < groups; ++g) {
    const T* xs = xv.data() + g * n;
    T* ys = yv.data() + g * n;
    double mean = 0.0, var = 0.0;
    for (std::int64_t i = 0; i < n; ++i) mean += xs[i];
    mean /= static_cast<double>(n);
    for (std::int64_t i = 0; i < n; ++i) var += (xs[i] - mean) * (xs[i] - mean);
    var /= static_cast<double>(n);
    const T s = static_cast<T>(1.0 / std::sqrt(var + eps));
    inv_std[static_cast<std::size_t>(g)] = s;
    for (std::int64_t i = 0; i < n; ++i) ys[i] = (xs[i] - static_cast<T>(mean)) * s;
  }
  return tape.record("instance_norm", {x}, y, [x, y, inv_std, groups, n]() mutable {
    if (!x.requires_grad()) return;
    auto gx = x.grad_mut();
    auto gy = y.grad();
    auto yv = y.values();
    // dx = s · (dy - mean(dy) - y · mean(dy · y))
    for (std::int64_t g = 0; g < groups; ++g) {
      const std::int64_t o = g * n;
      double mg = 0.0, mgy = 0.0;
      for (std::int64_t i = 0; i < n; ++i) {
        mg += gy[o + i];
        mgy += gy[o + i] * yv[o + i];
      }
      mg /= static_cast<double>(n);
      mgy /= static_cast<double>(n);
      const T s = inv_std[static_cast<std::size_t>(g)];
      for (std::int64_t i = 0; i < n; ++i) {
        gx[o + i] += s * (gy[o + i] - static_cast<T>(mg) - yv[o + i] * static_cast<T>(mgy));
      }
    }
  });
}

template <class T>
T stable_sigmoid(T v) {
  if (v >= T(0)) return T(1) / (T(1) + std::exp(-v));
  const T e = std::exp(v);
  return e / (T(1) + e);
}

template <class T>
Tensor<T> sigmoid(Tape<T>& tape, const Tensor<T>& x) {
  Tensor<T> y(x.shape());
  auto xv = x.values();
  auto yv = y.values();
  for (std::size_t i = 0; i < xv.size(); ++i) yv[i] = stable_sigmoid(xv[i]);
  return tape.record("sigmoid", {x}, y, [x, y]() mutable {
    if (!x.requires_grad()) return;
    auto gx = x.grad_mut();
    auto gy = y.grad();
    auto yv = y.values();
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += yv[i] * (T(1) - yv[i]) * gy[i];
  });
}

/// Softmax over axis 1 of an N×C×spatial tensor.
template <class T>
Tensor<T> softmax_channels(Tape<T>& tape, const Tensor<T>& x) {
  if (x.rank() < 2) throw ShapeError("softmax_channels: rank must be >= 2");
  const std::int64_t N = x.dim(0), C = x.dim(1), P = x.numel() / (N * C);
  Tensor<T> y(x.shape());
  const T* xv = x.data();
  T* yv = y.data();
  for (std::int64_t n = 0; n < N; ++n) {
    for (std::int64_t p = 0; p < P; ++p) {
      const std::int64_t base = n * C * P + p;
      T mx = xv[base];
      for (std::int64_t c = 1; c < C; ++c) mx = std::max(mx, xv[base + c * P]);
      T s = 0;
      for (std::int64_t c = 0; c < C; ++c) {
        const T e = std::exp(xv[base + c * P] - mx);
        yv[base + c * P] = e;
        s += e;
      }
      for (std::int64_t c = 0; c < C; ++c) yv[base + c * P] /= s;
    }
  }
  return tape.record("softmax_channels", {x}, y, [x, y, N, C, P]() mutable {
    if (!x.requires_grad()) return;
    auto gx = x.grad_mut();
    auto gy = y.grad();
    auto yv = y.values();
    for (std::int64_t n = 0; n < N; ++n) {
      for (std::int64_t p = 0; p < P; ++p) {
        const std::int64_t base = n * C * P + p;
        T dot = 0;
        for (std::int64_t c = 0; c < C; ++c) dot += yv[base + c * P] * gy[base + c * P];
        for (std::int64_t c = 0; c < C; ++c) {
          const auto i = base + c * P;
          gx[i] += yv[i] * (gy[i] - dot);
        }
      }
    }
  });
}

/// Concatenation along axis 1; every other extent must agree.
template <class T>
Tensor<T> concat_channels(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != b.rank() || a.rank() < 2) {
    throw ShapeError("concat_channels: rank mismatch " + to_string(a.shape()) + " vs " +
                     to_string(b.shape()));
  }
  for (std::size_t i = 0; i < a.rank(); ++i) {
    if (i != 1 && a.dim(i) != b.dim(i)) {
      throw ShapeError("concat_channels: non-channel extent mismatch " + to_string(a.shape()) +
                       " vs " + to_string(b.shape()));
    }
  }
  const std::int64_t N = a.dim(0), Ca = a.dim(1), Cb = b.dim(1);
  const std::int64_t P = a.numel() / (N * Ca);
  Shape s = a.shape();
  s[1] = Ca + Cb;
  Tensor<T> y(s);
  for (std::int64_t n = 0; n < N; ++n) {
    std::copy_n(a.data() + n * Ca * P, Ca * P, y.data() + n * (Ca + Cb) * P);
    std::copy_n(b.data() + n * Cb * P, Cb * P, y.data() + n * (Ca + Cb) * P + Ca * P);
  }
  return tape.record("concat_channels", {a, b}, y, [a, b, y, N, Ca, Cb, P]() mutable {
    auto gy = y.grad();
    for (std::int64_t n = 0; n < N; ++n) {
      const T* src = gy.data() + n * (Ca + Cb) * P;
      if (a.requires_grad()) {
        T* ga = a.grad_mut().data() + n * Ca * P;
        for (std::int64_t i = 0; i < Ca * P; ++i) ga[i] += src[i];
      }
      if (b.requires_grad()) {
        T* gb = b.grad_mut().data() + n * Cb * P;
        for (std::int64_t i = 0; i < Cb * P; ++i) gb[i] += src[Ca * P + i];
      }
    }
  });
}

/// Reinterprets the element order under a new shape (same count).
template <class T>
Tensor<T> reshape(Tape<T>& tape, const Tensor<T>& x, Shape shape) {
  validate_shape(shape);
  if (x2t::numel(shape) != x.numel()) {
    throw ShapeError("reshape: cannot view " + to_string(x.shape()) + " as " + to_string(shape));
  }
  Tensor<T> y(std::move(shape), std::vector<T>(x.values().begin(), x.values().end()));
  return tape.record("reshape", {x}, y, [x, y]() mutable {
    if (!x.requires_grad()) return;
    auto gx = x.grad_mut();
    auto gy = y.grad();
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gy[i];
  });
}

/// N×(rest) view, row-major order preserved.
template <class T>
Tensor<T> flatten(Tape<T>& tape, const Tensor<T>& x) {
  return reshape(tape, x, Shape{x.dim(0), x.numel() / x.dim(0)});
}

/// x: N×F, w: G×F, b: G -> N×G.
template <class T>
Tensor<T> fully_connected(Tape<T>& tape, const Tensor<T>& x, const Tensor<T>& w,
                          const Tensor<T>& b) {
  if (x.rank() != 2 || w.rank() != 2 || b.rank() != 1 || x.dim(1) != w.dim(1) ||
      b.dim(0) != w.dim(0)) {
    throw ShapeError("fully_connected: incompatible shapes " + to_string(x.shape()) + ", " +
                     to_string(w.shape()) + ", " + to_string(b.shape()));
  }
  const std::int64_t N = x.dim(0), F = x.dim(1), G = w.dim(0);
  Tensor<T> y(Shape{N, G});
  for (std::int64_t n = 0; n < N; ++n) std::copy_n(b.data(), G, y.data() + n * G);
  detail::gemm<T>(false, true, N, G, F, x.data(), w.data(), T(1), y.data());
  return tape.record("fully_connected", {x, w, b}, y, [x, w, b, y, N, F, G]() mutable {
    auto gy = y.grad();
    if (x.requires_grad()) {
      detail::gemm<T>(false, false, N, F, G, gy.data(), w.data(), T(1), x.grad_mut().data());
    }
    if (w.requires_grad()) {
      detail::gemm<T>(true, false, G, F, N, gy.data(), x.data(), T(1), w.grad_mut().data());
    }
    if (b.requires_grad()) {
      auto gb = b.grad_mut();
      for (std::int64_t n = 0; n < N; ++n) {
        for (std::int64_t g = 0; g < G; ++g) gb[g] += gy[n * G + g];
      }
    }
  });
}

/// 1×C×S1×...×Sk -> S1×...×Sk×C.
template <class T>
Tensor<T> to_channels_last(Tape<T>& tape, const Tensor<T>& x) {
  if (x.rank() < 3 || x.dim(0) != 1) {
    throw ShapeError("to_channels_last: expected 1×C×spatial, got " + to_string(x.shape()));
  }
  const std::int64_t C = x.dim(1), P = x.numel() / C;
  Shape s(x.shape().begin() + 2, x.shape().end());
  s.push_back(C);
  Tensor<T> y(s);
  for (std::int64_t c = 0; c < C; ++c) {
    for (std::int64_t p = 0; p < P; ++p) y.data()[p * C + c] = x.data()[c * P + p];
  }
  return tape.record("to_channels_last", {x}, y, [x, y, C, P]() mutable {
    if (!x.requires_grad()) return;
    auto gx = x.grad_mut();
    auto gy = y.grad();
    for (std::int64_t c = 0; c < C; ++c) {
      for (std::int64_t p = 0; p < P; ++p) gx[c * P + p] += gy[p * C + c];
    }
  });
}

/// Batch item n of x as a 1×... tensor.
template <class T>
Tensor<T> slice_batch(Tape<T>& tape, const Tensor<T>& x, std::int64_t n) {
  if (n < 0 || n >= x.dim(0)) throw ShapeError("slice_batch: index out of range");
  Shape s = x.shape();
  s[0] = 1;
  const std::int64_t M = x.numel() / x.dim(0);
  Tensor<T> y(s);
  std::copy_n(x.data() + n * M, M, y.data());
  return tape.record("slice_batch", {x}, y, [x, y, n, M]() mutable {
    if (!x.requires_grad()) return;
    T* gx = x.grad_mut().data() + n * M;
    auto gy = y.grad();
    for (std::int64_t i = 0; i < M; ++i) gx[i] += gy[i];
  });
}

struct WindowCenter {
  std::int64_t row = 0;
  std::int64_t col = 0;
};

/// Crops `centers.size()` windows of extent rows×cols from a 1×F×H×W map into
/// an N×F×rows×cols batch. Window n spans rows [row - rows/2, row - rows/2 +
/// rows), likewise for columns; out-of-image area is zero.
template <class T>
Tensor<T> crop_windows(Tape<T>& tape, const Tensor<T>& x, const std::vector<WindowCenter>& centers,
                       std::int64_t rows, std::int64_t cols) {
  if (x.rank() != 4 || x.dim(0) != 1) {
    throw ShapeError("crop_windows: expected 1×F×H×W, got " + to_string(x.shape()));
  }
  if (centers.empty()) throw ShapeError("crop_windows: no windows requested");
  const std::int64_t F = x.dim(1), H = x.dim(2), W = x.dim(3);
  for (const auto& c : centers) {
    if (c.row < 0 || c.row >= H || c.col < 0 || c.col >= W) {
      throw ShapeError("crop_windows: center (" + std::to_string(c.row) + ", " +
                       std::to_string(c.col) + ") outside image");
    }
  }
  const auto N = static_cast<std::int64_t>(centers.size());
  Tensor<T> y(Shape{N, F, rows, cols});
  auto for_each_tap = [=](auto&& fn) {
    for (std::int64_t n = 0; n < N; ++n) {
      const std::int64_t r0 = centers[n].row - rows / 2;
      const std::int64_t c0 = centers[n].col - cols / 2;
      for (std::int64_t f = 0; f < F; ++f) {
        for (std::int64_t r = 0; r < rows; ++r) {
          const std::int64_t sr = r0 + r;
          if (sr < 0 || sr >= H) continue;
          for (std::int64_t c = 0; c < cols; ++c) {
            const std::int64_t sc = c0 + c;
            if (sc < 0 || sc >= W) continue;
            fn(((n * F + f) * rows + r) * cols + c, (f * H + sr) * W + sc);
          }
        }
      }
    }
  };
  T* yv = y.data();
  const T* xv = x.data();
  for_each_tap([&](std::int64_t dst, std::int64_t src) { yv[dst] = xv[src]; });
  return tape.record("crop_windows", {x}, y, [x, y, for_each_tap]() mutable {
    if (!x.requires_grad()) return;
    T* gx = x.grad_mut().data();
    const T* gy = y.grad().data();
    for_each_tap([&](std::int64_t dst, std::int64_t src) { gx[src] += gy[dst]; });
  });
}

template <class T>
Tensor<T> add(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("add: shape mismatch " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  }
  Tensor<T> y(a.shape());
  for (std::int64_t i = 0; i < a.numel(); ++i) y.data()[i] = a.data()[i] + b.data()[i];
  return tape.record("add", {a, b}, y, [a, b, y]() mutable {
    auto gy = y.grad();
    for (const Tensor<T>* in : {&a, &b}) {
      if (!in->requires_grad()) continue;
      auto g = in->grad_mut();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += gy[i];
    }
  });
}

template <class T>
Tensor<T> scale(Tape<T>& tape, const Tensor<T>& x, T factor) {
  Tensor<T> y(x.shape());
  for (std::int64_t i = 0; i < x.numel(); ++i) y.data()[i] = factor * x.data()[i];
  return tape.record("scale", {x}, y, [x, y, factor]() mutable {
    if (!x.requires_grad()) return;
    auto gx = x.grad_mut();
    auto gy = y.grad();
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += factor * gy[i];
  });
}

template <class T>
Tensor<T> sum(Tape<T>& tape, const Tensor<T>& x) {
  T s = 0;
  for (const T v : x.values()) s += v;
  Tensor<T> y = Tensor<T>::scalar(s);
  return tape.record("sum", {x}, y, [x, y]() mutable {
    if (!x.requires_grad()) return;
    const T g = y.grad()[0];
    for (auto& v : x.grad_mut()) v += g;
  });
}

/// <x, weights> with constant weights; the usual probe loss in gradient checks.
template <class T>
Tensor<T> dot(Tape<T>& tape, const Tensor<T>& x, std::vector<T> weights) {
  if (static_cast<std::int64_t>(weights.size()) != x.numel()) {
    throw ShapeError("dot: weight count does not match " + to_string(x.shape()));
  }
  T s = 0;
  for (std::int64_t i = 0; i < x.numel(); ++i) s += x.data()[i] * weights[i];
  Tensor<T> y = Tensor<T>::scalar(s);
  return tape.record("dot", {x}, y, [x, y, w = std::move(weights)]() mutable {
    if (!x.requires_grad()) return;
    const T g = y.grad()[0];
    auto gx = x.grad_mut();
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g * w[i];
  });
}

/// Arithmetic mean of scalar tensors.
template <class T>
Tensor<T> mean_of(Tape<T>& tape, const std::vector<Tensor<T>>& scalars) {
  if (scalars.empty()) throw ShapeError("mean_of: empty list");
  Tensor<T> acc = scalars.front();
  for (std::size_t i = 1; i < scalars.size(); ++i) acc = add(tape, acc, scalars[i]);
  return scale(tape, acc, T(1) / static_cast<T>(scalars.size()));
}

}  // namespace x2t
