#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "x2teeth/tensor.hpp"

namespace x2t {

/// Additive smoothing applied to numerator and denominator of every dice ratio.
inline constexpr double kDiceSmoothing = 1.0;

namespace detail {

template <class T>
void require_binary(const Tensor<T>& gt, const char* op) {
  for (const T v : gt.values()) {
    if (v != T(0) && v != T(1)) throw std::invalid_argument(std::string(op) + ": ground truth is not binary");
  }
}

}  // namespace detail

/// Multi-label dice loss over a channels-last map H×W×C:
///   1 - (1/C) * sum_c (2 * sum pred*gt + eps) / (sum pred + sum gt + eps)
/// Categories are independent, so a pixel may be hot in several of them.
template <class T>
Tensor<T> dice_loss_multilabel(Tape<T>& tape, const Tensor<T>& pred, const Tensor<T>& gt,
                               T eps = T(kDiceSmoothing)) {
  if (pred.shape() != gt.shape()) {
    throw ShapeError("dice_loss_multilabel: shape mismatch " + to_string(pred.shape()) + " vs " +
                     to_string(gt.shape()));
  }
  detail::require_binary(gt, "dice_loss_multilabel");
  const std::int64_t C = pred.shape().back();
  const std::int64_t P = pred.numel() / C;
  std::vector<T> inter(C, T(0)), denom(C, T(0));
  const T* p = pred.data();
  const T* g = gt.data();
  for (std::int64_t i = 0; i < P; ++i) {
    for (std::int64_t c = 0; c < C; ++c) {
      const auto k = i * C + c;
      inter[c] += p[k] * g[k];
      denom[c] += p[k] + g[k];
    }
  }
  T mean_ratio = 0;
  for (std::int64_t c = 0; c < C; ++c) mean_ratio += (T(2) * inter[c] + eps) / (denom[c] + eps);
  mean_ratio /= static_cast<T>(C);
  Tensor<T> loss = Tensor<T>::scalar(T(1) - mean_ratio);
  return tape.record("dice_loss_multilabel", {pred}, loss,
                     [pred, gt, loss, inter, denom, eps, C, P]() mutable {
    if (!pred.requires_grad()) return;
    const T up = loss.grad()[0];
    auto gp = pred.grad_mut();
    const T* g = gt.data();
    std::vector<T> a(C), b(C);
    for (std::int64_t c = 0; c < C; ++c) {
      const T d = denom[c] + eps;
      // d ratio / d pred = (2 g d - (2I + eps)) / d^2
      a[c] = T(2) / d;
      b[c] = (T(2) * inter[c] + eps) / (d * d);
    }
    const T k = -up / static_cast<T>(C);
    for (std::int64_t i = 0; i < P; ++i) {
      for (std::int64_t c = 0; c < C; ++c) {
        const auto idx = i * C + c;
        gp[idx] += k * (a[c] * g[idx] - b[c]);
      }
    }
  });
}

/// Volumetric dice loss over a channels-last two-way distribution
/// (...×2, channels summing to 1 per voxel) against a one-hot target:
///   1 - (2 * sum_c sum pred*gt + eps) / (sum_c sum (pred + gt) + eps)
template <class T>
Tensor<T> dice_loss_3d(Tape<T>& tape, const Tensor<T>& pred, const Tensor<T>& gt,
                       T eps = T(kDiceSmoothing)) {
  if (pred.shape() != gt.shape()) {
    throw ShapeError("dice_loss_3d: shape mismatch " + to_string(pred.shape()) + " vs " +
                     to_string(gt.shape()));
  }
  if (pred.shape().back() != 2) throw ShapeError("dice_loss_3d: last axis must have extent 2");
  detail::require_binary(gt, "dice_loss_3d");
  const std::int64_t V = pred.numel() / 2;
  const T* p = pred.data();
  const T* g = gt.data();
  T inter = 0, denom = 0;
  for (std::int64_t v = 0; v < V; ++v) {
    const T ps = p[2 * v] + p[2 * v + 1];
    if (std::abs(ps - T(1)) > T(1e-5)) {
      throw std::invalid_argument("dice_loss_3d: channel probabilities do not sum to 1");
    }
    if (g[2 * v] + g[2 * v + 1] != T(1)) {
      throw std::invalid_argument("dice_loss_3d: ground truth is not one-hot");
    }
    for (int c = 0; c < 2; ++c) {
      inter += p[2 * v + c] * g[2 * v + c];
      denom += p[2 * v + c] + g[2 * v + c];
    }
  }
  const T d = denom + eps;
  Tensor<T> loss = Tensor<T>::scalar(T(1) - (T(2) * inter + eps) / d);
  return tape.record("dice_loss_3d", {pred}, loss, [pred, gt, loss, inter, d, eps]() mutable {
    if (!pred.requires_grad()) return;
    const T up = loss.grad()[0];
    const T a = T(2) / d;
    const T b = (T(2) * inter + eps) / (d * d);
    auto gp = pred.grad_mut();
    const T* g = gt.data();
    for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += -up * (a * g[i] - b);
  });
}

}  // namespace x2t
