#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "x2teeth/tensor.hpp"

namespace x2t {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <class T>
struct AdamState {
  AdamConfig config;
  std::uint64_t step = 0;
  std::vector<std::vector<T>> m;  // first moments, one per parameter
  std::vector<std::vector<T>> v;  // second moments, element-wise >= 0
};

/// One bias-corrected Adam update over `params`, using their accumulated
/// gradients (a parameter without a gradient is treated as zero-gradient).
/// Moments are created lazily on the first call.
template <class T>
void adam_step(std::span<Tensor<T>> params, AdamState<T>& state) {
  if (state.m.empty() && state.v.empty()) {
    for (const auto& p : params) {
      state.m.emplace_back(static_cast<std::size_t>(p.numel()), T(0));
      state.v.emplace_back(static_cast<std::size_t>(p.numel()), T(0));
    }
  }
  if (state.m.size() != params.size() || state.v.size() != params.size()) {
    throw ShapeError("adam_step: state tracks " + std::to_string(state.m.size()) +
                     " parameters, got " + std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (state.m[i].size() != static_cast<std::size_t>(params[i].numel()) ||
        state.v[i].size() != state.m[i].size()) {
      throw ShapeError("adam_step: moment size mismatch for parameter " + std::to_string(i));
    }
  }
  ++state.step;
  const auto& c = state.config;
  const T b1 = static_cast<T>(c.beta1), b2 = static_cast<T>(c.beta2);
  const T lr = static_cast<T>(c.lr), eps = static_cast<T>(c.eps);
  const T corr1 = T(1) - static_cast<T>(std::pow(c.beta1, static_cast<double>(state.step)));
  const T corr2 = T(1) - static_cast<T>(std::pow(c.beta2, static_cast<double>(state.step)));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i];
    if (!p.has_grad()) {
      // Zero gradient still decays the moments.
      for (auto& m : state.m[i]) m *= b1;
      for (auto& v : state.v[i]) v *= b2;
    }
    auto w = p.values();
    auto& m = state.m[i];
    auto& v = state.v[i];
    const bool has = p.has_grad();
    auto g = p.grad();
    for (std::size_t k = 0; k < w.size(); ++k) {
      if (has) {
        m[k] = b1 * m[k] + (T(1) - b1) * g[k];
        v[k] = b2 * v[k] + (T(1) - b2) * g[k] * g[k];
      }
      const T mhat = m[k] / corr1;
      const T vhat = v[k] / corr2;
      w[k] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
  }
}

}  // namespace x2t
