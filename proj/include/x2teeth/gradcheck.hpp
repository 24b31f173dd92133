#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "x2teeth/tensor.hpp"

namespace x2t {

struct GradCheckOptions {
  double eps = 1e-4;
  // Elements probed per input; 0 probes every element.
  std::size_t max_per_input = 0;
  std::uint64_t seed = 0;
  // Lower bound on the relative-error denominator, so that gradients which
  // are zero up to rounding compare in absolute terms.
  double denom_floor = 1e-6;
};

struct GradCheckReport {
  double max_rel_error = 0;
  double max_abs_error = 0;
  std::size_t checked = 0;
  std::string worst;
};

/// Compares reverse-mode gradients of `loss_of` against central finite
/// differences. `loss_of(tape)` must rebuild the scalar loss from the current
/// values of `inputs` on the given tape.
template <class F>
GradCheckReport check_gradients(F&& loss_of, std::vector<Tensor<double>> inputs,
                                const GradCheckOptions& opt = {}) {
  for (auto& in : inputs) {
    in.set_requires_grad(true);
    in.zero_grad();
  }
  {
    Tape<double> tape;
    tape.backward(loss_of(tape));
  }
  std::vector<std::vector<double>> analytic;
  for (auto& in : inputs) {
    if (in.has_grad()) {
      analytic.emplace_back(in.grad().begin(), in.grad().end());
    } else {
      analytic.emplace_back(static_cast<std::size_t>(in.numel()), 0.0);
    }
  }
  for (auto& in : inputs) in.set_requires_grad(false);
  auto eval = [&] {
    Tape<double> tape;
    return loss_of(tape).item();
  };

  std::mt19937_64 rng(opt.seed);
  GradCheckReport report;
  for (std::size_t t = 0; t < inputs.size(); ++t) {
    auto& in = inputs[t];
    std::vector<std::size_t> idx(static_cast<std::size_t>(in.numel()));
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    if (opt.max_per_input > 0 && idx.size() > opt.max_per_input) {
      std::shuffle(idx.begin(), idx.end(), rng);
      idx.resize(opt.max_per_input);
      std::sort(idx.begin(), idx.end());
    }
    for (std::size_t k : idx) {
      double& v = in.values()[k];
      const double saved = v;
      v = saved + opt.eps;
      const double up = eval();
      v = saved - opt.eps;
      const double down = eval();
      v = saved;
      const double numeric = (up - down) / (2 * opt.eps);
      const double a = analytic[t][k];
      const double abs_err = std::abs(a - numeric);
      const double rel = abs_err / std::max({std::abs(a), std::abs(numeric), opt.denom_floor});
      ++report.checked;
      report.max_abs_error = std::max(report.max_abs_error, abs_err);
      if (rel > report.max_rel_error) {
        report.max_rel_error = rel;
        report.worst = "input " + std::to_string(t) + " element " + std::to_string(k) +
                       ": analytic " + std::to_string(a) + " numeric " + std::to_string(numeric);
      }
    }
  }
  for (auto& in : inputs) {
    in.set_requires_grad(true);
    in.zero_grad();
  }
  return report;
}

}  // namespace x2t
