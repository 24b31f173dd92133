#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "x2teeth/ops.hpp"
#include "x2teeth/phantom.hpp"
#include "x2teeth/random.hpp"
#include "x2teeth/volume.hpp"

// Choosing tooth patches for ReconNet and building their occupancy targets.
namespace x2t {

class NoTeethDetected : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct PatchSpec {
  FdiCode tooth;
  std::int64_t center_row = 0, center_col = 0;
  std::int64_t rows = 0, cols = 0;
  // Box centre the window was derived from; center - anchor is the jitter.
  std::int64_t anchor_row = 0, anchor_col = 0;
  friend bool operator==(const PatchSpec&, const PatchSpec&) = default;
};

enum class PatchPolicy { gt_jittered, predicted };

struct PatchSampling {
  std::int64_t count = 10;
  double jitter = 0.1;  // fraction of the patch extent, each direction
};

/// Picks `count` boxes (distinct while enough exist, with replacement
/// otherwise) and centres a window on each, jittered by up to ±jitter·extent
/// and clamped into the image. For the predicted policy `boxes` are the
/// localisation output and no jitter is applied.
inline std::vector<PatchSpec> sample_patches(const std::vector<ToothBox>& boxes, std::int64_t image_rows,
                                             std::int64_t image_cols, std::int64_t patch_rows,
                                             std::int64_t patch_cols, PatchPolicy policy,
                                             std::uint64_t seed, const PatchSampling& opt = {}) {
  if (boxes.empty()) {
    if (policy == PatchPolicy::predicted) throw NoTeethDetected("sample_patches: no detected teeth");
    throw std::invalid_argument("sample_patches: sample has no teeth");
  }
  if (opt.count < 1 || !(opt.jitter >= 0 && opt.jitter < 0.5)) throw std::invalid_argument("sample_patches: options");
  Rng rng(derive_seed(seed, 0x9a7c));
  const auto n = static_cast<std::int64_t>(boxes.size());
  std::vector<std::int64_t> pick;
  if (n >= opt.count) {
    std::vector<std::int64_t> idx(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i) idx[static_cast<std::size_t>(i)] = i;
    for (std::int64_t i = 0; i < opt.count; ++i) {
      std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(rng.integer(i, n - 1))]);
      pick.push_back(idx[static_cast<std::size_t>(i)]);
    }
  } else {
    for (std::int64_t i = 0; i < opt.count; ++i) pick.push_back(rng.integer(0, n - 1));
  }
  const double jr = policy == PatchPolicy::gt_jittered ? opt.jitter * static_cast<double>(patch_rows) : 0.0;
  const double jc = policy == PatchPolicy::gt_jittered ? opt.jitter * static_cast<double>(patch_cols) : 0.0;
  std::vector<PatchSpec> out;
  for (const auto i : pick) {
    const auto& b = boxes[static_cast<std::size_t>(i)];
    PatchSpec s{b.tooth, 0, 0, patch_rows, patch_cols, b.center_row(), b.center_col()};
    const auto dr = static_cast<std::int64_t>(std::lround(rng.uniform(-jr, jr)));
    const auto dc = static_cast<std::int64_t>(std::lround(rng.uniform(-jc, jc)));
    s.center_row = std::clamp<std::int64_t>(s.anchor_row + dr, 0, image_rows - 1);
    s.center_col = std::clamp<std::int64_t>(s.anchor_col + dc, 0, image_cols - 1);
    out.push_back(s);
  }
  return out;
}

inline std::vector<WindowCenter> window_centers(const std::vector<PatchSpec>& specs) {
  std::vector<WindowCenter> out;
  for (const auto& s : specs) out.push_back({s.center_row, s.center_col});
  return out;
}

/// Ground-truth tooth patch re-expressed in the window of `spec`: the tooth
/// volume (cropped at its box centre) shifted by the window's jitter.
inline LabelVolume shifted_tooth(const LabelVolume& tooth, const PatchSpec& spec) {
  const auto [Hp, Wp, Dp] = tooth.extents;
  const std::int64_t dr = spec.center_row - spec.anchor_row, dc = spec.center_col - spec.anchor_col;
  LabelVolume out(tooth.extents, tooth.spacing);
  for (std::int64_t r = 0; r < Hp; ++r) {
    for (std::int64_t c = 0; c < Wp; ++c) {
      if (!tooth.contains(r + dr, c + dc, 0)) continue;
      for (std::int64_t k = 0; k < Dp; ++k) out.at(r, c, k) = tooth.at(r + dr, c + dc, k);
    }
  }
  return out;
}

/// Hp×Wp×Dp×2 one-hot target (channel 1 = occupied).
template <class T>
Tensor<T> occupancy_target(const LabelVolume& mask) {
  const auto [Hp, Wp, Dp] = mask.extents;
  Tensor<T> t(Shape{Hp, Wp, Dp, 2});
  for (std::size_t i = 0; i < mask.data.size(); ++i) t.data()[2 * i + (mask.data[i] ? 1 : 0)] = T(1);
  return t;
}

}  // namespace x2t
