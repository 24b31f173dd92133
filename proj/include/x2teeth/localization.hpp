#pragma once

#include <algorithm>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "x2teeth/volume.hpp"

// Probability map -> per-tooth boxes: threshold, keep the largest
// 4-connected island per category, then take its tight box.
namespace x2t {

struct LocalizeConfig {
  double threshold = 0.5;
  std::int64_t min_area = 9;
};

/// Element-wise probmap > tau.
template <class T>
Image<std::uint8_t> threshold_multihot(const Image<T>& probmap, double tau) {
  if (!(tau > 0.0 && tau < 1.0)) throw std::invalid_argument("threshold_multihot: tau must lie in (0, 1)");
  Image<std::uint8_t> out(probmap.rows, probmap.cols, probmap.channels);
  for (std::size_t i = 0; i < probmap.data.size(); ++i) {
    out.data[i] = static_cast<double>(probmap.data[i]) > tau ? 1 : 0;
  }
  return out;
}

/// Largest 4-connected component of a single-channel mask. Equal sizes go
/// to the component whose first pixel in row-major order comes first.
inline Image<std::uint8_t> largest_island(const Image<std::uint8_t>& mask) {
  if (mask.channels != 1) throw std::invalid_argument("largest_island: expected one channel");
  const std::int64_t H = mask.rows, W = mask.cols;
  std::vector<std::int32_t> comp(static_cast<std::size_t>(H * W), -1);
  std::vector<std::int64_t> stack;
  std::int32_t best = -1, n = 0;
  std::int64_t best_size = 0;
  for (std::int64_t start = 0; start < H * W; ++start) {
    if (!mask.data[static_cast<std::size_t>(start)] || comp[static_cast<std::size_t>(start)] >= 0) continue;
    std::int64_t size = 0;
    stack.assign(1, start);
    comp[static_cast<std::size_t>(start)] = n;
    while (!stack.empty()) {
      const std::int64_t p = stack.back();
      stack.pop_back();
      ++size;
      const std::int64_t r = p / W, c = p % W;
      const std::int64_t nb[4][2] = {{r - 1, c}, {r + 1, c}, {r, c - 1}, {r, c + 1}};
      for (const auto& q : nb) {
        if (q[0] < 0 || q[0] >= H || q[1] < 0 || q[1] >= W) continue;
        const auto k = static_cast<std::size_t>(q[0] * W + q[1]);
        if (mask.data[k] && comp[k] < 0) {
          comp[k] = n;
          stack.push_back(static_cast<std::int64_t>(k));
        }
      }
    }
    if (size > best_size) {  // strict: earlier component wins ties
      best_size = size;
      best = n;
    }
    ++n;
  }
  Image<std::uint8_t> out(H, W);
  if (best < 0) return out;
  for (std::size_t i = 0; i < comp.size(); ++i) out.data[i] = comp[i] == best ? 1 : 0;
  return out;
}

inline Image<std::uint8_t> channel_of(const Image<std::uint8_t>& m, std::int64_t ch) {
  Image<std::uint8_t> out(m.rows, m.cols);
  for (std::int64_t i = 0; i < m.rows * m.cols; ++i) {
    out.data[static_cast<std::size_t>(i)] = m.data[static_cast<std::size_t>(i * m.channels + ch)];
  }
  return out;
}

/// Per category: threshold, largest island, box when its area reaches min_area.
/// Returns boxes in ascending FDI code order; `islands`, when given, receives
/// the denoised multi-hot mask.
template <class T>
std::vector<ToothBox> localize_teeth(const Image<T>& probmap, const LocalizeConfig& cfg = {},
                                     Image<std::uint8_t>* islands = nullptr) {
  if (probmap.channels != FdiCode::kCount) throw std::invalid_argument("localize_teeth: expected 32 channels");
  if (cfg.min_area < 1) throw std::invalid_argument("localize_teeth: min_area must be >= 1");
  const auto hot = threshold_multihot(probmap, cfg.threshold);
  if (islands) *islands = Image<std::uint8_t>(probmap.rows, probmap.cols, probmap.channels);
  std::vector<ToothBox> boxes;
  for (int c = 0; c < FdiCode::kCount; ++c) {
    const auto island = largest_island(channel_of(hot, c));
    ToothBox b{FdiCode::from_index(c), probmap.cols, -1, probmap.rows, -1};
    std::int64_t area = 0;
    for (std::int64_t r = 0; r < island.rows; ++r) {
      for (std::int64_t q = 0; q < island.cols; ++q) {
        if (!island.at(r, q)) continue;
        ++area;
        b.x_min = std::min(b.x_min, q);
        b.x_max = std::max(b.x_max, q);
        b.y_min = std::min(b.y_min, r);
        b.y_max = std::max(b.y_max, r);
      }
    }
    if (area == 0 || area < cfg.min_area) continue;
    boxes.push_back(b);
    if (islands) {
      for (std::int64_t i = 0; i < island.rows * island.cols; ++i) {
        islands->data[static_cast<std::size_t>(i * FdiCode::kCount + c)] = island.data[static_cast<std::size_t>(i)];
      }
    }
  }
  return boxes;
}

}  // namespace x2t
