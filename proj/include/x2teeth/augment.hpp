#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

#include "x2teeth/phantom.hpp"
#include "x2teeth/projection.hpp"
#include "x2teeth/random.hpp"

// Radiograph augmentation: shift, then scale, then rotation about the image
// centre, then additive Gaussian noise. seg_gt follows the same geometry with
// nearest-neighbour sampling and boxes are recomputed from it.
namespace x2t {

struct AugmentConfig {
  std::int64_t max_shift_px = 4;
  double max_scale_delta = 0.05;  // scale drawn from [1 - d, 1 + d]
  double max_rotation_deg = 3.0;
  double noise_sigma = 0.01;

  bool is_identity() const {
    return max_shift_px == 0 && max_scale_delta == 0 && max_rotation_deg == 0 && noise_sigma == 0;
  }
  friend bool operator==(const AugmentConfig&, const AugmentConfig&) = default;
};

struct AugmentParams {
  std::int64_t shift_rows = 0;
  std::int64_t shift_cols = 0;
  double scale = 1.0;
  double rotation_deg = 0.0;
  double noise_sigma = 0.0;
  std::uint64_t noise_seed = 0;
};

inline AugmentParams draw_augment(const AugmentConfig& cfg, std::uint64_t seed) {
  Rng rng(derive_seed(seed, 0xa06));
  AugmentParams p;
  p.shift_rows = rng.integer(-cfg.max_shift_px, cfg.max_shift_px);
  p.shift_cols = rng.integer(-cfg.max_shift_px, cfg.max_shift_px);
  p.scale = 1.0 + rng.uniform(-cfg.max_scale_delta, cfg.max_scale_delta);
  p.rotation_deg = rng.uniform(-cfg.max_rotation_deg, cfg.max_rotation_deg);
  p.noise_sigma = cfg.noise_sigma;
  p.noise_seed = rng.bits();
  return p;
}

inline Sample apply_augment(const Sample& in, const AugmentParams& p) {
  Sample out = in;
  const std::int64_t R = in.radiograph.rows, C = in.radiograph.cols;
  const double cr = 0.5 * static_cast<double>(R - 1), cc = 0.5 * static_cast<double>(C - 1);
  const double th = p.rotation_deg * std::numbers::pi / 180.0;
  const double ct = std::cos(th), st = std::sin(th);
  const bool geometric = p.shift_rows != 0 || p.shift_cols != 0 || p.scale != 1.0 || p.rotation_deg != 0.0;

  if (geometric) {
    // Forward map q = rot(scale·(x + shift - c)) + c; sample the inverse.
    auto source = [&](double r, double c, double& sr, double& sc) {
      const double yr = r - cr, yc = c - cc;
      const double ur = (ct * yr + st * yc) / p.scale, uc = (-st * yr + ct * yc) / p.scale;
      sr = ur + cr - static_cast<double>(p.shift_rows);
      sc = uc + cc - static_cast<double>(p.shift_cols);
    };
    for (std::int64_t r = 0; r < R; ++r) {
      for (std::int64_t c = 0; c < C; ++c) {
        double sr, sc;
        source(static_cast<double>(r), static_cast<double>(c), sr, sc);
        // bilinear for intensities, zero outside the image
        const auto r0 = static_cast<std::int64_t>(std::floor(sr));
        const auto c0 = static_cast<std::int64_t>(std::floor(sc));
        const double wr = sr - static_cast<double>(r0), wc = sc - static_cast<double>(c0);
        double acc = 0.0;
        for (int a = 0; a < 2; ++a) {
          for (int b = 0; b < 2; ++b) {
            const double w = (a ? wr : 1.0 - wr) * (b ? wc : 1.0 - wc);
            if (w == 0.0 || !in.radiograph.contains(r0 + a, c0 + b)) continue;
            acc += w * static_cast<double>(in.radiograph.at(r0 + a, c0 + b));
          }
        }
        out.radiograph.at(r, c) = static_cast<float>(acc);
        const auto nr = static_cast<std::int64_t>(std::floor(sr + 0.5));
        const auto nc = static_cast<std::int64_t>(std::floor(sc + 0.5));
        for (std::int64_t k = 0; k < in.seg_gt.channels; ++k) {
          out.seg_gt.at(r, c, k) = in.seg_gt.contains(nr, nc) ? in.seg_gt.at(nr, nc, k) : 0;
        }
      }
    }
    out.boxes_gt = tight_boxes(out.seg_gt);
  }
  if (p.noise_sigma > 0) {
    Rng rng(p.noise_seed);
    for (auto& v : out.radiograph.data) v = static_cast<float>(v + p.noise_sigma * rng.normal());
  }
  return out;
}

inline Sample augment(const Sample& in, const AugmentConfig& cfg, std::uint64_t seed) {
  if (cfg.is_identity()) return in;
  return apply_augment(in, draw_augment(cfg, seed));
}

}  // namespace x2t
