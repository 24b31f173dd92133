#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <vector>

#include "x2teeth/arch.hpp"
#include "x2teeth/assembly.hpp"
#include "x2teeth/volume.hpp"

// Simplified panoramic projector: one straight ray per (row, column) along the
// inward arch normal at the column's arc-length station.
namespace x2t {

struct Projection {
  Image<double> radiograph;   // line integrals, intensity·mm
  Image<std::uint8_t> seg;    // rows × cols × 32 multi-hot
  std::vector<ToothBox> boxes;  // ascending FDI code
};

namespace detail {

// Trilinear sample with clamp-to-edge inside the grid's box and zero outside.
inline double sample_trilinear(const IntensityVolume& v, const CavityFrame& f, double z, double y,
                               double x) {
  const double s = f.spacing;
  const double gz = z / s, gy = (y - f.y0) / s, gx = (x - f.x0) / s;
  if (gz < 0 || gy < 0 || gx < 0 || gz > static_cast<double>(f.nz) ||
      gy > static_cast<double>(f.ny) || gx > static_cast<double>(f.nx)) {
    return 0.0;
  }
  auto axis = [](double g, std::int64_t n, std::int64_t& i0, double& w) {
    const double c = std::clamp(g - 0.5, 0.0, static_cast<double>(n - 1));
    i0 = std::min<std::int64_t>(static_cast<std::int64_t>(c), n - 1);
    w = c - static_cast<double>(i0);
    if (i0 == n - 1) w = 0.0;
  };
  std::int64_t iz, iy, ix;
  double wz, wy, wx;
  axis(gz, f.nz, iz, wz);
  axis(gy, f.ny, iy, wy);
  axis(gx, f.nx, ix, wx);
  const std::int64_t jz = std::min(iz + 1, f.nz - 1), jy = std::min(iy + 1, f.ny - 1),
                     jx = std::min(ix + 1, f.nx - 1);
  auto at = [&](std::int64_t a, std::int64_t b, std::int64_t c) {
    return static_cast<double>(v.at(a, b, c));
  };
  const double c00 = at(iz, iy, ix) * (1 - wx) + at(iz, iy, jx) * wx;
  const double c01 = at(iz, jy, ix) * (1 - wx) + at(iz, jy, jx) * wx;
  const double c10 = at(jz, iy, ix) * (1 - wx) + at(jz, iy, jx) * wx;
  const double c11 = at(jz, jy, ix) * (1 - wx) + at(jz, jy, jx) * wx;
  return (c00 * (1 - wy) + c01 * wy) * (1 - wz) + (c10 * (1 - wy) + c11 * wy) * wz;
}

}  // namespace detail

/// Tight boxes of every non-empty category in a rows × cols × 32 mask.
inline std::vector<ToothBox> tight_boxes(const Image<std::uint8_t>& seg) {
  std::vector<ToothBox> out;
  for (int c = 0; c < FdiCode::kCount; ++c) {
    ToothBox b{FdiCode::from_index(c), seg.cols, -1, seg.rows, -1};
    for (std::int64_t r = 0; r < seg.rows; ++r) {
      for (std::int64_t q = 0; q < seg.cols; ++q) {
        if (!seg.at(r, q, c)) continue;
        b.x_min = std::min(b.x_min, q);
        b.x_max = std::max(b.x_max, q);
        b.y_min = std::min(b.y_min, r);
        b.y_max = std::max(b.y_max, r);
      }
    }
    if (b.x_max >= 0) out.push_back(b);
  }
  return out;
}

/// Rays span inward offsets [-ray_depth/2, ray_depth/2] mm and are integrated
/// with the trapezoid rule at (at most) half-voxel steps. `labels`, when
/// given, must share the cavity grid and drives seg/boxes.
inline Projection project_panoramic(const IntensityVolume& cavity, const LabelVolume* labels,
                                    const ArchCurve& curve, double ray_depth, std::int64_t cols,
                                    std::int64_t rows) {
  curve.validate();
  if (cols <= 0 || rows <= 0 || !(ray_depth > 0)) {
    throw std::invalid_argument("project_panoramic: bad output extents or ray depth");
  }
  if (labels && labels->extents != cavity.extents) {
    throw std::invalid_argument("project_panoramic: label and intensity grids differ");
  }
  const CavityFrame f = CavityFrame::of(cavity.extents, cavity.spacing, curve);
  const double v = f.spacing;
  const auto ts = station_params(curve, cols);
  const auto steps = static_cast<std::int64_t>(std::ceil(ray_depth / (0.5 * v)));
  const double h = ray_depth / static_cast<double>(steps);
  const double dz = static_cast<double>(f.nz) * v / static_cast<double>(rows);

  Projection out{Image<double>(rows, cols), Image<std::uint8_t>(rows, cols, FdiCode::kCount), {}};
  const double xmax = f.x0 + static_cast<double>(f.nx) * v, ymax = f.y0 + static_cast<double>(f.ny) * v;
  for (std::int64_t j = 0; j < cols; ++j) {
    const double t = ts[static_cast<std::size_t>(j)];
    const Point2 o = beta_arch(t, curve);
    const Point2 n = arch_inward_normal(t, curve);
    for (const double d : {-0.5 * ray_depth, 0.5 * ray_depth}) {
      const double x = o.x + d * n.x, y = o.y + d * n.y;
      if (x < f.x0 || x > xmax || y < f.y0 || y > ymax) {
        throw std::domain_error("project_panoramic: ray at column " + std::to_string(j) +
                                " leaves the volume");
      }
    }
    for (std::int64_t i = 0; i < rows; ++i) {
      const double z = (static_cast<double>(i) + 0.5) * dz;
      double acc = 0.0;
      for (std::int64_t m = 0; m <= steps; ++m) {
        const double d = -0.5 * ray_depth + static_cast<double>(m) * h;
        const double x = o.x + d * n.x, y = o.y + d * n.y;
        const double w = (m == 0 || m == steps) ? 0.5 : 1.0;
        acc += w * detail::sample_trilinear(cavity, f, z, y, x);
        if (labels) {
          const auto iz = static_cast<std::int64_t>(std::floor(z / v));
          const auto iy = static_cast<std::int64_t>(std::floor((y - f.y0) / v));
          const auto ix = static_cast<std::int64_t>(std::floor((x - f.x0) / v));
          if (labels->contains(iz, iy, ix)) {
            const int code = labels->at(iz, iy, ix);
            if (code != 0) out.seg.at(i, j, FdiCode::from_code(code).index()) = 1;
          }
        }
      }
      out.radiograph.at(i, j) = acc * h;
    }
  }
  out.boxes = tight_boxes(out.seg);
  return out;
}

}  // namespace x2t
