#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "x2teeth/arch.hpp"
#include "x2teeth/volume.hpp"

// Flat (unrolled) assembly of per-tooth volumes and the bend that maps it
// back onto the arch.
//
// Flat grid axes: (row, arc column, depth). Column j covers arc lengths
// [j, j+1)·L/cols. Depth index k covers inward offsets
// [(k - depth/2)·v, (k + 1 - depth/2)·v), positive toward the mouth interior.
namespace x2t {

class FoldOverError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Axis-aligned cavity grid around an arch: (z, y, x), voxel centers at
/// origin + (i + 0.5)·spacing. The arch sits in the middle of the xy footprint.
struct CavityFrame {
  double spacing = 1.0;
  std::int64_t nz = 0, ny = 0, nx = 0;
  double x0 = 0.0, y0 = 0.0;

  std::array<std::int64_t, 3> extents() const { return {nz, ny, nx}; }
  double x_center(std::int64_t ix) const { return x0 + (static_cast<double>(ix) + 0.5) * spacing; }
  double y_center(std::int64_t iy) const { return y0 + (static_cast<double>(iy) + 0.5) * spacing; }

  /// `flat_spacing` is the flat grid's voxel size; the cavity is sampled
  /// `oversample` times finer along every axis.
  static CavityFrame around(const ArchCurve& c, double flat_spacing, std::int64_t rows,
                            std::int64_t depth_voxels, int oversample = 1) {
    c.validate();
    if (oversample < 1) throw std::invalid_argument("cavity oversample must be >= 1");
    CavityFrame f;
    const double spacing = flat_spacing / oversample;
    f.spacing = spacing;
    const double margin = (static_cast<double>(depth_voxels) / 2.0 + 2.0) * flat_spacing;
    f.nz = rows * oversample;
    f.nx = static_cast<std::int64_t>(std::ceil((c.W + 2.0 * margin) / spacing));
    f.ny = static_cast<std::int64_t>(std::ceil((c.D + 2.0 * margin) / spacing));
    f.x0 = -0.5 * static_cast<double>(f.nx) * spacing;
    f.y0 = 0.5 * c.D - 0.5 * static_cast<double>(f.ny) * spacing;
    return f;
  }

  /// Frame of an existing cavity volume built with around().
  static CavityFrame of(const std::array<std::int64_t, 3>& ext, double spacing, const ArchCurve& c) {
    CavityFrame f;
    f.spacing = spacing;
    f.nz = ext[0];
    f.ny = ext[1];
    f.nx = ext[2];
    f.x0 = -0.5 * static_cast<double>(f.nx) * spacing;
    f.y0 = 0.5 * c.D - 0.5 * static_cast<double>(f.ny) * spacing;
    return f;
  }
};

/// For every (y, x) cavity column, the flat (column, depth) cell it samples,
/// or -1 when the column lies outside the unrolled band.
struct BendMap {
  CavityFrame frame;
  double flat_spacing = 1.0;
  std::int64_t flat_rows = 0, flat_cols = 0, flat_depth = 0;
  std::vector<std::int64_t> cell;  // ny·nx entries, value j·depth + k
  std::vector<std::int64_t> row;   // nz entries, flat row per cavity slice

  static BendMap build(const ArchCurve& curve, const CavityFrame& frame, double flat_spacing,
                       std::int64_t flat_rows, std::int64_t flat_cols, std::int64_t flat_depth) {
    BendMap m;
    m.frame = frame;
    m.flat_spacing = flat_spacing;
    m.flat_rows = flat_rows;
    m.flat_cols = flat_cols;
    m.flat_depth = flat_depth;
    m.cell.assign(static_cast<std::size_t>(frame.ny * frame.nx), -1);
    for (std::int64_t z = 0; z < frame.nz; ++z) {
      const auto r = static_cast<std::int64_t>(std::floor((static_cast<double>(z) + 0.5) * frame.spacing / flat_spacing));
      m.row.push_back(r < flat_rows ? r : -1);
    }
    const double v = flat_spacing;
    const ArchPolyline poly(curve, frame.spacing / 4.0);
    const double ds = poly.length() / static_cast<double>(flat_cols);
    const double reach = (static_cast<double>(flat_depth) / 2.0 + 1.0) * v;
    for (std::int64_t iy = 0; iy < frame.ny; ++iy) {
      for (std::int64_t ix = 0; ix < frame.nx; ++ix) {
        const Point2 p{frame.x_center(ix), frame.y_center(iy)};
        const auto nr = poly.nearest(p);
        if (!nr.interior || std::abs(nr.d) > reach) continue;
        const auto j = std::min(flat_cols - 1, static_cast<std::int64_t>(std::floor(nr.s / ds)));
        const auto k = static_cast<std::int64_t>(std::floor(static_cast<double>(flat_depth) / 2.0 + nr.d / v));
        if (j < 0 || k < 0 || k >= flat_depth) continue;
        m.cell[static_cast<std::size_t>(iy * frame.nx + ix)] = j * flat_depth + k;
      }
    }
    return m;
  }
};

/// Throws FoldOverError if any occupied flat column reaches deeper inward
/// than the arch's radius of curvature at that station.
template <class T>
void check_fold_over(const Volume<T>& flat, const ArchCurve& curve) {
  const auto [R, C, Dp] = flat.extents;
  const double v = flat.spacing;
  std::vector<double> ts;
  for (std::int64_t j = 0; j < C; ++j) {
    std::int64_t kmax = -1;
    for (std::int64_t r = 0; r < R; ++r) {
      for (std::int64_t k = Dp - 1; k > kmax; --k) {
        if (flat.at(r, j, k) != T{}) {
          kmax = k;
          break;
        }
      }
    }
    if (kmax < 0) continue;
    const double depth = (static_cast<double>(kmax + 1) - static_cast<double>(Dp) / 2.0) * v;
    if (depth <= 0.0) continue;
    if (ts.empty()) ts = station_params(curve, C);
    const double radius = curvature_radius(ts[static_cast<std::size_t>(j)], curve);
    if (radius < depth) {
      throw FoldOverError("bend: curvature radius " + std::to_string(radius) + " mm at column " +
                          std::to_string(j) + " is smaller than occupied depth " +
                          std::to_string(depth) + " mm");
    }
  }
}

/// Nearest-neighbour inverse mapping of a flat grid onto the arch. The flat
/// arc axis is stretched so its full width spans arc_length(0, 1).
template <class T>
Volume<T> bend(const Volume<T>& flat, const ArchCurve& curve, const BendMap& map) {
  check_fold_over(flat, curve);
  const auto [R, C, Dp] = flat.extents;
  if (map.flat_rows != R || map.flat_cols != C || map.flat_depth != Dp ||
      map.flat_spacing != flat.spacing) {
    throw std::invalid_argument("bend: map does not match flat grid");
  }
  const auto& f = map.frame;
  Volume<T> out(f.extents(), f.spacing);
  const std::int64_t plane = f.ny * f.nx;
  for (std::int64_t c = 0; c < plane; ++c) {
    const std::int64_t cell = map.cell[static_cast<std::size_t>(c)];
    if (cell < 0) continue;
    const std::int64_t j = cell / Dp, k = cell % Dp;
    for (std::int64_t z = 0; z < f.nz; ++z) {
      const std::int64_t r = map.row[static_cast<std::size_t>(z)];
      if (r >= 0) out.data[static_cast<std::size_t>(z * plane + c)] = flat.at(r, j, k);
    }
  }
  return out;
}

template <class T>
Volume<T> bend(const Volume<T>& flat, const ArchCurve& curve, int oversample = 1) {
  const auto [R, C, Dp] = flat.extents;
  const auto frame = CavityFrame::around(curve, flat.spacing, R, Dp, oversample);
  return bend(flat, curve, BendMap::build(curve, frame, flat.spacing, R, C, Dp));
}

/// Per-tooth occupancy probabilities in the patch frame (Hp × Wp × Dp).
using ToothProbability = Volume<float>;

struct FlatAssembly {
  LabelVolume grid;  // rows × cols × depth
  std::map<int, std::array<std::int64_t, 3>> placements;  // code -> patch origin (row, col, depth)
};

/// Places every tooth's patch so its (row, column) window is centred on the
/// box centre, using the same window convention as patch cropping. Voxels with
/// probability >= 0.5 are occupied; overlaps go to the higher probability,
/// then to the lower FDI code.
inline FlatAssembly assemble_flat(const std::map<int, ToothProbability>& teeth,
                                  const std::vector<ToothBox>& boxes, std::int64_t rows,
                                  std::int64_t cols, std::int64_t depth, double spacing) {
  FlatAssembly out;
  out.grid = LabelVolume({rows, cols, depth}, spacing);
  Volume<float> best({rows, cols, depth}, spacing, -1.0f);
  std::vector<ToothBox> order = boxes;
  std::sort(order.begin(), order.end(),
            [](const ToothBox& a, const ToothBox& b) { return a.tooth.code() < b.tooth.code(); });
  for (std::size_t i = 1; i < order.size(); ++i) {
    if (order[i].tooth == order[i - 1].tooth) {
      throw std::invalid_argument("assemble_flat: duplicate box for tooth " +
                                  std::to_string(order[i].tooth.code()));
    }
  }
  for (const auto& box : order) {
    const int code = box.tooth.code();
    auto it = teeth.find(code);
    if (it == teeth.end()) {
      throw std::invalid_argument("assemble_flat: no volume for tooth " + std::to_string(code));
    }
    const auto& vol = it->second;
    const auto [Hp, Wp, Dv] = vol.extents;
    if (Dv > depth) throw std::invalid_argument("assemble_flat: tooth volume deeper than flat grid");
    const std::int64_t r0 = box.center_row() - Hp / 2;
    const std::int64_t c0 = box.center_col() - Wp / 2;
    const std::int64_t k0 = depth / 2 - Dv / 2;
    out.placements[code] = {r0, c0, k0};
    for (std::int64_t r = 0; r < Hp; ++r) {
      for (std::int64_t c = 0; c < Wp; ++c) {
        for (std::int64_t k = 0; k < Dv; ++k) {
          const float p = vol.at(r, c, k);
          if (!(p >= 0.5f)) continue;
          const std::int64_t gr = r0 + r, gc = c0 + c, gk = k0 + k;
          if (!out.grid.contains(gr, gc, gk)) continue;
          // Boxes are visited in ascending code order, so a strict > keeps the
          // lower code on ties.
          float& b = best.at(gr, gc, gk);
          if (p > b) {
            b = p;
            out.grid.at(gr, gc, gk) = static_cast<std::uint8_t>(code);
          }
        }
      }
    }
  }
  return out;
}

}  // namespace x2t
