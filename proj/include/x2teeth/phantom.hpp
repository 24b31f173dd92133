#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

#include "x2teeth/arch.hpp"
#include "x2teeth/assembly.hpp"
#include "x2teeth/projection.hpp"
#include "x2teeth/random.hpp"
#include "x2teeth/volume.hpp"

// Procedural dental phantoms. Teeth are rasterised in the flat (unrolled)
// frame, one per arc station, then bent onto a beta arch and projected.
namespace x2t {

class PlacementError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Range {
  double lo = 0.0;
  double hi = 0.0;
  friend bool operator==(const Range&, const Range&) = default;
};

struct TissueLevels {
  double enamel = 1.0;
  double dentin = 0.7;
  double pulp = 0.3;
  double bone = 0.45;
  friend bool operator==(const TissueLevels&, const TissueLevels&) = default;
};

struct PhantomConfig {
  int min_teeth = 28;
  int max_teeth = 32;
  Range arch_depth_mm{22.0, 28.0};
  Range arch_width_mm{44.0, 52.0};
  double arch_exponent = 0.8;
  std::int64_t rows = 96;
  std::int64_t cols = 192;
  std::array<std::int64_t, 3> patch{24, 12, 12};  // Hp, Wp, Dp
  double size_jitter = 0.06;      // relative, symmetric
  double rotation_jitter_deg = 4.0;
  double overbite_shift = 2.0;    // depth voxels at the incisor tips
  TissueLevels tissue;
  int cavity_oversample = 2;  // cavity voxels per flat voxel along each axis
  int max_retries = 25;

  void validate() const {
    auto bad = [](const std::string& m) { throw std::invalid_argument("phantom config: " + m); };
    if (min_teeth < 28 || max_teeth > 32 || min_teeth > max_teeth) bad("tooth count must lie in [28, 32]");
    if (!(arch_depth_mm.lo >= 0 && arch_depth_mm.lo <= arch_depth_mm.hi)) bad("arch depth range");
    if (!(arch_width_mm.lo > 0 && arch_width_mm.lo <= arch_width_mm.hi)) bad("arch width range");
    if (!(arch_exponent > 0)) bad("arch exponent");
    if (cols % 16 != 0 || cols < 16 * 8) bad("cols must be a multiple of 16, at least 128");
    if (rows < 64 || rows % 2 != 0) bad("rows must be even and at least 64");
    if (patch[0] < 20 || patch[1] < cols / 16 || patch[2] < 10 || patch[2] % 2 != 0) bad("patch extents");
    if (!(size_jitter >= 0 && size_jitter < 0.2)) bad("size jitter");
    if (!(rotation_jitter_deg >= 0 && rotation_jitter_deg <= 15)) bad("rotation jitter");
    if (!(overbite_shift >= 0)) bad("overbite shift");
    const auto& t = tissue;
    if (!(t.enamel > t.dentin && t.dentin > std::max(t.pulp, t.bone) && std::min(t.pulp, t.bone) > 0)) {
      bad("tissue levels must satisfy enamel > dentin > pulp, bone > air = 0");
    }
    if (max_retries < 1) bad("max_retries");
    if (cavity_oversample < 1 || cavity_oversample > 4) bad("cavity_oversample must be 1..4");
  }
  std::int64_t pitch() const { return cols / 16; }
  friend bool operator==(const PhantomConfig&, const PhantomConfig&) = default;
};

/// FDI code at arc station k (0..15, image left to right) of the upper or lower row.
inline FdiCode station_code(bool upper, int k) {
  if (k < 0 || k > 15) throw std::out_of_range("station index");
  if (upper) return k < 8 ? FdiCode{1, 8 - k} : FdiCode{2, k - 7};
  return k < 8 ? FdiCode{4, 8 - k} : FdiCode{3, k - 7};
}

inline int station_of(FdiCode c) {
  const bool right = c.quadrant == 1 || c.quadrant == 4;
  return right ? 8 - c.position : 7 + c.position;
}

struct PlacedTooth {
  FdiCode code;
  double scale = 1.0;
  double angle_deg = 0.0;
  std::int64_t voxels = 0;
};

struct Phantom {
  ArchCurve arch;
  double spacing = 1.0;  // mm, isotropic
  LabelVolume flat_labels;        // rows × cols × Dp
  IntensityVolume flat_intensity;
  LabelVolume cavity_labels;      // z × y × x
  IntensityVolume cavity_intensity;
  std::vector<PlacedTooth> teeth;  // ascending code
};

namespace detail {

struct ToothShape {
  double a, b, crown, root;  // crown half-width, half-depth, heights (voxels)
};

inline ToothShape tooth_shape(FdiCode c, double pitch) {
  static constexpr std::array<ToothShape, 8> table{{
      {3.4, 2.4, 8.0, 10.0},
      {3.1, 2.4, 7.5, 10.0},
      {3.6, 3.2, 8.0, 11.5},
      {3.7, 3.8, 7.0, 10.0},
      {3.7, 3.8, 7.0, 10.0},
      {4.3, 4.4, 6.5, 9.0},
      {4.2, 4.3, 6.5, 9.0},
      {4.0, 4.2, 6.5, 8.5},
  }};
  ToothShape s = table[static_cast<std::size_t>(c.position - 1)];
  if (!c.is_upper() && c.position <= 2) s.a *= 0.85;
  const double k = pitch / 12.0;  // table is tuned for 12-pixel stations
  return {s.a * k, s.b, s.crown, s.root};
}

// 0 outside, else 1 enamel, 2 dentin, 3 pulp. (x, u, z) are tooth-local:
// x across the arch, u from the crown tip toward the apex, z inward depth.
inline int tooth_tissue(const ToothShape& s, double x, double u, double z) {
  constexpr double p = 2.5;
  const double H = s.crown + s.root;
  if (u < 0 || u > H) return 0;
  double q = 2.0;
  if (u <= s.crown) {
    q = std::pow(std::abs(x / s.a), p) + std::pow(std::abs(z / s.b), p) +
        std::pow(std::abs((u - 0.5 * s.crown) / (0.5 * s.crown)), p);
  }
  bool root = false;
  if (u >= 0.5 * s.crown) {
    const double taper = std::pow(std::max(0.0, 1.0 - (u - 0.5 * s.crown) / (H - 0.5 * s.crown)), 0.7);
    const double ar = 0.6 * s.a * taper, br = 0.7 * s.b * taper;
    root = ar > 0 && br > 0 && (x / ar) * (x / ar) + (z / br) * (z / br) <= 1.0;
  }
  if (q > 1.0 && !root) return 0;
  const double px = x / (0.25 * s.a), pz = z / (0.25 * s.b);
  if (u > 0.3 * s.crown && u < 0.8 * H && px * px + pz * pz <= 1.0) return 3;
  if (q <= 1.0 && std::pow(q, 1.0 / p) > 0.72 && u < 0.75 * s.crown) return 1;
  return 2;
}

struct Raster {
  std::vector<std::int64_t> index;  // flat voxel indices
  std::vector<std::uint8_t> tissue;
  std::array<std::int64_t, 6> bounds{};  // rmin, rmax, cmin, cmax, kmin, kmax
};

inline Raster rasterize_tooth(const PhantomConfig& cfg, FdiCode code, double scale, double angle_deg) {
  const ToothShape base = tooth_shape(code, static_cast<double>(cfg.pitch()));
  const ToothShape s{base.a * scale, base.b * scale, base.crown * scale, base.root * scale};
  const bool upper = code.is_upper();
  const bool incisor = code.position <= 2;
  const double occlusal = static_cast<double>(cfg.rows) / 2.0;
  const double overbite = upper && incisor ? 2.0 : 0.0;
  const double tip = upper ? occlusal + overbite : occlusal;
  const double cx = static_cast<double>(station_of(code) * cfg.pitch()) + 0.5 * static_cast<double>(cfg.pitch());
  const double cz = static_cast<double>(cfg.patch[2]) / 2.0;
  const double H = s.crown + s.root;
  const double shift = incisor ? (upper ? -cfg.overbite_shift : cfg.overbite_shift) : 0.0;
  const double th = angle_deg * std::numbers::pi / 180.0;
  const double ct = std::cos(th), st = std::sin(th);

  Raster out;
  out.bounds = {cfg.rows, -1, cfg.cols, -1, cfg.patch[2], -1};
  const std::int64_t R = cfg.rows, C = cfg.cols, Dp = cfg.patch[2];
  const auto half = static_cast<std::int64_t>(std::ceil(H)) + 2;
  const auto r_lo = std::max<std::int64_t>(0, static_cast<std::int64_t>(tip) - half);
  const auto r_hi = std::min<std::int64_t>(R - 1, static_cast<std::int64_t>(tip) + half);
  const auto c_lo = std::max<std::int64_t>(0, static_cast<std::int64_t>(cx) - cfg.pitch());
  const auto c_hi = std::min<std::int64_t>(C - 1, static_cast<std::int64_t>(cx) + cfg.pitch());
  for (std::int64_t r = r_lo; r <= r_hi; ++r) {
    for (std::int64_t c = c_lo; c <= c_hi; ++c) {
      const double x0 = static_cast<double>(c) + 0.5 - cx;
      const double u0 = upper ? tip - (static_cast<double>(r) + 0.5) : (static_cast<double>(r) + 0.5) - tip;
      // rotate about the tooth's mid-height point
      const double x = ct * x0 + st * (u0 - 0.5 * H);
      const double u = -st * x0 + ct * (u0 - 0.5 * H) + 0.5 * H;
      // Only the tips, where upper and lower incisors share pixels, leave the centre plane.
      const double zoff = shift * std::clamp((5.0 - u) / 3.0, 0.0, 1.0);
      for (std::int64_t k = 0; k < Dp; ++k) {
        const double z = static_cast<double>(k) + 0.5 - cz - zoff;
        const int t = tooth_tissue(s, x, u, z);
        if (!t) continue;
        out.index.push_back((r * C + c) * Dp + k);
        out.tissue.push_back(static_cast<std::uint8_t>(t));
        auto& b = out.bounds;
        b[0] = std::min(b[0], r);
        b[1] = std::max(b[1], r);
        b[2] = std::min(b[2], c);
        b[3] = std::max(b[3], c);
        b[4] = std::min(b[4], k);
        b[5] = std::max(b[5], k);
      }
    }
  }
  return out;
}

}  // namespace detail

/// Deterministic in (config, seed). Throws PlacementError when a tooth cannot
/// be placed without collisions or outside its patch within max_retries.
inline Phantom generate_phantom(const PhantomConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(derive_seed(seed, 0x9a17));
  Phantom ph;
  ph.arch = fit_arch(rng.uniform(cfg.arch_depth_mm.lo, cfg.arch_depth_mm.hi),
                     rng.uniform(cfg.arch_width_mm.lo, cfg.arch_width_mm.hi), cfg.arch_exponent);
  ph.spacing = arc_length(ph.arch) / static_cast<double>(cfg.cols);

  const auto count = static_cast<int>(rng.integer(cfg.min_teeth, cfg.max_teeth));
  std::vector<int> wisdom{18, 28, 38, 48};
  for (std::size_t i = wisdom.size(); i > 1; --i) {
    std::swap(wisdom[i - 1], wisdom[static_cast<std::size_t>(rng.integer(0, static_cast<std::int64_t>(i) - 1))]);
  }
  std::vector<int> removed(wisdom.begin(), wisdom.begin() + (32 - count));

  const std::int64_t R = cfg.rows, C = cfg.cols, Dp = cfg.patch[2];
  ph.flat_labels = LabelVolume({R, C, Dp}, ph.spacing);
  ph.flat_intensity = IntensityVolume({R, C, Dp}, ph.spacing);
  const std::array<float, 4> level{0.0f, static_cast<float>(cfg.tissue.enamel),
                                   static_cast<float>(cfg.tissue.dentin), static_cast<float>(cfg.tissue.pulp)};

  for (const FdiCode code : all_fdi_codes()) {
    if (std::find(removed.begin(), removed.end(), code.code()) != removed.end()) continue;
    bool placed = false;
    for (int attempt = 0; attempt < cfg.max_retries && !placed; ++attempt) {
      const double scale = 1.0 + rng.uniform(-cfg.size_jitter, cfg.size_jitter);
      const double angle = rng.uniform(-cfg.rotation_jitter_deg, cfg.rotation_jitter_deg);
      const auto ras = detail::rasterize_tooth(cfg, code, scale, angle);
      const auto& b = ras.bounds;
      if (ras.index.empty() || b[1] - b[0] + 1 > cfg.patch[0] - 3 || b[3] - b[2] + 1 > cfg.patch[1] - 1) {
        continue;
      }
      const bool clash = std::any_of(ras.index.begin(), ras.index.end(), [&](std::int64_t i) {
        return ph.flat_labels.data[static_cast<std::size_t>(i)] != 0;
      });
      if (clash) continue;
      for (std::size_t i = 0; i < ras.index.size(); ++i) {
        ph.flat_labels.data[static_cast<std::size_t>(ras.index[i])] = static_cast<std::uint8_t>(code.code());
        ph.flat_intensity.data[static_cast<std::size_t>(ras.index[i])] = level[ras.tissue[i]];
      }
      ph.teeth.push_back({code, scale, angle, static_cast<std::int64_t>(ras.index.size())});
      placed = true;
    }
    if (!placed) {
      throw PlacementError("generate_phantom: could not place tooth " + std::to_string(code.code()) +
                           " after " + std::to_string(cfg.max_retries) + " attempts");
    }
  }

  // Alveolar bone bands around the roots, thinner than the teeth in depth.
  const std::int64_t occ = R / 2;
  const double bone_half = 0.3 * static_cast<double>(Dp);
  for (std::int64_t r = 0; r < R; ++r) {
    const bool band = (r >= occ - 18 && r < occ - 4) || (r >= occ + 4 && r < occ + 18);
    if (!band) continue;
    for (std::int64_t c = 0; c < C; ++c) {
      for (std::int64_t k = 0; k < Dp; ++k) {
        if (std::abs(static_cast<double>(k) + 0.5 - 0.5 * static_cast<double>(Dp)) >= bone_half) continue;
        if (ph.flat_labels.at(r, c, k) == 0) ph.flat_intensity.at(r, c, k) = static_cast<float>(cfg.tissue.bone);
      }
    }
  }

  const auto frame = CavityFrame::around(ph.arch, ph.spacing, R, Dp, cfg.cavity_oversample);
  const auto map = BendMap::build(ph.arch, frame, ph.spacing, R, C, Dp);
  ph.cavity_labels = bend(ph.flat_labels, ph.arch, map);
  ph.cavity_intensity = bend(ph.flat_intensity, ph.arch, map);
  return ph;
}

/// One training / evaluation record.
struct Sample {
  std::uint64_t seed = 0;
  ArchCurve arch;
  double spacing = 1.0;    // mm per pixel and per flat voxel; the cavity is finer by cavity_oversample
  double ray_depth = 1.0;  // mm
  Image<float> radiograph;        // rows × cols, normalised by ray_depth
  Image<std::uint8_t> seg_gt;     // rows × cols × 32
  std::vector<ToothBox> boxes_gt;  // ascending code
  std::map<int, LabelVolume> tooth_volumes;  // code -> 0/1 patch (Hp × Wp × Dp)
  LabelVolume cavity_gt;

  friend bool operator==(const Sample&, const Sample&) = default;
};

/// Patch window origin for a box, shared by cropping, training targets and assembly.
inline std::array<std::int64_t, 2> patch_origin(std::int64_t center_row, std::int64_t center_col,
                                                std::int64_t Hp, std::int64_t Wp) {
  return {center_row - Hp / 2, center_col - Wp / 2};
}

/// Binary patch of `code` from a flat label grid, window centred at (row, col).
inline LabelVolume crop_tooth(const LabelVolume& flat, int code, std::int64_t center_row,
                              std::int64_t center_col, const std::array<std::int64_t, 3>& patch) {
  const auto [Hp, Wp, Dp] = patch;
  const auto o = patch_origin(center_row, center_col, Hp, Wp);
  const std::int64_t k0 = flat.extents[2] / 2 - Dp / 2;
  LabelVolume out({Hp, Wp, Dp}, flat.spacing);
  for (std::int64_t r = 0; r < Hp; ++r) {
    for (std::int64_t c = 0; c < Wp; ++c) {
      for (std::int64_t k = 0; k < Dp; ++k) {
        if (flat.contains(o[0] + r, o[1] + c, k0 + k) && flat.at(o[0] + r, o[1] + c, k0 + k) == code) {
          out.at(r, c, k) = 1;
        }
      }
    }
  }
  return out;
}

inline Sample make_sample(const Phantom& ph, const PhantomConfig& cfg, std::uint64_t seed) {
  Sample s;
  s.seed = seed;
  s.arch = ph.arch;
  s.spacing = ph.spacing;
  s.ray_depth = static_cast<double>(cfg.patch[2]) * ph.spacing;
  const auto proj = project_panoramic(ph.cavity_intensity, &ph.cavity_labels, ph.arch, s.ray_depth,
                                      cfg.cols, cfg.rows);
  s.radiograph = Image<float>(cfg.rows, cfg.cols);
  for (std::size_t i = 0; i < s.radiograph.data.size(); ++i) {
    s.radiograph.data[i] = static_cast<float>(proj.radiograph.data[i] / s.ray_depth);
  }
  s.seg_gt = proj.seg;
  s.boxes_gt = proj.boxes;
  for (const auto& t : ph.teeth) {
    auto it = std::find_if(s.boxes_gt.begin(), s.boxes_gt.end(),
                           [&](const ToothBox& b) { return b.tooth == t.code; });
    if (it == s.boxes_gt.end()) {
      throw PlacementError("make_sample: tooth " + std::to_string(t.code.code()) + " is invisible");
    }
    auto vol = crop_tooth(ph.flat_labels, t.code.code(), it->center_row(), it->center_col(), cfg.patch);
    const auto kept = std::count(vol.data.begin(), vol.data.end(), std::uint8_t{1});
    if (kept != t.voxels) {
      throw PlacementError("make_sample: tooth " + std::to_string(t.code.code()) +
                           " does not fit its patch window");
    }
    s.tooth_volumes.emplace(t.code.code(), std::move(vol));
  }
  s.cavity_gt = ph.cavity_labels;
  return s;
}

inline Sample generate_sample(const PhantomConfig& cfg, std::uint64_t seed) {
  return make_sample(generate_phantom(cfg, seed), cfg, seed);
}

}  // namespace x2t
