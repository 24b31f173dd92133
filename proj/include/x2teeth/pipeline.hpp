#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "x2teeth/arch.hpp"
#include "x2teeth/assembly.hpp"
#include "x2teeth/localization.hpp"
#include "x2teeth/metrics.hpp"
#include "x2teeth/net.hpp"
#include "x2teeth/patches.hpp"
#include "x2teeth/phantom.hpp"
#include "x2teeth/train.hpp"

// Single-radiograph reconstruction: ExtNet -> SegNet -> localisation ->
// per-tooth ReconNet -> flat assembly -> bend along the arch.
namespace x2t {

struct ReconstructOptions {
  LocalizeConfig localize;
  int cavity_oversample = 2;
};

struct Reconstruction {
  ArchCurve arch;
  double spacing = 1.0;  // mm per pixel / flat voxel
  std::vector<ToothBox> boxes;
  Image<float> probmap;                       // rows × cols × 32
  Image<std::uint8_t> seg;                    // denoised multi-hot mask
  std::map<int, LabelVolume> tooth_volumes;   // patch frame, 0/1
  FlatAssembly flat;
  LabelVolume cavity;
  std::map<int, std::int64_t> voxel_counts;   // cavity voxels per code
  bool degraded = false;                      // no tooth detected
};

namespace detail {

inline void finish(Reconstruction& rec, const std::map<int, ToothProbability>& probs, std::int64_t rows,
                   std::int64_t cols, std::int64_t depth, int oversample) {
  const auto frame = CavityFrame::around(rec.arch, rec.spacing, rows, depth, oversample);
  if (rec.boxes.empty()) {
    rec.degraded = true;
    rec.flat.grid = LabelVolume({rows, cols, depth}, rec.spacing);
    rec.cavity = LabelVolume(frame.extents(), frame.spacing);
    return;
  }
  rec.flat = assemble_flat(probs, rec.boxes, rows, cols, depth, rec.spacing);
  rec.cavity = bend(rec.flat.grid, rec.arch, BendMap::build(rec.arch, frame, rec.spacing, rows, cols, depth));
  for (const auto v : rec.cavity.data) {
    if (v) ++rec.voxel_counts[v];
  }
}

}  // namespace detail

/// `net` must not require gradients for efficiency, but works either way.
inline Reconstruction reconstruct(X2TeethNet<float>& net, const Image<float>& radiograph, const ArchCurve& arch,
                                  const ReconstructOptions& opt = {}) {
  arch.validate();
  const auto& cfg = net.config();
  if (radiograph.rows != cfg.height || radiograph.cols != cfg.width || radiograph.channels != 1) {
    throw std::invalid_argument("reconstruct: radiograph is " + std::to_string(radiograph.rows) + "×" +
                                std::to_string(radiograph.cols) + ", network expects " + std::to_string(cfg.height) +
                                "×" + std::to_string(cfg.width));
  }
  Reconstruction rec;
  rec.arch = arch;
  rec.spacing = arc_length(arch) / static_cast<double>(radiograph.cols);
  Tape<float> tape;
  const auto feat = net.extnet(tape, radiograph_tensor<float>(radiograph));
  const auto prob = net.segnet(tape, feat);
  rec.probmap = Image<float>(cfg.height, cfg.width, FdiCode::kCount);
  std::copy(prob.values().begin(), prob.values().end(), rec.probmap.data.begin());
  rec.boxes = localize_teeth(rec.probmap, opt.localize, &rec.seg);

  std::map<int, ToothProbability> probs;
  if (!rec.boxes.empty()) {
    // One window per detected tooth, centred on its box.
    std::vector<WindowCenter> centers;
    for (const auto& b : rec.boxes) centers.push_back({b.center_row(), b.center_col()});
    const auto out = net.reconnet(tape, crop_windows(tape, feat, centers, cfg.patch[0], cfg.patch[1]));
    const auto [Hp, Wp, Dp] = cfg.patch;
    for (std::size_t i = 0; i < rec.boxes.size(); ++i) {
      const int code = rec.boxes[i].tooth.code();
      ToothProbability p({Hp, Wp, Dp}, rec.spacing);
      LabelVolume bin({Hp, Wp, Dp}, rec.spacing);
      const float* o = out[i].data();
      for (std::size_t v = 0; v < p.data.size(); ++v) {
        p.data[v] = o[2 * v + 1];
        bin.data[v] = o[2 * v + 1] >= 0.5f ? 1 : 0;
      }
      probs.emplace(code, std::move(p));
      rec.tooth_volumes.emplace(code, std::move(bin));
    }
  }
  detail::finish(rec, probs, cfg.height, cfg.width, cfg.patch[2], opt.cavity_oversample);
  return rec;
}

/// Bypasses the networks: ground-truth tooth volumes placed at ground-truth
/// boxes, then assembled and bent exactly like a prediction.
inline Reconstruction reconstruct_gt_oracle(const Sample& s, int cavity_oversample = 2) {
  Reconstruction rec;
  rec.arch = s.arch;
  rec.spacing = s.spacing;
  rec.boxes = s.boxes_gt;
  rec.seg = s.seg_gt;
  rec.probmap = Image<float>(s.seg_gt.rows, s.seg_gt.cols, s.seg_gt.channels);
  for (std::size_t i = 0; i < s.seg_gt.data.size(); ++i) rec.probmap.data[i] = s.seg_gt.data[i];
  std::map<int, ToothProbability> probs;
  std::int64_t depth = 0;
  for (const auto& [code, vol] : s.tooth_volumes) {
    ToothProbability p(vol.extents, vol.spacing);
    for (std::size_t v = 0; v < p.data.size(); ++v) p.data[v] = vol.data[v] ? 1.0f : 0.0f;
    probs.emplace(code, std::move(p));
    rec.tooth_volumes.emplace(code, vol);
    depth = vol.extents[2];
  }
  // Boxes without a volume cannot be placed; the oracle keeps only teeth it can assemble.
  std::erase_if(rec.boxes, [&](const ToothBox& b) { return !probs.contains(b.tooth.code()); });
  if (probs.empty()) {
    // Nothing to place; the empty result lives in the ground-truth frame.
    rec.boxes.clear();
    rec.degraded = true;
    rec.flat.grid = LabelVolume({s.radiograph.rows, s.radiograph.cols, 1}, s.spacing);
    rec.cavity = LabelVolume(s.cavity_gt.extents, s.cavity_gt.spacing);
    return rec;
  }
  detail::finish(rec, probs, s.radiograph.rows, s.radiograph.cols, depth, cavity_oversample);
  return rec;
}

inline SampleEval evaluate_reconstruction(const Reconstruction& rec, const Sample& gt, const std::string& id,
                                          const DetectionConfig& det = {}) {
  SampleEval e;
  e.id = id;
  e.cavity_iou = voxel_iou(rec.cavity, gt.cavity_gt);
  e.detection = detection_from_labels(rec.cavity, gt.cavity_gt, det);
  e.seg_iou = seg_table(rec.seg, gt.seg_gt);
  e.recon_iou = recon_table(rec.tooth_volumes, gt.tooth_volumes);
  return e;
}

}  // namespace x2t
