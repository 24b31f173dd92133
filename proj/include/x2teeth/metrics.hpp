#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "x2teeth/json_io.hpp"
#include "x2teeth/volume.hpp"

// Volumetric IoU, detection/identification accuracy and per-tooth tables.
namespace x2t {

inline double iou_from_counts(std::int64_t inter, std::int64_t a, std::int64_t b) {
  const std::int64_t uni = a + b - inter;
  return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

/// |pred ∩ gt| / |pred ∪ gt| over non-zero elements; 1 when both are empty.
template <class T>
double voxel_iou(const Volume<T>& pred, const Volume<T>& gt) {
  if (pred.extents != gt.extents) throw std::invalid_argument("voxel_iou: extent mismatch");
  std::int64_t inter = 0, a = 0, b = 0;
  for (std::size_t i = 0; i < pred.data.size(); ++i) {
    const bool p = pred.data[i] != T{}, g = gt.data[i] != T{};
    a += p;
    b += g;
    inter += p && g;
  }
  return iou_from_counts(inter, a, b);
}

template <class T>
double mask_iou(const Image<T>& pred, const Image<T>& gt, std::int64_t channel) {
  if (pred.rows != gt.rows || pred.cols != gt.cols || pred.channels != gt.channels) {
    throw std::invalid_argument("mask_iou: extent mismatch");
  }
  std::int64_t inter = 0, a = 0, b = 0;
  for (std::int64_t i = 0; i < pred.rows * pred.cols; ++i) {
    const auto k = static_cast<std::size_t>(i * pred.channels + channel);
    const bool p = pred.data[k] != T{}, g = gt.data[k] != T{};
    a += p;
    b += g;
    inter += p && g;
  }
  return iou_from_counts(inter, a, b);
}

struct DetectionConfig {
  double match_iou = 0.5;
  // false: DA = |D∩G|/|G|, FA = |D∩G|/|D|. true swaps the two denominators.
  bool swap_denominators = false;
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(DetectionConfig, match_iou, swap_denominators)

struct DetectionResult {
  double da = 1.0;
  double fa = 1.0;
  std::int64_t matched = 0, gt_count = 0, pred_count = 0;
};

inline DetectionResult detection_from_ious(const std::map<int, double>& code_iou, std::int64_t gt_count,
                                           std::int64_t pred_count, const DetectionConfig& cfg) {
  DetectionResult r;
  r.gt_count = gt_count;
  r.pred_count = pred_count;
  for (const auto& [code, iou] : code_iou) r.matched += iou >= cfg.match_iou;
  auto ratio = [&](std::int64_t den) { return den == 0 ? 1.0 : static_cast<double>(r.matched) / static_cast<double>(den); };
  r.da = ratio(cfg.swap_denominators ? pred_count : gt_count);
  r.fa = ratio(cfg.swap_denominators ? gt_count : pred_count);
  return r;
}

/// A prediction matches when the ground truth holds the same code and the
/// per-tooth voxel IoU reaches match_iou.
template <class T>
DetectionResult detection_metrics(const std::map<int, Volume<T>>& pred, const std::map<int, Volume<T>>& gt,
                                  const DetectionConfig& cfg = {}) {
  std::map<int, double> ious;
  for (const auto& [code, vol] : pred) {
    auto it = gt.find(code);
    if (it != gt.end()) ious[code] = voxel_iou(vol, it->second);
  }
  return detection_from_ious(ious, static_cast<std::int64_t>(gt.size()),
                             static_cast<std::int64_t>(pred.size()), cfg);
}

struct LabelOverlap {
  std::int64_t inter = 0, pred = 0, gt = 0;
  double iou() const { return iou_from_counts(inter, pred, gt); }
};

/// Per-code overlap counts of two labelled volumes in one pass.
inline std::map<int, LabelOverlap> label_overlaps(const LabelVolume& pred, const LabelVolume& gt) {
  if (pred.extents != gt.extents) throw std::invalid_argument("label_overlaps: extent mismatch");
  std::array<LabelOverlap, 256> acc{};
  for (std::size_t i = 0; i < pred.data.size(); ++i) {
    const auto p = pred.data[i], g = gt.data[i];
    if (p) ++acc[p].pred;
    if (g) ++acc[g].gt;
    if (p && p == g) ++acc[p].inter;
  }
  std::map<int, LabelOverlap> out;
  for (int c = 1; c < 256; ++c) {
    if (acc[static_cast<std::size_t>(c)].pred || acc[static_cast<std::size_t>(c)].gt) out[c] = acc[static_cast<std::size_t>(c)];
  }
  return out;
}

/// detection_metrics over the teeth of two labelled cavities.
inline DetectionResult detection_from_labels(const LabelVolume& pred, const LabelVolume& gt,
                                             const DetectionConfig& cfg = {}) {
  std::map<int, double> ious;
  std::int64_t np = 0, ng = 0;
  for (const auto& [code, o] : label_overlaps(pred, gt)) {
    np += o.pred > 0;
    ng += o.gt > 0;
    if (o.pred > 0 && o.gt > 0) ious[code] = o.iou();
  }
  return detection_from_ious(ious, ng, np, cfg);
}

struct Stat {
  double mean = 0.0, std = 0.0;
  std::int64_t n = 0;
};

/// Mean and population standard deviation.
inline Stat summarize(const std::vector<double>& xs) {
  Stat s;
  s.n = static_cast<std::int64_t>(xs.size());
  if (xs.empty()) return s;
  for (double x : xs) s.mean += x;
  s.mean /= static_cast<double>(xs.size());
  double v = 0.0;
  for (double x : xs) v += (x - s.mean) * (x - s.mean);
  s.std = std::sqrt(v / static_cast<double>(xs.size()));
  return s;
}

/// What one sample contributes to a report.
struct SampleEval {
  std::string id;
  double cavity_iou = 0.0;  // foreground (any tooth) voxel IoU
  DetectionResult detection;
  std::map<int, double> seg_iou;    // 2D mask IoU per code
  std::map<int, double> recon_iou;  // patch-frame 3D IoU per code
};

/// Per-code 2D IoU between two multi-hot masks; codes absent from both are omitted.
inline std::map<int, double> seg_table(const Image<std::uint8_t>& pred, const Image<std::uint8_t>& gt) {
  std::map<int, double> out;
  for (int c = 0; c < FdiCode::kCount; ++c) {
    bool any = false;
    for (std::int64_t i = 0; i < gt.rows * gt.cols && !any; ++i) {
      const auto k = static_cast<std::size_t>(i * FdiCode::kCount + c);
      any = pred.data[k] || gt.data[k];
    }
    if (any) out[FdiCode::from_index(c).code()] = mask_iou(pred, gt, c);
  }
  return out;
}

/// Per-code patch-frame IoU; a code present on one side only scores 0.
inline std::map<int, double> recon_table(const std::map<int, LabelVolume>& pred,
                                         const std::map<int, LabelVolume>& gt) {
  std::map<int, double> out;
  for (const auto& [code, g] : gt) {
    auto it = pred.find(code);
    out[code] = it == pred.end() ? 0.0 : voxel_iou(it->second, g);
  }
  for (const auto& [code, p] : pred) {
    if (!gt.contains(code)) out[code] = 0.0;
  }
  return out;
}

struct EvalReport {
  Stat iou;
  double da = 1.0, fa = 1.0;
  DetectionConfig detection;
  std::map<int, Stat> seg_iou, recon_iou;
  std::vector<SampleEval> samples;
};

inline EvalReport build_report(std::vector<SampleEval> samples, const DetectionConfig& cfg = {}) {
  EvalReport r;
  r.detection = cfg;
  std::vector<double> ious, das, fas;
  std::map<int, std::vector<double>> seg, rec;
  for (const auto& s : samples) {
    ious.push_back(s.cavity_iou);
    das.push_back(s.detection.da);
    fas.push_back(s.detection.fa);
    for (const auto& [c, v] : s.seg_iou) seg[c].push_back(v);
    for (const auto& [c, v] : s.recon_iou) rec[c].push_back(v);
  }
  r.iou = summarize(ious);
  if (!samples.empty()) {
    r.da = summarize(das).mean;
    r.fa = summarize(fas).mean;
  }
  for (const auto& [c, v] : seg) r.seg_iou[c] = summarize(v);
  for (const auto& [c, v] : rec) r.recon_iou[c] = summarize(v);
  r.samples = std::move(samples);
  return r;
}

inline json stat_json(const Stat& s) { return json{{"mean", s.mean}, {"std", s.std}, {"n", s.n}}; }

inline json report_json(const EvalReport& r) {
  auto table = [](const std::map<int, Stat>& t) {
    json j = json::object();
    for (const auto& [c, s] : t) j[std::to_string(c)] = stat_json(s);
    return j;
  };
  json samples = json::array();
  for (const auto& s : r.samples) {
    json seg = json::object(), rec = json::object();
    for (const auto& [c, v] : s.seg_iou) seg[std::to_string(c)] = v;
    for (const auto& [c, v] : s.recon_iou) rec[std::to_string(c)] = v;
    samples.push_back({{"id", s.id},
                       {"iou", s.cavity_iou},
                       {"da", s.detection.da},
                       {"fa", s.detection.fa},
                       {"matched", s.detection.matched},
                       {"gt_teeth", s.detection.gt_count},
                       {"pred_teeth", s.detection.pred_count},
                       {"seg_iou", seg},
                       {"recon_iou", rec}});
  }
  return json{{"schema", "x2teeth-eval/1"},
              {"iou", stat_json(r.iou)},
              {"da", r.da},
              {"fa", r.fa},
              {"detection", r.detection},
              {"seg_iou", table(r.seg_iou)},
              {"recon_iou", table(r.recon_iou)},
              {"samples", samples}};
}

/// Throws std::invalid_argument describing the first schema violation.
inline void validate_report_json(const json& j) {
  auto fail = [](const std::string& m) { throw std::invalid_argument("eval report: " + m); };
  auto unit = [&](const json& v, const std::string& what) {
    if (!v.is_number() || v.get<double>() < 0.0 || v.get<double>() > 1.0) fail(what + " must be a number in [0, 1]");
  };
  auto stat = [&](const json& v, const std::string& what) {
    if (!v.is_object()) fail(what + " must be an object");
    for (const char* k : {"mean", "std", "n"}) {
      if (!v.contains(k)) fail(what + " lacks '" + k + "'");
    }
    unit(v["mean"], what + ".mean");
    unit(v["std"], what + ".std");
    if (!v["n"].is_number_integer() || v["n"].get<std::int64_t>() < 0) fail(what + ".n must be a count");
  };
  auto codes = [&](const json& t, const std::string& what, bool stats) {
    if (!t.is_object()) fail(what + " must be an object");
    for (const auto& [k, v] : t.items()) {
      int code = 0;
      try {
        std::size_t used = 0;
        code = std::stoi(k, &used);
        if (used != k.size()) code = 0;
      } catch (const std::exception&) {
      }
      if (!FdiCode::is_valid_code(code)) fail(what + " has invalid FDI key '" + k + "'");
      if (stats) {
        stat(v, what + "." + k);
      } else {
        unit(v, what + "." + k);
      }
    }
  };
  if (!j.is_object()) fail("not an object");
  if (j.value("schema", "") != "x2teeth-eval/1") fail("schema tag");
  for (const char* k : {"iou", "da", "fa", "seg_iou", "recon_iou", "samples"}) {
    if (!j.contains(k)) fail(std::string("missing '") + k + "'");
  }
  stat(j["iou"], "iou");
  unit(j["da"], "da");
  unit(j["fa"], "fa");
  codes(j["seg_iou"], "seg_iou", true);
  codes(j["recon_iou"], "recon_iou", true);
  if (!j["samples"].is_array()) fail("samples must be an array");
  for (const auto& s : j["samples"]) {
    if (!s.contains("id") || !s["id"].is_string()) fail("sample id");
    for (const char* k : {"iou", "da", "fa"}) {
      if (!s.contains(k)) fail(std::string("sample lacks '") + k + "'");
      unit(s[k], std::string("sample.") + k);
    }
    codes(s.value("seg_iou", json::object()), "sample.seg_iou", false);
    codes(s.value("recon_iou", json::object()), "sample.recon_iou", false);
  }
}

/// code,seg_mean,seg_std,seg_n,recon_mean,recon_std,recon_n
inline std::string per_tooth_csv(const EvalReport& r) {
  std::ostringstream out;
  out << "code,seg_mean,seg_std,seg_n,recon_mean,recon_std,recon_n\n";
  std::vector<int> all;
  for (const auto& [c, s] : r.seg_iou) all.push_back(c);
  for (const auto& [c, s] : r.recon_iou) all.push_back(c);
  std::sort(all.begin(), all.end());
  all.erase(std::unique(all.begin(), all.end()), all.end());
  out << std::setprecision(6);
  for (int c : all) {
    out << c;
    for (const auto* t : {&r.seg_iou, &r.recon_iou}) {
      auto it = t->find(c);
      if (it == t->end()) {
        out << ",,,0";
      } else {
        out << ',' << it->second.mean << ',' << it->second.std << ',' << it->second.n;
      }
    }
    out << '\n';
  }
  return out.str();
}

inline std::string report_text(const EvalReport& r) {
  std::ostringstream out;
  out << std::fixed << std::setprecision(3);
  out << "samples  " << r.samples.size() << '\n'
      << "IoU      " << r.iou.mean << " ± " << r.iou.std << '\n'
      << "DA       " << r.da << '\n'
      << "FA       " << r.fa << "\n\n"
      << "code   seg IoU          recon IoU\n";
  std::vector<int> all;
  for (const auto& [c, s] : r.seg_iou) all.push_back(c);
  for (const auto& [c, s] : r.recon_iou) all.push_back(c);
  std::sort(all.begin(), all.end());
  all.erase(std::unique(all.begin(), all.end()), all.end());
  for (int c : all) {
    out << std::setw(4) << c << "   ";
    for (const auto* t : {&r.seg_iou, &r.recon_iou}) {
      auto it = t->find(c);
      if (it == t->end()) {
        out << std::setw(17) << std::left << "-" << std::right;
      } else {
        out << it->second.mean << " ± " << it->second.std << "    ";
      }
    }
    out << '\n';
  }
  return out.str();
}

}  // namespace x2t
