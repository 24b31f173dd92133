#include <gtest/gtest.h>

#include <random>
#include <set>

#include "x2teeth/metrics.hpp"

using namespace x2t;

namespace {

using Teeth = std::map<int, LabelVolume>;

std::set<std::size_t> support(const LabelVolume& v) {
  std::set<std::size_t> s;
  for (std::size_t i = 0; i < v.data.size(); ++i)
    if (v.data[i]) s.insert(i);
  return s;
}

// Enumerates every (pred, gt) pair and counts set-based matches.
DetectionResult brute_force(const Teeth& pred, const Teeth& gt, double thr) {
  std::int64_t matched = 0;
  for (const auto& [pc, pv] : pred) {
    for (const auto& [gc, gv] : gt) {
      if (pc != gc) continue;
      const auto a = support(pv), b = support(gv);
      std::set<std::size_t> uni = a;
      uni.insert(b.begin(), b.end());
      std::size_t inter = 0;
      for (auto i : a) inter += b.count(i);
      const double iou = uni.empty() ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni.size());
      matched += iou >= thr;
    }
  }
  DetectionResult r;
  r.matched = matched;
  r.gt_count = static_cast<std::int64_t>(gt.size());
  r.pred_count = static_cast<std::int64_t>(pred.size());
  r.da = gt.empty() ? 1.0 : static_cast<double>(matched) / static_cast<double>(gt.size());
  r.fa = pred.empty() ? 1.0 : static_cast<double>(matched) / static_cast<double>(pred.size());
  return r;
}

LabelVolume random_mask(std::mt19937_64& rng, double density) {
  LabelVolume v({3, 3, 3}, 1.0);
  std::bernoulli_distribution b(density);
  for (auto& x : v.data) x = b(rng);
  return v;
}

Teeth random_teeth(std::mt19937_64& rng, const std::vector<int>& pool) {
  Teeth t;
  std::bernoulli_distribution keep(0.6);
  for (int c : pool)
    if (keep(rng)) t.emplace(c, random_mask(rng, 0.5));
  return t;
}

// Per-code split of a labelled volume.
Teeth split_labels(const LabelVolume& v) {
  Teeth t;
  for (std::size_t i = 0; i < v.data.size(); ++i) {
    if (!v.data[i]) continue;
    auto [it, _] = t.try_emplace(v.data[i], v.extents, v.spacing);
    it->second.data[i] = 1;
  }
  return t;
}

}  // namespace

TEST(VoxelIou, HandCases) {
  LabelVolume a({1, 1, 8}, 1.0), b({1, 1, 8}, 1.0);
  EXPECT_EQ(voxel_iou(a, b), 1.0);
  for (int i : {0, 1, 2, 3, 4}) a.data[static_cast<std::size_t>(i)] = 1;
  for (int i : {2, 3, 4, 5, 6}) b.data[static_cast<std::size_t>(i)] = 1;
  EXPECT_DOUBLE_EQ(voxel_iou(a, b), 3.0 / 7.0);
  EXPECT_EQ(voxel_iou(a, a), 1.0);
  LabelVolume c({1, 1, 8}, 1.0);
  c.data[7] = 1;
  EXPECT_EQ(voxel_iou(a, c), 0.0);
  EXPECT_THROW(voxel_iou(a, LabelVolume({1, 2, 4}, 1.0)), std::invalid_argument);
}

TEST(VoxelIou, SymmetricAndOneOnlyForEquality) {
  std::mt19937_64 rng(3);
  for (int i = 0; i < 100; ++i) {
    const auto a = random_mask(rng, 0.4), b = random_mask(rng, 0.4);
    EXPECT_EQ(voxel_iou(a, b), voxel_iou(b, a));
    EXPECT_EQ(voxel_iou(a, b) == 1.0, a == b);
  }
}

TEST(Detection, HandCase) {
  const auto r = detection_from_ious({{11, 0.9}, {12, 0.6}, {21, 0.5}, {22, 0.49}}, 4, 5, {});
  EXPECT_EQ(r.matched, 3);
  EXPECT_DOUBLE_EQ(r.da, 0.75);
  EXPECT_DOUBLE_EQ(r.fa, 0.6);
  const auto s = detection_from_ious({{11, 0.9}, {12, 0.6}, {21, 0.5}}, 4, 5, {0.5, true});
  EXPECT_DOUBLE_EQ(s.da, 0.6);
  EXPECT_DOUBLE_EQ(s.fa, 0.75);
}

TEST(Detection, PerfectAndEmpty) {
  std::mt19937_64 rng(1);
  const auto t = random_teeth(rng, {11, 12, 13, 21, 31});
  const auto p = detection_metrics(t, t);
  EXPECT_EQ(p.da, 1.0);
  EXPECT_EQ(p.fa, 1.0);
  const auto e = detection_metrics(Teeth{}, Teeth{});
  EXPECT_EQ(e.da, 1.0);
  EXPECT_EQ(e.fa, 1.0);
  const auto only_gt = detection_metrics(Teeth{}, t);
  EXPECT_EQ(only_gt.da, t.empty() ? 1.0 : 0.0);
  EXPECT_EQ(only_gt.fa, 1.0);
}

TEST(Detection, MatchesBruteForceOn100Instances) {
  std::mt19937_64 rng(2718);
  const std::vector<int> pool{11, 12, 13, 14, 21, 22, 31, 48};
  std::uniform_real_distribution<double> thr(0.05, 0.95);
  for (int trial = 0; trial < 100; ++trial) {
    auto gt = random_teeth(rng, pool);
    auto pred = random_teeth(rng, pool);
    // Some predictions start from the ground truth so matches are common.
    for (auto& [c, v] : pred) {
      if (gt.contains(c) && trial % 2 == 0) {
        v = gt.at(c);
        v.data[static_cast<std::size_t>(trial % 27)] ^= 1;
      }
    }
    const double t = thr(rng);
    const auto got = detection_metrics(pred, gt, {t, false});
    const auto want = brute_force(pred, gt, t);
    ASSERT_EQ(got.matched, want.matched) << trial;
    EXPECT_EQ(got.da, want.da);
    EXPECT_EQ(got.fa, want.fa);
    EXPECT_EQ(got.gt_count, want.gt_count);
    EXPECT_EQ(got.pred_count, want.pred_count);
  }
}

TEST(Detection, MonotoneInMatchThreshold) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 30; ++trial) {
    const auto gt = random_teeth(rng, {11, 12, 13, 14});
    const auto pred = random_teeth(rng, {11, 12, 13, 14});
    double last_da = -1.0, last_fa = -1.0;
    for (double t = 0.95; t > 0.0; t -= 0.1) {
      const auto r = detection_metrics(pred, gt, {t, false});
      EXPECT_GE(r.da, last_da);
      EXPECT_GE(r.fa, last_fa);
      last_da = r.da;
      last_fa = r.fa;
    }
  }
}

TEST(Detection, LabelledVolumesAgreeWithPerToothMaps) {
  std::mt19937_64 rng(8);
  std::uniform_int_distribution<int> pick(0, 5);
  const int codes[] = {0, 11, 12, 21, 0, 38};
  for (int trial = 0; trial < 50; ++trial) {
    LabelVolume a({4, 4, 4}, 1.0), b({4, 4, 4}, 1.0);
    for (auto& x : a.data) x = static_cast<std::uint8_t>(codes[pick(rng)]);
    b = a;
    for (std::size_t i = 0; i < b.data.size(); i += 1 + static_cast<std::size_t>(trial % 3)) {
      b.data[i] = static_cast<std::uint8_t>(codes[pick(rng)]);
    }
    const auto x = detection_from_labels(a, b), y = detection_metrics(split_labels(a), split_labels(b));
    EXPECT_EQ(x.matched, y.matched);
    EXPECT_EQ(x.da, y.da);
    EXPECT_EQ(x.fa, y.fa);
  }
}

TEST(PerToothTables, HandBuiltTwoToothSample) {
  Image<std::uint8_t> gt(2, 4, 32), pred(2, 4, 32);
  const int a = FdiCode::from_code(11).index(), b = FdiCode::from_code(36).index();
  // Tooth 11: gt 4 pixels, pred 2 of them plus 1 extra → IoU 2/5.
  for (int c = 0; c < 4; ++c) gt.at(0, c, a) = 1;
  pred.at(0, 0, a) = pred.at(0, 1, a) = pred.at(1, 0, a) = 1;
  // Tooth 36: only predicted.
  pred.at(1, 3, b) = 1;
  const auto seg = seg_table(pred, gt);
  ASSERT_EQ(seg.size(), 2u);
  EXPECT_DOUBLE_EQ(seg.at(11), 2.0 / 5.0);
  EXPECT_EQ(seg.at(36), 0.0);

  Teeth g, p;
  g.emplace(11, LabelVolume({1, 1, 4}, 1.0, 1));
  p.emplace(11, LabelVolume({1, 1, 4}, 1.0));
  p.at(11).data = {1, 1, 0, 0};
  g.emplace(12, LabelVolume({1, 1, 4}, 1.0, 1));
  const auto rec = recon_table(p, g);
  EXPECT_DOUBLE_EQ(rec.at(11), 0.5);
  EXPECT_EQ(rec.at(12), 0.0);
  EXPECT_EQ(seg_table(gt, gt).at(11), 1.0);
}

TEST(Report, AggregatesAndSerialises) {
  SampleEval s1{"a", 0.8, {0.75, 0.6, 3, 4, 5}, {{11, 1.0}, {12, 0.5}}, {{11, 0.7}}};
  SampleEval s2{"b", 0.6, {1.0, 1.0, 4, 4, 4}, {{11, 0.5}}, {{11, 0.9}, {21, 0.2}}};
  const auto r = build_report({s1, s2});
  EXPECT_DOUBLE_EQ(r.iou.mean, 0.7);
  EXPECT_NEAR(r.iou.std, 0.1, 1e-12);
  EXPECT_DOUBLE_EQ(r.da, 0.875);
  EXPECT_DOUBLE_EQ(r.fa, 0.8);
  EXPECT_EQ(r.seg_iou.at(11).n, 2);
  EXPECT_DOUBLE_EQ(r.seg_iou.at(11).mean, 0.75);
  EXPECT_EQ(r.seg_iou.at(12).n, 1);
  EXPECT_EQ(r.recon_iou.size(), 2u);

  const auto j = report_json(r);
  EXPECT_NO_THROW(validate_report_json(j));
  EXPECT_NO_THROW(validate_report_json(json::parse(j.dump())));
  auto bad = j;
  bad["da"] = 1.5;
  EXPECT_THROW(validate_report_json(bad), std::invalid_argument);
  bad = j;
  bad["seg_iou"]["19"] = bad["seg_iou"]["11"];
  EXPECT_THROW(validate_report_json(bad), std::invalid_argument);
  bad = j;
  bad.erase("samples");
  EXPECT_THROW(validate_report_json(bad), std::invalid_argument);

  const auto csv = per_tooth_csv(r);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "code,seg_mean,seg_std,seg_n,recon_mean,recon_std,recon_n");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 4);  // header + 11, 12, 21
  EXPECT_NE(csv.find("\n12,0.5,0,1,,,0\n"), std::string::npos);
  EXPECT_NE(report_text(r).find("IoU"), std::string::npos);
}

TEST(Summarize, PopulationStd) {
  const auto s = summarize({1.0, 2.0, 3.0, 4.0});
  EXPECT_DOUBLE_EQ(s.mean, 2.5);
  EXPECT_DOUBLE_EQ(s.std, std::sqrt(1.25));
  EXPECT_EQ(summarize({}).n, 0);
}
