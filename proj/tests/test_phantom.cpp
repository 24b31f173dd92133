#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>

#include "x2teeth/augment.hpp"
#include "x2teeth/dataset.hpp"
#include "x2teeth/phantom.hpp"
#include "x2teeth/projection.hpp"

using namespace x2t;
namespace fs = std::filesystem;

namespace {

PhantomConfig full_mouth() {
  PhantomConfig c;
  c.min_teeth = c.max_teeth = 32;
  return c;
}

// Samples are slow enough to build once per suite.
const Sample& shared_sample(int i) {
  static const std::vector<Sample> samples = [] {
    std::vector<Sample> v;
    v.push_back(generate_sample(full_mouth(), 101));
    v.push_back(generate_sample(PhantomConfig{}, 202));
    return v;
  }();
  return samples.at(static_cast<std::size_t>(i));
}

fs::path scratch_dir(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("x2t_phantom_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(p);
  return p;
}

// Random intensities on a 1/256 lattice so sums of two volumes stay exact in float.
IntensityVolume random_cavity(const ArchCurve& arch, double sp, std::uint64_t seed) {
  const auto f = CavityFrame::around(arch, sp, 8, 10);
  IntensityVolume v(f.extents(), f.spacing);
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> u(0, 256);
  for (auto& x : v.data) x = static_cast<float>(u(rng)) / 256.0f;
  return v;
}

}  // namespace

TEST(FdiCode, ThirtyTwoCodesAndWisdomTeeth) {
  const auto all = all_fdi_codes();
  ASSERT_EQ(all.size(), 32u);
  std::set<int> codes;
  int wisdom = 0;
  for (auto c : all) {
    codes.insert(c.code());
    wisdom += c.is_wisdom();
    EXPECT_EQ(FdiCode::from_index(c.index()), c);
  }
  EXPECT_EQ(codes.size(), 32u);
  EXPECT_EQ(wisdom, 4);
  EXPECT_TRUE(FdiCode::from_code(38).is_wisdom());
  EXPECT_THROW(FdiCode::from_code(19), std::invalid_argument);
  EXPECT_THROW(FdiCode::from_code(51), std::invalid_argument);
}

TEST(PhantomConfig, ValidatesRangesAndTissueOrdering) {
  EXPECT_NO_THROW(PhantomConfig{}.validate());
  auto c = PhantomConfig{};
  c.min_teeth = 27;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = PhantomConfig{};
  c.arch_width_mm = {50.0, 40.0};
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = PhantomConfig{};
  c.tissue.dentin = 1.2;  // brighter than enamel
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = PhantomConfig{};
  c.tissue.pulp = 0.0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
}

TEST(GeneratePhantom, DeterministicPerSeed) {
  const auto a = generate_phantom(PhantomConfig{}, 7);
  const auto b = generate_phantom(PhantomConfig{}, 7);
  EXPECT_EQ(a.arch, b.arch);
  EXPECT_EQ(a.flat_labels, b.flat_labels);
  EXPECT_EQ(a.cavity_labels, b.cavity_labels);
  EXPECT_EQ(a.cavity_intensity, b.cavity_intensity);
  const auto c = generate_phantom(PhantomConfig{}, 8);
  EXPECT_NE(a.flat_labels, c.flat_labels);
}

TEST(GeneratePhantom, FullMouthHasAllCodesWithinPatches) {
  const auto& s = shared_sample(0);
  std::set<int> labels(s.cavity_gt.data.begin(), s.cavity_gt.data.end());
  labels.erase(0);
  EXPECT_EQ(labels.size(), 32u);
  ASSERT_EQ(s.tooth_volumes.size(), 32u);
  const auto patch = PhantomConfig{}.patch;
  for (const auto& [code, vol] : s.tooth_volumes) {
    EXPECT_TRUE(labels.contains(code));
    EXPECT_EQ(vol.extents, patch);
    EXPECT_GT(std::count(vol.data.begin(), vol.data.end(), 1), 0) << code;
  }
}

TEST(GeneratePhantom, ToothCountFollowsPolicy) {
  for (std::uint64_t seed : {1, 2, 3}) {
    const auto ph = generate_phantom(PhantomConfig{}, seed);
    EXPECT_GE(ph.teeth.size(), 28u);
    EXPECT_LE(ph.teeth.size(), 32u);
    // Only wisdom teeth are ever left out.
    std::set<int> have;
    for (const auto& t : ph.teeth) have.insert(t.code.code());
    for (auto c : all_fdi_codes()) {
      if (!c.is_wisdom()) EXPECT_TRUE(have.contains(c.code()));
    }
  }
}

TEST(GeneratePhantom, OversizedTeethFailPlacement) {
  auto c = PhantomConfig{};
  // Minimum patch height, maximal size jitter and a single attempt per tooth.
  c.patch = {20, 12, 10};
  c.size_jitter = 0.19;
  c.max_retries = 1;
  EXPECT_THROW(generate_phantom(c, 1), PlacementError);
}

TEST(Sample, EveryToothIsVisibleAndBoxed) {
  for (int i : {0, 1}) {
    const auto& s = shared_sample(i);
    std::set<int> labels(s.cavity_gt.data.begin(), s.cavity_gt.data.end());
    labels.erase(0);
    std::set<int> boxed;
    for (const auto& b : s.boxes_gt) boxed.insert(b.tooth.code());
    EXPECT_EQ(labels, boxed);
    // Brute-force: every hot pixel lies in its category's box.
    for (const auto& b : s.boxes_gt) {
      const auto ch = b.tooth.index();
      std::int64_t hot = 0;
      for (std::int64_t r = 0; r < s.seg_gt.rows; ++r)
        for (std::int64_t c = 0; c < s.seg_gt.cols; ++c) {
          if (!s.seg_gt.at(r, c, ch)) continue;
          ++hot;
          EXPECT_TRUE(b.contains(r, c));
        }
      EXPECT_GT(hot, 0);
    }
  }
}

TEST(Sample, NeighbouringTeethOverlapInProjection) {
  const auto& s = shared_sample(0);
  std::int64_t multi = 0;
  for (std::int64_t r = 0; r < s.seg_gt.rows; ++r)
    for (std::int64_t c = 0; c < s.seg_gt.cols; ++c) {
      int n = 0;
      for (int k = 0; k < 32; ++k) n += s.seg_gt.at(r, c, k);
      multi += n >= 2;
    }
  EXPECT_GE(multi, 1);
}

TEST(Sample, RadiographIsNormalisedByRayDepth) {
  const auto& s = shared_sample(1);
  const auto [lo, hi] = std::minmax_element(s.radiograph.data.begin(), s.radiograph.data.end());
  EXPECT_GE(*lo, 0.0f);
  EXPECT_LE(*hi, 1.0f + 1e-5f);
  EXPECT_GT(*hi, 0.3f);
}

TEST(Sample, ArchLengthMatchesRadiographWidth) {
  for (int i : {0, 1}) {
    const auto& s = shared_sample(i);
    const double width_mm = static_cast<double>(s.radiograph.cols) * s.spacing;
    EXPECT_NEAR(arc_length(s.arch) / width_mm, 1.0, 0.02);
  }
}

TEST(Projection, ConstantIntegrandGivesRayDepth) {
  const auto arch = fit_arch(24.0, 48.0);
  const double sp = arc_length(arch) / 64;
  const auto f = CavityFrame::around(arch, sp, 8, 10, 2);
  const IntensityVolume ones(f.extents(), f.spacing, 1.0f);
  const double depth = 10 * sp;
  const auto p = project_panoramic(ones, nullptr, arch, depth, 64, 8);
  for (double v : p.radiograph.data) EXPECT_NEAR(v, depth, 1e-6);
  EXPECT_TRUE(p.boxes.empty());
}

TEST(Projection, LinearInTheVolume) {
  const auto arch = fit_arch(22.0, 46.0);
  const double sp = arc_length(arch) / 48;
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const auto a = random_cavity(arch, sp, 2 * seed);
    const auto b = random_cavity(arch, sp, 2 * seed + 1);
    IntensityVolume ab = a;
    for (std::size_t i = 0; i < ab.data.size(); ++i) ab.data[i] += b.data[i];
    const double depth = 10 * sp;
    const auto pa = project_panoramic(a, nullptr, arch, depth, 48, 8);
    const auto pb = project_panoramic(b, nullptr, arch, depth, 48, 8);
    const auto pab = project_panoramic(ab, nullptr, arch, depth, 48, 8);
    for (std::size_t i = 0; i < pab.radiograph.data.size(); ++i) {
      EXPECT_NEAR(pa.radiograph.data[i] + pb.radiograph.data[i], pab.radiograph.data[i], 1e-9);
    }
  }
}

TEST(Projection, EmptyVolumeGivesZeros) {
  const auto arch = fit_arch(24.0, 48.0);
  const double sp = arc_length(arch) / 32;
  const auto f = CavityFrame::around(arch, sp, 8, 10);
  const IntensityVolume zero(f.extents(), f.spacing);
  const LabelVolume none(f.extents(), f.spacing);
  const auto p = project_panoramic(zero, &none, arch, 10 * sp, 32, 8);
  for (double v : p.radiograph.data) EXPECT_EQ(v, 0.0);
  for (auto v : p.seg.data) EXPECT_EQ(v, 0);
  EXPECT_TRUE(p.boxes.empty());
}

TEST(Projection, RaysLeavingTheVolumeAreRejected) {
  const auto arch = fit_arch(24.0, 48.0);
  const double sp = arc_length(arch) / 32;
  const auto f = CavityFrame::around(arch, sp, 8, 10);
  const IntensityVolume v(f.extents(), f.spacing, 1.0f);
  EXPECT_THROW(project_panoramic(v, nullptr, arch, 200.0, 32, 8), std::domain_error);
}

TEST(Augment, ZeroRangesAreIdentity) {
  const auto& s = shared_sample(1);
  EXPECT_EQ(augment(s, AugmentConfig{0, 0, 0, 0}, 99), s);
  EXPECT_EQ(apply_augment(s, AugmentParams{}), s);
}

TEST(Augment, ShiftThenInverseRestoresOverlap) {
  const auto& s = shared_sample(1);
  AugmentParams fwd, back;
  fwd.shift_cols = 5;
  back.shift_cols = -5;
  fwd.shift_rows = 5;
  back.shift_rows = -5;
  const auto round = apply_augment(apply_augment(s, fwd), back);
  const auto R = s.radiograph.rows, C = s.radiograph.cols;
  for (std::int64_t r = 0; r + 5 < R; ++r)
    for (std::int64_t c = 0; c + 5 < C; ++c) {
      EXPECT_EQ(round.radiograph.at(r, c), s.radiograph.at(r, c));
      for (int k = 0; k < 32; ++k) EXPECT_EQ(round.seg_gt.at(r, c, k), s.seg_gt.at(r, c, k));
    }
}

TEST(Augment, BoxesContainEveryHotPixel) {
  const auto& s = shared_sample(0);
  AugmentConfig cfg;
  cfg.max_shift_px = 6;
  cfg.max_rotation_deg = 8;
  cfg.max_scale_delta = 0.1;
  for (std::uint64_t seed = 0; seed < 6; ++seed) {
    const auto a = augment(s, cfg, seed);
    // Recompute tight boxes by brute force and compare.
    for (int k = 0; k < 32; ++k) {
      std::int64_t r0 = a.seg_gt.rows, r1 = -1, c0 = a.seg_gt.cols, c1 = -1;
      for (std::int64_t r = 0; r < a.seg_gt.rows; ++r)
        for (std::int64_t c = 0; c < a.seg_gt.cols; ++c) {
          if (!a.seg_gt.at(r, c, k)) continue;
          r0 = std::min(r0, r);
          r1 = std::max(r1, r);
          c0 = std::min(c0, c);
          c1 = std::max(c1, c);
        }
      const auto it = std::find_if(a.boxes_gt.begin(), a.boxes_gt.end(),
                                   [&](const ToothBox& b) { return b.tooth.index() == k; });
      if (r1 < 0) {
        EXPECT_EQ(it, a.boxes_gt.end());
        continue;
      }
      ASSERT_NE(it, a.boxes_gt.end());
      EXPECT_EQ(it->y_min, r0);
      EXPECT_EQ(it->y_max, r1);
      EXPECT_EQ(it->x_min, c0);
      EXPECT_EQ(it->x_max, c1);
    }
  }
}

TEST(Augment, DeterministicPerSeedAndNoisy) {
  const auto& s = shared_sample(1);
  const AugmentConfig cfg;
  EXPECT_EQ(augment(s, cfg, 4), augment(s, cfg, 4));
  EXPECT_NE(augment(s, cfg, 4).radiograph.data, augment(s, cfg, 5).radiograph.data);
  AugmentConfig noise_only{0, 0, 0, 0.05};
  const auto n = augment(s, noise_only, 1);
  EXPECT_EQ(n.seg_gt, s.seg_gt);
  double sq = 0.0;
  for (std::size_t i = 0; i < n.radiograph.data.size(); ++i) {
    const double d = n.radiograph.data[i] - s.radiograph.data[i];
    sq += d * d;
  }
  EXPECT_NEAR(std::sqrt(sq / static_cast<double>(n.radiograph.data.size())), 0.05, 0.005);
}

TEST(Splits, PaperRatiosAndRounding) {
  EXPECT_EQ(split_counts(23), (SplitCounts{15, 1, 7}));
  EXPECT_EQ(split_counts(10), (SplitCounts{7, 1, 2}));
  EXPECT_EQ(split_counts(1), (SplitCounts{1, 0, 0}));
  for (std::int64_t n = 1; n <= 60; ++n) {
    const auto c = split_counts(n);
    EXPECT_EQ(c.train + c.val + c.test, n);
    if (n >= 3) EXPECT_GE(c.val, 1);
  }
  const auto a = assign_splits(23, {}, 5);
  EXPECT_EQ(std::count(a.begin(), a.end(), Split::train), 15);
  EXPECT_EQ(std::count(a.begin(), a.end(), Split::val), 1);
  EXPECT_EQ(a, assign_splits(23, {}, 5));
}

TEST(Dataset, WriteReadRoundTripAndManifest) {
  const auto dir = scratch_dir("rt");
  const auto ds = generate_dataset(PhantomConfig{}, 3, 42, SplitRatios{1, 1, 1});
  write_dataset(dir, ds);
  const auto back = read_dataset(dir);
  ASSERT_EQ(back.samples.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(back.samples[i], ds.samples[i]) << i;
  EXPECT_EQ(back.splits, ds.splits);
  EXPECT_EQ(back.config, ds.config);
  const auto m = read_manifest(dir);
  EXPECT_EQ(m["schema_version"], kDatasetSchemaVersion);
  EXPECT_EQ(m["splits"]["train"].size(), 1u);
  EXPECT_EQ(m["splits"]["val"].size(), 1u);
  EXPECT_EQ(m["splits"]["test"].size(), 1u);
  // Regeneration from the recorded seeds reproduces every sample.
  for (std::size_t i = 0; i < 3; ++i) {
    const auto seed = m["samples"][i]["seed"].get<std::uint64_t>();
    EXPECT_EQ(generate_sample(back.config, seed), ds.samples[i]);
  }
  const auto test_only = read_dataset(dir, Split::test);
  ASSERT_EQ(test_only.samples.size(), 1u);
  fs::remove_all(dir);
}

TEST(Dataset, DetectsCorruptionAndVersionMismatch) {
  const auto dir = scratch_dir("bad");
  write_dataset(dir, generate_dataset(PhantomConfig{}, 1, 3));
  {
    std::fstream f(dir / "samples" / "sample_0000" / "radiograph.x2tv", std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(200);
    f.put('\x7f');
  }
  EXPECT_THROW(read_dataset(dir), IoError);
  auto m = read_manifest(dir);
  m["schema_version"] = 99;
  write_json_file(dir / "manifest.json", m);
  EXPECT_THROW(read_dataset(dir), IoError);
  fs::remove_all(dir);
}

TEST(VolumeFile, RejectsInvalidPayloads) {
  const auto dir = scratch_dir("vol");
  fs::create_directories(dir);
  LabelVolume bad({2, 2, 2}, 0.5);
  bad.data[3] = 19;  // not an FDI code
  EXPECT_THROW(write_volume(dir / "a.x2tv", bad, VolumeKind::label), std::exception);
  IntensityVolume neg({1, 2, 2}, 0.5);
  neg.data[0] = -1.0f;
  EXPECT_THROW(write_volume(dir / "b.x2tv", neg, VolumeKind::intensity), std::exception);
  LabelVolume ok({1, 2, 3}, 0.25);
  ok.data = {0, 11, 48, 0, 21, 0};
  write_volume(dir / "c.x2tv", ok, VolumeKind::label);
  EXPECT_EQ(read_volume<std::uint8_t>(dir / "c.x2tv", VolumeKind::label), ok);
  EXPECT_THROW(read_volume<std::uint8_t>(dir / "c.x2tv", VolumeKind::mask), IoError);
  fs::remove_all(dir);
}
