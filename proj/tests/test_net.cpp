#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <set>

#include "test_util.hpp"
#include "tiny_net.hpp"
#include "x2teeth/adam.hpp"
#include "x2teeth/gradcheck.hpp"
#include "x2teeth/net.hpp"
#include "x2teeth/patches.hpp"
#include "x2teeth/train.hpp"

using namespace x2t;
using x2t::testing::random_tensor;
using x2t::testing::random_weights;
using x2t::testing::tiny;
using x2t::testing::tiny_sample;

namespace {

// Small paper-proportioned config: the paper's 120×60×60 patches on a modest
// feature map, with narrow layers so the test stays quick.
NetConfig paper_patch() {
  NetConfig c;
  c.height = 128;
  c.width = 256;
  c.base_channels = 2;
  c.stages = 2;
  c.max_channels = 4;
  c.seg_hidden = 4;
  c.patch = {120, 60, 60};
  c.recon_encoder = {2, 2};
  c.latent = 4;
  c.recon_decoder = {2, 2, 2};
  return c;
}

Tensor<float> random_radiograph(const NetConfig& c, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return random_tensor<float>({1, 1, c.height, c.width}, rng, 0.0, 1.0);
}

}  // namespace

TEST(NetConfig, ValidatesExtents) {
  EXPECT_NO_THROW(NetConfig{}.validate());
  auto c = NetConfig{};
  c.height = 100;  // not divisible by 2^3
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = NetConfig{};
  c.patch = {24, 12, 10};
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = NetConfig{};
  c.seg_prior = 1.0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
}

TEST(X2TeethNet, DeskScaleShapesAndRanges) {
  X2TeethNet<float> net(NetConfig{});
  const auto& c = net.config();
  Tape<float> tape;
  const auto f = net.extnet(tape, random_radiograph(c, 1));
  EXPECT_EQ(f.shape(), (Shape{1, c.features(), c.height, c.width}));
  const auto p = net.segnet(tape, f);
  EXPECT_EQ(p.shape(), (Shape{c.height, c.width, 32}));
  for (float v : p.values()) {
    EXPECT_GT(v, 0.0f);
    EXPECT_LT(v, 1.0f);
  }
  const auto out = net.reconnet(tape, crop_windows(tape, f, {{10, 10}, {50, 100}}, c.patch[0], c.patch[1]));
  ASSERT_EQ(out.size(), 2u);
  for (const auto& o : out) {
    EXPECT_EQ(o.shape(), (Shape{24, 12, 12, 2}));
    for (std::int64_t i = 0; i < o.numel() / 2; ++i) EXPECT_NEAR(o.data()[2 * i] + o.data()[2 * i + 1], 1.0f, 1e-6f);
  }
  EXPECT_THROW(net.extnet(tape, Tensor<float>(Shape{1, 1, 64, 192})), ShapeError);
  EXPECT_THROW(net.reconnet(tape, Tensor<float>(Shape{1, c.features(), 24, 10})), ShapeError);
}

TEST(X2TeethNet, PaperScalePatchShapes) {
  X2TeethNet<float> net(paper_patch());
  const auto& c = net.config();
  Tape<float> tape;
  const auto f = net.extnet(tape, random_radiograph(c, 2));
  EXPECT_EQ(f.shape(), (Shape{1, c.features(), 128, 256}));
  const auto out = net.reconnet(tape, crop_windows(tape, f, {{64, 128}}, 120, 60));
  ASSERT_EQ(out.size(), 1u);
  EXPECT_EQ(out[0].shape(), (Shape{120, 60, 60, 2}));
}

TEST(X2TeethNet, DeterministicForwardAndInit) {
  X2TeethNet<float> a(NetConfig{}), b(NetConfig{});
  for (std::size_t i = 0; i < a.tensors().size(); ++i) {
    ASSERT_TRUE(std::equal(a.tensors()[i].values().begin(), a.tensors()[i].values().end(),
                           b.tensors()[i].values().begin()));
  }
  const auto x = random_radiograph(a.config(), 3);
  Tape<float> t1, t2;
  const auto p1 = a.segnet(t1, a.extnet(t1, x));
  const auto p2 = a.segnet(t2, a.extnet(t2, x));
  EXPECT_TRUE(std::equal(p1.values().begin(), p1.values().end(), p2.values().begin()));
  auto other = NetConfig{};
  other.init_seed = 2;
  X2TeethNet<float> c(other);
  EXPECT_FALSE(std::equal(a.tensors()[0].values().begin(), a.tensors()[0].values().end(),
                          c.tensors()[0].values().begin()));
}

TEST(X2TeethNet, ParameterGroupsAndPriorBias) {
  X2TeethNet<float> net(NetConfig{});
  std::set<int> groups;
  for (std::size_t i = 0; i < net.names().size(); ++i) {
    const auto& n = net.names()[i];
    const auto g = net.group_of(i);
    using G = X2TeethNet<float>::Group;
    EXPECT_EQ(g, n.starts_with("ext.") ? G::ext : n.starts_with("seg.") ? G::seg : G::recon) << n;
    groups.insert(static_cast<int>(g));
  }
  EXPECT_EQ(groups.size(), 3u);
  for (float b : net.param("seg.head.b").values()) EXPECT_NEAR(1.0 / (1.0 + std::exp(-b)), 0.01, 1e-6);
  EXPECT_THROW(net.param("nope"), std::out_of_range);
}

TEST(X2TeethNet, GradientReachesFirstLayer) {
  X2TeethNet<float> net(NetConfig{});
  const auto x = random_radiograph(net.config(), 4);
  Tape<float> tape;
  const auto p = net.segnet(tape, net.extnet(tape, x));
  std::mt19937_64 rng(4);
  const auto w = random_weights(static_cast<std::size_t>(p.numel()), rng);
  tape.backward(dot(tape, p, std::vector<float>(w.begin(), w.end())));
  double norm = 0.0;
  for (float g : net.param("ext.in0.w").grad()) norm += g * g;
  EXPECT_GT(norm, 0.0);
}

TEST(SegNet, TwoCategoriesCanBothExceedHalf) {
  X2TeethNet<float> net(NetConfig{});
  auto& b = net.param("seg.head.b");
  for (auto& w : net.param("seg.head.w").values()) w = 0.0f;
  b.values()[3] = 2.0f;
  b.values()[4] = 1.0f;
  Tape<float> tape;
  const auto p = net.segnet(tape, net.extnet(tape, random_radiograph(net.config(), 5)));
  for (std::int64_t i = 0; i < p.numel() / 32; ++i) {
    EXPECT_GT(p.data()[i * 32 + 3], 0.5f);
    EXPECT_GT(p.data()[i * 32 + 4], 0.5f);
    EXPECT_LT(p.data()[i * 32 + 5], 0.5f);
  }
}

TEST(CropWindows, InteriorCornerAndGradient) {
  std::mt19937_64 rng(6);
  auto x = random_tensor({1, 2, 10, 12}, rng, -1, 1, true);
  Tape<double> tape;
  const auto y = crop_windows(tape, x, {{5, 6}, {0, 0}}, 4, 6);
  ASSERT_EQ(y.shape(), (Shape{2, 2, 4, 6}));
  for (int f = 0; f < 2; ++f)
    for (int r = 0; r < 4; ++r)
      for (int c = 0; c < 6; ++c) {
        EXPECT_EQ(y.data()[((0 * 2 + f) * 4 + r) * 6 + c], x.data()[(f * 10 + 3 + r) * 12 + 3 + c]);
        const double corner = y.data()[((1 * 2 + f) * 4 + r) * 6 + c];
        if (r < 2 || c < 3) {
          EXPECT_EQ(corner, 0.0);
        } else {
          EXPECT_EQ(corner, x.data()[(f * 10 + r - 2) * 12 + c - 3]);
        }
      }
  // d(sum of window 0)/dx is the window's indicator.
  const auto only = crop_windows(tape, x, {{5, 6}}, 4, 6);
  tape.backward(sum(tape, only));
  for (int f = 0; f < 2; ++f)
    for (int r = 0; r < 10; ++r)
      for (int c = 0; c < 12; ++c) {
        const bool inside = r >= 3 && r < 7 && c >= 3 && c < 9;
        EXPECT_EQ(x.grad()[(f * 10 + r) * 12 + c], inside ? 1.0 : 0.0);
      }
  EXPECT_THROW(crop_windows(tape, x, {{10, 0}}, 4, 6), ShapeError);
}

TEST(SamplePatches, CountsCentresAndBounds) {
  const std::vector<ToothBox> one{{FdiCode::from_code(11), 10, 19, 30, 49}};
  const auto z = sample_patches(one, 96, 192, 24, 12, PatchPolicy::gt_jittered, 1, {3, 0.0});
  ASSERT_EQ(z.size(), 3u);
  for (const auto& s : z) {
    EXPECT_EQ(s.center_row, 39);
    EXPECT_EQ(s.center_col, 14);
    EXPECT_EQ(s.tooth.code(), 11);
  }
  std::vector<ToothBox> all;
  for (auto c : all_fdi_codes()) {
    const std::int64_t x = c.index() * 6;
    all.push_back({c, x, x + 5, c.is_upper() ? 0 : 80, c.is_upper() ? 15 : 95});
  }
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    const auto s = sample_patches(all, 96, 192, 24, 12, PatchPolicy::gt_jittered, seed);
    ASSERT_EQ(s.size(), 10u);
    std::set<int> distinct;
    for (const auto& p : s) {
      distinct.insert(p.tooth.code());
      EXPECT_GE(p.center_row, 0);
      EXPECT_LT(p.center_row, 96);
      EXPECT_GE(p.center_col, 0);
      EXPECT_LT(p.center_col, 192);
      EXPECT_LE(std::abs(p.center_row - p.anchor_row), 3);  // round(0.1 · 24)
      EXPECT_LE(std::abs(p.center_col - p.anchor_col), 1);
    }
    EXPECT_EQ(distinct.size(), 10u);
  }
  EXPECT_EQ(sample_patches(all, 96, 192, 24, 12, PatchPolicy::gt_jittered, 9),
            sample_patches(all, 96, 192, 24, 12, PatchPolicy::gt_jittered, 9));
  EXPECT_THROW(sample_patches({}, 96, 192, 24, 12, PatchPolicy::predicted, 1), NoTeethDetected);
  const auto pred = sample_patches(one, 96, 192, 24, 12, PatchPolicy::predicted, 5);
  for (const auto& p : pred) EXPECT_EQ(p.center_row, p.anchor_row);
}

TEST(ShiftedTooth, FollowsWindowJitter) {
  LabelVolume t({4, 4, 2}, 1.0);
  t.at(1, 2, 0) = 1;
  PatchSpec s{FdiCode::from_code(11), 11, 9, 4, 4, 10, 10};  // window moved down 1, left 1
  const auto out = shifted_tooth(t, s);
  EXPECT_EQ(out.at(0, 3, 0), 1);
  std::int64_t n = 0;
  for (auto v : out.data) n += v;
  EXPECT_EQ(n, 1);
  const auto target = occupancy_target<float>(out);
  EXPECT_EQ(target.shape(), (Shape{4, 4, 2, 2}));
  EXPECT_EQ(target.data()[2 * out.index(0, 3, 0) + 1], 1.0f);
  EXPECT_EQ(target.data()[0], 1.0f);
}

TEST(CompositeLoss, GradientMatchesFiniteDifferences) {
  const PatchSampling opt{3, 0.1};
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    auto cfg = tiny();
    cfg.init_seed = seed + 1;
    X2TeethNet<double> net(cfg);
    // Zero biases put ReLU inputs exactly on the kink wherever the signal
    // is zero; random biases keep finite differences off it.
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-0.3, 0.3);
    for (std::size_t i = 0; i < net.names().size(); ++i) {
      if (net.names()[i].ends_with(".b") && net.names()[i] != "seg.head.b") {
        for (auto& v : net.tensors()[i].values()) v = u(rng);
      }
    }
    const auto s = tiny_sample(seed);
    GradCheckOptions g;
    g.eps = 1e-6;
    g.max_per_input = 12;
    g.seed = seed;
    const auto rep = check_gradients(
        [&](Tape<double>& t) { return compute_losses(t, net, s, 2, seed, opt).total; }, net.tensors(), g);
    EXPECT_LT(rep.max_rel_error, 1e-3) << rep.worst;
    EXPECT_GT(rep.checked, 100u);
  }
}

TEST(CompositeLoss, SegmentationPathOn16x16Input) {
  auto cfg = tiny();
  cfg.width = 16;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    cfg.init_seed = 10 + seed;
    X2TeethNet<double> net(cfg);
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-0.3, 0.3);
    for (std::size_t i = 0; i < net.names().size(); ++i) {
      if (net.names()[i].ends_with(".b") && net.names()[i] != "seg.head.b") {
        for (auto& v : net.tensors()[i].values()) v = u(rng);
      }
    }
    const auto x = random_tensor({1, 1, 16, 16}, rng, 0.0, 1.0);
    Tensor<double> gt(Shape{16, 16, 32});
    std::bernoulli_distribution b(0.1);
    for (auto& v : gt.values()) v = b(rng);
    std::vector<Tensor<double>> params;
    for (std::size_t i = 0; i < net.tensors().size(); ++i)
      if (net.group_of(i) != X2TeethNet<double>::Group::recon) params.push_back(net.tensors()[i]);
    GradCheckOptions g;
    g.eps = 1e-7;
    g.max_per_input = 12;
    g.seed = seed;
    const auto rep = check_gradients(
        [&](Tape<double>& t) { return dice_loss_multilabel(t, net.segnet(t, net.extnet(t, x)), gt); }, params, g);
    EXPECT_LT(rep.max_rel_error, 1e-3) << rep.worst;
  }
}

TEST(CompositeLoss, PatchGradientStaysInsideItsWindow) {
  X2TeethNet<double> net(tiny());
  const auto& c = net.config();
  std::mt19937_64 rng(12);
  auto f = random_tensor({1, c.features(), c.height, c.width}, rng, 0.0, 1.0, true);
  Tape<double> tape;
  const auto out = net.reconnet(tape, crop_windows(tape, f, {{7, 9}, {3, 25}}, c.patch[0], c.patch[1]));
  LabelVolume target({8, 4, 4}, 1.0, 1);
  tape.backward(dice_loss_3d(tape, out[0], occupancy_target<double>(target)));
  std::int64_t nonzero = 0;
  for (std::int64_t ch = 0; ch < c.features(); ++ch)
    for (std::int64_t r = 0; r < c.height; ++r)
      for (std::int64_t q = 0; q < c.width; ++q) {
        const double g = f.grad()[static_cast<std::size_t>((ch * c.height + r) * c.width + q)];
        const bool inside = r >= 3 && r < 11 && q >= 7 && q < 11;
        if (!inside) {
          EXPECT_EQ(g, 0.0) << r << "," << q;
        }
        nonzero += g != 0.0;
      }
  EXPECT_GT(nonzero, 0);
}

TEST(ReconNet, OverfitsOnePatch) {
  X2TeethNet<float> net(NetConfig{});
  const auto& c = net.config();
  std::mt19937_64 rng(13);
  const auto feat = random_tensor<float>({1, c.features(), c.height, c.width}, rng, 0.0, 1.0);
  LabelVolume tooth({24, 12, 12}, 1.0);
  for (std::int64_t r = 4; r < 20; ++r)
    for (std::int64_t q = 3; q < 9; ++q)
      for (std::int64_t k = 3; k < 9; ++k) tooth.at(r, q, k) = 1;
  const auto target = occupancy_target<float>(tooth);
  std::vector<Tensor<float>> params;
  for (std::size_t i = 0; i < net.tensors().size(); ++i)
    if (net.group_of(i) == X2TeethNet<float>::Group::recon) params.push_back(net.tensors()[i]);
  AdamState<float> adam;
  double loss = 1.0;
  for (int step = 0; step < 500 && loss >= 0.05; ++step) {
    Tape<float> tape;
    const auto out = net.reconnet(tape, crop_windows(tape, feat, {{40, 60}}, 24, 12));
    const auto L = dice_loss_3d(tape, out[0], target);
    for (auto& p : params) p.zero_grad();
    tape.backward(L);
    adam_step<float>(params, adam);
    loss = L.item();
  }
  EXPECT_LT(loss, 0.05);
}
