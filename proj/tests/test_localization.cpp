#include <gtest/gtest.h>

#include <map>
#include <numeric>
#include <random>

#include "x2teeth/localization.hpp"

using namespace x2t;

namespace {

// Union-find labelling, a different algorithm from the flood fill under test.
struct Components {
  std::vector<std::int64_t> parent;
  std::int64_t find(std::int64_t a) {
    while (parent[a] != a) a = parent[a] = parent[parent[a]];
    return a;
  }
  void unite(std::int64_t a, std::int64_t b) {
    a = find(a);
    b = find(b);
    if (a != b) parent[std::max(a, b)] = std::min(a, b);  // root is the row-major first pixel
  }
};

Image<std::uint8_t> oracle_largest(const Image<std::uint8_t>& m) {
  const std::int64_t H = m.rows, W = m.cols;
  Components uf{std::vector<std::int64_t>(static_cast<std::size_t>(H * W))};
  std::iota(uf.parent.begin(), uf.parent.end(), 0);
  for (std::int64_t r = 0; r < H; ++r)
    for (std::int64_t c = 0; c < W; ++c) {
      if (!m.at(r, c)) continue;
      if (r + 1 < H && m.at(r + 1, c)) uf.unite(r * W + c, (r + 1) * W + c);
      if (c + 1 < W && m.at(r, c + 1)) uf.unite(r * W + c, r * W + c + 1);
    }
  std::map<std::int64_t, std::int64_t> size;  // root -> size, ordered by root
  for (std::int64_t i = 0; i < H * W; ++i)
    if (m.data[static_cast<std::size_t>(i)]) ++size[uf.find(i)];
  std::int64_t best = -1, best_n = 0;
  for (const auto& [root, n] : size)
    if (n > best_n) best = root, best_n = n;
  Image<std::uint8_t> out(H, W);
  for (std::int64_t i = 0; i < H * W; ++i)
    if (m.data[static_cast<std::size_t>(i)] && uf.find(i) == best) out.data[static_cast<std::size_t>(i)] = 1;
  return out;
}

bool connected(const Image<std::uint8_t>& m) {
  std::int64_t n = 0;
  for (auto v : m.data) n += v;
  if (n == 0) return true;
  return oracle_largest(m) == m;
}

Image<std::uint8_t> random_mask(std::mt19937_64& rng, std::int64_t H, std::int64_t W, double density) {
  std::bernoulli_distribution b(density);
  Image<std::uint8_t> m(H, W);
  for (auto& v : m.data) v = b(rng);
  return m;
}

// 32×32 probmap with four random categories populated.
Image<float> random_probmap(std::mt19937_64& rng, std::vector<int>& populated) {
  Image<float> p(32, 32, FdiCode::kCount);
  std::uniform_real_distribution<float> low(0.0f, 0.5f), high(0.5001f, 1.0f), density(0.25f, 0.65f);
  std::vector<int> ch(32);
  std::iota(ch.begin(), ch.end(), 0);
  std::shuffle(ch.begin(), ch.end(), rng);
  populated.assign(ch.begin(), ch.begin() + 4);
  for (auto& v : p.data) v = low(rng);
  for (int c : populated) {
    const auto m = random_mask(rng, 32, 32, density(rng));
    for (std::int64_t i = 0; i < 32 * 32; ++i)
      if (m.data[static_cast<std::size_t>(i)]) p.data[static_cast<std::size_t>(i * 32 + c)] = high(rng);
  }
  return p;
}

}  // namespace

TEST(ThresholdMultihot, StrictAndMultiHot) {
  Image<float> p(1, 2, 32, 0.4f);
  EXPECT_EQ(threshold_multihot(p, 0.5), Image<std::uint8_t>(1, 2, 32));
  p.at(0, 0, 0) = 0.7f;
  p.at(0, 0, 1) = 0.6f;
  p.at(0, 1, 2) = 0.5f;
  const auto m = threshold_multihot(p, 0.5);
  EXPECT_EQ(m.at(0, 0, 0), 1);
  EXPECT_EQ(m.at(0, 0, 1), 1);
  EXPECT_EQ(m.at(0, 1, 2), 0);
  EXPECT_THROW(threshold_multihot(p, 0.0), std::invalid_argument);
  EXPECT_THROW(threshold_multihot(p, 1.0), std::invalid_argument);
}

TEST(LargestIsland, HandCases) {
  Image<std::uint8_t> m(4, 6);
  EXPECT_EQ(largest_island(m), m);
  // Sizes 5 and 3; diagonal contact does not connect.
  for (auto [r, c] : {std::pair{0, 0}, {0, 1}, {1, 1}, {2, 1}, {2, 0}}) m.at(r, c) = 1;
  for (auto [r, c] : {std::pair{3, 2}, {3, 3}, {3, 4}}) m.at(r, c) = 1;
  const auto big = largest_island(m);
  std::int64_t n = 0;
  for (auto v : big.data) n += v;
  EXPECT_EQ(n, 5);
  EXPECT_EQ(big.at(3, 3), 0);
  const Image<std::uint8_t> full(5, 5, 1, 1);
  EXPECT_EQ(largest_island(full), full);
}

TEST(LargestIsland, TieGoesToRowMajorFirstComponent) {
  Image<std::uint8_t> m(3, 5);
  m.at(2, 0) = m.at(2, 1) = 1;  // first pixel (2,0)
  m.at(0, 4) = m.at(1, 4) = 1;  // first pixel (0,4): earlier in row-major order
  const auto out = largest_island(m);
  EXPECT_EQ(out.at(0, 4), 1);
  EXPECT_EQ(out.at(2, 0), 0);
}

TEST(LargestIsland, MatchesUnionFindOracle) {
  std::mt19937_64 rng(2024);
  std::uniform_real_distribution<double> dens(0.2, 0.7);
  for (int trial = 0; trial < 400; ++trial) {
    const auto m = random_mask(rng, 1 + trial % 17, 1 + (trial * 7) % 23, dens(rng));
    const auto out = largest_island(m);
    ASSERT_EQ(out, oracle_largest(m)) << trial;
    EXPECT_TRUE(connected(out));
    for (std::size_t i = 0; i < m.data.size(); ++i) EXPECT_LE(out.data[i], m.data[i]);
  }
}

TEST(LocalizeTeeth, SingleBlobAndMinArea) {
  Image<float> p(40, 40, 32, 0.1f);
  const int ch = FdiCode::from_code(11).index();
  for (int r = 5; r < 15; ++r)
    for (int c = 20; c < 30; ++c) p.at(r, c, ch) = 0.9f;
  const auto boxes = localize_teeth(p);
  ASSERT_EQ(boxes.size(), 1u);
  EXPECT_EQ(boxes[0], (ToothBox{FdiCode::from_code(11), 20, 29, 5, 14}));
  EXPECT_TRUE(localize_teeth(p, {0.5, 101}).empty());
  EXPECT_EQ(localize_teeth(p, {0.5, 100}).size(), 1u);
}

TEST(LocalizeTeeth, MatchesBruteForceOracleOn100Instances) {
  std::mt19937_64 rng(77);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<int> populated;
    const auto p = random_probmap(rng, populated);
    const LocalizeConfig cfg{0.5, 1 + trial % 12};
    Image<std::uint8_t> islands;
    const auto boxes = localize_teeth(p, cfg, &islands);
    std::vector<ToothBox> expect;
    for (int c = 0; c < 32; ++c) {
      Image<std::uint8_t> m(32, 32);
      for (std::int64_t i = 0; i < 32 * 32; ++i) m.data[static_cast<std::size_t>(i)] = p.data[static_cast<std::size_t>(i * 32 + c)] > 0.5f;
      const auto isl = oracle_largest(m);
      std::int64_t area = 0;
      ToothBox b{FdiCode::from_index(c), 32, -1, 32, -1};
      for (std::int64_t r = 0; r < 32; ++r)
        for (std::int64_t q = 0; q < 32; ++q) {
          if (!isl.at(r, q)) continue;
          ++area;
          b.x_min = std::min(b.x_min, q);
          b.x_max = std::max(b.x_max, q);
          b.y_min = std::min(b.y_min, r);
          b.y_max = std::max(b.y_max, r);
        }
      const bool keep = area > 0 && area >= cfg.min_area;
      if (keep) expect.push_back(b);
      for (std::int64_t i = 0; i < 32 * 32; ++i) {
        ASSERT_EQ(islands.data[static_cast<std::size_t>(i * 32 + c)], keep ? isl.data[static_cast<std::size_t>(i)] : 0);
      }
    }
    ASSERT_EQ(boxes, expect) << trial;
    EXPECT_LE(boxes.size(), populated.size());
  }
}

TEST(LocalizeTeeth, MonotoneInThreshold) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<int> populated;
    const auto p = random_probmap(rng, populated);
    for (double lo : {0.3, 0.55, 0.7}) {
      const auto a = threshold_multihot(p, lo), b = threshold_multihot(p, lo + 0.1);
      for (std::size_t i = 0; i < a.data.size(); ++i) EXPECT_LE(b.data[i], a.data[i]);
    }
  }
}

TEST(LocalizeTeeth, RejectsWrongChannelCount) {
  EXPECT_THROW(localize_teeth(Image<float>(4, 4, 3)), std::invalid_argument);
}
