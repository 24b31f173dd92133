#pragma once

#include <algorithm>
#include <array>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <map>
#include <optional>
#include <filesystem>
#include <string>
#include <vector>

#include "x2teeth/io.hpp"
#include "x2teeth/json_io.hpp"
#include "x2teeth/phantom.hpp"
#include "x2teeth/random.hpp"
#include "x2teeth/volume.hpp"

// On-disk datasets: one directory per sample holding X2TV files and a
// meta.json, plus a top-level manifest.json with seeds, splits and checksums.
namespace x2t {

inline constexpr int kDatasetSchemaVersion = 1;

struct SplitRatios {
  int train = 15;
  int val = 1;
  int test = 7;
  friend bool operator==(const SplitRatios&, const SplitRatios&) = default;
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(SplitRatios, train, val, test)

struct SplitCounts {
  std::int64_t train = 0, val = 0, test = 0;
  friend bool operator==(const SplitCounts&, const SplitCounts&) = default;
};

/// train = round(N·r_train), val = ceil(N·r_val) but at least 1 when its
/// ratio is non-zero, test = the rest.
inline SplitCounts split_counts(std::int64_t n, const SplitRatios& r = {}) {
  if (n < 0 || r.train < 0 || r.val < 0 || r.test < 0 || r.train + r.val + r.test == 0) {
    throw std::invalid_argument("split_counts: bad sample count or ratios");
  }
  const double total = r.train + r.val + r.test;
  SplitCounts c;
  c.train = std::min<std::int64_t>(n, std::llround(static_cast<double>(n) * r.train / total));
  if (r.val > 0) {
    c.val = std::max<std::int64_t>(1, static_cast<std::int64_t>(std::ceil(static_cast<double>(n) * r.val / total)));
  }
  c.val = std::min(c.val, n - c.train);
  c.test = n - c.train - c.val;
  return c;
}

enum class Split { train, val, test };

inline const char* split_name(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "?";
}

inline Split parse_split(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  if (s == "test") return Split::test;
  throw std::invalid_argument("unknown split '" + s + "'");
}

/// Shuffled split assignment, deterministic in `seed`.
inline std::vector<Split> assign_splits(std::int64_t n, const SplitRatios& r, std::uint64_t seed) {
  const auto c = split_counts(n, r);
  std::vector<std::int64_t> order(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
  Rng rng(derive_seed(seed, 0x5b1));
  for (std::int64_t i = n - 1; i > 0; --i) {
    std::swap(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(rng.integer(0, i))]);
  }
  std::vector<Split> out(static_cast<std::size_t>(n), Split::test);
  for (std::int64_t i = 0; i < n; ++i) {
    const auto idx = static_cast<std::size_t>(order[static_cast<std::size_t>(i)]);
    out[idx] = i < c.train ? Split::train : (i < c.train + c.val ? Split::val : Split::test);
  }
  return out;
}

struct Dataset {
  PhantomConfig config;
  std::uint64_t seed = 0;
  SplitRatios ratios;
  std::vector<Sample> samples;
  std::vector<Split> splits;  // parallel to samples

  std::vector<const Sample*> split(Split s) const {
    std::vector<const Sample*> out;
    for (std::size_t i = 0; i < samples.size(); ++i) {
      if (splits[i] == s) out.push_back(&samples[i]);
    }
    return out;
  }
};

/// Seed of sample i. A sample whose phantom cannot be placed is redrawn
/// with the next attempt index; the manifest records the seed that worked.
inline std::uint64_t sample_seed(std::uint64_t base, std::int64_t i, int attempt) {
  return derive_seed(base, static_cast<std::uint64_t>(i), static_cast<std::uint64_t>(attempt));
}

inline Sample generate_indexed_sample(const PhantomConfig& cfg, std::uint64_t base, std::int64_t i) {
  for (int attempt = 0; attempt < 16; ++attempt) {
    try {
      return generate_sample(cfg, sample_seed(base, i, attempt));
    } catch (const PlacementError&) {
    }
  }
  throw PlacementError("sample " + std::to_string(i) + ": no placeable phantom after 16 seeds");
}

inline Dataset generate_dataset(const PhantomConfig& cfg, std::int64_t n, std::uint64_t seed,
                                const SplitRatios& ratios = {}) {
  cfg.validate();
  if (n <= 0) throw std::invalid_argument("generate_dataset: need at least one sample");
  Dataset ds{cfg, seed, ratios, {}, assign_splits(n, ratios, seed)};
  for (std::int64_t i = 0; i < n; ++i) ds.samples.push_back(generate_indexed_sample(cfg, seed, i));
  return ds;
}

namespace detail {

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016" PRIx64, v);
  return buf;
}

inline std::string sample_dir_name(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "sample_%04zu", i);
  return buf;
}

inline std::string tooth_file(int code) { return "tooth_" + std::to_string(code) + ".x2tv"; }

}  // namespace detail

/// Writes radiograph, seg_gt, cavity_gt, tooth volumes and meta.json into `dir`.
/// Returns file name -> checksum.
inline std::map<std::string, std::string> write_sample(const std::filesystem::path& dir, const Sample& s) {
  std::filesystem::create_directories(dir);
  const auto R = s.radiograph.rows, C = s.radiograph.cols;
  IntensityVolume rad({1, R, C}, s.spacing);
  rad.data = s.radiograph.data;
  write_volume(dir / "radiograph.x2tv", rad, VolumeKind::intensity);
  LabelVolume seg({R, C, s.seg_gt.channels}, s.spacing);
  seg.data = s.seg_gt.data;
  write_volume(dir / "seg_gt.x2tv", seg, VolumeKind::mask);
  write_volume(dir / "cavity_gt.x2tv", s.cavity_gt, VolumeKind::label);
  json teeth = json::array();
  for (const auto& [code, vol] : s.tooth_volumes) {
    write_volume(dir / detail::tooth_file(code), vol, VolumeKind::mask);
    teeth.push_back(code);
  }
  json meta;
  meta["seed"] = s.seed;
  meta["arch"] = s.arch;
  meta["spacing"] = s.spacing;
  meta["ray_depth"] = s.ray_depth;
  meta["boxes"] = s.boxes_gt;
  meta["teeth"] = teeth;
  write_json_file(dir / "meta.json", meta);
  std::map<std::string, std::string> sums;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    sums[e.path().filename().string()] = detail::hex64(file_checksum(e.path()));
  }
  return sums;
}

inline Sample read_sample(const std::filesystem::path& dir) {
  Sample s;
  const json meta = read_json_file(dir / "meta.json");
  try {
    s.seed = meta.at("seed").get<std::uint64_t>();
    s.arch = meta.at("arch").get<ArchCurve>();
    s.arch.validate();
    s.spacing = meta.at("spacing").get<double>();
    s.ray_depth = meta.at("ray_depth").get<double>();
    s.boxes_gt = meta.at("boxes").get<std::vector<ToothBox>>();
  } catch (const json::exception& e) {
    throw IoError((dir / "meta.json").string() + ": " + e.what());
  }
  const auto rad = read_volume<float>(dir / "radiograph.x2tv", VolumeKind::intensity);
  if (rad.extents[0] != 1) throw IoError(dir.string() + ": radiograph must be a single slice");
  s.radiograph = Image<float>(rad.extents[1], rad.extents[2]);
  s.radiograph.data = rad.data;
  const auto seg = read_volume<std::uint8_t>(dir / "seg_gt.x2tv", VolumeKind::mask);
  if (seg.extents[0] != rad.extents[1] || seg.extents[1] != rad.extents[2] || seg.extents[2] != FdiCode::kCount) {
    throw IoError(dir.string() + ": seg_gt extents do not match the radiograph");
  }
  s.seg_gt = Image<std::uint8_t>(seg.extents[0], seg.extents[1], seg.extents[2]);
  s.seg_gt.data = seg.data;
  s.cavity_gt = read_volume<std::uint8_t>(dir / "cavity_gt.x2tv", VolumeKind::label);
  for (const auto& c : meta.at("teeth")) {
    const int code = c.get<int>();
    if (!FdiCode::is_valid_code(code)) throw IoError(dir.string() + ": bad tooth code in meta.json");
    s.tooth_volumes.emplace(code, read_volume<std::uint8_t>(dir / detail::tooth_file(code), VolumeKind::mask));
  }
  return s;
}

inline void write_dataset(const std::filesystem::path& root, const Dataset& ds) {
  if (ds.samples.size() != ds.splits.size()) throw std::invalid_argument("write_dataset: split list size");
  std::filesystem::create_directories(root);
  json samples = json::array();
  json splits{{"train", json::array()}, {"val", json::array()}, {"test", json::array()}};
  for (std::size_t i = 0; i < ds.samples.size(); ++i) {
    const auto name = detail::sample_dir_name(i);
    const auto sums = write_sample(root / "samples" / name, ds.samples[i]);
    samples.push_back({{"id", name}, {"seed", ds.samples[i].seed}, {"split", split_name(ds.splits[i])},
                       {"checksums", sums}});
    splits[split_name(ds.splits[i])].push_back(name);
  }
  json manifest{{"schema_version", kDatasetSchemaVersion},
                {"seed", ds.seed},
                {"config", ds.config},
                {"ratios", ds.ratios},
                {"splits", splits},
                {"samples", samples}};
  write_json_file(root / "manifest.json", manifest);
}

inline json read_manifest(const std::filesystem::path& root) {
  const json m = read_json_file(root / "manifest.json");
  if (!m.contains("schema_version") || !m["schema_version"].is_number_integer()) {
    throw IoError("manifest: missing schema_version");
  }
  if (m["schema_version"].get<int>() != kDatasetSchemaVersion) {
    throw IoError("manifest: unsupported schema_version " + m["schema_version"].dump());
  }
  return m;
}

/// Reads and checksum-verifies a dataset. `only` restricts loading to one split.
inline Dataset read_dataset(const std::filesystem::path& root, std::optional<Split> only = std::nullopt) {
  const json m = read_manifest(root);
  Dataset ds;
  try {
    ds.seed = m.at("seed").get<std::uint64_t>();
    ds.config = m.at("config").get<PhantomConfig>();
    ds.ratios = m.at("ratios").get<SplitRatios>();
    for (const auto& e : m.at("samples")) {
      const Split sp = parse_split(e.at("split").get<std::string>());
      if (only && *only != sp) continue;
      const auto dir = root / "samples" / e.at("id").get<std::string>();
      for (const auto& [file, sum] : e.at("checksums").items()) {
        if (detail::hex64(file_checksum(dir / file)) != sum.get<std::string>()) {
          throw IoError("checksum mismatch: " + (dir / file).string());
        }
      }
      Sample s = read_sample(dir);
      if (s.seed != e.at("seed").get<std::uint64_t>()) throw IoError(dir.string() + ": seed mismatch");
      ds.samples.push_back(std::move(s));
      ds.splits.push_back(sp);
    }
  } catch (const json::exception& e) {
    throw IoError("manifest: " + std::string(e.what()));
  }
  ds.config.validate();
  return ds;
}

}  // namespace x2t
