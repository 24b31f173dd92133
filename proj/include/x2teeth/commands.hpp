#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "x2teeth/dataset.hpp"
#include "x2teeth/json_io.hpp"
#include "x2teeth/metrics.hpp"
#include "x2teeth/pipeline.hpp"
#include "x2teeth/train.hpp"

// The four commands behind the x2teeth tool. Each writes its effective
// configuration to <out>/config.json before producing anything else.
namespace x2t {

/// Bad flags or an invalid configuration (exit code 1).
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(LocalizeConfig, threshold, min_area)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(ReconstructOptions, localize, cavity_oversample)

struct RunConfig {
  std::uint64_t seed = 7;  // also drives training; overrides train.seed
  std::int64_t count = 23;
  PhantomConfig phantom;
  SplitRatios ratios;
  TrainConfig train;
  ReconstructOptions reconstruct;
  DetectionConfig detection;
  double arch_exponent = 0.8;

  /// Net extents follow the phantom grid; the global seed reaches training.
  RunConfig effective() const {
    RunConfig r = *this;
    r.train.seed = seed;
    r.train.net.height = phantom.rows;
    r.train.net.width = phantom.cols;
    r.train.net.patch = phantom.patch;
    return r;
  }

  void validate() const {
    try {
      phantom.validate();
      train.net.validate();
    } catch (const std::invalid_argument& e) {
      throw UsageError(e.what());
    }
    if (count < 1) throw UsageError("count must be positive");
    if (train.epochs_stage1 < 0 || train.epochs_stage2 < 0) throw UsageError("epoch counts must be non-negative");
    if (!(reconstruct.localize.threshold > 0 && reconstruct.localize.threshold < 1)) {
      throw UsageError("localize.threshold must lie in (0, 1)");
    }
    if (!(detection.match_iou > 0 && detection.match_iou <= 1)) throw UsageError("detection.match_iou must lie in (0, 1]");
    if (!(arch_exponent > 0)) throw UsageError("arch_exponent must be positive");
  }
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(RunConfig, seed, count, phantom, ratios, train, reconstruct,
                                                detection, arch_exponent)

inline RunConfig load_run_config(const std::optional<std::filesystem::path>& path,
                                 std::optional<std::uint64_t> seed = std::nullopt) {
  RunConfig c;
  if (path) {
    try {
      c = read_json_file(*path).get<RunConfig>();
    } catch (const json::exception& e) {
      throw UsageError(path->string() + ": " + e.what());
    } catch (const IoError& e) {
      throw UsageError(e.what());
    }
  }
  if (seed) c.seed = *seed;
  c = c.effective();
  c.validate();
  return c;
}

inline void echo_config(const std::filesystem::path& out, const RunConfig& c, const std::string& command) {
  std::filesystem::create_directories(out);
  json j = c;
  j["command"] = command;
  write_json_file(out / "config.json", j);
}

// ---- gen-data --------------------------------------------------------------

struct GenDataResult {
  SplitCounts counts;
  std::uint64_t manifest_checksum = 0;
};

inline GenDataResult cmd_gen_data(const RunConfig& cfg, const std::filesystem::path& out) {
  echo_config(out, cfg, "gen-data");
  const auto ds = generate_dataset(cfg.phantom, cfg.count, cfg.seed, cfg.ratios);
  write_dataset(out, ds);
  return {split_counts(cfg.count, cfg.ratios), file_checksum(out / "manifest.json")};
}

// ---- train -----------------------------------------------------------------

enum class StageSel { one, two, both };

inline StageSel parse_stage(const std::string& s) {
  if (s == "1") return StageSel::one;
  if (s == "2") return StageSel::two;
  if (s == "both") return StageSel::both;
  throw UsageError("--stage must be 1, 2 or both, got '" + s + "'");
}

struct TrainResult {
  std::vector<LossRow> stage1, stage2;
  std::filesystem::path checkpoint;  // last final checkpoint written
  std::vector<std::filesystem::path> written;
};

/// Trains on the dataset's train split. `resume` continues from a stage
/// checkpoint; stage 2 alone starts from <out>/stage1.x2t1 unless resuming.
inline TrainResult cmd_train(const RunConfig& cfg, const std::filesystem::path& data, const std::filesystem::path& out,
                             StageSel stage, const std::optional<std::filesystem::path>& resume = std::nullopt,
                             const std::function<void(int, const LossRow&)>& progress = {}) {
  const auto ds = read_dataset(data, Split::train);
  if (ds.samples.empty()) throw TrainError(data.string() + ": train split is empty");
  RunConfig run = cfg;
  run.phantom = ds.config;  // the network must match the data it trains on
  run = run.effective();
  run.validate();
  echo_config(out, run, "train");
  std::vector<const Sample*> train;
  for (const auto& s : ds.samples) train.push_back(&s);

  std::optional<Checkpoint> init;
  if (resume) init = read_checkpoint(*resume);
  TrainResult res;
  auto wrap = [&](int st) {
    return [&, st](const LossRow& r) {
      if (progress) progress(st, r);
    };
  };
  const bool resume2 = init && init->stage == 2;
  if (stage != StageSel::two && !resume2) {
    const auto r = train_stage(1, train, run.train, out, init ? &*init : nullptr, wrap(1));
    res.stage1 = r.log;
    res.checkpoint = r.checkpoint;
    res.written.insert(res.written.end(), r.written.begin(), r.written.end());
    if (stage == StageSel::one) return res;
    init = read_checkpoint(r.checkpoint);
  } else if (stage == StageSel::one) {
    throw TrainError("cannot run stage 1 from a stage-2 checkpoint");
  }
  if (!init) {
    const auto s1 = final_checkpoint(out, 1);
    if (!std::filesystem::exists(s1)) throw TrainError("stage 2 needs " + s1.string() + " or --resume");
    init = read_checkpoint(s1);
  }
  const auto r = train_stage(2, train, run.train, out, &*init, wrap(2));
  res.stage2 = r.log;
  res.checkpoint = r.checkpoint;
  res.written.insert(res.written.end(), r.written.begin(), r.written.end());
  return res;
}

// ---- reconstruct -----------------------------------------------------------

inline X2TeethNet<float> load_net(const std::filesystem::path& checkpoint) {
  const auto ck = read_checkpoint(checkpoint);
  X2TeethNet<float> net(ck.net);
  load_weights(net, ck);
  for (auto& t : net.tensors()) t.set_requires_grad(false);
  return net;
}

inline json reconstruction_json(const Reconstruction& r) {
  json counts = json::object();
  for (const auto& [code, n] : r.voxel_counts) counts[std::to_string(code)] = n;
  return json{{"status", r.degraded ? "no_teeth_detected" : "ok"},
              {"arch", r.arch},
              {"spacing_mm", r.spacing},
              {"cavity_extents", r.cavity.extents},
              {"cavity_spacing_mm", r.cavity.spacing},
              {"boxes", r.boxes},
              {"voxel_counts", counts}};
}

struct ReconstructRequest {
  std::optional<std::filesystem::path> checkpoint;
  std::filesystem::path input;  // radiograph .x2tv, or a dataset sample directory
  std::optional<double> depth_mm, width_mm;
  bool gt_oracle = false;
};

inline Image<float> read_radiograph(const std::filesystem::path& p) {
  const auto file = std::filesystem::is_directory(p) ? p / "radiograph.x2tv" : p;
  const auto v = read_volume<float>(file, VolumeKind::intensity);
  if (v.extents[0] != 1) throw IoError(file.string() + ": radiograph must be a single slice");
  Image<float> img(v.extents[1], v.extents[2]);
  img.data = v.data;
  return img;
}

/// Writes cavity.x2tv and reconstruction.json; returns the reconstruction.
inline Reconstruction cmd_reconstruct(const RunConfig& cfg, const ReconstructRequest& req,
                                      const std::filesystem::path& out) {
  echo_config(out, cfg, "reconstruct");
  Reconstruction rec;
  if (req.gt_oracle) {
    if (!std::filesystem::is_directory(req.input)) throw UsageError("--gt-oracle needs a dataset sample directory");
    Sample s = read_sample(req.input);
    if (req.depth_mm || req.width_mm) {
      s.arch = fit_arch(req.depth_mm.value_or(s.arch.D), req.width_mm.value_or(s.arch.W), s.arch.e);
    }
    rec = reconstruct_gt_oracle(s, cfg.reconstruct.cavity_oversample);
  } else {
    if (!req.checkpoint) throw UsageError("reconstruct needs --checkpoint (or --gt-oracle)");
    if (!req.depth_mm || !req.width_mm) throw UsageError("reconstruct needs --arch-depth-mm and --arch-width-mm");
    auto net = load_net(*req.checkpoint);
    rec = reconstruct(net, read_radiograph(req.input), fit_arch(*req.depth_mm, *req.width_mm, cfg.arch_exponent),
                      cfg.reconstruct);
  }
  write_volume(out / "cavity.x2tv", rec.cavity, VolumeKind::label);
  write_json_file(out / "reconstruction.json", reconstruction_json(rec));
  return rec;
}

// ---- eval ------------------------------------------------------------------

struct EvalRequest {
  std::optional<std::filesystem::path> checkpoint;
  std::filesystem::path data;
  Split split = Split::test;
  bool gt_oracle = false;
};

/// Reconstructs every sample of one split with its ground-truth arch and
/// writes report.json, per_tooth.csv and report.txt.
inline EvalReport cmd_eval(const RunConfig& cfg, const EvalRequest& req, const std::filesystem::path& out) {
  echo_config(out, cfg, "eval");
  if (!req.gt_oracle && !req.checkpoint) throw UsageError("eval needs --checkpoint (or --gt-oracle)");
  const json manifest = read_manifest(req.data);
  const auto ds = read_dataset(req.data, req.split);
  if (ds.samples.empty()) throw TrainError(std::string("eval: ") + split_name(req.split) + " split is empty");
  std::vector<std::string> ids;
  for (const auto& e : manifest.at("samples")) {
    if (e.at("split").get<std::string>() == split_name(req.split)) ids.push_back(e.at("id").get<std::string>());
  }
  std::optional<X2TeethNet<float>> net;
  if (!req.gt_oracle) net.emplace(load_net(*req.checkpoint));
  std::vector<SampleEval> evals;
  for (std::size_t i = 0; i < ds.samples.size(); ++i) {
    const auto& s = ds.samples[i];
    const auto rec = req.gt_oracle ? reconstruct_gt_oracle(s, cfg.reconstruct.cavity_oversample)
                                   : reconstruct(*net, s.radiograph, s.arch, cfg.reconstruct);
    evals.push_back(evaluate_reconstruction(rec, s, ids.at(i), cfg.detection));
  }
  const auto report = build_report(std::move(evals), cfg.detection);
  const json j = report_json(report);
  validate_report_json(j);
  write_json_file(out / "report.json", j);
  std::ofstream(out / "per_tooth.csv") << per_tooth_csv(report);
  std::ofstream(out / "report.txt") << report_text(report);
  return report;
}

}  // namespace x2t
