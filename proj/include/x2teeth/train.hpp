#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "x2teeth/adam.hpp"
#include "x2teeth/augment.hpp"
#include "x2teeth/checkpoint.hpp"
#include "x2teeth/losses.hpp"
#include "x2teeth/net.hpp"
#include "x2teeth/patches.hpp"
#include "x2teeth/phantom.hpp"

// Two-stage training. Stage 1 fits ExtNet + SegNet on the segmentation
// dice loss; stage 2 adds ReconNet and optimises L_seg + L_recon, where
// L_recon is the mean 3D dice loss over the patches sampled per radiograph.
namespace x2t {

struct TrainConfig {
  NetConfig net;
  AdamConfig adam{2e-3};
  AugmentConfig augment;
  std::int64_t epochs_stage1 = 60;
  std::int64_t epochs_stage2 = 60;
  std::int64_t checkpoint_every = 10;  // epochs; the final epoch is always saved
  PatchSampling patches;
  bool freeze_stage1 = false;  // stage 2 updates ReconNet only
  std::uint64_t seed = 7;
  // A stage ends early once its epoch-mean loss (L_seg in stage 1, L_recon in
  // stage 2) drops below the target. 0 disables.
  double stop_stage1_below = 0.0;
  double stop_stage2_below = 0.0;
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(PatchSampling, count, jitter)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(TrainConfig, net, adam, augment, epochs_stage1, epochs_stage2,
                                                checkpoint_every, patches, freeze_stage1, seed, stop_stage1_below,
                                                stop_stage2_below)

class TrainError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

template <class T>
Tensor<T> radiograph_tensor(const Image<float>& img) {
  Tensor<T> t(Shape{1, 1, img.rows, img.cols});
  for (std::size_t i = 0; i < img.data.size(); ++i) t.data()[i] = static_cast<T>(img.data[i]);
  return t;
}

template <class T>
Tensor<T> seg_target(const Image<std::uint8_t>& seg) {
  Tensor<T> t(Shape{seg.rows, seg.cols, seg.channels});
  for (std::size_t i = 0; i < seg.data.size(); ++i) t.data()[i] = static_cast<T>(seg.data[i]);
  return t;
}

template <class T>
struct StepLosses {
  Tensor<T> seg, recon, total;  // recon undefined in stage 1
};

/// Forward pass and losses for one (already augmented) sample.
template <class T>
StepLosses<T> compute_losses(Tape<T>& tape, X2TeethNet<T>& net, const Sample& s, int stage,
                             std::uint64_t patch_seed, const PatchSampling& opt) {
  const auto& cfg = net.config();
  StepLosses<T> out;
  const Tensor<T> feat = net.extnet(tape, radiograph_tensor<T>(s.radiograph));
  out.seg = dice_loss_multilabel(tape, net.segnet(tape, feat), seg_target<T>(s.seg_gt));
  out.total = out.seg;
  if (stage < 2) return out;
  const auto specs = sample_patches(s.boxes_gt, cfg.height, cfg.width, cfg.patch[0], cfg.patch[1],
                                    PatchPolicy::gt_jittered, patch_seed, opt);
  const auto recon = net.reconnet(tape, crop_windows(tape, feat, window_centers(specs), cfg.patch[0], cfg.patch[1]));
  std::vector<Tensor<T>> terms;
  for (std::size_t i = 0; i < specs.size(); ++i) {
    auto it = s.tooth_volumes.find(specs[i].tooth.code());
    if (it == s.tooth_volumes.end()) throw TrainError("no ground-truth volume for tooth " + std::to_string(specs[i].tooth.code()));
    terms.push_back(dice_loss_3d(tape, recon[i], occupancy_target<T>(shifted_tooth(it->second, specs[i]))));
  }
  out.recon = mean_of(tape, terms);
  out.total = add(tape, out.seg, out.recon);
  return out;
}

struct LossRow {
  std::int64_t epoch = 0;
  std::int64_t step = 0;
  double l_seg = 0.0, l_recon = 0.0, total = 0.0;
  friend bool operator==(const LossRow&, const LossRow&) = default;
};

inline std::string loss_row_csv(const LossRow& r) {
  std::ostringstream o;
  o.precision(9);
  o << r.epoch << ',' << r.step << ',' << r.l_seg << ',' << r.l_recon << ',' << r.total;
  return o.str();
}

inline constexpr const char* kLossHeader = "epoch,step,l_seg,l_recon,total";

inline std::vector<std::string> read_lines(const std::filesystem::path& p) {
  std::vector<std::string> out;
  std::ifstream in(p);
  for (std::string line; std::getline(in, line);) out.push_back(line);
  return out;
}

inline std::filesystem::path stage_checkpoint(const std::filesystem::path& dir, int stage, std::int64_t epoch) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "stage%d_epoch%04lld.x2t1", stage, static_cast<long long>(epoch));
  return dir / buf;
}

inline std::filesystem::path final_checkpoint(const std::filesystem::path& dir, int stage) {
  return dir / ("stage" + std::to_string(stage) + ".x2t1");
}

struct StageResult {
  std::vector<LossRow> log;  // rows produced by this call
  std::filesystem::path checkpoint;
  std::vector<std::filesystem::path> written;
};

/// Runs one training stage over `train`. `init` supplies starting weights:
/// for stage 1 it may be a stage-1 checkpoint to resume; for stage 2 it is a
/// stage-1 checkpoint (fresh start) or a stage-2 checkpoint (resume).
inline StageResult train_stage(int stage, const std::vector<const Sample*>& train, const TrainConfig& cfg,
                               const std::filesystem::path& out_dir, const Checkpoint* init = nullptr,
                               const std::function<void(const LossRow&)>& progress = {}) {
  if (stage != 1 && stage != 2) throw std::invalid_argument("train_stage: stage must be 1 or 2");
  if (train.empty()) throw TrainError("training set is empty");
  if (stage == 2 && !init) throw TrainError("stage 2 needs a stage-1 checkpoint");
  std::filesystem::create_directories(out_dir);
  X2TeethNet<float> net(cfg.net);
  AdamState<float> adam;
  adam.config = cfg.adam;
  std::int64_t epoch0 = 0, step = 0;
  const bool resume = init && static_cast<int>(init->stage) == stage;
  if (init) {
    if (static_cast<int>(init->stage) > stage || (stage == 2 && init->stage < 1)) {
      throw TrainError("checkpoint stage " + std::to_string(init->stage) + " cannot start stage " + std::to_string(stage));
    }
    load_weights(net, *init);
  }

  // Trainable parameters for this stage.
  std::vector<std::uint64_t> trainable;
  for (std::size_t i = 0; i < net.tensors().size(); ++i) {
    const auto g = net.group_of(i);
    const bool on = stage == 1 ? g != X2TeethNet<float>::Group::recon
                               : (!cfg.freeze_stage1 || g == X2TeethNet<float>::Group::recon);
    net.tensors()[i].set_requires_grad(on);
    if (on) trainable.push_back(i);
  }
  if (resume) {
    if (init->moment_index != trainable && !(init->moment_index.empty() && init->adam.step == 0)) {
      throw TrainError("checkpoint optimizer state does not match this stage's trainable set");
    }
    adam = init->adam;
    adam.config = cfg.adam;
    epoch0 = static_cast<std::int64_t>(init->epoch);
    step = static_cast<std::int64_t>(init->step);
  }

  const auto log_path = out_dir / ("loss_stage" + std::to_string(stage) + ".csv");
  {
    // Keep the rows up to the resume point so step numbering stays contiguous.
    std::vector<std::string> keep{kLossHeader};
    if (resume) {
      const auto lines = read_lines(log_path);
      for (std::size_t i = 1; i < lines.size(); ++i) {
        const auto comma = lines[i].find(',');
        const auto second = lines[i].find(',', comma + 1);
        if (comma == std::string::npos || second == std::string::npos) continue;
        if (std::stoll(lines[i].substr(comma + 1, second - comma - 1)) <= step) keep.push_back(lines[i]);
      }
      if (static_cast<std::int64_t>(keep.size()) - 1 != step) {
        throw TrainError("loss log " + log_path.string() + " does not cover the checkpoint's " +
                         std::to_string(step) + " steps");
      }
    }
    std::ofstream out(log_path, std::ios::trunc);
    for (const auto& l : keep) out << l << '\n';
    if (!out) throw IoError("cannot write " + log_path.string());
  }
  std::ofstream log(log_path, std::ios::app);

  std::vector<Tensor<float>> params;
  for (auto i : trainable) params.push_back(net.tensors()[i]);

  StageResult result;
  const std::int64_t epochs = stage == 1 ? cfg.epochs_stage1 : cfg.epochs_stage2;
  const auto n = static_cast<std::int64_t>(train.size());
  const double target = stage == 1 ? cfg.stop_stage1_below : cfg.stop_stage2_below;
  for (std::int64_t epoch = epoch0; epoch < epochs; ++epoch) {
    double epoch_loss = 0.0;
    std::vector<std::int64_t> order(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
    Rng rng(derive_seed(cfg.seed, 0x100 + static_cast<std::uint64_t>(stage), static_cast<std::uint64_t>(epoch)));
    for (std::int64_t i = n - 1; i > 0; --i) {
      std::swap(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(rng.integer(0, i))]);
    }
    for (const auto idx : order) {
      const auto step_seed = derive_seed(cfg.seed, static_cast<std::uint64_t>(stage), static_cast<std::uint64_t>(step));
      const Sample aug = augment(*train[static_cast<std::size_t>(idx)], cfg.augment, step_seed);
      Tape<float> tape;
      const auto L = compute_losses(tape, net, aug, stage, derive_seed(step_seed, 1), cfg.patches);
      for (auto& p : params) p.zero_grad();
      tape.backward(L.total);
      adam_step<float>(params, adam);
      ++step;
      LossRow row{epoch + 1, step, L.seg.item(), stage == 2 ? L.recon.item() : 0.0, L.total.item()};
      log << loss_row_csv(row) << '\n';
      log.flush();
      result.log.push_back(row);
      epoch_loss += (stage == 1 ? row.l_seg : row.l_recon) / static_cast<double>(n);
      if (progress) progress(row);
    }
    const bool last = epoch + 1 == epochs || epoch_loss < target;
    if (last || (cfg.checkpoint_every > 0 && (epoch + 1) % cfg.checkpoint_every == 0)) {
      const auto ck = make_checkpoint(net, static_cast<std::uint64_t>(stage), static_cast<std::uint64_t>(epoch + 1),
                                      static_cast<std::uint64_t>(step), adam, trainable);
      const auto path = stage_checkpoint(out_dir, stage, epoch + 1);
      write_checkpoint(path, ck);
      result.written.push_back(path);
      if (last) {
        write_checkpoint(final_checkpoint(out_dir, stage), ck);
        result.checkpoint = final_checkpoint(out_dir, stage);
        break;
      }
    }
  }
  if (result.checkpoint.empty() && epoch0 >= epochs && init) {
    // Nothing left to do; the resume point is already final.
    write_checkpoint(final_checkpoint(out_dir, stage), *init);
    result.checkpoint = final_checkpoint(out_dir, stage);
  }
  return result;
}

}  // namespace x2t
