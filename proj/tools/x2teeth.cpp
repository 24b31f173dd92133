// x2teeth: dataset generation, training, reconstruction and evaluation.
//
// Exit codes: 0 success, 1 usage error, 2 runtime failure, 3 degraded
// success (no tooth detected).
#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "x2teeth/commands.hpp"

namespace fs = std::filesystem;
using namespace x2t;

namespace {

struct Common {
  std::optional<fs::path> config;
  std::optional<std::uint64_t> seed;
  fs::path out;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "JSON run configuration")->check(CLI::ExistingFile);
  cmd->add_option("--seed", c.seed, "global seed (overrides the config)");
  cmd->add_option("--out", c.out, "output directory")->required();
}

int run(int argc, char** argv) {
  CLI::App app{"x2teeth: 3D teeth from a single panoramic radiograph"};
  app.require_subcommand(1);

  Common gen_c, train_c, rec_c, eval_c;
  std::optional<std::int64_t> count;
  auto* gen = app.add_subcommand("gen-data", "generate a synthetic phantom dataset");
  add_common(gen, gen_c);
  gen->add_option("--count", count, "number of phantoms (overrides the config)");

  fs::path train_data;
  std::string stage = "both";
  std::optional<fs::path> resume;
  bool quiet = false;
  auto* train = app.add_subcommand("train", "two-stage training on the train split");
  add_common(train, train_c);
  train->add_option("--data", train_data, "dataset directory")->required()->check(CLI::ExistingDirectory);
  train->add_option("--stage", stage, "1, 2 or both")->check(CLI::IsMember({"1", "2", "both"}));
  train->add_option("--resume", resume, "checkpoint to continue from")->check(CLI::ExistingFile);
  train->add_flag("--quiet", quiet, "no per-step progress");

  ReconstructRequest rq;
  std::optional<fs::path> rec_ckpt;
  auto* rec = app.add_subcommand("reconstruct", "reconstruct the cavity from one radiograph");
  add_common(rec, rec_c);
  rec->add_option("--checkpoint", rec_ckpt, "trained checkpoint")->check(CLI::ExistingFile);
  rec->add_option("--input", rq.input, "radiograph .x2tv or dataset sample directory")->required()->check(CLI::ExistingPath);
  rec->add_option("--arch-depth-mm", rq.depth_mm, "measured arch depth D")->check(CLI::NonNegativeNumber);
  rec->add_option("--arch-width-mm", rq.width_mm, "measured arch width W")->check(CLI::PositiveNumber);
  rec->add_flag("--gt-oracle", rq.gt_oracle, "bypass the networks with ground-truth boxes and volumes");

  EvalRequest eq;
  std::optional<fs::path> eval_ckpt;
  std::string split = "test";
  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on one dataset split");
  add_common(ev, eval_c);
  ev->add_option("--checkpoint", eval_ckpt, "trained checkpoint")->check(CLI::ExistingFile);
  ev->add_option("--data", eq.data, "dataset directory")->required()->check(CLI::ExistingDirectory);
  ev->add_option("--split", split, "train, val or test")->check(CLI::IsMember({"train", "val", "test"}));
  ev->add_flag("--gt-oracle", eq.gt_oracle, "bypass the networks with ground-truth boxes and volumes");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    if (gen->parsed()) {
      auto cfg = load_run_config(gen_c.config, gen_c.seed);
      if (count) {
        cfg.count = *count;
        cfg.validate();
      }
      const auto r = cmd_gen_data(cfg, gen_c.out);
      std::cout << "wrote " << cfg.count << " phantoms to " << gen_c.out.string() << " (train " << r.counts.train
                << ", val " << r.counts.val << ", test " << r.counts.test << ")\n";
      return 0;
    }
    if (train->parsed()) {
      const auto cfg = load_run_config(train_c.config, train_c.seed);
      const auto r = cmd_train(cfg, train_data, train_c.out, parse_stage(stage), resume,
                               [&](int st, const LossRow& row) {
                                 if (quiet) return;
                                 std::cout << "stage " << st << " epoch " << row.epoch << " step " << row.step
                                           << " l_seg " << row.l_seg << " l_recon " << row.l_recon << '\n';
                               });
      std::cout << "checkpoint " << r.checkpoint.string() << '\n';
      return 0;
    }
    if (rec->parsed()) {
      const auto cfg = load_run_config(rec_c.config, rec_c.seed);
      rq.checkpoint = rec_ckpt;
      const auto r = cmd_reconstruct(cfg, rq, rec_c.out);
      if (r.degraded) {
        std::cerr << "warning: no tooth detected; wrote an empty volume\n";
        return 3;
      }
      std::cout << r.boxes.size() << " teeth reconstructed into " << (rec_c.out / "cavity.x2tv").string() << '\n';
      return 0;
    }
    if (ev->parsed()) {
      const auto cfg = load_run_config(eval_c.config, eval_c.seed);
      eq.checkpoint = eval_ckpt;
      eq.split = parse_split(split);
      const auto r = cmd_eval(cfg, eq, eval_c.out);
      std::cout << report_text(r);
      return 0;
    }
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 1;
}

}  // namespace

int main(int argc, char** argv) { return run(argc, argv); }
