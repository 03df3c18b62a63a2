// SPDX-License-Identifier: Apache-2.0
#include <CLI11.hpp>

#include <cstdio>
#include <iostream>

#include "unipr/harness/eval.hpp"
#include "unipr/harness/train.hpp"

using namespace unipr;
using harness::RunConfig;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitValidation = 2;
constexpr int kExitNanAbort = 3;

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"unipr: stereo multi-object detection and pose-aware shape reconstruction"};
  app.require_subcommand(1);

  std::string config_path, out_dir, vae_ckpt, det_ckpt, data_dir, split = "train";
  int scene_index = 0, num_override = -1, workers = 2;
  bool allow_mismatch = false;

  auto* gen = app.add_subcommand("gen-data", "generate a procedural stereo dataset");
  gen->add_option("--config", config_path, "run config (json)")->required();
  gen->add_option("--out", out_dir, "output dataset directory")->required();
  gen->add_option("--split", split, "train|val (selects seed and scene count)");
  gen->add_option("--num", num_override, "override the scene count");
  gen->add_option("--workers", workers, "generation workers");

  auto* tv = app.add_subcommand("train-vae", "train the pose-aware shape VAE");
  tv->add_option("--config", config_path, "run config (json)")->required();

  auto* eg = app.add_subcommand("encode-gt", "precompute GT shape latents with a frozen VAE");
  eg->add_option("--vae", vae_ckpt, "vae checkpoint")->required();
  eg->add_option("--data", data_dir, "dataset root")->required();
  eg->add_flag("--allow-config-mismatch", allow_mismatch);

  auto* td = app.add_subcommand("train-detector", "train the stereo detector (frozen VAE)");
  td->add_option("--config", config_path, "run config (json)")->required();
  td->add_option("--vae", vae_ckpt, "vae checkpoint")->required();
  td->add_flag("--allow-config-mismatch", allow_mismatch);

  auto* ev = app.add_subcommand("eval", "evaluate a detector checkpoint on a split");
  ev->add_option("--config", config_path, "run config (json)")->required();
  ev->add_option("--ckpt", det_ckpt, "detector checkpoint")->required();
  ev->add_option("--split", split, "train|val");
  ev->add_option("--out", out_dir, "report directory (default <out_dir>/eval_<split>)");
  ev->add_option("--workers", workers, "evaluation workers");
  ev->add_flag("--allow-config-mismatch", allow_mismatch);

  auto* rc = app.add_subcommand("reconstruct", "export reconstructed meshes for one scene");
  rc->add_option("--ckpt", det_ckpt, "detector checkpoint")->required();
  rc->add_option("--scene", scene_index, "scene index")->required();
  rc->add_option("--out", out_dir, "output directory")->required();
  rc->add_option("--data", data_dir, "dataset root (default: config's val root)");
  rc->add_flag("--allow-config-mismatch", allow_mismatch);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitValidation;
  }

  try {
    if (gen->parsed()) {
      RunConfig cfg = harness::load_run_config(config_path);
      if (split != "train" && split != "val")
        throw harness::ConfigError("gen-data: split must be train or val");
      const bool val = split == "val";
      const uint64_t seed = val ? harness::val_split_seed(cfg.seed) : cfg.seed;
      int num = val ? cfg.data.val_scenes : cfg.data.num_scenes;
      if (num_override > 0) num = num_override;
      harness::generate_dataset(cfg, out_dir, seed, num, workers);
      std::printf("gen-data: wrote %d scenes to %s (seed %llu)\n", num, out_dir.c_str(),
                  static_cast<unsigned long long>(seed));
    } else if (tv->parsed()) {
      RunConfig cfg = harness::load_run_config(config_path);
      auto result = harness::train_vae(cfg);
      std::printf("train-vae: %d steps, final loss %.6f, checkpoint %s\n", result.steps,
                  result.final_loss, result.checkpoint_path.c_str());
    } else if (eg->parsed()) {
      harness::precompute_gt_latents(vae_ckpt, data_dir, allow_mismatch);
      std::printf("encode-gt: latents written under %s\n", data_dir.c_str());
    } else if (td->parsed()) {
      RunConfig cfg = harness::load_run_config(config_path);
      auto result = harness::train_detector(cfg, vae_ckpt, allow_mismatch);
      std::printf("train-detector: %d steps, final loss %.6f, checkpoint %s\n", result.steps,
                  result.final_loss, result.checkpoint_path.c_str());
    } else if (ev->parsed()) {
      RunConfig cfg = harness::load_run_config(config_path);
      if (split != "train" && split != "val")
        throw harness::ConfigError("eval: split must be train or val");
      const std::string root = split == "val" ? cfg.data.val_root : cfg.data.root;
      const std::string report_dir =
          out_dir.empty() ? cfg.out_dir + "/eval_" + split : out_dir;
      auto report = harness::evaluate_dataset_cmd(cfg, det_ckpt, root, report_dir, allow_mismatch,
                                                  workers);
      std::printf("eval[%s]: scenes=%d AP=%.4f matched=%d/%d", split.c_str(), report.num_scenes,
                  report.aggregates.ap, report.aggregates.n_matched, report.aggregates.n_gt);
      if (report.aggregates.matched_chamfer_norm)
        std::printf(" chamfer=%.4f", *report.aggregates.matched_chamfer_norm);
      if (report.aggregates.spe_mean) std::printf(" spe=%.4f", *report.aggregates.spe_mean);
      std::printf(" forward=%.1fms recon=%.1fms\n", report.forward.mean_ms,
                  report.reconstruction.mean_ms);
      std::printf("eval: report written to %s\n", report_dir.c_str());
    } else if (rc->parsed()) {
      std::string root = data_dir;
      if (root.empty()) {
        auto ckpt = harness::load_checkpoint(det_ckpt);
        root = harness::run_config_from_text(ckpt.config_json).data.val_root;
      }
      harness::reconstruct_scene_cmd(det_ckpt, root, scene_index, out_dir, allow_mismatch);
      std::printf("reconstruct: meshes written under %s\n", out_dir.c_str());
    }
  } catch (const harness::ConfigError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitValidation;
  } catch (const harness::NanAbortError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitNanAbort;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return kExitOk;
}
