// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <string>

#include "unipr/harness/checkpoint.hpp"
#include "unipr/harness/config.hpp"

namespace unipr::harness {

/// Training hit a non-finite loss/gradient; carries the last good checkpoint.
struct NanAbortError : std::runtime_error {
  explicit NanAbortError(const std::string& what, std::string last_ckpt)
      : std::runtime_error(what), last_good_checkpoint(std::move(last_ckpt)) {}
  std::string last_good_checkpoint;
};

/// Static-stride worker pool: item i runs on thread (i % workers); results are
/// merged by the caller in item order, so outputs are bit-reproducible for a
/// fixed worker count.
void parallel_for(int n, int workers, const std::function<void(int)>& fn);

uint64_t val_split_seed(uint64_t master_seed);

/// Rotation augmentation for PASR training: rotate the surface cloud and its
/// queries jointly, renormalize by the rotated cloud's bounding sphere, and
/// drop queries that leave the unit ball.
struct RotatedSample {
  geom::Points surface;
  geom::Points queries;
  std::vector<uint8_t> labels;
};
RotatedSample rotate_sample(const geom::Points& surface, const geom::Points& queries,
                            const std::vector<uint8_t>& labels, const Eigen::Matrix3d& rotation);

void generate_dataset(const RunConfig& cfg, const std::string& out_root, uint64_t master_seed,
                      int num_scenes, int workers);

struct TrainResult {
  std::string checkpoint_path;
  double final_loss = 0;
  int steps = 0;
};

/// Stage 1: trains the shape VAE on (object, random rotation) pairs drawn from
/// the training dataset; writes <out_dir>/vae.ckpt and loss_vae.csv.
TrainResult train_vae(const RunConfig& cfg);

/// Runs the frozen encoder over every annotated object and stores (mu, logvar)
/// beside the annotations; idempotent for a fixed checkpoint.
void precompute_gt_latents(const std::string& vae_ckpt_path, const std::string& data_root,
                           bool allow_config_mismatch = false);

/// Stage 2: trains backbone + TPV + decoder heads against the detection loss
/// with the VAE frozen; writes <out_dir>/detector.ckpt (which embeds the
/// frozen VAE parameters) and loss_detector.csv.
TrainResult train_detector(const RunConfig& cfg, const std::string& vae_ckpt_path,
                           bool allow_config_mismatch = false);

}  // namespace unipr::harness
