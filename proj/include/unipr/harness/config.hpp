// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>

#include <nlohmann/json_fwd.hpp>

#include "unipr/det/detector.hpp"
#include "unipr/match/matching.hpp"
#include "unipr/pasr/vae.hpp"
#include "unipr/synth/dataset.hpp"
#include "unipr/tpv/encoder.hpp"

namespace unipr::harness {

/// Reported with exit code 2 by the CLI.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct TrainSection {
  int steps = 6000;           // VAE; the detector derives steps from epochs
  int epochs = 20;
  int batch = 8;
  double lr = 2e-4;
  double lr_min = 0.0;
  double weight_decay = 1e-2;
  double clip_norm = 1.0;
  int warmup_steps = 100;
  int checkpoint_every = 1000;
  int log_every = 50;
  int workers = 2;
  // VAE-only knobs
  double kl_weight = 1e-3;
  int queries_per_step = 512;
  bool rotation_augment = true;
  int max_pool_objects = 4000;
};

struct DataSection {
  std::string root = "data/train";
  std::string val_root = "data/val";
  int num_scenes = 2000;
  int val_scenes = 200;
  synth::GenConfig gen;
};

struct EvalSection {
  double iou_threshold = 0.5;
  int recon_resolution = 32;
  double penalty_chamfer = 2.0;  // normalized units
  int top_k = 10;
  double fscore_tau = 0.1;       // normalized units (0.1 x unit GT radius)
};

struct RunConfig {
  uint64_t seed = 1234;
  std::string device = "cpu";
  std::string out_dir = "runs/default";
  DataSection data;
  pasr::VAEConfig vae;
  TrainSection vae_train;
  tpv::EncoderConfig tpv;
  det::DecoderConfig detector;
  TrainSection det_train;
  match::LossWeights loss;
  EvalSection eval;

  void validate() const;
  uint64_t config_hash() const;
};

nlohmann::json run_config_to_json(const RunConfig& cfg);
RunConfig run_config_from_json(const nlohmann::json& j);

/// Parses a config file, validates every key against the schema (unknown keys
/// rejected), applies RUN_SEED / RUN_DEVICE env overrides.
RunConfig load_run_config(const std::string& path);
RunConfig run_config_from_text(const std::string& text);

}  // namespace unipr::harness
