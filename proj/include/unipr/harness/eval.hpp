// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>

#include "unipr/harness/config.hpp"
#include "unipr/metrics/metrics.hpp"

namespace unipr::harness {

struct TimingStats {
  double mean_ms = 0;
  double median_ms = 0;
  std::vector<double> per_scene_ms;
};

struct EvalReport {
  metrics::EvalAggregates aggregates;
  std::map<std::string, metrics::EvalAggregates> per_difficulty;
  TimingStats forward;
  TimingStats reconstruction;
  std::vector<metrics::EvalRow> rows;
  int num_scenes = 0;
};

/// Full inference + reconstruction + metrics over a dataset split; writes
/// eval.json and eval.csv under out_dir when non-empty.
EvalReport evaluate_dataset_cmd(const RunConfig& cfg, const std::string& detector_ckpt_path,
                                const std::string& data_root, const std::string& out_dir,
                                bool allow_config_mismatch = false, int workers = 2);

/// Exports <out>/<rank>_<confidence>.obj/.stl plus a JSON sidecar for one scene.
void reconstruct_scene_cmd(const std::string& detector_ckpt_path, const std::string& data_root,
                           int scene_index, const std::string& out_dir,
                           bool allow_config_mismatch = false);

}  // namespace unipr::harness
