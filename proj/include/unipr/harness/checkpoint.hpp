// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>
#include <optional>
#include <string>

#include "unipr/nn/optim.hpp"

namespace unipr::harness {

constexpr uint32_t kCheckpointVersion = 1;

struct OptimizerState {
  std::vector<nn::Tensor> m, v;
  int step_count = 0;
};

struct Checkpoint {
  std::string kind;         // "vae" or "detector"
  std::string config_json;  // full run config for self-contained loading
  uint64_t config_hash = 0;
  int64_t step = 0;
  std::map<std::string, nn::Tensor> params;
  std::optional<OptimizerState> optimizer;
};

void save_checkpoint(const std::string& path, const std::string& kind,
                     const std::string& config_json, uint64_t config_hash, int64_t step,
                     const nn::ParamStore& params, const OptimizerState* optimizer = nullptr);

/// Same format from an explicit name -> tensor map (used to bundle the frozen
/// VAE weights into detector checkpoints).
void save_checkpoint_raw(const std::string& path, const std::string& kind,
                         const std::string& config_json, uint64_t config_hash, int64_t step,
                         const std::map<std::string, nn::Tensor>& params,
                         const OptimizerState* optimizer = nullptr);

Checkpoint load_checkpoint(const std::string& path);

/// Copies checkpoint tensors into a freshly built store; every name and shape
/// must line up.
void restore_params(const Checkpoint& ckpt, nn::ParamStore& params);

/// config-hash guard; `allow_mismatch` is the explicit override.
void check_config_hash(const Checkpoint& ckpt, uint64_t expected, bool allow_mismatch);

}  // namespace unipr::harness
