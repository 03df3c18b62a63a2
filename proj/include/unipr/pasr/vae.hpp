// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <memory>
#include <vector>

#include "unipr/geometry.hpp"
#include "unipr/nn/optim.hpp"
#include "unipr/pasr/mesh.hpp"

namespace unipr::pasr {

struct VAEConfig {
  int n_surface = 2048;
  int c = 256;           // feature width
  int c_kl = 64;         // latent width
  int encoder_blocks = 4;
  int decoder_blocks = 4;
  int pos_freq = 8;      // sinusoidal bands per coordinate
  int heads = 8;
  int point_tokens = 256;  // decoder point-token bank
  int ffn_mult = 2;

  void validate() const;
};

struct LatentDistribution {
  std::vector<double> mu;
  std::vector<double> logvar;  // clamped to [-10, 10] by the encoder

  void validate() const;
};

struct ShapeLatent {
  std::vector<double> z;
};

/// z = mu + exp(logvar/2) * eps
ShapeLatent reparameterize(const LatentDistribution& dist, const std::vector<double>& eps);
ShapeLatent reparameterize(const LatentDistribution& dist, uint64_t seed);

/// (1-t) a + t b; t outside [0,1] is a domain error.
ShapeLatent interpolate_latents(const ShapeLatent& a, const ShapeLatent& b, double t);

/// Mean binary cross-entropy with probabilities clamped to [1e-7, 1-1e-7].
double recon_loss(const std::vector<double>& pred, const std::vector<uint8_t>& labels);
nn::Ref recon_loss_graph(nn::Ref probs, const std::vector<uint8_t>& labels);

/// (1/C_kl) sum_j 1/2 (mu_j^2 + sigma_j^2 - log sigma_j^2); floor 0.5.
double klreg_loss(const LatentDistribution& dist);
nn::Ref klreg_loss_graph(nn::Ref mu, nn::Ref logvar);

/// Encoder: positional embedding -> self-attention over points -> one object
/// token cross-attending to point features -> (mu, logvar) heads.
/// Decoder: learned point-token bank cross-attending to the lifted latent ->
/// self-attention -> embedded queries cross-attending to the bank -> MLP+sigmoid.
class PoseAwareShapeVAE {
 public:
  PoseAwareShapeVAE(VAEConfig cfg, uint64_t init_seed);

  const VAEConfig& config() const { return cfg_; }
  nn::ParamStore& params() { return *params_; }
  const nn::ParamStore& params() const { return *params_; }
  uint64_t param_hash() const { return params_->value_hash(); }

  struct EncodeRefs {
    nn::Ref mu;      // [1, C_kl]
    nn::Ref logvar;  // [1, C_kl]
  };
  EncodeRefs encode_graph(nn::Tape& tape, const geom::Points& surface) const;
  /// probs [Q, 1], strictly inside (0,1)
  nn::Ref decode_graph(nn::Tape& tape, nn::Ref z, const geom::Points& queries) const;

  LatentDistribution encode(const geom::Points& surface) const;
  std::vector<double> decode_occupancy(const ShapeLatent& z, const geom::Points& queries) const;

  /// Occupancy grid over [-1,1]^3 masked to the unit ball, marching cubes at iso.
  TriMesh extract_surface(const ShapeLatent& z, int resolution, double iso = 0.5) const;

 private:
  VAEConfig cfg_;
  std::unique_ptr<nn::ParamStore> params_;
  nn::Linear in_proj_, mu_head_, logvar_head_, z_lift_, query_proj_;
  nn::Linear occ_fc1_, occ_fc2_;
  std::vector<nn::AttentionBlock> enc_blocks_;
  nn::AttentionBlock obj_cross_;
  nn::AttentionBlock bank_cross_;
  std::vector<nn::AttentionBlock> dec_blocks_;
  nn::AttentionBlock query_cross_;
  nn::Param* object_token_ = nullptr;
  nn::Param* point_bank_ = nullptr;
};

}  // namespace unipr::pasr
