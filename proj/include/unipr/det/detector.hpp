// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <memory>
#include <string>
#include <vector>

#include "unipr/pasr/vae.hpp"
#include "unipr/tpv/encoder.hpp"

namespace unipr::det {

struct DecoderConfig {
  int n_queries = 16;
  int n_layers = 2;
  int heads = 8;
  int ffn_mult = 2;
  int c_kl = 64;
  double confidence_threshold = 0.5;

  void validate() const;
};

struct ObjectPrediction {
  Eigen::Vector3d position;  // camera frame, meters
  double scale = 0;          // bounding-sphere radius, meters
  pasr::LatentDistribution shape_dist;
  double confidence = 0;
  int query_index = 0;
};

/// DETR-style query decoder over flattened TPV tokens with position, scale,
/// shape-distribution and confidence heads. The position head emits bounded
/// (u, v, inverse-depth) coordinates that are backprojected into the frustum.
class ObjectDecoder {
 public:
  ObjectDecoder(nn::ParamStore& ps, const std::string& prefix, const DecoderConfig& cfg, int c);

  const DecoderConfig& config() const { return cfg_; }

  struct PredRefs {
    nn::Ref position;    // [M, 3] meters
    nn::Ref scale;       // [M, 1] softplus
    nn::Ref mu;          // [M, C_kl]
    nn::Ref logvar;      // [M, C_kl] clamped
    nn::Ref confidence;  // [M, 1] sigmoid
  };
  PredRefs decode_graph(nn::Tape& tape, nn::Ref tpv_tokens, const geom::CameraRig& rig,
                        const tpv::EncoderConfig& ecfg) const;

  static std::vector<ObjectPrediction> to_predictions(const PredRefs& refs);

 private:
  DecoderConfig cfg_;
  int c_;
  nn::Param* query_emb_ = nullptr;
  struct Layer {
    nn::AttentionBlock self_block;
    nn::AttentionBlock cross_block;
  };
  std::vector<Layer> layers_;
  nn::LayerNorm final_ln_;
  nn::Linear pos_head_, scale_head_, mu_head_, logvar_head_, conf_head_;
};

/// Keep confidence >= threshold, sort descending, ties by query index.
std::vector<ObjectPrediction> postprocess_predictions(std::vector<ObjectPrediction> preds,
                                                      double confidence_threshold);

struct Reconstruction {
  pasr::TriMesh mesh;  // camera frame
  bool empty = false;
};

/// Decode the latent mode, extract the surface, denormalize by the predicted
/// sphere frame.
Reconstruction reconstruct_object_shape(const ObjectPrediction& pred,
                                        const pasr::PoseAwareShapeVAE& vae, int resolution);

/// The full detector net: shared backbone + TPV encoder + query decoder,
/// one parameter store.
class UniPRModel {
 public:
  UniPRModel(const tpv::EncoderConfig& ecfg, const DecoderConfig& dcfg, int img_w, int img_h,
             uint64_t init_seed);

  nn::ParamStore& params() { return *params_; }
  const nn::ParamStore& params() const { return *params_; }
  const tpv::TriplaneEncoder& encoder() const { return *encoder_; }
  const ObjectDecoder& decoder() const { return *decoder_; }
  const tpv::EncoderConfig& encoder_config() const { return ecfg_; }
  const DecoderConfig& decoder_config() const { return dcfg_; }
  int width() const { return img_w_; }
  int height() const { return img_h_; }

  ObjectDecoder::PredRefs forward(nn::Tape& tape, const synth::Image& left,
                                  const synth::Image& right, const tpv::ProjectionTable& table,
                                  const geom::CameraRig& rig) const;

  std::vector<ObjectPrediction> predict(const synth::Image& left, const synth::Image& right,
                                        const tpv::ProjectionTable& table,
                                        const geom::CameraRig& rig) const;

 private:
  tpv::EncoderConfig ecfg_;
  DecoderConfig dcfg_;
  int img_w_, img_h_;
  std::unique_ptr<nn::ParamStore> params_;
  std::unique_ptr<tpv::TriplaneEncoder> encoder_;
  std::unique_ptr<ObjectDecoder> decoder_;
};

}  // namespace unipr::det
