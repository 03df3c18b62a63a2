// SPDX-License-Identifier: Apache-2.0
#include "unipr/det/detector.hpp"

#include <algorithm>
#include <cmath>

namespace unipr::det {

using namespace unipr::nn;

void DecoderConfig::validate() const {
  if (n_queries < 1 || n_layers < 1 || heads < 1 || ffn_mult < 1 || c_kl < 1)
    throw std::invalid_argument("DecoderConfig: bad counts");
  if (confidence_threshold < 0 || confidence_threshold > 1)
    throw std::invalid_argument("DecoderConfig: threshold outside [0,1]");
}

ObjectDecoder::ObjectDecoder(ParamStore& ps, const std::string& prefix, const DecoderConfig& cfg,
                             int c)
    : cfg_(cfg), c_(c) {
  cfg.validate();
  if (c % cfg.heads != 0) throw std::invalid_argument("ObjectDecoder: C must be divisible by heads");
  query_emb_ = &ps.create_gaussian(prefix + ".query_emb", {cfg.n_queries, c}, 0.02);
  const int ffn = c * cfg.ffn_mult;
  for (int l = 0; l < cfg.n_layers; ++l) {
    const std::string lp = prefix + ".layer" + std::to_string(l);
    layers_.push_back(Layer{AttentionBlock(ps, lp + ".self", c, cfg.heads, ffn, false),
                            AttentionBlock(ps, lp + ".cross", c, cfg.heads, ffn, true)});
  }
  final_ln_ = LayerNorm(ps, prefix + ".final_ln", c);
  pos_head_ = Linear(ps, prefix + ".pos_head", c, 3);
  scale_head_ = Linear(ps, prefix + ".scale_head", c, 1);
  mu_head_ = Linear(ps, prefix + ".mu_head", c, cfg.c_kl);
  logvar_head_ = Linear(ps, prefix + ".logvar_head", c, cfg.c_kl);
  conf_head_ = Linear(ps, prefix + ".conf_head", c, 1);
}

ObjectDecoder::PredRefs ObjectDecoder::decode_graph(Tape& tape, Ref tpv_tokens,
                                                    const geom::CameraRig& rig,
                                                    const tpv::EncoderConfig& ecfg) const {
  Ref x = tape.param(*query_emb_);
  for (const auto& layer : layers_) {
    x = layer.self_block(tape, x);
    x = layer.cross_block(tape, x, tpv_tokens);
  }
  x = final_ln_(tape, x);

  PredRefs out;
  // bounded (u, v, d-hat) -> pixel/inverse-depth ranges -> camera frame
  Ref uvd = sigmoid(pos_head_(tape, x));  // [M, 3] in (0,1)
  Ref u_px = scale(slice_last(uvd, 0, 1), rig.width - 1.0);
  Ref v_px = scale(slice_last(uvd, 1, 1), rig.height - 1.0);
  const double inv_lo = 1.0 / ecfg.d_max, inv_hi = 1.0 / ecfg.d_min;
  Ref inv_d = add_scalar(scale(slice_last(uvd, 2, 1), inv_lo - inv_hi), inv_hi);
  Ref depth = reciprocal(inv_d);
  Ref xc = mul(scale(add_scalar(u_px, -rig.cx), 1.0 / rig.fx), depth);
  Ref yc = mul(scale(add_scalar(v_px, -rig.cy), 1.0 / rig.fy), depth);
  out.position = concat_last({xc, yc, depth});
  out.scale = softplus(scale_head_(tape, x));
  out.mu = mu_head_(tape, x);
  out.logvar = clamp(logvar_head_(tape, x), -10.0, 10.0);
  out.confidence = sigmoid(conf_head_(tape, x));
  return out;
}

std::vector<ObjectPrediction> ObjectDecoder::to_predictions(const PredRefs& refs) {
  const int m = refs.position->value.dim(0);
  const int c_kl = refs.mu->value.dim(1);
  std::vector<ObjectPrediction> preds(m);
  for (int i = 0; i < m; ++i) {
    ObjectPrediction& p = preds[i];
    p.query_index = i;
    for (int k = 0; k < 3; ++k) p.position[k] = refs.position->value[i * 3 + k];
    p.scale = refs.scale->value[i];
    p.confidence = refs.confidence->value[i];
    p.shape_dist.mu.assign(refs.mu->value.ptr() + static_cast<int64_t>(i) * c_kl,
                           refs.mu->value.ptr() + static_cast<int64_t>(i + 1) * c_kl);
    p.shape_dist.logvar.assign(refs.logvar->value.ptr() + static_cast<int64_t>(i) * c_kl,
                               refs.logvar->value.ptr() + static_cast<int64_t>(i + 1) * c_kl);
  }
  return preds;
}

std::vector<ObjectPrediction> postprocess_predictions(std::vector<ObjectPrediction> preds,
                                                      double confidence_threshold) {
  std::erase_if(preds, [&](const ObjectPrediction& p) { return p.confidence < confidence_threshold; });
  std::stable_sort(preds.begin(), preds.end(), [](const auto& a, const auto& b) {
    if (a.confidence != b.confidence) return a.confidence > b.confidence;
    return a.query_index < b.query_index;
  });
  return preds;
}

Reconstruction reconstruct_object_shape(const ObjectPrediction& pred,
                                        const pasr::PoseAwareShapeVAE& vae, int resolution) {
  Reconstruction out;
  pasr::ShapeLatent z{pred.shape_dist.mu};  // latent mode: deterministic inference
  out.mesh = vae.extract_surface(z, resolution);
  if (out.mesh.empty()) {
    out.empty = true;
    return out;
  }
  out.mesh.transform(pred.scale, pred.position);
  return out;
}

UniPRModel::UniPRModel(const tpv::EncoderConfig& ecfg, const DecoderConfig& dcfg, int img_w,
                       int img_h, uint64_t init_seed)
    : ecfg_(ecfg), dcfg_(dcfg), img_w_(img_w), img_h_(img_h) {
  params_ = std::make_unique<ParamStore>(init_seed);
  encoder_ = std::make_unique<tpv::TriplaneEncoder>(*params_, "det.tpv", ecfg, img_w, img_h);
  decoder_ = std::make_unique<ObjectDecoder>(*params_, "det.dec", dcfg, ecfg.c);
}

ObjectDecoder::PredRefs UniPRModel::forward(Tape& tape, const synth::Image& left,
                                            const synth::Image& right,
                                            const tpv::ProjectionTable& table,
                                            const geom::CameraRig& rig) const {
  tpv::Planes planes = encoder_->encode_scene(tape, left, right, table);
  Ref tokens = encoder_->flatten_planes(tape, planes);
  return decoder_->decode_graph(tape, tokens, rig, ecfg_);
}

std::vector<ObjectPrediction> UniPRModel::predict(const synth::Image& left,
                                                  const synth::Image& right,
                                                  const tpv::ProjectionTable& table,
                                                  const geom::CameraRig& rig) const {
  Tape tape(/*grad_enabled=*/false);
  return ObjectDecoder::to_predictions(forward(tape, left, right, table, rig));
}

}  // namespace unipr::det
