// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "unipr/geometry.hpp"
#include "unipr/nn/layers.hpp"
#include "unipr/synth/png_io.hpp"

namespace unipr::tpv {

struct EncoderConfig {
  int d_bins = 16;
  double d_min = 0.5, d_max = 2.0;
  int c = 128;
  int n_layers = 2;
  int heads = 8;
  int ref_points_per_cell = 4;
  int stride = 8;
  int stage_channels[3] = {16, 32, 64};  // conv pyramid before the final C stage
  int ffn_mult = 2;

  void validate() const;
  int plane_u(int width) const { return (width + stride - 1) / stride; }
  int plane_v(int height) const { return (height + stride - 1) / stride; }
  geom::UVDGrid uvd_grid(int width, int height) const;
};

/// One bilinear tap into a flattened feature grid.
struct SampleTap {
  std::array<int64_t, 4> idx{};
  std::array<double, 4> w{};
  bool right_view = false;
  bool valid = true;
};

/// Precomputed once per (grid, rig): voxel projections plus per-plane
/// reference-point tap tables for stereo cross-attention.
struct ProjectionTable {
  int U = 0, V = 0, D = 0;
  int Wf = 0, Hf = 0;  // feature grid
  std::vector<Eigen::Vector2d> left_px, right_px;  // per voxel, pixel coords
  std::vector<uint8_t> valid;                      // right projection in bounds
  double validity_fraction = 0;

  struct PlaneTaps {
    int P = 0, S = 0;                 // cells, taps per cell
    std::vector<SampleTap> taps;      // P * S
    nn::Tensor score_mask;            // [P, 1, S] additive
  };
  PlaneTaps uv, ud, vd;

  int64_t voxel_index(int u, int v, int d) const {
    return (static_cast<int64_t>(u) * V + v) * D + d;
  }
};

struct Planes {
  nn::Ref uv = nullptr;  // [U*V, C], row = u * V + v
  nn::Ref ud = nullptr;  // [U*D, C], row = u * D + d
  nn::Ref vd = nullptr;  // [V*D, C], row = v * D + d
};

/// Backbone + TPV stereo lifting. Parameters live in the caller's store.
class TriplaneEncoder {
 public:
  TriplaneEncoder(nn::ParamStore& ps, const std::string& prefix, const EncoderConfig& cfg,
                  int img_w, int img_h);

  const EncoderConfig& config() const { return cfg_; }
  int width() const { return img_w_; }
  int height() const { return img_h_; }

  ProjectionTable build_projection_table(const geom::CameraRig& rig) const;

  /// Shared-weight conv pyramid; returns [Hf*Wf, C] flattened features.
  nn::Ref extract_features(nn::Tape& tape, const synth::Image& img) const;
  /// Same pyramid on an existing [H, W, 3] node (lets callers track image grads).
  nn::Ref extract_features(nn::Tape& tape, nn::Ref img) const;

  Planes initial_planes(nn::Tape& tape) const;
  Planes stereo_cross_attention(nn::Tape& tape, const Planes& tpv, nn::Ref feat_l, nn::Ref feat_r,
                                const ProjectionTable& table, int layer) const;
  Planes tpv_self_attention(nn::Tape& tape, const Planes& tpv, int layer) const;

  Planes encode_scene(nn::Tape& tape, const synth::Image& left, const synth::Image& right,
                      const ProjectionTable& table) const;

  /// Token sequence [U*V + U*D + V*D, C] in plane order uv, ud, vd.
  nn::Ref flatten_planes(nn::Tape& tape, const Planes& tpv) const;

 private:
  struct CrossLayer {
    nn::LayerNorm ln_q, ln_kv;
    nn::Linear wq, wk, wv, wo;  // wo zero-initialized
  };
  Planes cross_one_plane_set(nn::Tape& tape, const Planes& tpv, nn::Ref kv_all,
                             const ProjectionTable& table, int layer) const;
  nn::Ref plane_cross(nn::Tape& tape, nn::Ref plane, nn::Ref kv_rows,
                      const ProjectionTable::PlaneTaps& taps, const CrossLayer& layer) const;

  EncoderConfig cfg_;
  int img_w_, img_h_;
  nn::Param* conv_w_[4];
  nn::Param* conv_b_[4];
  nn::Param* plane_emb_uv_;
  nn::Param* plane_emb_ud_;
  nn::Param* plane_emb_vd_;
  std::vector<CrossLayer> cross_layers_;
  std::vector<nn::AttentionBlock> self_layers_;
};

/// T(u,v,d) = plane_uv[u,v] + plane_ud[u,d] + plane_vd[v,d]; value-level helper.
std::vector<double> compose_voxel_feature(const nn::Tensor& plane_uv, const nn::Tensor& plane_ud,
                                          const nn::Tensor& plane_vd, int U, int V, int D, int u,
                                          int v, int d);

/// uint8 RGB -> [H, W, 3] double in [-0.5, 0.5].
nn::Tensor image_to_tensor(const synth::Image& img);

}  // namespace unipr::tpv
