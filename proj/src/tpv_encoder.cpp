// SPDX-License-Identifier: Apache-2.0
#include "unipr/tpv/encoder.hpp"

#include <cmath>

namespace unipr::tpv {

using namespace unipr::nn;

void EncoderConfig::validate() const {
  if (d_bins < 1 || c < 1 || n_layers < 0 || heads < 1 || ref_points_per_cell < 1 || stride < 1 ||
      ffn_mult < 1)
    throw std::invalid_argument("EncoderConfig: bad counts");
  if (!(d_min > 0 && d_max > d_min)) throw std::invalid_argument("EncoderConfig: bad depth range");
  if (c % heads != 0) throw std::invalid_argument("EncoderConfig: C must be divisible by heads");
}

geom::UVDGrid EncoderConfig::uvd_grid(int width, int height) const {
  return geom::UVDGrid::inverse_depth(plane_u(width), plane_v(height), d_bins, d_min, d_max);
}

nn::Tensor image_to_tensor(const synth::Image& img) {
  if (img.channels != 3) throw std::invalid_argument("image_to_tensor: RGB expected");
  Tensor t({img.height, img.width, 3});
  for (int64_t i = 0, n = t.numel(); i < n; ++i) t[i] = img.pixels[i] / 255.0 - 0.5;
  return t;
}

TriplaneEncoder::TriplaneEncoder(ParamStore& ps, const std::string& prefix,
                                 const EncoderConfig& cfg, int img_w, int img_h)
    : cfg_(cfg), img_w_(img_w), img_h_(img_h) {
  cfg.validate();
  const int chans[5] = {3, cfg.stage_channels[0], cfg.stage_channels[1], cfg.stage_channels[2],
                        cfg.c};
  for (int s = 0; s < 4; ++s) {
    const double init = xavier(9 * chans[s], chans[s + 1]);
    conv_w_[s] = &ps.create(prefix + ".backbone.conv" + std::to_string(s) + ".w",
                            {3, 3, chans[s], chans[s + 1]}, init);
    conv_b_[s] = &ps.create(prefix + ".backbone.conv" + std::to_string(s) + ".b",
                            {chans[s + 1]}, 0.0);
  }
  const int U = cfg.plane_u(img_w), V = cfg.plane_v(img_h), D = cfg.d_bins;
  plane_emb_uv_ = &ps.create_gaussian(prefix + ".plane_emb.uv", {U * V, cfg.c}, 0.02);
  plane_emb_ud_ = &ps.create_gaussian(prefix + ".plane_emb.ud", {U * D, cfg.c}, 0.02);
  plane_emb_vd_ = &ps.create_gaussian(prefix + ".plane_emb.vd", {V * D, cfg.c}, 0.02);
  for (int l = 0; l < cfg.n_layers; ++l) {
    const std::string lp = prefix + ".layer" + std::to_string(l);
    CrossLayer cl;
    cl.ln_q = LayerNorm(ps, lp + ".cross.ln_q", cfg.c);
    cl.ln_kv = LayerNorm(ps, lp + ".cross.ln_kv", cfg.c);
    cl.wq = Linear(ps, lp + ".cross.wq", cfg.c, cfg.c);
    cl.wk = Linear(ps, lp + ".cross.wk", cfg.c, cfg.c);
    cl.wv = Linear(ps, lp + ".cross.wv", cfg.c, cfg.c);
    cl.wo = Linear(ps, lp + ".cross.wo", cfg.c, cfg.c, /*zero_init=*/true);
    cross_layers_.push_back(std::move(cl));
    self_layers_.emplace_back(ps, lp + ".self", cfg.c, cfg.heads, cfg.c * cfg.ffn_mult, false);
  }
}

namespace {

// pixel coordinate of a feature/UVD cell center
double cell_to_px(int cell, int stride) { return (cell + 0.5) * stride - 0.5; }

SampleTap bilinear_tap(double fx, double fy, int Wf, int Hf, bool right_view, bool valid) {
  SampleTap tap;
  tap.right_view = right_view;
  tap.valid = valid;
  const double cx = std::clamp(fx, 0.0, static_cast<double>(Wf - 1));
  const double cy = std::clamp(fy, 0.0, static_cast<double>(Hf - 1));
  const int x0 = std::min(static_cast<int>(std::floor(cx)), Wf - 2 >= 0 ? Wf - 2 : 0);
  const int y0 = std::min(static_cast<int>(std::floor(cy)), Hf - 2 >= 0 ? Hf - 2 : 0);
  const double ax = cx - x0, ay = cy - y0;
  const int x1 = std::min(x0 + 1, Wf - 1), y1 = std::min(y0 + 1, Hf - 1);
  tap.idx = {static_cast<int64_t>(y0) * Wf + x0, static_cast<int64_t>(y0) * Wf + x1,
             static_cast<int64_t>(y1) * Wf + x0, static_cast<int64_t>(y1) * Wf + x1};
  tap.w = {(1 - ax) * (1 - ay), ax * (1 - ay), (1 - ax) * ay, ax * ay};
  return tap;
}

}  // namespace

ProjectionTable TriplaneEncoder::build_projection_table(const geom::CameraRig& rig) const {
  rig.validate();
  if (rig.width != img_w_ || rig.height != img_h_)
    throw std::invalid_argument("build_projection_table: rig size mismatch");
  const geom::UVDGrid grid = cfg_.uvd_grid(img_w_, img_h_);
  ProjectionTable table;
  table.U = grid.U;
  table.V = grid.V;
  table.D = grid.D;
  table.Wf = grid.U;
  table.Hf = grid.V;
  const int64_t n_vox = static_cast<int64_t>(grid.U) * grid.V * grid.D;
  table.left_px.resize(n_vox);
  table.right_px.resize(n_vox);
  table.valid.resize(n_vox);
  int64_t n_valid = 0;
  for (int u = 0; u < grid.U; ++u)
    for (int v = 0; v < grid.V; ++v)
      for (int d = 0; d < grid.D; ++d) {
        const double px = cell_to_px(u, cfg_.stride), py = cell_to_px(v, cfg_.stride);
        const Eigen::Vector3d X = geom::uvd_to_camera(px, py, grid.depth_centers[d], rig);
        const auto proj = geom::camera_to_stereo_pixels(X, rig);
        const int64_t vi = table.voxel_index(u, v, d);
        table.left_px[vi] = proj.left;
        table.right_px[vi] = proj.right;
        const bool ok = proj.right.x() >= 0.0 && proj.right.x() <= rig.width - 1.0;
        table.valid[vi] = ok ? 1 : 0;
        n_valid += ok;
      }
  table.validity_fraction = static_cast<double>(n_valid) / static_cast<double>(n_vox);

  const int R = cfg_.ref_points_per_cell;
  const int S = 2 * R;
  auto px_to_feature = [&](double px) { return (px + 0.5) / cfg_.stride - 0.5; };
  auto make_taps = [&](int P, auto&& cell_refs) {
    ProjectionTable::PlaneTaps taps;
    taps.P = P;
    taps.S = S;
    taps.taps.resize(static_cast<size_t>(P) * S);
    taps.score_mask = Tensor::zeros({P, 1, S});
    for (int p = 0; p < P; ++p)
      for (int r = 0; r < R; ++r) {
        // ref voxel (u, v, d) for this cell and subsample slot
        auto [u, v, d] = cell_refs(p, r);
        const int64_t vi = table.voxel_index(u, v, d);
        // left tap: the voxel's own (u, v) cell, exact by construction
        taps.taps[static_cast<size_t>(p) * S + 2 * r] =
            bilinear_tap(u, v, table.Wf, table.Hf, false, true);
        const double fu = px_to_feature(table.right_px[vi].x());
        const double fv = px_to_feature(table.right_px[vi].y());
        SampleTap right = bilinear_tap(fu, fv, table.Wf, table.Hf, true, table.valid[vi] != 0);
        taps.taps[static_cast<size_t>(p) * S + 2 * r + 1] = right;
        if (!right.valid) taps.score_mask[static_cast<int64_t>(p) * S + 2 * r + 1] = -1e30;
      }
    return taps;
  };
  const int U = grid.U, V = grid.V, D = grid.D;
  auto sub = [R](int k, int n) { return std::min(n - 1, (2 * k + 1) * n / (2 * R)); };
  table.uv = make_taps(U * V, [&](int p, int r) {
    return std::tuple<int, int, int>{p / V, p % V, sub(r, D)};
  });
  table.ud = make_taps(U * D, [&](int p, int r) {
    return std::tuple<int, int, int>{p / D, sub(r, V), p % D};
  });
  table.vd = make_taps(V * D, [&](int p, int r) {
    return std::tuple<int, int, int>{sub(r, U), p / D, p % D};
  });
  return table;
}

nn::Ref TriplaneEncoder::extract_features(Tape& tape, const synth::Image& img) const {
  if (img.width != img_w_ || img.height != img_h_)
    throw std::invalid_argument("extract_features: image size mismatch");
  return extract_features(tape, tape.constant(image_to_tensor(img)));
}

nn::Ref TriplaneEncoder::extract_features(Tape& tape, Ref img) const {
  if (img->value.ndim() != 3 || img->value.dim(0) != img_h_ || img->value.dim(1) != img_w_)
    throw std::invalid_argument("extract_features: image tensor size mismatch");
  Ref x = img;
  const int strides[4] = {2, 2, 2, 1};
  for (int s = 0; s < 4; ++s)
    x = relu(conv2d(x, tape.param(*conv_w_[s]), tape.param(*conv_b_[s]), strides[s], 1));
  const int hf = x->value.dim(0), wf = x->value.dim(1);
  if (hf != cfg_.plane_v(img_h_) || wf != cfg_.plane_u(img_w_))
    throw std::logic_error("extract_features: unexpected feature grid");
  return reshape(x, {hf * wf, cfg_.c});
}

Planes TriplaneEncoder::initial_planes(Tape& tape) const {
  return {tape.param(*plane_emb_uv_), tape.param(*plane_emb_ud_), tape.param(*plane_emb_vd_)};
}

nn::Ref TriplaneEncoder::plane_cross(Tape& tape, Ref plane, Ref kv_rows,
                                     const ProjectionTable::PlaneTaps& taps,
                                     const CrossLayer& layer) const {
  const int P = taps.P, S = taps.S, C = cfg_.c, H = cfg_.heads, dh = C / H;
  Ref q = layer.wq(tape, layer.ln_q(tape, plane));          // [P, C]
  Ref kvn = layer.ln_kv(tape, kv_rows);                     // [P*S, C]
  Ref k = layer.wk(tape, kvn);
  Ref v = layer.wv(tape, kvn);
  std::vector<Ref> head_outs;
  Ref q3 = reshape(q, {P, 1, C});
  Ref k3 = reshape(k, {P, S, C});
  Ref v3 = reshape(v, {P, S, C});
  for (int h = 0; h < H; ++h) {
    Ref qh = slice_last(q3, h * dh, dh);                    // [P, 1, dh]
    Ref kh = slice_last(k3, h * dh, dh);                    // [P, S, dh]
    Ref vh = slice_last(v3, h * dh, dh);
    Ref scores = scale(bmm(qh, kh, false, true), 1.0 / std::sqrt(static_cast<double>(dh)));
    Ref attn = softmax_lastdim_masked(scores, taps.score_mask);  // [P, 1, S]
    head_outs.push_back(reshape(bmm(attn, vh), {P, dh}));
  }
  Ref out = layer.wo(tape, concat_last(head_outs));
  return add(plane, out);
}

Planes TriplaneEncoder::stereo_cross_attention(Tape& tape, const Planes& tpv, Ref feat_l,
                                               Ref feat_r, const ProjectionTable& table,
                                               int layer) const {
  if (layer < 0 || layer >= static_cast<int>(cross_layers_.size()))
    throw std::out_of_range("stereo_cross_attention: layer index");
  const CrossLayer& cl = cross_layers_[layer];
  // gather all taps per plane from the two feature maps
  auto gather_taps = [&](const ProjectionTable::PlaneTaps& taps) {
    std::vector<std::array<int64_t, 4>> idx_l, idx_r;
    std::vector<std::array<double, 4>> w_l, w_r;
    std::vector<int> order(taps.taps.size());
    int nl = 0, nr = 0;
    for (const auto& t : taps.taps) (t.right_view ? nr : nl)++;
    idx_l.reserve(nl);
    idx_r.reserve(nr);
    int li = 0, ri = 0;
    for (size_t i = 0; i < taps.taps.size(); ++i) {
      const SampleTap& t = taps.taps[i];
      if (t.right_view) {
        idx_r.push_back(t.idx);
        w_r.push_back(t.w);
        order[i] = nl + ri++;
      } else {
        idx_l.push_back(t.idx);
        w_l.push_back(t.w);
        order[i] = li++;
      }
    }
    std::vector<Ref> parts;
    if (!idx_l.empty()) parts.push_back(gather_bilinear(feat_l, idx_l, w_l));
    if (!idx_r.empty()) parts.push_back(gather_bilinear(feat_r, idx_r, w_r));
    Ref cat = parts.size() == 1 ? parts[0] : concat0(parts);
    return gather_rows(cat, order);  // [P*S, C] in tap order
  };
  Planes out;
  out.uv = plane_cross(tape, tpv.uv, gather_taps(table.uv), table.uv, cl);
  out.ud = plane_cross(tape, tpv.ud, gather_taps(table.ud), table.ud, cl);
  out.vd = plane_cross(tape, tpv.vd, gather_taps(table.vd), table.vd, cl);
  return out;
}

Planes TriplaneEncoder::tpv_self_attention(Tape& tape, const Planes& tpv, int layer) const {
  if (layer < 0 || layer >= static_cast<int>(self_layers_.size()))
    throw std::out_of_range("tpv_self_attention: layer index");
  const int p_uv = tpv.uv->value.dim(0), p_ud = tpv.ud->value.dim(0), p_vd = tpv.vd->value.dim(0);
  Ref tokens = concat0({tpv.uv, tpv.ud, tpv.vd});
  tokens = self_layers_[layer](tape, tokens);
  Planes out;
  out.uv = slice0(tokens, 0, p_uv);
  out.ud = slice0(tokens, p_uv, p_ud);
  out.vd = slice0(tokens, p_uv + p_ud, p_vd);
  return out;
}

Planes TriplaneEncoder::encode_scene(Tape& tape, const synth::Image& left,
                                     const synth::Image& right,
                                     const ProjectionTable& table) const {
  Ref feat_l = extract_features(tape, left);
  Ref feat_r = extract_features(tape, right);
  Planes tpv = initial_planes(tape);
  for (int l = 0; l < cfg_.n_layers; ++l) {
    tpv = stereo_cross_attention(tape, tpv, feat_l, feat_r, table, l);
    tpv = tpv_self_attention(tape, tpv, l);
  }
  return tpv;
}

nn::Ref TriplaneEncoder::flatten_planes(Tape& tape, const Planes& tpv) const {
  (void)tape;
  return concat0({tpv.uv, tpv.ud, tpv.vd});
}

std::vector<double> compose_voxel_feature(const Tensor& plane_uv, const Tensor& plane_ud,
                                          const Tensor& plane_vd, int U, int V, int D, int u,
                                          int v, int d) {
  if (u < 0 || u >= U || v < 0 || v >= V || d < 0 || d >= D)
    throw std::out_of_range("compose_voxel_feature: indices out of range");
  const int c = plane_uv.dim(-1);
  std::vector<double> out(c, 0.0);
  const double* uv = plane_uv.ptr() + (static_cast<int64_t>(u) * V + v) * c;
  const double* ud = plane_ud.ptr() + (static_cast<int64_t>(u) * D + d) * c;
  const double* vd = plane_vd.ptr() + (static_cast<int64_t>(v) * D + d) * c;
  for (int i = 0; i < c; ++i) out[i] = uv[i] + ud[i] + vd[i];
  return out;
}

}  // namespace unipr::tpv
