// SPDX-License-Identifier: Apache-2.0
#include "unipr/pasr/vae.hpp"

#include <cmath>

#include "unipr/rng.hpp"

namespace unipr::pasr {

using namespace unipr::nn;

void VAEConfig::validate() const {
  if (n_surface < 1 || c < 1 || c_kl < 1 || encoder_blocks < 1 || decoder_blocks < 1 ||
      pos_freq < 1 || heads < 1 || point_tokens < 1 || ffn_mult < 1)
    throw std::invalid_argument("VAEConfig: all counts must be >= 1");
  if (c_kl >= c) throw std::invalid_argument("VAEConfig: C_kl must be smaller than C");
  if (c % heads != 0) throw std::invalid_argument("VAEConfig: C must be divisible by heads");
}

void LatentDistribution::validate() const {
  if (mu.size() != logvar.size()) throw std::invalid_argument("LatentDistribution: size mismatch");
  for (size_t i = 0; i < mu.size(); ++i)
    if (!std::isfinite(mu[i]) || !std::isfinite(logvar[i]) || logvar[i] < -10.0 - 1e-9 ||
        logvar[i] > 10.0 + 1e-9)
      throw std::invalid_argument("LatentDistribution: non-finite or unclamped entries");
}

ShapeLatent reparameterize(const LatentDistribution& dist, const std::vector<double>& eps) {
  dist.validate();
  if (eps.size() != dist.mu.size()) throw std::invalid_argument("reparameterize: eps size mismatch");
  ShapeLatent out;
  out.z.resize(dist.mu.size());
  for (size_t i = 0; i < dist.mu.size(); ++i)
    out.z[i] = dist.mu[i] + std::exp(0.5 * dist.logvar[i]) * eps[i];
  return out;
}

ShapeLatent reparameterize(const LatentDistribution& dist, uint64_t seed) {
  Rng rng(seed);
  std::vector<double> eps(dist.mu.size());
  for (auto& e : eps) e = rng.normal();
  return reparameterize(dist, eps);
}

ShapeLatent interpolate_latents(const ShapeLatent& a, const ShapeLatent& b, double t) {
  if (t < 0.0 || t > 1.0) throw std::domain_error("interpolate_latents: t must be in [0,1]");
  if (a.z.size() != b.z.size()) throw std::invalid_argument("interpolate_latents: size mismatch");
  ShapeLatent out;
  out.z.resize(a.z.size());
  for (size_t i = 0; i < a.z.size(); ++i) out.z[i] = (1.0 - t) * a.z[i] + t * b.z[i];
  return out;
}

double recon_loss(const std::vector<double>& pred, const std::vector<uint8_t>& labels) {
  if (pred.size() != labels.size()) throw std::invalid_argument("recon_loss: size mismatch");
  double sum = 0;
  for (size_t i = 0; i < pred.size(); ++i) {
    const double p = std::clamp(pred[i], 1e-7, 1.0 - 1e-7);
    sum += labels[i] ? -std::log(p) : -std::log(1.0 - p);
  }
  return sum / static_cast<double>(pred.size());
}

Ref recon_loss_graph(Ref probs, const std::vector<uint8_t>& labels) {
  if (probs->value.numel() != static_cast<int64_t>(labels.size()))
    throw std::invalid_argument("recon_loss_graph: size mismatch");
  const int n = static_cast<int>(labels.size());
  Tensor y({n}), ynot({n});
  for (int i = 0; i < n; ++i) {
    y[i] = labels[i] ? 1.0 : 0.0;
    ynot[i] = 1.0 - y[i];
  }
  Tape& t = *probs->tape;
  Ref p = clamp(reshape(probs, {n}), 1e-7, 1.0 - 1e-7);
  Ref pos = mul(log_op(p), t.constant(y));
  Ref negt = mul(log_op(add_scalar(neg(p), 1.0)), t.constant(ynot));
  return neg(mean_all(add(pos, negt)));
}

double klreg_loss(const LatentDistribution& dist) {
  dist.validate();
  double sum = 0;
  for (size_t i = 0; i < dist.mu.size(); ++i) {
    const double s2 = std::exp(dist.logvar[i]);
    sum += 0.5 * (dist.mu[i] * dist.mu[i] + s2 - dist.logvar[i]);
  }
  return sum / static_cast<double>(dist.mu.size());
}

Ref klreg_loss_graph(Ref mu, Ref logvar) {
  Ref term = add(square(mu), sub(exp_op(logvar), logvar));
  return scale(mean_all(term), 0.5);
}

PoseAwareShapeVAE::PoseAwareShapeVAE(VAEConfig cfg, uint64_t init_seed) : cfg_(cfg) {
  cfg.validate();
  params_ = std::make_unique<ParamStore>(init_seed);
  ParamStore& ps = *params_;
  const int emb = sinusoidal_dim(3, cfg.pos_freq);
  const int ffn = cfg.c * cfg.ffn_mult;
  in_proj_ = Linear(ps, "vae.enc.in_proj", emb, cfg.c);
  for (int i = 0; i < cfg.encoder_blocks; ++i)
    enc_blocks_.emplace_back(ps, "vae.enc.block" + std::to_string(i), cfg.c, cfg.heads, ffn, false);
  object_token_ = &ps.create_gaussian("vae.enc.object_token", {1, cfg.c}, 0.02);
  obj_cross_ = AttentionBlock(ps, "vae.enc.obj_cross", cfg.c, cfg.heads, ffn, true);
  mu_head_ = Linear(ps, "vae.enc.mu_head", cfg.c, cfg.c_kl);
  logvar_head_ = Linear(ps, "vae.enc.logvar_head", cfg.c, cfg.c_kl);

  z_lift_ = Linear(ps, "vae.dec.z_lift", cfg.c_kl, cfg.c);
  point_bank_ = &ps.create_gaussian("vae.dec.point_bank", {cfg.point_tokens, cfg.c}, 1.0);
  bank_cross_ = AttentionBlock(ps, "vae.dec.bank_cross", cfg.c, cfg.heads, ffn, true);
  for (int i = 0; i < cfg.decoder_blocks; ++i)
    dec_blocks_.emplace_back(ps, "vae.dec.block" + std::to_string(i), cfg.c, cfg.heads, ffn, false);
  query_proj_ = Linear(ps, "vae.dec.query_proj", emb, cfg.c);
  query_cross_ = AttentionBlock(ps, "vae.dec.query_cross", cfg.c, cfg.heads, ffn, true);
  occ_fc1_ = Linear(ps, "vae.dec.occ_fc1", cfg.c, cfg.c);
  occ_fc2_ = Linear(ps, "vae.dec.occ_fc2", cfg.c, 1);
}

namespace {

void check_in_ball(const geom::Points& pts, double tol, const char* who) {
  for (Eigen::Index i = 0; i < pts.rows(); ++i)
    if (pts.row(i).norm() > 1.0 + tol)
      throw std::invalid_argument(std::string(who) + ": point outside the unit ball");
}

}  // namespace

PoseAwareShapeVAE::EncodeRefs PoseAwareShapeVAE::encode_graph(Tape& tape,
                                                              const geom::Points& surface) const {
  if (surface.rows() != cfg_.n_surface)
    throw std::invalid_argument("encode: expected " + std::to_string(cfg_.n_surface) + " points, got " +
                                std::to_string(surface.rows()));
  check_in_ball(surface, 1e-6, "encode");
  Tensor coords({static_cast<int>(surface.rows()), 3});
  for (Eigen::Index i = 0; i < surface.rows(); ++i)
    for (int k = 0; k < 3; ++k) coords[i * 3 + k] = surface(i, k);
  Ref z = in_proj_(tape, tape.constant(sinusoidal_embedding(coords, cfg_.pos_freq)));
  for (const auto& block : enc_blocks_) z = block(tape, z);
  Ref obj = obj_cross_(tape, tape.param(*object_token_), z);
  Ref mu = mu_head_(tape, obj);
  Ref logvar = clamp(logvar_head_(tape, obj), -10.0, 10.0);
  return {mu, logvar};
}

Ref PoseAwareShapeVAE::decode_graph(Tape& tape, Ref z, const geom::Points& queries) const {
  check_in_ball(queries, 1e-9, "decode_occupancy");
  if (z->value.numel() != cfg_.c_kl)
    throw std::invalid_argument("decode_occupancy: latent width mismatch");
  Ref token = z_lift_(tape, reshape(z, {1, cfg_.c_kl}));
  Ref bank = bank_cross_(tape, tape.param(*point_bank_), token);
  for (const auto& block : dec_blocks_) bank = block(tape, bank);
  Tensor coords({static_cast<int>(queries.rows()), 3});
  for (Eigen::Index i = 0; i < queries.rows(); ++i)
    for (int k = 0; k < 3; ++k) coords[i * 3 + k] = queries(i, k);
  Ref q = query_proj_(tape, tape.constant(sinusoidal_embedding(coords, cfg_.pos_freq)));
  q = query_cross_(tape, q, bank);
  Ref logits = occ_fc2_(tape, gelu(occ_fc1_(tape, q)));
  return sigmoid(logits);
}

LatentDistribution PoseAwareShapeVAE::encode(const geom::Points& surface) const {
  Tape tape(/*grad_enabled=*/false);
  auto refs = encode_graph(tape, surface);
  LatentDistribution out;
  out.mu.assign(refs.mu->value.ptr(), refs.mu->value.ptr() + cfg_.c_kl);
  out.logvar.assign(refs.logvar->value.ptr(), refs.logvar->value.ptr() + cfg_.c_kl);
  return out;
}

std::vector<double> PoseAwareShapeVAE::decode_occupancy(const ShapeLatent& z,
                                                        const geom::Points& queries) const {
  if (static_cast<int>(z.z.size()) != cfg_.c_kl)
    throw std::invalid_argument("decode_occupancy: latent width mismatch");
  // chunk the queries to bound graph memory
  std::vector<double> out;
  out.reserve(queries.rows());
  const int chunk = 8192;
  for (Eigen::Index start = 0; start < queries.rows(); start += chunk) {
    const int len = static_cast<int>(std::min<Eigen::Index>(chunk, queries.rows() - start));
    Tape local(/*grad_enabled=*/false);
    Ref zl = local.constant(Tensor::from(z.z, {1, cfg_.c_kl}));
    Ref probs = decode_graph(local, zl, queries.middleRows(start, len));
    out.insert(out.end(), probs->value.ptr(), probs->value.ptr() + len);
  }
  return out;
}

TriMesh PoseAwareShapeVAE::extract_surface(const ShapeLatent& z, int resolution, double iso) const {
  if (resolution < 8) throw std::invalid_argument("extract_surface: resolution must be >= 8");
  const int n = resolution;
  std::vector<double> field(static_cast<size_t>(n) * n * n, 0.0);
  std::vector<int64_t> inside_idx;
  std::vector<Eigen::Vector3d> inside_pts;
  for (int zz = 0; zz < n; ++zz)
    for (int yy = 0; yy < n; ++yy)
      for (int xx = 0; xx < n; ++xx) {
        const Eigen::Vector3d p{-1.0 + 2.0 * xx / (n - 1), -1.0 + 2.0 * yy / (n - 1),
                                -1.0 + 2.0 * zz / (n - 1)};
        if (p.norm() <= 1.0) {
          inside_idx.push_back((static_cast<int64_t>(zz) * n + yy) * n + xx);
          inside_pts.push_back(p);
        }
      }
  geom::Points queries(inside_pts.size(), 3);
  for (size_t i = 0; i < inside_pts.size(); ++i) queries.row(i) = inside_pts[i].transpose();
  const std::vector<double> probs = decode_occupancy(z, queries);
  for (size_t i = 0; i < inside_idx.size(); ++i) field[inside_idx[i]] = probs[i];
  return marching_cubes(field, n, iso);
}

}  // namespace unipr::pasr
