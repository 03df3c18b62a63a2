// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "gradcheck.hpp"
#include "unipr/pasr/vae.hpp"
#include "unipr/synth/primitives.hpp"

using namespace unipr;
using namespace unipr::pasr;
using unipr::testing::gradcheck;

namespace {

VAEConfig tiny_cfg() {
  VAEConfig cfg;
  cfg.n_surface = 64;
  cfg.c = 32;
  cfg.c_kl = 8;
  cfg.encoder_blocks = 1;
  cfg.decoder_blocks = 1;
  cfg.pos_freq = 6;
  cfg.heads = 4;
  cfg.point_tokens = 32;
  return cfg;
}

struct MiniTrainResult {
  std::shared_ptr<PoseAwareShapeVAE> vae;
  double final_loss = 0;
};

// overfit a fixed set of shapes (no rotation) with fresh queries per step
MiniTrainResult overfit_shapes(const std::vector<synth::PrimitiveShape>& shapes, int steps,
                               uint64_t seed, double kl_weight = 1e-3, double lr = 2e-3) {
  VAEConfig cfg = tiny_cfg();
  auto vae = std::make_shared<PoseAwareShapeVAE>(cfg, seed);
  nn::AdamWConfig ocfg;
  ocfg.lr = lr;
  ocfg.total_steps = steps;
  nn::AdamW opt(vae->params(), ocfg);
  std::vector<geom::Points> surfaces;
  for (size_t i = 0; i < shapes.size(); ++i)
    surfaces.push_back(synth::sample_surface_points(shapes[i], cfg.n_surface, 17 + i).points);
  Rng rng(seed + 1);
  double last = 0;
  for (int step = 0; step < steps; ++step) {
    const size_t si = step % shapes.size();
    geom::Points queries = geom::sample_unit_ball_queries(256, rng.uniform_int(1u << 30));
    auto labels = synth::analytic_occupancy(shapes[si], queries);
    nn::Tape tape;
    auto enc = vae->encode_graph(tape, surfaces[si]);
    std::vector<double> eps_v(cfg.c_kl);
    for (auto& e : eps_v) e = rng.normal();
    nn::Ref sigma = nn::exp_op(nn::scale(enc.logvar, 0.5));
    nn::Ref z =
        nn::add(enc.mu, nn::mul(sigma, tape.constant(nn::Tensor::from(eps_v, {1, cfg.c_kl}))));
    nn::Ref probs = vae->decode_graph(tape, z, queries);
    nn::Ref loss = nn::add(recon_loss_graph(probs, labels),
                           nn::scale(klreg_loss_graph(enc.mu, enc.logvar), kl_weight));
    tape.backward(loss);
    tape.accumulate_param_grads();
    opt.step();
    last = loss->value[0];
  }
  return {vae, last};
}

}  // namespace

TEST_CASE("recon_loss trivial and analytic cases") {
  std::vector<uint8_t> labels = {1, 0, 1, 0};
  std::vector<double> perfect = {1.0, 0.0, 1.0, 0.0};
  CHECK(recon_loss(perfect, labels) <= 1.6e-5);
  std::vector<double> half(4, 0.5);
  CHECK(recon_loss(half, labels) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("recon_loss matches the elementwise hand formula") {
  Rng rng(31);
  for (int trial = 0; trial < 20; ++trial) {
    const int n = 17;
    std::vector<double> pred(n);
    std::vector<uint8_t> labels(n);
    for (int i = 0; i < n; ++i) {
      pred[i] = rng.uniform();
      labels[i] = rng.uniform() < 0.5 ? 0 : 1;
    }
    double hand = 0;
    for (int i = 0; i < n; ++i) {
      const double p = std::clamp(pred[i], 1e-7, 1.0 - 1e-7);
      hand += -(labels[i] * std::log(p) + (1 - labels[i]) * std::log(1.0 - p));
    }
    hand /= n;
    CHECK(recon_loss(pred, labels) == doctest::Approx(hand).epsilon(1e-9));
    // graph version agrees exactly
    nn::Tape t(false);
    nn::Ref pr = t.constant(nn::Tensor::from(pred, {n}));
    CHECK(recon_loss_graph(pr, labels)->value[0] == doctest::Approx(hand).epsilon(1e-12));
  }
}

TEST_CASE("klreg_loss printed-equation values") {
  LatentDistribution d;
  d.mu.assign(64, 0.0);
  d.logvar.assign(64, 0.0);  // sigma^2 = 1
  CHECK(klreg_loss(d) == doctest::Approx(0.5).epsilon(1e-12));
  d.mu.assign(64, 1.0);
  CHECK(klreg_loss(d) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("klreg_loss hand formula and gradient") {
  Rng rng(32);
  const int n = 16;
  nn::ParamStore ps(7);
  nn::Param& mu = ps.create("mu", {1, n}, 0.0);
  nn::Param& logvar = ps.create("logvar", {1, n}, 0.0);
  for (int i = 0; i < n; ++i) {
    mu.value[i] = rng.uniform(-2, 2);
    logvar.value[i] = rng.uniform(-2, 2);
  }
  LatentDistribution d;
  d.mu.assign(mu.value.ptr(), mu.value.ptr() + n);
  d.logvar.assign(logvar.value.ptr(), logvar.value.ptr() + n);
  double hand = 0;
  for (int i = 0; i < n; ++i)
    hand += 0.5 * (d.mu[i] * d.mu[i] + std::exp(d.logvar[i]) - d.logvar[i]);
  hand /= n;
  CHECK(klreg_loss(d) == doctest::Approx(hand).epsilon(1e-9));

  auto build = [&](nn::Tape& t) { return klreg_loss_graph(t.param(mu), t.param(logvar)); };
  CHECK(gradcheck(ps, build, 8) < 1e-4);

  // analytic gradient at mu=1, sigma^2=1 is 1/C_kl per channel
  for (int i = 0; i < n; ++i) {
    mu.value[i] = 1.0;
    logvar.value[i] = 0.0;
  }
  ps.zero_grad();
  nn::Tape t;
  t.backward(build(t));
  t.accumulate_param_grads();
  for (int i = 0; i < n; ++i) CHECK(mu.grad[i] == doctest::Approx(1.0 / n).epsilon(1e-10));
}

TEST_CASE("klreg per-channel floor 0.5") {
  Rng rng(33);
  for (int trial = 0; trial < 200; ++trial) {
    LatentDistribution d;
    d.mu = {rng.uniform(-4, 4)};
    d.logvar = {rng.uniform(-9.9, 9.9)};
    CHECK(klreg_loss(d) >= 0.5 - 1e-12);
  }
}

TEST_CASE("reparameterize: zero noise, clamped logvar, monte-carlo mean") {
  LatentDistribution d;
  d.mu = {1.0, -2.0, 0.5};
  d.logvar = {0.0, 1.0, -1.0};
  auto z = reparameterize(d, std::vector<double>{0, 0, 0});
  CHECK(z.z[0] == 1.0);
  CHECK(z.z[1] == -2.0);
  d.logvar.assign(3, -10.0);  // sigma ~ 6.7e-3
  auto zc = reparameterize(d, std::vector<double>{1, 1, 1});
  for (int i = 0; i < 3; ++i) CHECK(std::abs(zc.z[i] - d.mu[i]) < 0.01);

  d.logvar = {0.0, 1.0, -1.0};
  const int n = 100000;
  std::vector<double> mean(3, 0.0);
  Rng rng(555);
  for (int i = 0; i < n; ++i) {
    auto s = reparameterize(d, std::vector<double>{rng.normal(), rng.normal(), rng.normal()});
    for (int k = 0; k < 3; ++k) mean[k] += s.z[k];
  }
  for (int k = 0; k < 3; ++k) {
    mean[k] /= n;
    const double sigma = std::exp(0.5 * d.logvar[k]);
    CHECK(std::abs(mean[k] - d.mu[k]) < 3.0 * sigma / std::sqrt(static_cast<double>(n)));
  }
}

TEST_CASE("interpolate_latents endpoints and symmetry") {
  ShapeLatent a{{1, 2, 3}}, b{{-1, -2, -3}};
  CHECK(interpolate_latents(a, b, 0.0).z == a.z);
  CHECK(interpolate_latents(a, b, 1.0).z == b.z);
  auto mid = interpolate_latents(a, b, 0.5);
  for (double v : mid.z) CHECK(v == 0.0);
  CHECK_THROWS_AS(interpolate_latents(a, b, 1.5), std::domain_error);
}

TEST_CASE("encode output widths match the published latent size") {
  VAEConfig cfg;  // defaults: C=256, C_kl=64, N=2048
  PoseAwareShapeVAE vae(cfg, 3);
  auto sphere = synth::PrimitiveShape::normalized(synth::ShapeKind::sphere, {1, 0, 0});
  auto pts = synth::sample_surface_points(sphere, cfg.n_surface, 5).points;
  auto dist = vae.encode(pts);
  CHECK(dist.mu.size() == 64);
  CHECK(dist.logvar.size() == 64);
}

TEST_CASE("encode input contracts") {
  PoseAwareShapeVAE vae(tiny_cfg(), 3);
  geom::Points bad(8, 3);
  bad.setZero();
  CHECK_THROWS(vae.encode(bad));  // wrong N
  geom::Points far(64, 3);
  far.setZero();
  far(0, 0) = 1.5;  // outside unit ball
  CHECK_THROWS(vae.encode(far));
}

TEST_CASE("encode is permutation invariant over input points") {
  VAEConfig cfg = tiny_cfg();
  PoseAwareShapeVAE vae(cfg, 11);
  auto box = synth::PrimitiveShape::normalized(synth::ShapeKind::box, {0.8, 0.6, 0.4});
  auto pts = synth::sample_surface_points(box, cfg.n_surface, 6).points;
  auto base = vae.encode(pts);
  Rng rng(9);
  geom::Points shuffled = pts;
  for (int i = cfg.n_surface - 1; i > 0; --i) {
    const int j = static_cast<int>(rng.uniform_int(i + 1));
    shuffled.row(i).swap(shuffled.row(j));
  }
  auto perm = vae.encode(shuffled);
  for (int i = 0; i < cfg.c_kl; ++i) {
    CHECK(std::abs(perm.mu[i] - base.mu[i]) < 1e-5);
    CHECK(std::abs(perm.logvar[i] - base.logvar[i]) < 1e-5);
  }
}

TEST_CASE("decode outputs live strictly inside (0,1) and permute with queries") {
  VAEConfig cfg = tiny_cfg();
  PoseAwareShapeVAE vae(cfg, 13);
  ShapeLatent z;
  Rng rng(14);
  for (int i = 0; i < cfg.c_kl; ++i) z.z.push_back(rng.normal());
  geom::Points queries = geom::sample_unit_ball_queries(50, 77);
  auto probs = vae.decode_occupancy(z, queries);
  for (double p : probs) {
    CHECK(p > 0.0);
    CHECK(p < 1.0);
  }
  geom::Points reversed(50, 3);
  for (int i = 0; i < 50; ++i) reversed.row(i) = queries.row(49 - i);
  auto rprobs = vae.decode_occupancy(z, reversed);
  for (int i = 0; i < 50; ++i) CHECK(rprobs[i] == doctest::Approx(probs[49 - i]).epsilon(1e-10));
  geom::Points outside(1, 3);
  outside << 1.5, 0, 0;
  CHECK_THROWS(vae.decode_occupancy(z, outside));
}

TEST_CASE("gradcheck: full VAE loss at toy dimensions") {
  VAEConfig cfg = tiny_cfg();
  cfg.n_surface = 32;
  cfg.c = 16;
  cfg.c_kl = 4;
  cfg.heads = 2;
  cfg.point_tokens = 8;
  PoseAwareShapeVAE vae(cfg, 21);
  auto shape = synth::PrimitiveShape::normalized(synth::ShapeKind::cylinder, {0.5, 0.8, 0});
  auto pts = synth::sample_surface_points(shape, cfg.n_surface, 3).points;
  geom::Points queries = geom::sample_unit_ball_queries(24, 4);
  auto labels = synth::analytic_occupancy(shape, queries);
  Rng erng(5);
  std::vector<double> eps_v(cfg.c_kl);
  for (auto& e : eps_v) e = erng.normal();
  auto build = [&](nn::Tape& t) {
    auto enc = vae.encode_graph(t, pts);
    nn::Ref sigma = nn::exp_op(nn::scale(enc.logvar, 0.5));
    nn::Ref z = nn::add(enc.mu, nn::mul(sigma, t.constant(nn::Tensor::from(eps_v, {1, cfg.c_kl}))));
    nn::Ref probs = vae.decode_graph(t, z, queries);
    return nn::add(recon_loss_graph(probs, labels),
                   nn::scale(klreg_loss_graph(enc.mu, enc.logvar), 1e-3));
  };
  CHECK(gradcheck(vae.params(), build, 2, /*seed=*/6) < 1e-3);
}

TEST_CASE("marching cubes: analytic ball field") {
  const int n = 24;
  std::vector<double> field(static_cast<size_t>(n) * n * n, 0.0);
  for (int z = 0; z < n; ++z)
    for (int y = 0; y < n; ++y)
      for (int x = 0; x < n; ++x) {
        const Eigen::Vector3d p{-1.0 + 2.0 * x / (n - 1), -1.0 + 2.0 * y / (n - 1),
                                -1.0 + 2.0 * z / (n - 1)};
        field[(static_cast<size_t>(z) * n + y) * n + x] = p.norm() <= 0.6 ? 1.0 : 0.0;
      }
  auto mesh = marching_cubes(field, n, 0.5);
  REQUIRE(!mesh.empty());
  CHECK(mesh.euler_characteristic() == 2);  // watertight genus-0
  const double cell = 2.0 / (n - 1);
  for (const auto& v : mesh.vertices) CHECK(std::abs(v.norm() - 0.6) < cell);
}

TEST_CASE("marching cubes: empty and full fields give empty meshes") {
  std::vector<double> zeros(10 * 10 * 10, 0.0);
  CHECK(marching_cubes(zeros, 10, 0.5).empty());
  std::vector<double> ones(10 * 10 * 10, 1.0);
  CHECK(marching_cubes(ones, 10, 0.5).empty());  // no crossing inside the grid
}

TEST_CASE("overfit one sphere: decode accuracy and extracted surface radius") {
  auto sphere = synth::PrimitiveShape::normalized(synth::ShapeKind::sphere, {1, 0, 0});
  synth::PrimitiveShape small = sphere;
  small.params[0] = 0.8;  // radius 0.8 inside the unit ball
  auto result = overfit_shapes({small}, 600, 12345);

  // held-out queries against the analytic oracle
  auto pts = synth::sample_surface_points(small, tiny_cfg().n_surface, 17).points;
  auto dist = result.vae->encode(pts);
  ShapeLatent z{dist.mu};
  geom::Points held_out = geom::sample_unit_ball_queries(2000, 991);
  auto labels = synth::analytic_occupancy(small, held_out);
  auto probs = result.vae->decode_occupancy(z, held_out);
  double mae = 0;
  for (size_t i = 0; i < probs.size(); ++i) mae += std::abs(probs[i] - labels[i]);
  mae /= probs.size();
  CHECK(mae < 0.05);

  auto mesh = result.vae->extract_surface(z, 32);
  REQUIRE(!mesh.empty());
  CHECK(mesh.euler_characteristic() == 2);
  int in_band = 0;
  for (const auto& v : mesh.vertices)
    if (v.norm() >= 0.75 && v.norm() <= 0.85) ++in_band;
  CHECK(in_band >= static_cast<int>(0.99 * mesh.vertices.size()));
}

TEST_CASE("two trained primitives separate in latent space") {
  auto sphere = synth::PrimitiveShape::normalized(synth::ShapeKind::sphere, {1, 0, 0});
  sphere.params[0] = 0.75;
  auto box = synth::PrimitiveShape::normalized(synth::ShapeKind::box, {0.9, 0.7, 0.3});
  auto result = overfit_shapes({sphere, box}, 700, 777);
  const auto cfg = result.vae->config();
  auto enc = [&](const synth::PrimitiveShape& s, uint64_t seed) {
    return result.vae->encode(synth::sample_surface_points(s, cfg.n_surface, seed).points);
  };
  auto da = enc(sphere, 17);
  auto db = enc(box, 18);
  double between = 0;
  for (int i = 0; i < cfg.c_kl; ++i) between += (da.mu[i] - db.mu[i]) * (da.mu[i] - db.mu[i]);
  between = std::sqrt(between);
  // intra-shape resampling distance: E||z1 - z2|| for two samples of one dist
  double within2 = 0;
  for (int i = 0; i < cfg.c_kl; ++i) within2 += 2.0 * std::exp(da.logvar[i]);
  CHECK(between > std::sqrt(within2));
}
