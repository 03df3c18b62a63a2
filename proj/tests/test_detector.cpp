// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "gradcheck.hpp"
#include "unipr/det/detector.hpp"
#include "unipr/match/matching.hpp"
#include "unipr/metrics/metrics.hpp"
#include "unipr/synth/dataset.hpp"

using namespace unipr;
using namespace unipr::det;
using unipr::testing::gradcheck;

namespace {

tpv::EncoderConfig tiny_ecfg() {
  tpv::EncoderConfig cfg;
  cfg.d_bins = 6;
  cfg.d_min = 0.35;
  cfg.d_max = 1.6;
  cfg.c = 32;
  cfg.n_layers = 1;
  cfg.heads = 4;
  cfg.ref_points_per_cell = 2;
  cfg.stage_channels[0] = 8;
  cfg.stage_channels[1] = 16;
  cfg.stage_channels[2] = 24;
  return cfg;
}

DecoderConfig tiny_dcfg(int c_kl = 8) {
  DecoderConfig cfg;
  cfg.n_queries = 4;
  cfg.n_layers = 1;
  cfg.heads = 4;
  cfg.c_kl = c_kl;
  return cfg;
}

synth::GenConfig tiny_gen() {
  synth::GenConfig cfg;
  cfg.width = 64;
  cfg.height = 48;
  cfg.fx = cfg.fy = 58;
  cfg.d_min = 0.35;
  cfg.d_max = 1.6;
  cfg.scale_min = 0.10;
  cfg.scale_max = 0.22;
  cfg.min_objects = 2;
  cfg.max_objects = 2;
  cfg.n_surface = 128;
  cfg.n_queries = 512;
  cfg.min_visible_pixels = 20;
  return cfg;
}

synth::Image random_image(int w, int h, uint64_t seed) {
  synth::Image img(w, h, 3);
  Rng rng(seed);
  for (auto& p : img.pixels) p = static_cast<uint8_t>(rng.uniform_int(256));
  return img;
}

}  // namespace

TEST_CASE("set prediction: always M outputs with valid ranges") {
  auto ecfg = tiny_ecfg();
  auto dcfg = tiny_dcfg();
  for (uint64_t seed : {1ull, 2ull, 3ull}) {
    UniPRModel model(ecfg, dcfg, 64, 48, seed);
    // scramble parameters so activations are exercised away from init
    Rng rng(seed * 7 + 1);
    for (auto& p : model.params().items())
      for (int64_t i = 0, n = p->value.numel(); i < n; ++i) p->value[i] += 0.2 * rng.normal();
    geom::CameraRig rig = tiny_gen().rig();
    auto table = model.encoder().build_projection_table(rig);
    auto preds = model.predict(random_image(64, 48, seed), random_image(64, 48, seed + 9), table, rig);
    REQUIRE(static_cast<int>(preds.size()) == dcfg.n_queries);
    for (const auto& p : preds) {
      CHECK(p.scale > 0.0);
      CHECK(p.confidence >= 0.0);
      CHECK(p.confidence <= 1.0);
      CHECK(p.position.z() >= ecfg.d_min - 1e-9);
      CHECK(p.position.z() <= ecfg.d_max + 1e-9);
      CHECK(static_cast<int>(p.shape_dist.mu.size()) == dcfg.c_kl);
    }
  }
}

TEST_CASE("shape head widths match the published latent size") {
  auto ecfg = tiny_ecfg();
  DecoderConfig dcfg = tiny_dcfg(64);  // C_kl = 64
  UniPRModel model(ecfg, dcfg, 64, 48, 5);
  geom::CameraRig rig = tiny_gen().rig();
  auto table = model.encoder().build_projection_table(rig);
  auto preds = model.predict(random_image(64, 48, 1), random_image(64, 48, 2), table, rig);
  CHECK(preds[0].shape_dist.mu.size() == 64);
  CHECK(preds[0].shape_dist.logvar.size() == 64);
}

TEST_CASE("permuting the query embeddings permutes the outputs") {
  auto ecfg = tiny_ecfg();
  auto dcfg = tiny_dcfg();
  UniPRModel a(ecfg, dcfg, 64, 48, 11);
  UniPRModel b(ecfg, dcfg, 64, 48, 11);  // identical init
  const std::vector<int> perm = {2, 0, 3, 1};
  nn::Param* qa = a.params().find("det.dec.query_emb");
  nn::Param* qb = b.params().find("det.dec.query_emb");
  REQUIRE(qa != nullptr);
  REQUIRE(qb != nullptr);
  const int c = qa->value.dim(1);
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < c; ++j) qb->value[i * c + j] = qa->value[perm[i] * c + j];
  geom::CameraRig rig = tiny_gen().rig();
  auto table = a.encoder().build_projection_table(rig);
  auto left = random_image(64, 48, 3), right = random_image(64, 48, 4);
  auto pa = a.predict(left, right, table, rig);
  auto pb = b.predict(left, right, table, rig);
  for (int i = 0; i < 4; ++i) {
    CHECK((pb[i].position - pa[perm[i]].position).norm() < 1e-8);
    CHECK(pb[i].confidence == doctest::Approx(pa[perm[i]].confidence).epsilon(1e-9));
  }
}

TEST_CASE("postprocess: threshold filter, ordering, tie-break") {
  std::vector<ObjectPrediction> preds(4);
  for (int i = 0; i < 4; ++i) preds[i].query_index = i;
  preds[0].confidence = 0.3;
  preds[1].confidence = 0.9;
  preds[2].confidence = 0.3;
  preds[3].confidence = 0.05;
  auto all_below = postprocess_predictions(preds, 0.95);
  CHECK(all_below.empty());
  auto keep_all = postprocess_predictions(preds, 0.0);
  REQUIRE(keep_all.size() == 4);
  CHECK(keep_all[0].query_index == 1);
  CHECK(keep_all[1].query_index == 0);  // tie 0.3 vs 0.3: lower query index first
  CHECK(keep_all[2].query_index == 2);
  CHECK(keep_all[3].query_index == 3);
  auto mid = postprocess_predictions(preds, 0.3);
  CHECK(mid.size() == 3);
}

TEST_CASE("reconstruct: similarity transform exactness") {
  pasr::VAEConfig vcfg;
  vcfg.n_surface = 64;
  vcfg.c = 32;
  vcfg.c_kl = 8;
  vcfg.encoder_blocks = 1;
  vcfg.decoder_blocks = 1;
  vcfg.heads = 4;
  vcfg.point_tokens = 32;
  pasr::PoseAwareShapeVAE vae(vcfg, 31);
  ObjectPrediction p;
  Rng rng(17);
  for (int i = 0; i < vcfg.c_kl; ++i) {
    p.shape_dist.mu.push_back(rng.normal());
    p.shape_dist.logvar.push_back(0.0);
  }
  p.position = {0.1, -0.2, 1.0};
  p.scale = 1.0;
  auto base = reconstruct_object_shape(p, vae, 16);
  ObjectPrediction doubled = p;
  doubled.scale = 2.0;
  auto big = reconstruct_object_shape(doubled, vae, 16);
  ObjectPrediction moved = p;
  moved.position += Eigen::Vector3d{0.5, 0.25, -0.125};
  auto shifted = reconstruct_object_shape(moved, vae, 16);
  if (base.empty) {
    CHECK(big.empty);
    CHECK(shifted.empty);
  } else {
    REQUIRE(base.mesh.vertices.size() == big.mesh.vertices.size());
    for (size_t i = 0; i < base.mesh.vertices.size(); ++i) {
      const Eigen::Vector3d expected = p.position + 2.0 * (base.mesh.vertices[i] - p.position);
      CHECK((big.mesh.vertices[i] - expected).norm() < 1e-12);
      CHECK((shifted.mesh.vertices[i] - base.mesh.vertices[i] -
             Eigen::Vector3d{0.5, 0.25, -0.125})
                .norm() < 1e-12);
    }
  }
}

TEST_CASE("gradcheck: decoder heads through the frustum decode") {
  auto ecfg = tiny_ecfg();
  ecfg.c = 16;
  ecfg.heads = 2;
  auto dcfg = tiny_dcfg();
  dcfg.heads = 2;
  nn::ParamStore ps(41);
  ObjectDecoder dec(ps, "dec", dcfg, ecfg.c);
  nn::Param& tokens = ps.create("tokens", {10, ecfg.c}, 0.8);
  geom::CameraRig rig = tiny_gen().rig();
  std::vector<match::GtObject> gts(2);
  Rng rng(43);
  for (auto& g : gts) {
    g.position = {rng.uniform(-0.2, 0.2), rng.uniform(-0.2, 0.2), rng.uniform(0.5, 1.2)};
    g.scale = rng.uniform(0.08, 0.2);
    g.shape_dist.mu.assign(dcfg.c_kl, 0.1);
    g.shape_dist.logvar.assign(dcfg.c_kl, -0.5);
  }
  match::Assignment assign;
  assign.pairs = {{0, 0}, {2, 1}};
  assign.unmatched_predictions = {1, 3};
  match::LossWeights w;
  auto build = [&](nn::Tape& t) {
    auto refs = dec.decode_graph(t, t.param(tokens), rig, ecfg);
    return match::detection_loss_graph(t, refs, gts, assign, w).total;
  };
  CHECK(gradcheck(ps, build, 3, 47) < 1e-3);
}

TEST_CASE("overfit one scene end-to-end: detection and reconstruction") {
  // one fixed scene; the detector memorizes it and the reconstruction
  // chamfer against the analytic surface goes below 2 cm
  synth::GenConfig gcfg = tiny_gen();
  auto scene = synth::generate_scene(gcfg, 1, 321);
  REQUIRE(scene.annotation.objects.size() == 2);
  for (const auto& o : scene.annotation.objects) REQUIRE(o.visible);

  // stage 1: overfit a small VAE on the two annotated shapes
  pasr::VAEConfig vcfg;
  vcfg.n_surface = gcfg.n_surface;
  vcfg.c = 48;
  vcfg.c_kl = 8;
  vcfg.encoder_blocks = 1;
  vcfg.decoder_blocks = 1;
  vcfg.pos_freq = 6;
  vcfg.heads = 4;
  vcfg.point_tokens = 48;
  pasr::PoseAwareShapeVAE vae(vcfg, 51);
  {
    nn::AdamWConfig ocfg;
    ocfg.lr = 2e-3;
    ocfg.total_steps = 700;
    nn::AdamW opt(vae.params(), ocfg);
    Rng rng(52);
    for (int step = 0; step < 700; ++step) {
      const auto& obj = scene.annotation.objects[step % 2];
      nn::Tape tape;
      auto enc = vae.encode_graph(tape, obj.surface_points);
      std::vector<double> eps(vcfg.c_kl);
      for (auto& e : eps) e = rng.normal();
      nn::Ref sigma = nn::exp_op(nn::scale(enc.logvar, 0.5));
      nn::Ref z = nn::add(enc.mu,
                          nn::mul(sigma, tape.constant(nn::Tensor::from(eps, {1, vcfg.c_kl}))));
      // subsample queries for speed
      const int q = 256;
      geom::Points queries(q, 3);
      std::vector<uint8_t> labels(q);
      for (int i = 0; i < q; ++i) {
        const int pick = static_cast<int>(rng.uniform_int(obj.occ_queries.rows()));
        queries.row(i) = obj.occ_queries.row(pick);
        labels[i] = obj.occ_labels[pick];
      }
      nn::Ref probs = vae.decode_graph(tape, z, queries);
      nn::Ref loss = nn::add(pasr::recon_loss_graph(probs, labels),
                             nn::scale(pasr::klreg_loss_graph(enc.mu, enc.logvar), 1e-3));
      tape.backward(loss);
      tape.accumulate_param_grads();
      opt.step();
    }
  }

  // stage 2: freeze the VAE, encode GT latents
  const uint64_t vae_hash = vae.param_hash();
  std::vector<match::GtObject> gts;
  for (const auto& o : scene.annotation.objects) {
    match::GtObject g;
    g.position = o.position;
    g.scale = o.scale;
    g.shape_dist = vae.encode(o.surface_points);
    gts.push_back(g);
  }

  // stage 3: overfit the detector on this scene
  auto ecfg = tiny_ecfg();
  auto dcfg = tiny_dcfg(vcfg.c_kl);
  UniPRModel model(ecfg, dcfg, gcfg.width, gcfg.height, 53);
  geom::CameraRig rig = gcfg.rig();
  auto table = model.encoder().build_projection_table(rig);
  match::LossWeights w;
  nn::AdamWConfig ocfg;
  ocfg.lr = 1.5e-3;
  ocfg.total_steps = 700;
  nn::AdamW opt(model.params(), ocfg);
  double last_total = 0;
  for (int step = 0; step < 700; ++step) {
    nn::Tape tape;
    auto refs = model.forward(tape, scene.render.left, scene.render.right, table, rig);
    auto preds = ObjectDecoder::to_predictions(refs);
    auto assign = match::hungarian_assign(match::matching_cost_matrix(preds, gts, w));
    auto loss = match::detection_loss_graph(tape, refs, gts, assign, w);
    tape.backward(loss.total);
    tape.accumulate_param_grads();
    opt.step();
    last_total = loss.total->value[0];
  }
  CHECK(last_total < 0.5);
  CHECK(vae.param_hash() == vae_hash);  // frozen-VAE contract

  // stage 4: inference + reconstruction quality
  auto preds = postprocess_predictions(
      model.predict(scene.render.left, scene.render.right, table, rig), 0.5);
  REQUIRE(preds.size() == 2);
  for (const auto& gt_obj : scene.annotation.objects) {
    // match by nearest predicted center
    const ObjectPrediction* best = nullptr;
    double best_d = 1e9;
    for (const auto& p : preds) {
      const double d = (p.position - gt_obj.position).norm();
      if (d < best_d) {
        best_d = d;
        best = &p;
      }
    }
    REQUIRE(best != nullptr);
    CHECK(best_d < 0.05);
    CHECK(std::abs(best->scale - gt_obj.scale) < 0.05);
    auto recon = reconstruct_object_shape(*best, vae, 32);
    REQUIRE(!recon.empty);
    geom::Points recon_pts(recon.mesh.vertices.size(), 3);
    for (size_t i = 0; i < recon.mesh.vertices.size(); ++i)
      recon_pts.row(i) = recon.mesh.vertices[i].transpose();
    // dense analytic resampling of the true surface as the oracle cloud
    const auto& spec_obj = scene.spec.objects[gt_obj.mask_id - 1];
    geom::Points dense =
        synth::sample_surface_points(spec_obj.shape, 2000, 9090 + gt_obj.mask_id).points;
    geom::Points gt_cam = geom::apply_pose(dense * spec_obj.scale, spec_obj.pose);
    CHECK(metrics::chamfer_distance(recon_pts, gt_cam) < 0.02);
  }
}
