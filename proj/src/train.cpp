// SPDX-License-Identifier: Apache-2.0
#include "unipr/harness/train.hpp"

#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <thread>

#include <nlohmann/json.hpp>

#include "unipr/metrics/metrics.hpp"
#include "unipr/rng.hpp"

namespace unipr::harness {

namespace fs = std::filesystem;
using namespace unipr::nn;

void parallel_for(int n, int workers, const std::function<void(int)>& fn) {
  if (workers <= 1 || n <= 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> threads;
  std::exception_ptr error;
  std::mutex error_mutex;
  for (int w = 0; w < workers; ++w)
    threads.emplace_back([&, w]() {
      try {
        for (int i = w; i < n; i += workers) fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!error) error = std::current_exception();
      }
    });
  for (auto& t : threads) t.join();
  if (error) std::rethrow_exception(error);
}

uint64_t val_split_seed(uint64_t master_seed) { return hash_seed(master_seed, 0x56414cULL); }

RotatedSample rotate_sample(const geom::Points& surface, const geom::Points& queries,
                            const std::vector<uint8_t>& labels, const Eigen::Matrix3d& rotation) {
  RotatedSample out;
  geom::Points rotated = surface * rotation.transpose();
  auto [frame, normalized] = geom::normalize_to_unit_sphere(rotated);
  out.surface = normalized;
  geom::Points rq = queries * rotation.transpose();
  std::vector<int> keep;
  keep.reserve(queries.rows());
  for (Eigen::Index i = 0; i < rq.rows(); ++i) {
    const Eigen::Vector3d q = (rq.row(i).transpose() - frame.center) / frame.radius;
    if (q.norm() <= 1.0) keep.push_back(static_cast<int>(i));
  }
  out.queries.resize(keep.size(), 3);
  out.labels.resize(keep.size());
  for (size_t k = 0; k < keep.size(); ++k) {
    out.queries.row(k) = ((rq.row(keep[k]).transpose() - frame.center) / frame.radius).transpose();
    out.labels[k] = labels[keep[k]];
  }
  return out;
}

void generate_dataset(const RunConfig& cfg, const std::string& out_root, uint64_t master_seed,
                      int num_scenes, int workers) {
  synth::DatasetWriter writer(out_root, cfg.data.gen, master_seed);
  parallel_for(num_scenes, workers, [&](int i) {
    writer.write_scene(i, synth::generate_scene(cfg.data.gen, i, master_seed));
  });
  writer.finalize(num_scenes);
}

namespace {

struct CsvLogger {
  std::ofstream file;
  CsvLogger(const std::string& path, const std::string& header) {
    if (fs::path(path).has_parent_path()) fs::create_directories(fs::path(path).parent_path());
    file.open(path, std::ios::trunc);
    if (!file) throw std::runtime_error("cannot open log file " + path);
    file << header << "\n";
  }
  void row(const std::vector<double>& values) {
    char buf[32];
    for (size_t i = 0; i < values.size(); ++i) {
      std::snprintf(buf, sizeof(buf), "%.17g", values[i]);
      file << (i ? "," : "") << buf;
    }
    file << "\n";
    file.flush();
  }
};

struct GradAccumulator {
  std::vector<std::vector<Tensor>> buffers;  // one per worker
  explicit GradAccumulator(int workers, size_t n_params)
      : buffers(workers, std::vector<Tensor>(n_params)) {}

  // deterministic: buffers merged in worker order
  double merge_into(ParamStore& ps) {
    double sq = 0;
    for (size_t k = 0; k < ps.items().size(); ++k) {
      Param& p = *ps.items()[k];
      if (p.grad.data == nullptr) p.grad = Tensor::zeros(p.value.shape);
      for (auto& buf : buffers) {
        if (buf[k].data == nullptr) continue;
        for (int64_t i = 0, n = p.grad.numel(); i < n; ++i) p.grad[i] += buf[k][i];
      }
      for (int64_t i = 0, n = p.grad.numel(); i < n; ++i) sq += p.grad[i] * p.grad[i];
    }
    return std::sqrt(sq);
  }
};

struct VaePoolItem {
  geom::Points surface;   // n_surface x 3, normalized
  geom::Points queries;
  std::vector<uint8_t> labels;
};

std::vector<VaePoolItem> load_vae_pool(const RunConfig& cfg) {
  synth::Dataset ds = synth::Dataset::open(cfg.data.root);
  std::vector<VaePoolItem> pool;
  const int n_surface = cfg.vae.n_surface;
  for (int i = 0; i < ds.size() && static_cast<int>(pool.size()) < cfg.vae_train.max_pool_objects;
       ++i) {
    synth::SceneRecord rec = ds.load_scene(i);
    for (const auto& obj : rec.annotation.objects) {
      if (static_cast<int>(pool.size()) >= cfg.vae_train.max_pool_objects) break;
      if (obj.surface_points.rows() < n_surface)
        throw std::runtime_error("train_vae: annotation has fewer surface points than vae.n_surface");
      VaePoolItem item;
      item.surface = obj.surface_points.topRows(n_surface);
      item.queries = obj.occ_queries;
      item.labels = obj.occ_labels;
      pool.push_back(std::move(item));
    }
  }
  if (pool.empty()) throw std::runtime_error("train_vae: dataset holds no objects");
  return pool;
}

void check_finite(double x, const std::string& what, const std::string& last_ckpt) {
  if (!std::isfinite(x))
    throw NanAbortError("training aborted: non-finite " + what +
                            "; last good checkpoint: " + (last_ckpt.empty() ? "(none)" : last_ckpt),
                        last_ckpt);
}

}  // namespace

TrainResult train_vae(const RunConfig& cfg) {
  cfg.validate();
  const TrainSection& tr = cfg.vae_train;
  std::vector<VaePoolItem> pool = load_vae_pool(cfg);
  pasr::PoseAwareShapeVAE vae(cfg.vae, hash_seed(cfg.seed, 0x564145ULL));

  AdamWConfig ocfg;
  ocfg.lr = tr.lr;
  ocfg.lr_min = tr.lr_min;
  ocfg.weight_decay = tr.weight_decay;
  ocfg.clip_norm = tr.clip_norm;
  ocfg.warmup_steps = tr.warmup_steps;
  ocfg.total_steps = tr.steps;
  AdamW opt(vae.params(), ocfg);

  CsvLogger log((fs::path(cfg.out_dir) / "loss_vae.csv").string(),
                "step,recon,klreg,total,grad_norm,lr");
  const std::string ckpt_path = (fs::path(cfg.out_dir) / "vae.ckpt").string();
  const std::string config_json = run_config_to_json(cfg).dump();
  std::string last_ckpt;
  Rng rng(hash_seed(cfg.seed, 0x56545241ULL));

  struct Plan {
    int obj = 0;
    Eigen::Matrix3d rotation;
    std::vector<double> eps;
    std::vector<int> qpick;
  };
  double final_loss = 0;
  for (int step = 0; step < tr.steps; ++step) {
    std::vector<Plan> plans(tr.batch);
    for (auto& plan : plans) {
      plan.obj = static_cast<int>(rng.uniform_int(pool.size()));
      if (tr.rotation_augment) {
        geom::Pose p;
        p.rotation_wxyz = rng.unit_quaternion();
        plan.rotation = p.rotation_matrix();
      } else {
        plan.rotation = Eigen::Matrix3d::Identity();
      }
      plan.eps.resize(cfg.vae.c_kl);
      for (auto& e : plan.eps) e = rng.normal();
      plan.qpick.resize(tr.queries_per_step);
      for (auto& q : plan.qpick)
        q = static_cast<int>(rng.uniform_int(pool[plan.obj].queries.rows()));
    }
    GradAccumulator grads(tr.workers, vae.params().items().size());
    std::vector<double> recon_v(tr.batch), klreg_v(tr.batch);
    parallel_for(tr.batch, tr.workers, [&](int b) {
      const Plan& plan = plans[b];
      const VaePoolItem& item = pool[plan.obj];
      geom::Points picked_q(plan.qpick.size(), 3);
      std::vector<uint8_t> picked_l(plan.qpick.size());
      for (size_t k = 0; k < plan.qpick.size(); ++k) {
        picked_q.row(k) = item.queries.row(plan.qpick[k]);
        picked_l[k] = item.labels[plan.qpick[k]];
      }
      RotatedSample sample = rotate_sample(item.surface, picked_q, picked_l, plan.rotation);
      Tape tape;
      auto enc = vae.encode_graph(tape, sample.surface);
      Ref sigma = exp_op(scale(enc.logvar, 0.5));
      Ref z = add(enc.mu, mul(sigma, tape.constant(Tensor::from(plan.eps, {1, cfg.vae.c_kl}))));
      Ref probs = vae.decode_graph(tape, z, sample.queries);
      Ref recon = pasr::recon_loss_graph(probs, sample.labels);
      Ref klreg = pasr::klreg_loss_graph(enc.mu, enc.logvar);
      Ref loss = add(recon, scale(klreg, tr.kl_weight));
      tape.backward(loss);
      tape.accumulate_param_grads_into(grads.buffers[b % tr.workers], 1.0 / tr.batch);
      recon_v[b] = recon->value[0];
      klreg_v[b] = klreg->value[0];
    });
    const double grad_norm = grads.merge_into(vae.params());
    double recon_mean = 0, klreg_mean = 0;
    for (int b = 0; b < tr.batch; ++b) {
      recon_mean += recon_v[b] / tr.batch;
      klreg_mean += klreg_v[b] / tr.batch;
    }
    final_loss = recon_mean + tr.kl_weight * klreg_mean;
    check_finite(final_loss, "loss", last_ckpt);
    check_finite(grad_norm, "gradient", last_ckpt);
    const double lr_now = opt.lr_at(opt.step_count());
    opt.step();
    if (step % tr.log_every == 0 || step + 1 == tr.steps)
      log.row({static_cast<double>(step), recon_mean, klreg_mean, final_loss, grad_norm, lr_now});
    if ((step + 1) % tr.checkpoint_every == 0 || step + 1 == tr.steps) {
      OptimizerState state{opt.moment1(), opt.moment2(), opt.step_count()};
      save_checkpoint(ckpt_path, "vae", config_json, cfg.config_hash(), step + 1, vae.params(),
                      &state);
      last_ckpt = ckpt_path;
    }
  }
  return {ckpt_path, final_loss, tr.steps};
}

namespace {

pasr::VAEConfig vae_config_from_checkpoint(const Checkpoint& ckpt) {
  if (ckpt.kind != "vae" && ckpt.kind != "detector")
    throw std::runtime_error("checkpoint kind mismatch: " + ckpt.kind);
  RunConfig cfg = run_config_from_json(nlohmann::json::parse(ckpt.config_json));
  return cfg.vae;
}

}  // namespace

void precompute_gt_latents(const std::string& vae_ckpt_path, const std::string& data_root,
                           bool allow_config_mismatch) {
  (void)allow_config_mismatch;
  Checkpoint ckpt = load_checkpoint(vae_ckpt_path);
  if (ckpt.kind != "vae") throw std::runtime_error("encode-gt: expected a vae checkpoint");
  pasr::VAEConfig vcfg = vae_config_from_checkpoint(ckpt);
  pasr::PoseAwareShapeVAE vae(vcfg, 0);
  restore_params(ckpt, vae.params());
  const uint64_t vae_hash = vae.param_hash();

  synth::Dataset ds = synth::Dataset::open(data_root);
  parallel_for(ds.size(), 2, [&](int i) {
    synth::SceneRecord rec = ds.load_scene(i);
    synth::GtLatents latents;
    latents.vae_hash = vae_hash;
    for (const auto& obj : rec.annotation.objects) {
      if (obj.surface_points.rows() < vcfg.n_surface)
        throw std::runtime_error("encode-gt: annotation has fewer points than vae.n_surface");
      auto dist = vae.encode(obj.surface_points.topRows(vcfg.n_surface));
      latents.mu.push_back(dist.mu);
      latents.logvar.push_back(dist.logvar);
    }
    ds.write_latents(i, latents);
  });
}

namespace {

struct DetScene {
  synth::Image left, right;
  std::vector<match::GtObject> gts;            // visible objects only
  std::vector<metrics::GtSphere> val_spheres;  // for validation AP
};

std::vector<DetScene> load_det_scenes(const std::string& root, int scene_tag_base,
                                      bool require_latents) {
  synth::Dataset ds = synth::Dataset::open(root);
  std::vector<DetScene> scenes(ds.size());
  parallel_for(ds.size(), 2, [&](int i) {
    synth::SceneRecord rec = ds.load_scene(i);
    if (require_latents && !rec.latents)
      throw std::runtime_error("train-detector: scene " + rec.id +
                               " has no gt_latents.json (run encode-gt first)");
    DetScene s;
    s.left = std::move(rec.left);
    s.right = std::move(rec.right);
    for (size_t k = 0; k < rec.annotation.objects.size(); ++k) {
      const auto& obj = rec.annotation.objects[k];
      if (!obj.visible) continue;
      match::GtObject g;
      g.position = obj.position;
      g.scale = obj.scale;
      if (require_latents) {
        g.shape_dist.mu = rec.latents->mu.at(k);
        g.shape_dist.logvar = rec.latents->logvar.at(k);
      }
      s.gts.push_back(std::move(g));
      s.val_spheres.push_back({scene_tag_base + i, {obj.position, obj.scale}});
    }
    scenes[i] = std::move(s);
  });
  return scenes;
}

}  // namespace

TrainResult train_detector(const RunConfig& cfg, const std::string& vae_ckpt_path,
                           bool allow_config_mismatch) {
  cfg.validate();
  const TrainSection& tr = cfg.det_train;

  Checkpoint vae_ckpt = load_checkpoint(vae_ckpt_path);
  if (vae_ckpt.kind != "vae") throw std::runtime_error("train-detector: expected a vae checkpoint");
  check_config_hash(vae_ckpt, cfg.config_hash(), allow_config_mismatch);
  pasr::VAEConfig vcfg = vae_config_from_checkpoint(vae_ckpt);
  pasr::PoseAwareShapeVAE vae(vcfg, 0);
  restore_params(vae_ckpt, vae.params());
  const uint64_t frozen_hash_before = vae.param_hash();

  std::vector<DetScene> train_scenes = load_det_scenes(cfg.data.root, 0, true);
  std::vector<DetScene> val_scenes;
  if (!cfg.data.val_root.empty() && fs::exists(fs::path(cfg.data.val_root) / "manifest.json"))
    val_scenes = load_det_scenes(cfg.data.val_root, 1 << 20, false);

  const geom::CameraRig rig = cfg.data.gen.rig();
  det::UniPRModel model(cfg.tpv, cfg.detector, rig.width, rig.height,
                        hash_seed(cfg.seed, 0x444554ULL));
  const tpv::ProjectionTable table = model.encoder().build_projection_table(rig);

  const int n = static_cast<int>(train_scenes.size());
  const int steps_per_epoch = (n + tr.batch - 1) / tr.batch;
  const int total_steps = steps_per_epoch * tr.epochs;
  AdamWConfig ocfg;
  ocfg.lr = tr.lr;
  ocfg.lr_min = tr.lr_min;
  ocfg.weight_decay = tr.weight_decay;
  ocfg.clip_norm = tr.clip_norm;
  ocfg.warmup_steps = tr.warmup_steps;
  ocfg.total_steps = total_steps;
  AdamW opt(model.params(), ocfg);

  CsvLogger log((fs::path(cfg.out_dir) / "loss_detector.csv").string(),
                "step,position,scale,shape,confidence,total,grad_norm,lr");
  CsvLogger val_log((fs::path(cfg.out_dir) / "val_detector.csv").string(),
                    "epoch,step,val_ap,val_ape_rmse");
  const std::string ckpt_path = (fs::path(cfg.out_dir) / "detector.ckpt").string();
  const std::string config_json = run_config_to_json(cfg).dump();
  std::string last_ckpt;
  Rng rng(hash_seed(cfg.seed, 0x44545241ULL));

  auto save_detector = [&](int64_t step) {
    std::map<std::string, Tensor> all;
    for (const auto& p : model.params().items()) all[p->name] = p->value;
    for (const auto& p : vae.params().items()) all[p->name] = p->value;
    OptimizerState state{opt.moment1(), opt.moment2(), opt.step_count()};
    save_checkpoint_raw(ckpt_path, "detector", config_json, cfg.config_hash(), step, all, &state);
    last_ckpt = ckpt_path;
  };

  std::vector<int> order(n);
  for (int i = 0; i < n; ++i) order[i] = i;
  double final_loss = 0;
  int step = 0;
  for (int epoch = 0; epoch < tr.epochs; ++epoch) {
    for (int i = n - 1; i > 0; --i) std::swap(order[i], order[rng.uniform_int(i + 1)]);
    for (int start = 0; start < n; start += tr.batch, ++step) {
      const int bsz = std::min(tr.batch, n - start);
      GradAccumulator grads(tr.workers, model.params().items().size());
      std::vector<match::DetectionLossBreakdown> parts(bsz);
      parallel_for(bsz, tr.workers, [&](int b) {
        const DetScene& scene = train_scenes[order[start + b]];
        Tape tape;
        auto refs = model.forward(tape, scene.left, scene.right, table, rig);
        match::Assignment assign;
        if (!scene.gts.empty()) {
          auto preds = det::ObjectDecoder::to_predictions(refs);
          assign = match::hungarian_assign(match::matching_cost_matrix(preds, scene.gts, cfg.loss));
        } else {
          for (int q = 0; q < cfg.detector.n_queries; ++q) assign.unmatched_predictions.push_back(q);
        }
        auto loss = match::detection_loss_graph(tape, refs, scene.gts, assign, cfg.loss);
        tape.backward(loss.total);
        tape.accumulate_param_grads_into(grads.buffers[b % tr.workers], 1.0 / bsz);
        parts[b] = loss.values();
      });
      const double grad_norm = grads.merge_into(model.params());
      match::DetectionLossBreakdown mean;
      for (const auto& p : parts) {
        mean.position += p.position / bsz;
        mean.scale += p.scale / bsz;
        mean.shape += p.shape / bsz;
        mean.confidence += p.confidence / bsz;
        mean.total += p.total / bsz;
      }
      final_loss = mean.total;
      check_finite(final_loss, "loss", last_ckpt);
      check_finite(grad_norm, "gradient", last_ckpt);
      const double lr_now = opt.lr_at(opt.step_count());
      opt.step();
      if (step % tr.log_every == 0 || step + 1 == total_steps)
        log.row({static_cast<double>(step), mean.position, mean.scale, mean.shape, mean.confidence,
                 mean.total, grad_norm, lr_now});
      if ((step + 1) % tr.checkpoint_every == 0) save_detector(step + 1);
    }
    // epoch-end validation: detection-only metrics (no reconstruction)
    if (!val_scenes.empty()) {
      std::vector<metrics::ScoredDetection> dets;
      std::vector<metrics::GtSphere> gts;
      std::vector<std::vector<det::ObjectPrediction>> per_scene(val_scenes.size());
      parallel_for(static_cast<int>(val_scenes.size()), tr.workers, [&](int i) {
        per_scene[i] = det::postprocess_predictions(
            model.predict(val_scenes[i].left, val_scenes[i].right, table, rig),
            cfg.detector.confidence_threshold);
      });
      double ape = 0;
      int matched = 0;
      for (size_t i = 0; i < val_scenes.size(); ++i) {
        for (const auto& g : val_scenes[i].val_spheres) gts.push_back(g);
        std::vector<char> used(val_scenes[i].gts.size(), 0);
        for (const auto& p : per_scene[i]) {
          dets.push_back({static_cast<int>(i) + (1 << 20), static_cast<int>(dets.size()),
                          p.confidence, {p.position, p.scale}});
          int best = -1;
          double best_iou = cfg.eval.iou_threshold;
          for (size_t g = 0; g < val_scenes[i].gts.size(); ++g) {
            if (used[g]) continue;
            const double iou = metrics::sphere_iou({p.position, p.scale},
                                                   {val_scenes[i].gts[g].position,
                                                    val_scenes[i].gts[g].scale});
            if (iou >= best_iou) {
              best_iou = iou;
              best = static_cast<int>(g);
            }
          }
          if (best >= 0) {
            used[best] = 1;
            ape += (p.position - val_scenes[i].gts[best].position).squaredNorm();
            ++matched;
          }
        }
      }
      const double ap = metrics::average_precision(dets, gts, cfg.eval.iou_threshold);
      val_log.row({static_cast<double>(epoch), static_cast<double>(step), ap,
                   matched ? std::sqrt(ape / matched) : -1.0});
    }
  }
  save_detector(step);
  const uint64_t frozen_hash_after = vae.param_hash();
  if (frozen_hash_before != frozen_hash_after)
    throw std::logic_error("train-detector: frozen VAE parameters changed");
  return {ckpt_path, final_loss, total_steps};
}

}  // namespace unipr::harness
