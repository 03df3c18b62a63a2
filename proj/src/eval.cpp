// SPDX-License-Identifier: Apache-2.0
#include "unipr/harness/eval.hpp"

#include <chrono>
#include <cinttypes>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include <nlohmann/json.hpp>

#include "unipr/harness/train.hpp"

namespace unipr::harness {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct LoadedModels {
  RunConfig cfg;
  std::unique_ptr<pasr::PoseAwareShapeVAE> vae;
  std::unique_ptr<det::UniPRModel> model;
};

LoadedModels load_detector_bundle(const std::string& ckpt_path, const RunConfig* expected,
                                  bool allow_mismatch) {
  Checkpoint ckpt = load_checkpoint(ckpt_path);
  if (ckpt.kind != "detector")
    throw std::runtime_error("expected a detector checkpoint, got kind '" + ckpt.kind + "'");
  if (expected) check_config_hash(ckpt, expected->config_hash(), allow_mismatch);
  LoadedModels out;
  out.cfg = run_config_from_json(json::parse(ckpt.config_json));
  out.vae = std::make_unique<pasr::PoseAwareShapeVAE>(out.cfg.vae, 0);
  restore_params(ckpt, out.vae->params());
  const geom::CameraRig rig = out.cfg.data.gen.rig();
  out.model = std::make_unique<det::UniPRModel>(out.cfg.tpv, out.cfg.detector, rig.width,
                                                rig.height, 0);
  restore_params(ckpt, out.model->params());
  return out;
}

double median(std::vector<double> v) {
  if (v.empty()) return 0;
  std::sort(v.begin(), v.end());
  const size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

json aggregates_to_json(const metrics::EvalAggregates& a) {
  json j;
  j["ap"] = a.ap;
  j["n_gt"] = a.n_gt;
  j["n_matched"] = a.n_matched;
  j["acd_norm"] = a.acd_norm;
  j["acd_m"] = a.acd_m;
  auto opt = [&](const char* key, const std::optional<double>& v) {
    if (v) j[key] = *v;
    else j[key] = nullptr;
  };
  opt("ape_m2", a.ape_m2);
  opt("ape_rmse_m", a.ape_rmse_m);
  opt("matched_chamfer_norm", a.matched_chamfer_norm);
  opt("matched_chamfer_m", a.matched_chamfer_m);
  opt("cd_topk_norm", a.cd_topk_norm);
  opt("fscore_mean", a.fscore_mean);
  opt("spe_mean", a.spe_mean);
  return j;
}

struct SceneEval {
  std::vector<metrics::EvalRow> rows;
  std::vector<double> gt_radii;
  std::vector<std::string> difficulties;
  std::vector<metrics::ScoredDetection> detections;
  std::vector<metrics::GtSphere> gt_spheres;
  double forward_ms = 0;
  double recon_ms = 0;
};

}  // namespace

EvalReport evaluate_dataset_cmd(const RunConfig& cfg, const std::string& detector_ckpt_path,
                                const std::string& data_root, const std::string& out_dir,
                                bool allow_config_mismatch, int workers) {
  LoadedModels models = load_detector_bundle(detector_ckpt_path, &cfg, allow_config_mismatch);
  const RunConfig& rcfg = models.cfg;
  synth::Dataset ds = synth::Dataset::open(data_root);
  const geom::CameraRig rig = rcfg.data.gen.rig();
  const tpv::ProjectionTable table = models.model->encoder().build_projection_table(rig);

  std::vector<SceneEval> evals(ds.size());
  parallel_for(ds.size(), workers, [&](int si) {
    synth::SceneRecord rec = ds.load_scene(si);
    SceneEval& ev = evals[si];
    using clock = std::chrono::steady_clock;

    const auto t0 = clock::now();
    auto raw = models.model->predict(rec.left, rec.right, table, rig);
    const auto t1 = clock::now();
    ev.forward_ms = std::chrono::duration<double, std::milli>(t1 - t0).count();

    auto preds = det::postprocess_predictions(raw, rcfg.detector.confidence_threshold);
    std::vector<pasr::TriMesh> norm_meshes(preds.size());
    const auto t2 = clock::now();
    for (size_t p = 0; p < preds.size(); ++p)
      norm_meshes[p] = models.vae->extract_surface({preds[p].shape_dist.mu},
                                                   rcfg.eval.recon_resolution);
    ev.recon_ms =
        std::chrono::duration<double, std::milli>(clock::now() - t2).count();

    // visible GT only; greedy confidence-ordered matching at the IoU threshold
    std::vector<const synth::ObjectAnnotation*> gts;
    for (const auto& obj : rec.annotation.objects)
      if (obj.visible) gts.push_back(&obj);
    std::vector<int> match_of_gt(gts.size(), -1);
    std::vector<double> iou_of_gt(gts.size(), 0);
    std::vector<char> used(gts.size(), 0);
    for (size_t p = 0; p < preds.size(); ++p) {
      ev.detections.push_back({si, static_cast<int>(ev.detections.size()), preds[p].confidence,
                               {preds[p].position, preds[p].scale}});
      int best = -1;
      double best_iou = -1;
      for (size_t g = 0; g < gts.size(); ++g) {
        if (used[g]) continue;
        const double iou = metrics::sphere_iou({preds[p].position, preds[p].scale},
                                               {gts[g]->position, gts[g]->scale});
        if (iou >= rcfg.eval.iou_threshold && iou > best_iou) {
          best_iou = iou;
          best = static_cast<int>(g);
        }
      }
      if (best >= 0) {
        used[best] = 1;
        match_of_gt[best] = static_cast<int>(p);
        iou_of_gt[best] = best_iou;
      }
    }
    for (size_t g = 0; g < gts.size(); ++g) {
      const auto& gt = *gts[g];
      ev.gt_spheres.push_back({si, {gt.position, gt.scale}});
      ev.gt_radii.push_back(gt.scale);
      ev.difficulties.push_back(gt.difficulty.empty() ? "unknown" : gt.difficulty);
      metrics::EvalRow row;
      row.scene = si;
      row.gt_index = static_cast<int>(g);
      const int p = match_of_gt[g];
      if (p >= 0) {
        const auto& pred = preds[p];
        row.pred_index = pred.query_index;
        row.confidence = pred.confidence;
        row.iou = iou_of_gt[g];
        row.pos_err2 = (pred.position - gt.position).squaredNorm();
        const pasr::TriMesh& mesh = norm_meshes[p];
        if (mesh.empty()) {
          // empty reconstruction: penalty chamfer, zero overlap score,
          // sentinel proportion error
          row.chamfer_norm = rcfg.eval.penalty_chamfer;
          row.chamfer_m = 2.0 * gt.scale;
          row.fscore = 0;
          row.spe = 1.0;
        } else {
          geom::Points recon_norm(mesh.vertices.size(), 3);
          for (size_t vi = 0; vi < mesh.vertices.size(); ++vi)
            recon_norm.row(vi) = mesh.vertices[vi].transpose();
          row.chamfer_norm = metrics::chamfer_distance(recon_norm, gt.surface_points);
          geom::SphereFrame pred_frame{pred.position, pred.scale};
          geom::SphereFrame gt_frame{gt.position, gt.scale};
          row.chamfer_m =
              metrics::chamfer_distance(geom::denormalize_points(recon_norm, pred_frame),
                                        geom::denormalize_points(gt.surface_points, gt_frame));
          row.fscore = metrics::f_score(recon_norm, gt.surface_points, rcfg.eval.fscore_tau);
          geom::Pose gt_rot{gt.rotation_wxyz, {0, 0, 0}};
          const Eigen::Matrix3d Rt = gt_rot.rotation_matrix().transpose();
          row.spe = metrics::shape_proportion_error(recon_norm * Rt.transpose(),
                                                    gt.surface_points * Rt.transpose());
        }
      }
      ev.rows.push_back(row);
    }
  });

  // deterministic fold in scene order
  EvalReport report;
  report.num_scenes = ds.size();
  std::vector<metrics::ScoredDetection> all_dets;
  std::vector<metrics::GtSphere> all_gts;
  std::vector<double> all_radii;
  std::vector<std::string> all_difficulty;
  for (const auto& ev : evals) {
    for (auto d : ev.detections) {
      d.index = static_cast<int>(all_dets.size());
      all_dets.push_back(d);
    }
    all_gts.insert(all_gts.end(), ev.gt_spheres.begin(), ev.gt_spheres.end());
    report.rows.insert(report.rows.end(), ev.rows.begin(), ev.rows.end());
    all_radii.insert(all_radii.end(), ev.gt_radii.begin(), ev.gt_radii.end());
    all_difficulty.insert(all_difficulty.end(), ev.difficulties.begin(), ev.difficulties.end());
    report.forward.per_scene_ms.push_back(ev.forward_ms);
    report.reconstruction.per_scene_ms.push_back(ev.recon_ms);
  }
  const double ap = metrics::average_precision(all_dets, all_gts, rcfg.eval.iou_threshold);
  report.aggregates = metrics::aggregate_rows(report.rows, all_radii, ap,
                                              rcfg.eval.penalty_chamfer, rcfg.eval.top_k);
  for (const std::string& diff : {"easy", "medium", "hard"}) {
    std::vector<metrics::EvalRow> rows;
    std::vector<double> radii;
    std::vector<metrics::GtSphere> gts;
    for (size_t i = 0; i < report.rows.size(); ++i)
      if (all_difficulty[i] == diff) {
        rows.push_back(report.rows[i]);
        radii.push_back(all_radii[i]);
        gts.push_back(all_gts[i]);
      }
    if (rows.empty()) continue;
    // AP restricted to this difficulty's GT set; detections are shared
    const double ap_d = metrics::average_precision(all_dets, gts, rcfg.eval.iou_threshold);
    report.per_difficulty[diff] =
        metrics::aggregate_rows(rows, radii, ap_d, rcfg.eval.penalty_chamfer, rcfg.eval.top_k);
  }
  for (auto* t : {&report.forward, &report.reconstruction}) {
    double sum = 0;
    for (double x : t->per_scene_ms) sum += x;
    t->mean_ms = t->per_scene_ms.empty() ? 0 : sum / t->per_scene_ms.size();
    t->median_ms = median(t->per_scene_ms);
  }

  if (!out_dir.empty()) {
    fs::create_directories(out_dir);
    char run_id[64];
    std::snprintf(run_id, sizeof(run_id), "%016" PRIx64 "-%lld",
                  static_cast<unsigned long long>(rcfg.config_hash()),
                  static_cast<long long>(load_checkpoint(detector_ckpt_path).step));
    json j;
    j["schema_version"] = 1;
    j["run_id"] = run_id;
    j["data_root"] = data_root;
    j["num_scenes"] = report.num_scenes;
    j["aggregates"] = aggregates_to_json(report.aggregates);
    for (const auto& [diff, agg] : report.per_difficulty)
      j["per_difficulty"][diff] = aggregates_to_json(agg);
    j["timing"] = {{"forward_ms_mean", report.forward.mean_ms},
                   {"forward_ms_median", report.forward.median_ms},
                   {"recon_ms_mean", report.reconstruction.mean_ms},
                   {"recon_ms_median", report.reconstruction.median_ms}};
    j["config"] = run_config_to_json(rcfg);
    std::ofstream(fs::path(out_dir) / "eval.json") << j.dump(1) << "\n";

    std::ofstream csv(fs::path(out_dir) / "eval.csv");
    csv << "scene,gt_id,pred_id,iou,chamfer,chamfer_m,spe,pos_err,conf\n";
    char buf[256];
    for (const auto& r : report.rows) {
      std::snprintf(buf, sizeof(buf), "%d,%d,%d,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g\n", r.scene,
                    r.gt_index, r.pred_index, r.iou, r.chamfer_norm, r.chamfer_m, r.spe,
                    std::sqrt(r.pos_err2), r.confidence);
      csv << buf;
    }
  }
  return report;
}

void reconstruct_scene_cmd(const std::string& detector_ckpt_path, const std::string& data_root,
                           int scene_index, const std::string& out_dir,
                           bool allow_config_mismatch) {
  LoadedModels models = load_detector_bundle(detector_ckpt_path, nullptr, allow_config_mismatch);
  const RunConfig& rcfg = models.cfg;
  synth::Dataset ds = synth::Dataset::open(data_root);
  synth::SceneRecord rec = ds.load_scene(scene_index);
  const geom::CameraRig rig = rcfg.data.gen.rig();
  const tpv::ProjectionTable table = models.model->encoder().build_projection_table(rig);
  auto preds = det::postprocess_predictions(
      models.model->predict(rec.left, rec.right, table, rig), rcfg.detector.confidence_threshold);

  const fs::path scene_dir = fs::path(out_dir) / rec.id;
  fs::create_directories(scene_dir);
  json sidecar;
  sidecar["scene"] = rec.id;
  sidecar["objects"] = json::array();
  for (size_t rank = 0; rank < preds.size(); ++rank) {
    const auto& p = preds[rank];
    auto recon = det::reconstruct_object_shape(p, *models.vae, rcfg.eval.recon_resolution);
    char name[64];
    std::snprintf(name, sizeof(name), "%zu_%.4f", rank, p.confidence);
    if (!recon.empty) {
      pasr::save_obj(recon.mesh, (scene_dir / (std::string(name) + ".obj")).string());
      pasr::save_stl(recon.mesh, (scene_dir / (std::string(name) + ".stl")).string());
    }
    sidecar["objects"].push_back({{"rank", rank},
                                  {"confidence", p.confidence},
                                  {"position", {p.position.x(), p.position.y(), p.position.z()}},
                                  {"scale", p.scale},
                                  {"empty", recon.empty}});
  }
  std::ofstream(scene_dir / "reconstructions.json") << sidecar.dump(1) << "\n";
}

}  // namespace unipr::harness
