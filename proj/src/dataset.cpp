// SPDX-License-Identifier: Apache-2.0
#include "unipr/synth/dataset.hpp"

#include <cinttypes>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <nlohmann/json.hpp>

#include "unipr/metrics/metrics.hpp"
#include "unipr/rng.hpp"

namespace unipr::synth {

namespace fs = std::filesystem;
using nlohmann::json;

geom::CameraRig GenConfig::rig() const {
  geom::CameraRig r;
  r.fx = fx;
  r.fy = fy;
  r.cx = width / 2.0;
  r.cy = height / 2.0;
  r.baseline = baseline;
  r.width = width;
  r.height = height;
  return r;
}

void GenConfig::validate() const {
  rig().validate();
  if (!(d_min > 0 && d_max > d_min)) throw std::invalid_argument("GenConfig: bad depth range");
  if (min_objects < 1 || max_objects < min_objects)
    throw std::invalid_argument("GenConfig: bad object count range");
  if (!(scale_min > 0 && scale_max >= scale_min))
    throw std::invalid_argument("GenConfig: bad scale range");
  if (n_surface < 4 || n_queries < 4) throw std::invalid_argument("GenConfig: bad sample counts");
  if (!(place_margin >= 0 && place_margin < 0.5))
    throw std::invalid_argument("GenConfig: bad placement margin");
}

double quantize9(double x) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.9g", x);
  return std::strtod(buf, nullptr);
}

namespace {

json points_to_json(const geom::Points& p) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < p.rows(); ++i)
    rows.push_back({quantize9(p(i, 0)), quantize9(p(i, 1)), quantize9(p(i, 2))});
  return rows;
}

geom::Points points_from_json(const json& j) {
  geom::Points p(j.size(), 3);
  for (size_t i = 0; i < j.size(); ++i)
    for (int k = 0; k < 3; ++k) p(static_cast<Eigen::Index>(i), k) = j[i][k].get<double>();
  return p;
}

json rig_to_json(const geom::CameraRig& r) {
  return {{"fx", quantize9(r.fx)},       {"fy", quantize9(r.fy)}, {"cx", quantize9(r.cx)},
          {"cy", quantize9(r.cy)},       {"baseline", quantize9(r.baseline)},
          {"width", r.width},            {"height", r.height}};
}

geom::CameraRig rig_from_json(const json& j) {
  geom::CameraRig r;
  r.fx = j.at("fx");
  r.fy = j.at("fy");
  r.cx = j.at("cx");
  r.cy = j.at("cy");
  r.baseline = j.at("baseline");
  r.width = j.at("width");
  r.height = j.at("height");
  return r;
}

PrimitiveShape sample_shape(Rng& rng) {
  const auto kind = static_cast<ShapeKind>(rng.uniform_int(5));
  Eigen::Vector3d raw{1, 1, 1};
  switch (kind) {
    case ShapeKind::sphere: raw = {1, 0, 0}; break;
    case ShapeKind::box:
      raw = {rng.uniform(0.35, 1.0), rng.uniform(0.35, 1.0), rng.uniform(0.35, 1.0)};
      break;
    case ShapeKind::cylinder: raw = {rng.uniform(0.3, 1.0), rng.uniform(0.35, 1.0), 0}; break;
    case ShapeKind::ellipsoid:
      raw = {rng.uniform(0.35, 1.0), rng.uniform(0.35, 1.0), rng.uniform(0.35, 1.0)};
      break;
    case ShapeKind::capsule: raw = {rng.uniform(0.25, 0.7), rng.uniform(0.3, 1.0), 0}; break;
  }
  return PrimitiveShape::normalized(kind, raw);
}

// one full placement attempt; nullopt when an object could not be placed
std::optional<SceneSpec> try_build_scene(const GenConfig& cfg, uint64_t attempt_seed) {
  Rng rng(attempt_seed);
  const geom::CameraRig rig = cfg.rig();
  SceneSpec spec;
  spec.rig = rig;
  spec.seed = attempt_seed;
  const int count =
      cfg.min_objects + static_cast<int>(rng.uniform_int(cfg.max_objects - cfg.min_objects + 1));
  for (int k = 0; k < count; ++k) {
    SceneObject obj;
    obj.shape = sample_shape(rng);
    obj.albedo = {rng.uniform(0.25, 0.95), rng.uniform(0.25, 0.95), rng.uniform(0.25, 0.95)};
    bool placed = false;
    for (int attempt = 0; attempt < 100 && !placed; ++attempt) {
      obj.scale = rng.uniform(cfg.scale_min, cfg.scale_max);
      obj.pose.rotation_wxyz = rng.unit_quaternion();
      const double z_lo = cfg.d_min + obj.scale + 1e-3, z_hi = cfg.d_max - obj.scale - 1e-3;
      if (z_lo >= z_hi) continue;
      const double u = rng.uniform(cfg.place_margin * cfg.width, (1 - cfg.place_margin) * cfg.width);
      const double v =
          rng.uniform(cfg.place_margin * cfg.height, (1 - cfg.place_margin) * cfg.height);
      const double z = rng.uniform(z_lo, z_hi);
      obj.pose.translation = geom::uvd_to_camera(u, v, z, rig);
      bool ok = true;
      for (const auto& other : spec.objects) {
        geom::SphereFrame sa{obj.pose.translation, obj.scale};
        geom::SphereFrame sb{other.pose.translation, other.scale};
        if (metrics::sphere_iou(sa, sb) > cfg.max_overlap_iou) {
          ok = false;
          break;
        }
      }
      placed = ok;
    }
    if (!placed) return std::nullopt;
    spec.objects.push_back(obj);
  }
  return spec;
}

}  // namespace

SceneData generate_scene(const GenConfig& cfg, int index, uint64_t master_seed) {
  cfg.validate();
  const uint64_t scene_seed = hash_seed(master_seed, static_cast<uint64_t>(index));
  std::optional<SceneSpec> spec;
  uint64_t attempt_seed = scene_seed;
  for (int retry = 0; !spec; ++retry) {
    if (retry > 0) {
      std::cerr << "generate_scene: placement failed for scene " << index << ", retry " << retry
                << "\n";
      attempt_seed = hash_seed(scene_seed, static_cast<uint64_t>(retry));
    }
    if (retry > 64) throw std::runtime_error("generate_scene: placement keeps failing");
    spec = try_build_scene(cfg, attempt_seed);
  }

  SceneData data;
  data.spec = *spec;
  data.render = rasterize_stereo(*spec);
  data.annotation.seed = spec->seed;
  data.annotation.rig = spec->rig;

  // visibility from the left-view mask
  std::vector<int> pixel_count(spec->objects.size() + 1, 0);
  for (uint8_t m : data.render.mask_left.pixels) ++pixel_count[m];

  for (size_t oi = 0; oi < spec->objects.size(); ++oi) {
    const SceneObject& obj = spec->objects[oi];
    ObjectAnnotation ann;
    ann.kind = kind_name(obj.shape.kind);
    ann.rotation_wxyz = obj.pose.rotation_wxyz;
    ann.mask_id = static_cast<int>(oi + 1);
    ann.difficulty = difficulty_name(shape_difficulty(obj.shape));
    ann.visible = pixel_count[oi + 1] >= cfg.min_visible_pixels;

    const uint64_t obj_seed = hash_seed(spec->seed, 1000 + oi);
    SurfaceSamples local = sample_surface_points(obj.shape, cfg.n_surface, obj_seed);
    geom::Points camera_pts = geom::apply_pose(local.points * obj.scale, obj.pose);
    auto [frame, normalized] = geom::normalize_to_unit_sphere(camera_pts);
    ann.position = frame.center;
    ann.scale = frame.radius;
    ann.surface_points = normalized;

    // queries: half uniform in the ball, half near-surface
    const int q_uniform = cfg.n_queries / 2;
    const int q_near = cfg.n_queries - q_uniform;
    geom::Points queries(cfg.n_queries, 3);
    queries.topRows(q_uniform) =
        geom::sample_unit_ball_queries(q_uniform, hash_seed(spec->seed, 2000 + oi));
    Rng near_rng(hash_seed(spec->seed, 3000 + oi));
    for (int q = 0; q < q_near; ++q) {
      const int pick = static_cast<int>(near_rng.uniform_int(cfg.n_surface));
      Eigen::Vector3d candidate;
      do {
        candidate = normalized.row(pick).transpose() + cfg.near_surface_sigma * near_rng.normal3();
      } while (candidate.norm() > 1.0);
      queries.row(q_uniform + q) = candidate.transpose();
    }
    ann.occ_queries = queries;

    // labels through the exact frame chain: normalized -> camera -> local
    const Eigen::Matrix3d R = obj.pose.rotation_matrix();
    geom::Points local_queries(cfg.n_queries, 3);
    for (int q = 0; q < cfg.n_queries; ++q) {
      const Eigen::Vector3d cam = queries.row(q).transpose() * frame.radius + frame.center;
      local_queries.row(q) =
          (R.transpose() * (cam - obj.pose.translation) / obj.scale).transpose();
    }
    ann.occ_labels = analytic_occupancy(obj.shape, local_queries);
    data.annotation.objects.push_back(std::move(ann));
  }
  return data;
}

std::string scene_dir_name(int index) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%06d", index);
  return buf;
}

json annotation_to_json(const SceneAnnotation& ann) {
  json objs = json::array();
  for (const auto& o : ann.objects) {
    json jo;
    jo["kind"] = o.kind;
    jo["position"] = {quantize9(o.position.x()), quantize9(o.position.y()),
                      quantize9(o.position.z())};
    jo["scale"] = quantize9(o.scale);
    jo["rotation_wxyz"] = {quantize9(o.rotation_wxyz[0]), quantize9(o.rotation_wxyz[1]),
                           quantize9(o.rotation_wxyz[2]), quantize9(o.rotation_wxyz[3])};
    jo["surface_points"] = points_to_json(o.surface_points);
    jo["occ_queries"] = points_to_json(o.occ_queries);
    json labels = json::array();
    for (uint8_t b : o.occ_labels) labels.push_back(static_cast<int>(b));
    jo["occ_labels"] = labels;
    jo["mask_id"] = o.mask_id;
    jo["visible"] = o.visible;
    jo["difficulty"] = o.difficulty;
    objs.push_back(std::move(jo));
  }
  return {{"schema_version", kDatasetSchemaVersion},
          {"seed", ann.seed},
          {"rig", rig_to_json(ann.rig)},
          {"objects", objs}};
}

SceneAnnotation annotation_from_json(const json& j) {
  if (j.at("schema_version").get<int>() != kDatasetSchemaVersion)
    throw std::runtime_error("annotation schema version mismatch");
  SceneAnnotation ann;
  ann.seed = j.at("seed").get<uint64_t>();
  ann.rig = rig_from_json(j.at("rig"));
  for (const auto& jo : j.at("objects")) {
    ObjectAnnotation o;
    o.kind = jo.at("kind").get<std::string>();
    for (int k = 0; k < 3; ++k) o.position[k] = jo.at("position")[k].get<double>();
    o.scale = jo.at("scale").get<double>();
    for (int k = 0; k < 4; ++k) o.rotation_wxyz[k] = jo.at("rotation_wxyz")[k].get<double>();
    o.surface_points = points_from_json(jo.at("surface_points"));
    o.occ_queries = points_from_json(jo.at("occ_queries"));
    for (const auto& b : jo.at("occ_labels")) o.occ_labels.push_back(b.get<int>() ? 1 : 0);
    o.mask_id = jo.at("mask_id").get<int>();
    o.visible = jo.at("visible").get<bool>();
    o.difficulty = jo.value("difficulty", "");
    ann.objects.push_back(std::move(o));
  }
  return ann;
}

json gen_config_to_json(const GenConfig& c) {
  return {{"width", c.width},
          {"height", c.height},
          {"fx", quantize9(c.fx)},
          {"fy", quantize9(c.fy)},
          {"baseline", quantize9(c.baseline)},
          {"d_min", quantize9(c.d_min)},
          {"d_max", quantize9(c.d_max)},
          {"min_objects", c.min_objects},
          {"max_objects", c.max_objects},
          {"scale_min", quantize9(c.scale_min)},
          {"scale_max", quantize9(c.scale_max)},
          {"place_margin", quantize9(c.place_margin)},
          {"max_overlap_iou", quantize9(c.max_overlap_iou)},
          {"n_surface", c.n_surface},
          {"n_queries", c.n_queries},
          {"near_surface_sigma", quantize9(c.near_surface_sigma)},
          {"min_visible_pixels", c.min_visible_pixels}};
}

GenConfig gen_config_from_json(const json& j) {
  GenConfig c;
  c.width = j.at("width");
  c.height = j.at("height");
  c.fx = j.at("fx");
  c.fy = j.at("fy");
  c.baseline = j.at("baseline");
  c.d_min = j.at("d_min");
  c.d_max = j.at("d_max");
  c.min_objects = j.at("min_objects");
  c.max_objects = j.at("max_objects");
  c.scale_min = j.at("scale_min");
  c.scale_max = j.at("scale_max");
  c.place_margin = j.at("place_margin");
  c.max_overlap_iou = j.at("max_overlap_iou");
  c.n_surface = j.at("n_surface");
  c.n_queries = j.at("n_queries");
  c.near_surface_sigma = j.at("near_surface_sigma");
  c.min_visible_pixels = j.at("min_visible_pixels");
  return c;
}

namespace {

void write_text_file(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + path.string());
  f << text;
  if (!f) throw std::runtime_error("write failed for " + path.string());
}

std::string read_text_file(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + path.string());
  return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

}  // namespace

DatasetWriter::DatasetWriter(std::string root, const GenConfig& cfg, uint64_t master_seed)
    : root_(std::move(root)), cfg_(cfg), seed_(master_seed) {
  cfg.validate();
  fs::create_directories(fs::path(root_) / "scenes");
}

void DatasetWriter::write_scene(int index, const SceneData& data) {
  const fs::path scenes = fs::path(root_) / "scenes";
  const fs::path tmp = scenes / (".tmp_" + scene_dir_name(index));
  const fs::path final_dir = scenes / scene_dir_name(index);
  fs::remove_all(tmp);
  fs::create_directories(tmp);
  write_png_file((tmp / "left.png").string(), data.render.left);
  write_png_file((tmp / "right.png").string(), data.render.right);
  write_png_file((tmp / "mask_left.png").string(), data.render.mask_left);
  write_png_file((tmp / "mask_right.png").string(), data.render.mask_right);
  write_text_file(tmp / "annotation.json", annotation_to_json(data.annotation).dump(1));
  fs::remove_all(final_dir);
  fs::rename(tmp, final_dir);
}

void DatasetWriter::finalize(int num_scenes) {
  json manifest = {{"schema_version", kDatasetSchemaVersion},
                   {"seed", seed_},
                   {"num_scenes", num_scenes},
                   {"config", gen_config_to_json(cfg_)}};
  write_text_file(fs::path(root_) / "manifest.json", manifest.dump(1));
}

Dataset Dataset::open(const std::string& root) {
  Dataset d;
  d.root_ = root;
  json manifest;
  try {
    manifest = json::parse(read_text_file(fs::path(root) / "manifest.json"));
  } catch (const std::exception& e) {
    throw std::runtime_error("Dataset::open: bad manifest under " + root + ": " + e.what());
  }
  if (manifest.at("schema_version").get<int>() != kDatasetSchemaVersion)
    throw std::runtime_error("Dataset::open: schema version mismatch in " + root);
  d.seed_ = manifest.at("seed").get<uint64_t>();
  d.num_scenes_ = manifest.at("num_scenes").get<int>();
  d.cfg_ = gen_config_from_json(manifest.at("config"));
  return d;
}

std::string Dataset::scene_id(int index) const {
  if (index < 0 || index >= num_scenes_) throw std::out_of_range("Dataset: scene index");
  return scene_dir_name(index);
}

SceneRecord Dataset::load_scene(int index) const {
  const std::string id = scene_id(index);
  const fs::path dir = fs::path(root_) / "scenes" / id;
  SceneRecord rec;
  rec.id = id;
  try {
    rec.annotation = annotation_from_json(json::parse(read_text_file(dir / "annotation.json")));
    rec.left = read_png_file((dir / "left.png").string());
    rec.right = read_png_file((dir / "right.png").string());
    rec.mask_left = read_png_file((dir / "mask_left.png").string());
    rec.mask_right = read_png_file((dir / "mask_right.png").string());
    const fs::path latents = dir / "gt_latents.json";
    if (fs::exists(latents)) {
      json j = json::parse(read_text_file(latents));
      GtLatents gl;
      gl.vae_hash = j.at("vae_hash").get<uint64_t>();
      for (const auto& row : j.at("mu")) gl.mu.push_back(row.get<std::vector<double>>());
      for (const auto& row : j.at("logvar")) gl.logvar.push_back(row.get<std::vector<double>>());
      rec.latents = std::move(gl);
    }
  } catch (const std::exception& e) {
    throw std::runtime_error("Dataset: failed to load scene " + id + ": " + e.what());
  }
  return rec;
}

void Dataset::write_latents(int index, const GtLatents& latents) const {
  const fs::path dir = fs::path(root_) / "scenes" / scene_id(index);
  json j;
  j["vae_hash"] = latents.vae_hash;
  j["mu"] = latents.mu;
  j["logvar"] = latents.logvar;
  const fs::path tmp = dir / ".tmp_gt_latents.json";
  write_text_file(tmp, j.dump(1));
  fs::rename(tmp, dir / "gt_latents.json");
}

}  // namespace unipr::synth
