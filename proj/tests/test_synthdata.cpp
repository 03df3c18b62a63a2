// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include <nlohmann/json.hpp>

#include "unipr/metrics/metrics.hpp"
#include "unipr/rng.hpp"
#include "unipr/synth/dataset.hpp"

using namespace unipr;
using namespace unipr::synth;
namespace fs = std::filesystem;

namespace {

// independent signed-distance-style oracle; sign only
double sdf_sign_oracle(const PrimitiveShape& s, const Eigen::Vector3d& p) {
  const double a = s.params[0], b = s.params[1], c = s.params[2];
  switch (s.kind) {
    case ShapeKind::sphere: return p.norm() - a;
    case ShapeKind::box:
      return std::max({std::abs(p.x()) - a, std::abs(p.y()) - b, std::abs(p.z()) - c});
    case ShapeKind::cylinder:
      return std::max(std::hypot(p.x(), p.y()) - a, std::abs(p.z()) - b);
    case ShapeKind::ellipsoid:
      return (p.x() / a) * (p.x() / a) + (p.y() / b) * (p.y() / b) + (p.z() / c) * (p.z() / c) -
             1.0;
    case ShapeKind::capsule: {
      const Eigen::Vector3d q{p.x(), p.y(), p.z() - std::clamp(p.z(), -b, b)};
      return q.norm() - a;
    }
  }
  return 0;
}

std::vector<PrimitiveShape> shape_bank() {
  return {
      PrimitiveShape::normalized(ShapeKind::sphere, {0.8, 0, 0}),
      PrimitiveShape::normalized(ShapeKind::box, {0.9, 0.5, 0.4}),
      PrimitiveShape::normalized(ShapeKind::cylinder, {0.5, 0.8, 0}),
      PrimitiveShape::normalized(ShapeKind::ellipsoid, {1.0, 0.6, 0.4}),
      PrimitiveShape::normalized(ShapeKind::capsule, {0.35, 0.7, 0}),
  };
}

GenConfig tiny_config() {
  GenConfig cfg;
  cfg.width = 96;
  cfg.height = 72;
  cfg.fx = cfg.fy = 84;
  cfg.max_objects = 3;
  cfg.n_surface = 256;
  cfg.n_queries = 256;
  return cfg;
}

}  // namespace

TEST_CASE("occupancy trivial cases") {
  PrimitiveShape sphere{ShapeKind::sphere, {0.5, 0, 0}};
  geom::Points origin(1, 3);
  origin << 0, 0, 0;
  CHECK(analytic_occupancy(sphere, origin)[0] == 1);

  PrimitiveShape box{ShapeKind::box, {0.5, 0.5, 0.5}};
  geom::Points q(2, 3);
  q << 0.6, 0, 0, 0.5, 0.5, 0.5;  // outside; boundary counts as inside
  auto bits = analytic_occupancy(box, q);
  CHECK(bits[0] == 0);
  CHECK(bits[1] == 1);
}

TEST_CASE("occupancy agrees with the SDF sign oracle") {
  Rng rng(3);
  for (const auto& shape : shape_bank()) {
    CAPTURE(kind_name(shape.kind));
    int checked = 0;
    for (int i = 0; i < 10000; ++i) {
      const Eigen::Vector3d p = 1.2 * rng.ball_point();
      const double sd = sdf_sign_oracle(shape, p);
      if (std::abs(sd) < 1e-9) continue;  // skip the measure-zero boundary
      geom::Points q(1, 3);
      q.row(0) = p.transpose();
      CHECK(analytic_occupancy(shape, q)[0] == (sd < 0 ? 1 : 0));
      ++checked;
    }
    CHECK(checked > 9000);
  }
}

TEST_CASE("surface samples: sphere norms and box faces") {
  PrimitiveShape sphere{ShapeKind::sphere, {1.0, 0, 0}};
  auto s = sample_surface_points(sphere, 2000, 7);
  for (int i = 0; i < 2000; ++i) CHECK(s.points.row(i).norm() == doctest::Approx(1.0).epsilon(1e-6));

  PrimitiveShape box{ShapeKind::box, {0.6, 0.5, 0.3}};
  auto bs = sample_surface_points(box, 2000, 8);
  for (int i = 0; i < 2000; ++i) {
    const bool on_face = std::abs(std::abs(bs.points(i, 0)) - 0.6) < 1e-12 ||
                         std::abs(std::abs(bs.points(i, 1)) - 0.5) < 1e-12 ||
                         std::abs(std::abs(bs.points(i, 2)) - 0.3) < 1e-12;
    CHECK(on_face);
  }
}

TEST_CASE("box sampling is face-area weighted") {
  PrimitiveShape box{ShapeKind::box, {0.6, 0.4, 0.2}};
  const int n = 100000;
  auto s = sample_surface_points(box, n, 9);
  double count[3] = {0, 0, 0};
  for (int i = 0; i < n; ++i) {
    if (std::abs(std::abs(s.points(i, 0)) - 0.6) < 1e-12) count[0]++;
    else if (std::abs(std::abs(s.points(i, 1)) - 0.4) < 1e-12) count[1]++;
    else count[2]++;
  }
  const double ax = 0.4 * 0.2, ay = 0.6 * 0.2, az = 0.6 * 0.4;
  const double total = ax + ay + az;
  CHECK(std::abs(count[0] / n - ax / total) < 0.02);
  CHECK(std::abs(count[1] / n - ay / total) < 0.02);
  CHECK(std::abs(count[2] / n - az / total) < 0.02);
}

TEST_CASE("surface/occupancy consistency: inside when shrunk, outside along the normal") {
  for (const auto& shape : shape_bank()) {
    CAPTURE(kind_name(shape.kind));
    auto s = sample_surface_points(shape, 500, 11);
    geom::Points shrunk = s.points * (1.0 - 1e-6);
    auto inside = analytic_occupancy(shape, shrunk);
    geom::Points pushed = s.points + 1e-3 * s.normals;
    auto outside = analytic_occupancy(shape, pushed);
    for (int i = 0; i < 500; ++i) {
      CHECK(inside[i] == 1);
      CHECK(outside[i] == 0);
    }
  }
}

TEST_CASE("sample determinism and raw-dimension normalization") {
  auto a = sample_surface_points(shape_bank()[3], 128, 5);
  auto b = sample_surface_points(shape_bank()[3], 128, 5);
  CHECK((a.points - b.points).cwiseAbs().maxCoeff() == 0.0);
  for (const auto& shape : shape_bank())
    CHECK(shape.bounding_radius() == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("rasterizer: empty scene is flat background") {
  SceneSpec spec;
  spec.rig = tiny_config().rig();
  auto r = rasterize_stereo(spec);
  for (uint8_t p : r.mask_left.pixels) CHECK(p == 0);
  for (uint8_t p : r.mask_right.pixels) CHECK(p == 0);
  CHECK(r.left.pixels == r.right.pixels);
  CHECK(r.left.at(0, 0, 0) == r.left.at(48, 36, 1));  // uniform
}

TEST_CASE("rasterizer: on-axis sphere centroid and disparity") {
  GenConfig cfg = tiny_config();
  SceneSpec spec;
  spec.rig = cfg.rig();
  SceneObject obj;
  obj.shape = PrimitiveShape::normalized(ShapeKind::sphere, {1, 0, 0});
  obj.scale = 0.15;
  obj.pose.translation = {0, 0, 1.0};
  spec.objects.push_back(obj);
  auto r = rasterize_stereo(spec);

  auto centroid = [](const Image& mask) {
    double sx = 0, sy = 0;
    int n = 0;
    for (int y = 0; y < mask.height; ++y)
      for (int x = 0; x < mask.width; ++x)
        if (mask.at(x, y)) {
          sx += x;
          sy += y;
          ++n;
        }
    REQUIRE(n > 0);
    return Eigen::Vector2d{sx / n, sy / n};
  };
  const auto cl = centroid(r.mask_left);
  CHECK(std::abs(cl.x() - spec.rig.cx) < 1.0);
  CHECK(std::abs(cl.y() - spec.rig.cy) < 1.0);
  const auto cr = centroid(r.mask_right);
  CHECK(std::abs((cl.x() - cr.x()) - spec.rig.fx * spec.rig.baseline / 1.0) < 2.0);
}

TEST_CASE("rasterizer: object behind camera renders nothing") {
  SceneSpec spec;
  spec.rig = tiny_config().rig();
  SceneObject obj;
  obj.shape = PrimitiveShape::normalized(ShapeKind::sphere, {1, 0, 0});
  obj.scale = 0.1;
  obj.pose.translation = {0, 0, -1.0};
  spec.objects.push_back(obj);
  auto r = rasterize_stereo(spec);
  for (uint8_t p : r.mask_left.pixels) CHECK(p == 0);
}

TEST_CASE("generate_scene is byte deterministic") {
  GenConfig cfg = tiny_config();
  auto a = generate_scene(cfg, 3, 42);
  auto b = generate_scene(cfg, 3, 42);
  CHECK(annotation_to_json(a.annotation).dump() == annotation_to_json(b.annotation).dump());
  CHECK(encode_png(a.render.left) == encode_png(b.render.left));
  CHECK(encode_png(a.render.right) == encode_png(b.render.right));
  CHECK(encode_png(a.render.mask_left) == encode_png(b.render.mask_left));
  auto c = generate_scene(cfg, 4, 42);
  CHECK(annotation_to_json(a.annotation).dump() != annotation_to_json(c.annotation).dump());
}

TEST_CASE("generate_scene annotation contracts") {
  GenConfig cfg = tiny_config();
  for (int index : {0, 1, 2}) {
    auto data = generate_scene(cfg, index, 7);
    REQUIRE(data.annotation.objects.size() == data.spec.objects.size());
    for (size_t oi = 0; oi < data.annotation.objects.size(); ++oi) {
      const auto& ann = data.annotation.objects[oi];
      const auto& obj = data.spec.objects[oi];
      // surface cloud normalized: max norm exactly 1 (within fp)
      double max_norm = 0;
      for (int i = 0; i < ann.surface_points.rows(); ++i)
        max_norm = std::max(max_norm, ann.surface_points.row(i).norm());
      CHECK(max_norm == doctest::Approx(1.0).epsilon(1e-6));
      // denormalize reproduces the posed world surface
      auto local = sample_surface_points(obj.shape, cfg.n_surface, hash_seed(data.spec.seed, 1000 + oi));
      geom::Points posed = geom::apply_pose(local.points * obj.scale, obj.pose);
      geom::SphereFrame frame{ann.position, ann.scale};
      CHECK((geom::denormalize_points(ann.surface_points, frame) - posed).cwiseAbs().maxCoeff() <
            1e-5);
      // occupancy bits: independent recomputation through the frame chain
      const Eigen::Matrix3d Rt = obj.pose.rotation_matrix().transpose();
      for (int q = 0; q < ann.occ_queries.rows(); ++q) {
        CHECK(ann.occ_queries.row(q).norm() <= 1.0 + 1e-12);
        const Eigen::Vector3d cam = ann.occ_queries.row(q).transpose() * ann.scale + ann.position;
        const Eigen::Vector3d loc = Rt * (cam - obj.pose.translation) / obj.scale;
        geom::Points lq(1, 3);
        lq.row(0) = loc.transpose();
        CHECK(analytic_occupancy(obj.shape, lq)[0] == ann.occ_labels[q]);
      }
      // placement keeps centers in the depth range
      CHECK(obj.pose.translation.z() >= cfg.d_min);
      CHECK(obj.pose.translation.z() <= cfg.d_max);
    }
    // pairwise overlap constraint
    for (size_t i = 0; i < data.spec.objects.size(); ++i)
      for (size_t j = i + 1; j < data.spec.objects.size(); ++j) {
        geom::SphereFrame a{data.spec.objects[i].pose.translation, data.spec.objects[i].scale};
        geom::SphereFrame b{data.spec.objects[j].pose.translation, data.spec.objects[j].scale};
        CHECK(metrics::sphere_iou(a, b) <= cfg.max_overlap_iou + 1e-9);
      }
  }
}

TEST_CASE("png round trip: rgb and gray") {
  Rng rng(21);
  Image img(37, 23, 3);
  for (auto& p : img.pixels) p = static_cast<uint8_t>(rng.uniform_int(256));
  CHECK(decode_png(encode_png(img)).pixels == img.pixels);
  Image gray(16, 9, 1);
  for (auto& p : gray.pixels) p = static_cast<uint8_t>(rng.uniform_int(256));
  auto back = decode_png(encode_png(gray));
  CHECK(back.channels == 1);
  CHECK(back.pixels == gray.pixels);
}

TEST_CASE("dataset write/load round trip") {
  const std::string root = (fs::temp_directory_path() / "unipr_ds_test").string();
  fs::remove_all(root);
  GenConfig cfg = tiny_config();
  DatasetWriter writer(root, cfg, 99);
  std::vector<SceneData> scenes;
  for (int i = 0; i < 10; ++i) {
    scenes.push_back(generate_scene(cfg, i, 99));
    writer.write_scene(i, scenes.back());
  }
  writer.finalize(10);

  auto ds = Dataset::open(root);
  CHECK(ds.size() == 10);
  CHECK(ds.master_seed() == 99);
  // manifest scene count equals directory count
  int dirs = 0;
  for (const auto& e : fs::directory_iterator(fs::path(root) / "scenes"))
    if (e.is_directory()) ++dirs;
  CHECK(dirs == 10);

  for (int i = 0; i < 10; ++i) {
    auto rec = ds.load_scene(i);
    const auto& orig = scenes[i].annotation;
    REQUIRE(rec.annotation.objects.size() == orig.objects.size());
    CHECK(rec.left.pixels == scenes[i].render.left.pixels);
    CHECK(rec.mask_right.pixels == scenes[i].render.mask_right.pixels);
    for (size_t k = 0; k < orig.objects.size(); ++k) {
      const auto& a = rec.annotation.objects[k];
      const auto& b = orig.objects[k];
      CHECK(a.kind == b.kind);
      CHECK(a.visible == b.visible);
      CHECK(std::abs(a.scale - b.scale) < 1e-8 * std::abs(b.scale));
      CHECK((a.position - b.position).norm() < 1e-7);
      CHECK((a.surface_points - b.surface_points).cwiseAbs().maxCoeff() < 1e-7);
      CHECK(a.occ_labels == b.occ_labels);
    }
  }
  fs::remove_all(root);
}

TEST_CASE("dataset: corrupt scene is isolated and reported by id") {
  const std::string root = (fs::temp_directory_path() / "unipr_ds_corrupt").string();
  fs::remove_all(root);
  GenConfig cfg = tiny_config();
  DatasetWriter writer(root, cfg, 5);
  for (int i = 0; i < 3; ++i) writer.write_scene(i, generate_scene(cfg, i, 5));
  writer.finalize(3);
  {
    std::ofstream f(fs::path(root) / "scenes" / "000001" / "annotation.json", std::ios::trunc);
    f << "{ not json";
  }
  auto ds = Dataset::open(root);
  CHECK_NOTHROW(ds.load_scene(0));
  CHECK_NOTHROW(ds.load_scene(2));
  try {
    ds.load_scene(1);
    CHECK(false);
  } catch (const std::exception& e) {
    CHECK(std::string(e.what()).find("000001") != std::string::npos);
  }
  fs::remove_all(root);
}

TEST_CASE("dataset: schema version mismatch rejected") {
  const std::string root = (fs::temp_directory_path() / "unipr_ds_schema").string();
  fs::remove_all(root);
  GenConfig cfg = tiny_config();
  DatasetWriter writer(root, cfg, 5);
  writer.write_scene(0, generate_scene(cfg, 0, 5));
  writer.finalize(1);
  // bump the schema version in place
  auto manifest_path = fs::path(root) / "manifest.json";
  std::ifstream in(manifest_path);
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  in.close();
  auto pos = text.find("\"schema_version\": 1");
  REQUIRE(pos != std::string::npos);
  text.replace(pos, 19, "\"schema_version\": 2");
  std::ofstream(manifest_path, std::ios::trunc) << text;
  CHECK_THROWS(Dataset::open(root));
  fs::remove_all(root);
}

TEST_CASE("quantize9 keeps 9 significant digits") {
  CHECK(quantize9(0.123456789123) == doctest::Approx(0.123456789).epsilon(1e-9));
  CHECK(quantize9(1.0) == 1.0);
  CHECK(quantize9(-3.14159265358979) == doctest::Approx(-3.14159265).epsilon(1e-9));
}
