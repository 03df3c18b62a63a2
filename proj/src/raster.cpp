// SPDX-License-Identifier: Apache-2.0
#include "unipr/synth/raster.hpp"

#include <cmath>

namespace unipr::synth {

namespace {

constexpr double kNearPlane = 0.05;
constexpr int kSegments = 32;
constexpr int kStacks = 16;
const Eigen::Vector3d kToLight = Eigen::Vector3d(-0.35, -0.5, -0.8).normalized();
constexpr double kAmbient = 0.3;
constexpr double kDiffuse = 0.7;
constexpr uint8_t kBackground = 128;

void add_uv_sphere(TriMesh& m, const Eigen::Vector3d& radii, double z_offset, double z_min_angle,
                   double z_max_angle) {
  // stacks span [z_min_angle, z_max_angle] in polar angle (0 = +z pole)
  const int base = static_cast<int>(m.vertices.size());
  for (int i = 0; i <= kStacks; ++i) {
    const double phi = z_min_angle + (z_max_angle - z_min_angle) * i / kStacks;
    for (int j = 0; j < kSegments; ++j) {
      const double theta = 2.0 * M_PI * j / kSegments;
      m.vertices.push_back({radii.x() * std::sin(phi) * std::cos(theta),
                            radii.y() * std::sin(phi) * std::sin(theta),
                            radii.z() * std::cos(phi) + z_offset});
    }
  }
  for (int i = 0; i < kStacks; ++i)
    for (int j = 0; j < kSegments; ++j) {
      const int jn = (j + 1) % kSegments;
      const int a = base + i * kSegments + j, b = base + i * kSegments + jn;
      const int c = base + (i + 1) * kSegments + j, d = base + (i + 1) * kSegments + jn;
      m.triangles.push_back({a, c, b});
      m.triangles.push_back({b, c, d});
    }
}

void add_tube(TriMesh& m, double r, double z_lo, double z_hi) {
  const int base = static_cast<int>(m.vertices.size());
  for (int ring = 0; ring < 2; ++ring) {
    const double z = ring == 0 ? z_hi : z_lo;
    for (int j = 0; j < kSegments; ++j) {
      const double theta = 2.0 * M_PI * j / kSegments;
      m.vertices.push_back({r * std::cos(theta), r * std::sin(theta), z});
    }
  }
  for (int j = 0; j < kSegments; ++j) {
    const int jn = (j + 1) % kSegments;
    m.triangles.push_back({base + j, base + kSegments + j, base + jn});
    m.triangles.push_back({base + jn, base + kSegments + j, base + kSegments + jn});
  }
}

void add_disc(TriMesh& m, double r, double z, bool up) {
  const int center = static_cast<int>(m.vertices.size());
  m.vertices.push_back({0, 0, z});
  const int base = center + 1;
  for (int j = 0; j < kSegments; ++j) {
    const double theta = 2.0 * M_PI * j / kSegments;
    m.vertices.push_back({r * std::cos(theta), r * std::sin(theta), z});
  }
  for (int j = 0; j < kSegments; ++j) {
    const int jn = (j + 1) % kSegments;
    if (up)
      m.triangles.push_back({center, base + j, base + jn});
    else
      m.triangles.push_back({center, base + jn, base + j});
  }
}

}  // namespace

TriMesh tessellate(const PrimitiveShape& shape) {
  shape.validate();
  TriMesh m;
  const double a = shape.params[0], b = shape.params[1], c = shape.params[2];
  switch (shape.kind) {
    case ShapeKind::sphere:
      add_uv_sphere(m, {a, a, a}, 0, 0, M_PI);
      break;
    case ShapeKind::ellipsoid:
      add_uv_sphere(m, {a, b, c}, 0, 0, M_PI);
      break;
    case ShapeKind::box: {
      for (int sx : {-1, 1})
        for (int sy : {-1, 1})
          for (int sz : {-1, 1}) m.vertices.push_back({sx * a, sy * b, sz * c});
      // corner order: index bit2 = x, bit1 = y, bit0 = z
      const int quads[6][4] = {{4, 6, 7, 5}, {0, 1, 3, 2}, {2, 3, 7, 6},
                               {0, 4, 5, 1}, {1, 5, 7, 3}, {0, 2, 6, 4}};
      for (const auto& q : quads) {
        m.triangles.push_back({q[0], q[1], q[2]});
        m.triangles.push_back({q[0], q[2], q[3]});
      }
      break;
    }
    case ShapeKind::cylinder:
      add_tube(m, a, -b, b);
      add_disc(m, a, b, true);
      add_disc(m, a, -b, false);
      break;
    case ShapeKind::capsule:
      add_tube(m, a, -b, b);
      add_uv_sphere(m, {a, a, a}, b, 0, M_PI / 2);
      add_uv_sphere(m, {a, a, a}, -b, M_PI / 2, M_PI);
      break;
  }
  return m;
}

namespace {

struct CamTri {
  Eigen::Vector3d v[3];        // camera-frame vertices
  Eigen::Vector3d color;       // shaded RGB in [0,1]
  uint8_t mask;
};

void raster_view(const std::vector<CamTri>& tris, const geom::CameraRig& rig, double cam_x_offset,
                 Image& rgb, Image& mask) {
  rgb = Image(rig.width, rig.height, 3, kBackground);
  mask = Image(rig.width, rig.height, 1, 0);
  std::vector<double> zbuf(static_cast<size_t>(rig.width) * rig.height,
                           std::numeric_limits<double>::infinity());
  for (const auto& tri : tris) {
    Eigen::Vector3d v[3];
    bool behind = false;
    for (int i = 0; i < 3; ++i) {
      v[i] = tri.v[i] - Eigen::Vector3d{cam_x_offset, 0, 0};
      behind = behind || v[i].z() <= kNearPlane;
    }
    if (behind) continue;
    Eigen::Vector2d p[3];
    for (int i = 0; i < 3; ++i)
      p[i] = {rig.fx * v[i].x() / v[i].z() + rig.cx, rig.fy * v[i].y() / v[i].z() + rig.cy};
    const double area = (p[1].x() - p[0].x()) * (p[2].y() - p[0].y()) -
                        (p[1].y() - p[0].y()) * (p[2].x() - p[0].x());
    if (std::abs(area) < 1e-12) continue;
    int x0 = std::max(0, static_cast<int>(std::ceil(std::min({p[0].x(), p[1].x(), p[2].x()}))));
    int x1 = std::min(rig.width - 1,
                      static_cast<int>(std::floor(std::max({p[0].x(), p[1].x(), p[2].x()}))));
    int y0 = std::max(0, static_cast<int>(std::ceil(std::min({p[0].y(), p[1].y(), p[2].y()}))));
    int y1 = std::min(rig.height - 1,
                      static_cast<int>(std::floor(std::max({p[0].y(), p[1].y(), p[2].y()}))));
    for (int y = y0; y <= y1; ++y)
      for (int x = x0; x <= x1; ++x) {
        const double w0 = (p[1].x() - x) * (p[2].y() - y) - (p[1].y() - y) * (p[2].x() - x);
        const double w1 = (p[2].x() - x) * (p[0].y() - y) - (p[2].y() - y) * (p[0].x() - x);
        const double w2 = area - w0 - w1;
        const double s = area > 0 ? 1.0 : -1.0;
        if (s * w0 < 0 || s * w1 < 0 || s * w2 < 0) continue;
        const double b0 = w0 / area, b1 = w1 / area, b2 = w2 / area;
        const double inv_z = b0 / v[0].z() + b1 / v[1].z() + b2 / v[2].z();
        const double z = 1.0 / inv_z;
        double& zb = zbuf[static_cast<size_t>(y) * rig.width + x];
        if (z >= zb) continue;
        zb = z;
        for (int ch = 0; ch < 3; ++ch)
          rgb.at(x, y, ch) =
              static_cast<uint8_t>(std::lround(std::clamp(tri.color[ch], 0.0, 1.0) * 255.0));
        mask.at(x, y) = tri.mask;
      }
  }
}

}  // namespace

StereoRender rasterize_stereo(const SceneSpec& spec) {
  spec.rig.validate();
  std::vector<CamTri> tris;
  for (size_t oi = 0; oi < spec.objects.size(); ++oi) {
    const SceneObject& obj = spec.objects[oi];
    if (!(obj.scale > 0)) throw std::invalid_argument("rasterize_stereo: scale must be positive");
    const TriMesh mesh = tessellate(obj.shape);
    const Eigen::Matrix3d R = obj.pose.rotation_matrix();
    std::vector<Eigen::Vector3d> cam(mesh.vertices.size());
    for (size_t i = 0; i < mesh.vertices.size(); ++i)
      cam[i] = R * (obj.scale * mesh.vertices[i]) + obj.pose.translation;
    for (const auto& t : mesh.triangles) {
      CamTri ct;
      ct.v[0] = cam[t[0]];
      ct.v[1] = cam[t[1]];
      ct.v[2] = cam[t[2]];
      Eigen::Vector3d n = (ct.v[1] - ct.v[0]).cross(ct.v[2] - ct.v[0]);
      const double len = n.norm();
      if (len < 1e-15) continue;
      n /= len;
      // flat shading; flip the normal toward the camera for robustness
      if (n.dot(ct.v[0] + ct.v[1] + ct.v[2]) > 0) n = -n;
      const double light = kAmbient + kDiffuse * std::max(0.0, n.dot(kToLight));
      ct.color = obj.albedo * light;
      ct.mask = static_cast<uint8_t>(oi + 1);
      tris.push_back(ct);
    }
  }
  StereoRender out;
  raster_view(tris, spec.rig, 0.0, out.left, out.mask_left);
  raster_view(tris, spec.rig, spec.rig.baseline, out.right, out.mask_right);
  return out;
}

}  // namespace unipr::synth
