// SPDX-License-Identifier: Apache-2.0
#include "unipr/geometry.hpp"

#include <cmath>

#include "unipr/rng.hpp"

namespace unipr::geom {

void CameraRig::validate() const {
  if (!(fx > 0) || !(fy > 0)) throw std::invalid_argument("CameraRig: focal lengths must be positive");
  if (!(baseline > 0)) throw std::invalid_argument("CameraRig: baseline must be positive");
  if (width < 1 || height < 1) throw std::invalid_argument("CameraRig: image size must be >= 1");
  if (!(cx >= 0 && cx < width) || !(cy >= 0 && cy < height))
    throw std::invalid_argument("CameraRig: principal point outside image");
}

void UVDGrid::validate() const {
  if (U < 1 || V < 1 || D < 1) throw std::invalid_argument("UVDGrid: grid sizes must be >= 1");
  if (!(d_min > 0) || !(d_max > d_min)) throw std::invalid_argument("UVDGrid: need 0 < d_min < d_max");
  if (static_cast<int>(depth_centers.size()) != D)
    throw std::invalid_argument("UVDGrid: depth_centers size mismatch");
  for (int i = 0; i < D; ++i) {
    if (i > 0 && !(depth_centers[i] > depth_centers[i - 1]))
      throw std::invalid_argument("UVDGrid: depth_centers must be strictly increasing");
  }
  if (depth_centers.front() < d_min || depth_centers.back() > d_max)
    throw std::invalid_argument("UVDGrid: depth_centers outside [d_min, d_max]");
}

UVDGrid UVDGrid::inverse_depth(int U, int V, int D, double d_min, double d_max) {
  UVDGrid g;
  g.U = U;
  g.V = V;
  g.D = D;
  g.d_min = d_min;
  g.d_max = d_max;
  g.depth_centers.resize(D);
  const double inv_lo = 1.0 / d_max, inv_hi = 1.0 / d_min;
  for (int i = 0; i < D; ++i) {
    // cell centers in inverse depth, ordered so depth increases with i
    double inv = inv_hi + (inv_lo - inv_hi) * ((i + 0.5) / D);
    g.depth_centers[i] = 1.0 / inv;
  }
  g.validate();
  return g;
}

void Pose::validate() const {
  if (std::abs(rotation_wxyz.norm() - 1.0) > 1e-6)
    throw std::invalid_argument("Pose: quaternion not unit norm");
}

Eigen::Matrix3d Pose::rotation_matrix() const {
  const double w = rotation_wxyz[0], x = rotation_wxyz[1], y = rotation_wxyz[2], z = rotation_wxyz[3];
  Eigen::Matrix3d R;
  R << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
       2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
       2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y);
  return R;
}

void SphereFrame::validate() const {
  if (!(radius > 0)) throw std::invalid_argument("SphereFrame: radius must be positive");
}

Eigen::Vector3d uvd_to_camera(double u, double v, double d, const CameraRig& rig) {
  if (!(d > 0)) throw std::domain_error("uvd_to_camera: depth must be positive");
  return {d * (u - rig.cx) / rig.fx, d * (v - rig.cy) / rig.fy, d};
}

StereoPixels camera_to_stereo_pixels(const Eigen::Vector3d& X, const CameraRig& rig) {
  if (!(X.z() > 0)) throw std::domain_error("camera_to_stereo_pixels: point behind camera");
  const double v = rig.fy * X.y() / X.z() + rig.cy;  // shared row: rectified rig
  StereoPixels px;
  px.left = {rig.fx * X.x() / X.z() + rig.cx, v};
  px.right = {rig.fx * (X.x() - rig.baseline) / X.z() + rig.cx, v};
  return px;
}

namespace {

struct Ball {
  Eigen::Vector3d c{0, 0, 0};
  double r = -1;  // negative: empty
  bool contains(const Eigen::Vector3d& p, double slack) const {
    return r >= 0 && (p - c).norm() <= r + slack;
  }
};

Ball ball_from(const std::vector<Eigen::Vector3d>& s) {
  switch (s.size()) {
    case 0:
      return {};
    case 1:
      return {s[0], 0.0};
    case 2:
      return {0.5 * (s[0] + s[1]), 0.5 * (s[1] - s[0]).norm()};
    case 3: {
      const Eigen::Vector3d a = s[1] - s[0], b = s[2] - s[0];
      const Eigen::Vector3d axb = a.cross(b);
      const double denom = 2.0 * axb.squaredNorm();
      if (denom < 1e-24) {  // collinear: widest pair
        Ball best;
        for (int i = 0; i < 3; ++i)
          for (int j = i + 1; j < 3; ++j) {
            Ball bb{0.5 * (s[i] + s[j]), 0.5 * (s[j] - s[i]).norm()};
            if (bb.r > best.r) best = bb;
          }
        return best;
      }
      const Eigen::Vector3d o = (a.squaredNorm() * b.cross(axb) + b.squaredNorm() * axb.cross(a)) / denom;
      return {s[0] + o, o.norm()};
    }
    default: {
      Eigen::Matrix3d A;
      Eigen::Vector3d rhs;
      for (int i = 0; i < 3; ++i) {
        A.row(i) = 2.0 * (s[i + 1] - s[0]).transpose();
        rhs[i] = s[i + 1].squaredNorm() - s[0].squaredNorm();
      }
      Eigen::FullPivLU<Eigen::Matrix3d> lu(A);
      if (!lu.isInvertible()) {  // coplanar: best of the 3-point sub-balls
        Ball best;
        for (int drop = 0; drop < 4; ++drop) {
          std::vector<Eigen::Vector3d> sub;
          for (int i = 0; i < 4; ++i)
            if (i != drop) sub.push_back(s[i]);
          Ball bb = ball_from(sub);
          bool ok = true;
          for (const auto& p : s) ok = ok && bb.contains(p, 1e-9 * (bb.r + 1.0));
          if (ok && (best.r < 0 || bb.r < best.r)) best = bb;
        }
        if (best.r >= 0) return best;
        return ball_from({s[0], s[1], s[2]});
      }
      const Eigen::Vector3d c = lu.solve(rhs);
      return {c, (s[0] - c).norm()};
    }
  }
}

Ball welzl(std::vector<Eigen::Vector3d>& pts, size_t n, std::vector<Eigen::Vector3d> support) {
  if (n == 0 || support.size() == 4) return ball_from(support);
  Ball b = welzl(pts, n - 1, support);
  const Eigen::Vector3d& p = pts[n - 1];
  if (b.contains(p, 1e-10 * (b.r + 1.0))) return b;
  support.push_back(p);
  return welzl(pts, n - 1, std::move(support));
}

}  // namespace

std::pair<SphereFrame, Points> normalize_to_unit_sphere(const Points& points) {
  const auto n = points.rows();
  if (n < 2) throw std::invalid_argument("normalize_to_unit_sphere: need at least 2 points");
  // Minimal enclosing sphere (Welzl); its center is rotation-equivariant, so
  // the normalized cloud and radius are stable under object rotation.
  std::vector<Eigen::Vector3d> pts(n);
  for (Eigen::Index i = 0; i < n; ++i) pts[i] = points.row(i).transpose();
  {
    Rng shuffle_rng(0x6ba11);
    for (size_t i = pts.size(); i > 1; --i) std::swap(pts[i - 1], pts[shuffle_rng.uniform_int(i)]);
  }
  Ball ball = welzl(pts, pts.size(), {});
  SphereFrame frame;
  frame.center = ball.c;
  // snap to the farthest point so the normalized cloud touches the unit sphere
  Points centered = points.rowwise() - frame.center.transpose();
  frame.radius = centered.rowwise().norm().maxCoeff();
  if (!(frame.radius > 0)) throw std::invalid_argument("normalize_to_unit_sphere: degenerate point set");
  return {frame, centered / frame.radius};
}

Points denormalize_points(const Points& normalized, const SphereFrame& frame) {
  frame.validate();
  return (normalized * frame.radius).rowwise() + frame.center.transpose();
}

Points apply_pose(const Points& points, const Pose& pose) {
  pose.validate();
  Eigen::Matrix3d R = pose.rotation_matrix();
  return (points * R.transpose()).rowwise() + pose.translation.transpose();
}

Pose compose(const Pose& b, const Pose& a) {
  const auto& q1 = b.rotation_wxyz;
  const auto& q2 = a.rotation_wxyz;
  Pose out;
  out.rotation_wxyz = {
      q1[0] * q2[0] - q1[1] * q2[1] - q1[2] * q2[2] - q1[3] * q2[3],
      q1[0] * q2[1] + q1[1] * q2[0] + q1[2] * q2[3] - q1[3] * q2[2],
      q1[0] * q2[2] - q1[1] * q2[3] + q1[2] * q2[0] + q1[3] * q2[1],
      q1[0] * q2[3] + q1[1] * q2[2] - q1[2] * q2[1] + q1[3] * q2[0]};
  out.rotation_wxyz.normalize();
  out.translation = b.rotation_matrix() * a.translation + b.translation;
  return out;
}

Points sample_unit_ball_queries(int count, uint64_t seed) {
  if (count < 1) throw std::invalid_argument("sample_unit_ball_queries: count must be >= 1");
  Rng rng(seed);
  Points out(count, 3);
  for (int i = 0; i < count; ++i) out.row(i) = rng.ball_point().transpose();
  return out;
}

}  // namespace unipr::geom
