// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <stdexcept>
#include <utility>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace unipr::geom {

using Points = Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor>;

/// Rectified stereo pinhole rig; pure x-baseline, shared intrinsics,
/// camera looks down +z, left camera anchors all UVD coordinates.
struct CameraRig {
  double fx = 0, fy = 0;
  double cx = 0, cy = 0;
  double baseline = 0;  // meters
  int width = 0, height = 0;

  void validate() const;
};

/// Image-plane (u, v) grid crossed with discrete depth centers.
struct UVDGrid {
  int U = 0, V = 0, D = 0;
  double d_min = 0, d_max = 0;
  std::vector<double> depth_centers;

  void validate() const;

  // D cell centers spaced uniformly in inverse depth over [d_min, d_max]
  static UVDGrid inverse_depth(int U, int V, int D, double d_min, double d_max);
};

/// Rigid transform, quaternion scalar-first (w, x, y, z), right-handed.
struct Pose {
  Eigen::Vector4d rotation_wxyz{1, 0, 0, 0};
  Eigen::Vector3d translation{0, 0, 0};

  void validate() const;
  Eigen::Matrix3d rotation_matrix() const;
  static Pose identity() { return {}; }
};

/// Maps camera-frame points into the unit-ball normalized shape space.
struct SphereFrame {
  Eigen::Vector3d center{0, 0, 0};
  double radius = 1.0;

  void validate() const;
};

struct StereoPixels {
  Eigen::Vector2d left;
  Eigen::Vector2d right;
};

Eigen::Vector3d uvd_to_camera(double u, double v, double d, const CameraRig& rig);

StereoPixels camera_to_stereo_pixels(const Eigen::Vector3d& X, const CameraRig& rig);

/// Frame = minimal enclosing sphere of the cloud (center rotation-equivariant,
/// radius rotation-invariant); normalized cloud touches the unit sphere.
std::pair<SphereFrame, Points> normalize_to_unit_sphere(const Points& points);

Points denormalize_points(const Points& normalized, const SphereFrame& frame);

Points apply_pose(const Points& points, const Pose& pose);

// compose(b, a): apply a first, then b
Pose compose(const Pose& b, const Pose& a);

Points sample_unit_ball_queries(int count, uint64_t seed);

}  // namespace unipr::geom
