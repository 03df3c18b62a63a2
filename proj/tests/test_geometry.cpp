// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "unipr/geometry.hpp"
#include "unipr/rng.hpp"

using namespace unipr;
using namespace unipr::geom;

namespace {

CameraRig desk_rig() {
  CameraRig rig;
  rig.fx = rig.fy = 140.0;
  rig.cx = 80.0;
  rig.cy = 60.0;
  rig.baseline = 0.13;
  rig.width = 160;
  rig.height = 120;
  return rig;
}

Pose random_pose(Rng& rng) {
  Pose p;
  p.rotation_wxyz = rng.unit_quaternion();
  p.translation = {rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)};
  return p;
}

}  // namespace

TEST_CASE("camera rig invariants") {
  CameraRig rig = desk_rig();
  CHECK_NOTHROW(rig.validate());
  rig.fx = 0;
  CHECK_THROWS_AS(rig.validate(), std::invalid_argument);
  rig = desk_rig();
  rig.cx = 200;
  CHECK_THROWS_AS(rig.validate(), std::invalid_argument);
}

TEST_CASE("uvd grid inverse-depth spacing") {
  auto g = UVDGrid::inverse_depth(20, 15, 16, 0.5, 2.0);
  CHECK(g.depth_centers.size() == 16);
  CHECK(g.depth_centers.front() > 0.5);
  CHECK(g.depth_centers.back() < 2.0);
  // uniform spacing in inverse depth
  const double step = 1.0 / g.depth_centers[0] - 1.0 / g.depth_centers[1];
  for (int i = 1; i + 1 < 16; ++i) {
    const double s = 1.0 / g.depth_centers[i] - 1.0 / g.depth_centers[i + 1];
    CHECK(s == doctest::Approx(step).epsilon(1e-12));
  }
}

TEST_CASE("uvd_to_camera principal-ray identity") {
  CameraRig rig = desk_rig();
  auto X = uvd_to_camera(rig.cx, rig.cy, 2.0, rig);
  CHECK(X.x() == doctest::Approx(0.0));
  CHECK(X.y() == doctest::Approx(0.0));
  CHECK(X.z() == doctest::Approx(2.0));
}

TEST_CASE("uvd_to_camera unit-focal pinhole") {
  CameraRig rig;
  rig.fx = rig.fy = 1.0;
  rig.cx = rig.cy = 0.0;
  rig.baseline = 0.13;
  rig.width = rig.height = 4;
  auto X = uvd_to_camera(1.0, 0.0, 2.0, rig);
  CHECK(X.x() == doctest::Approx(2.0));
  CHECK(X.y() == doctest::Approx(0.0));
  CHECK(X.z() == doctest::Approx(2.0));
}

TEST_CASE("uvd_to_camera rejects non-positive depth") {
  CHECK_THROWS_AS(uvd_to_camera(0, 0, 0.0, desk_rig()), std::domain_error);
  CHECK_THROWS_AS(uvd_to_camera(0, 0, -1.0, desk_rig()), std::domain_error);
}

TEST_CASE("projection/backprojection round trip over random draws") {
  CameraRig rig = desk_rig();
  Rng rng(11);
  for (int i = 0; i < 1000; ++i) {
    const double u = rng.uniform(0, rig.width - 1);
    const double v = rng.uniform(0, rig.height - 1);
    const double d = rng.uniform(0.2, 5.0);
    auto px = camera_to_stereo_pixels(uvd_to_camera(u, v, d, rig), rig);
    CHECK(std::abs(px.left.x() - u) < 1e-5);
    CHECK(std::abs(px.left.y() - v) < 1e-5);
  }
}

TEST_CASE("stereo projection closed form and rectification") {
  CameraRig rig;
  rig.fx = rig.fy = 100.0;
  rig.cx = rig.cy = 64.0;
  rig.baseline = 0.13;
  rig.width = rig.height = 128;
  auto px = camera_to_stereo_pixels({0, 0, 1.3}, rig);
  CHECK(px.left.x() == doctest::Approx(64.0));
  CHECK(px.right.x() == doctest::Approx(54.0));  // disparity fx*b/z = 10
  CHECK(px.left.y() == px.right.y());            // exact
  CHECK(px.left.y() == doctest::Approx(64.0));
  CHECK_THROWS_AS(camera_to_stereo_pixels({0, 0, -1}, rig), std::domain_error);
}

TEST_CASE("analytic disparity oracle over random points") {
  CameraRig rig = desk_rig();
  Rng rng(12);
  for (int i = 0; i < 1000; ++i) {
    Eigen::Vector3d X{rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(0.1, 5.0)};
    auto px = camera_to_stereo_pixels(X, rig);
    CHECK(px.left.x() - px.right.x() == doctest::Approx(rig.fx * rig.baseline / X.z()).epsilon(1e-10));
    CHECK(px.left.y() == px.right.y());
  }
}

TEST_CASE("normalize_to_unit_sphere cube corners") {
  Points pts(8, 3);
  int r = 0;
  for (int sx : {-1, 1})
    for (int sy : {-1, 1})
      for (int sz : {-1, 1}) pts.row(r++) << sx, sy, sz;
  auto [frame, norm] = normalize_to_unit_sphere(pts);
  CHECK(frame.center.norm() == doctest::Approx(0.0));
  CHECK(frame.radius == doctest::Approx(std::sqrt(3.0)));
  for (int i = 0; i < 8; ++i) CHECK(norm.row(i).norm() == doctest::Approx(1.0));
}

TEST_CASE("normalize_to_unit_sphere identity on pre-normalized cloud") {
  // antipodal pair pins the bounding sphere; the rest sit strictly inside
  Points pts(5, 3);
  pts << 1, 0, 0, -1, 0, 0, 0, 0.5, 0, 0, 0, -0.5, 0.1, 0.1, 0.1;
  auto [frame, norm] = normalize_to_unit_sphere(pts);
  CHECK(frame.center.norm() < 1e-9);
  CHECK(frame.radius == doctest::Approx(1.0));
  CHECK((norm - pts).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("normalize_to_unit_sphere rejects degenerate clouds") {
  Points one(1, 3);
  one << 1, 2, 3;
  CHECK_THROWS_AS(normalize_to_unit_sphere(one), std::invalid_argument);
  Points same(5, 3);
  for (int i = 0; i < 5; ++i) same.row(i) << 1, 2, 3;
  CHECK_THROWS_AS(normalize_to_unit_sphere(same), std::invalid_argument);
}

TEST_CASE("sphere radius is rotation invariant") {
  Rng rng(13);
  Points pts(64, 3);
  for (int i = 0; i < 64; ++i) pts.row(i) = (rng.ball_point() * 2.0).transpose();
  const double base_radius = normalize_to_unit_sphere(pts).first.radius;
  for (int trial = 0; trial < 100; ++trial) {
    Pose p;
    p.rotation_wxyz = rng.unit_quaternion();
    auto rotated = apply_pose(pts, p);
    CHECK(std::abs(normalize_to_unit_sphere(rotated).first.radius - base_radius) < 1e-6);
  }
}

TEST_CASE("denormalize trivial frames") {
  Points pts(2, 3);
  pts << 0.25, -0.5, 0.125, 0, 0, 0;
  SphereFrame ident{{0, 0, 0}, 1.0};
  CHECK((denormalize_points(pts, ident) - pts).cwiseAbs().maxCoeff() == 0.0);
  SphereFrame f{{1, 2, 3}, 2.0};
  Points origin(1, 3);
  origin << 0, 0, 0;
  auto out = denormalize_points(origin, f);
  CHECK(out(0, 0) == doctest::Approx(1.0));
  CHECK(out(0, 1) == doctest::Approx(2.0));
  CHECK(out(0, 2) == doctest::Approx(3.0));
}

TEST_CASE("denormalize is the exact inverse of normalize") {
  Rng rng(14);
  for (int trial = 0; trial < 50; ++trial) {
    Points pts(32, 3);
    for (int i = 0; i < 32; ++i)
      pts.row(i) << rng.uniform(-3, 3), rng.uniform(-3, 3), rng.uniform(-3, 3);
    auto [frame, norm] = normalize_to_unit_sphere(pts);
    CHECK((denormalize_points(norm, frame) - pts).cwiseAbs().maxCoeff() < 1e-6);
  }
}

TEST_CASE("apply_pose identity and half-turn") {
  Points pts(1, 3);
  pts << 1, 0, 0;
  CHECK((apply_pose(pts, Pose::identity()) - pts).cwiseAbs().maxCoeff() == 0.0);
  Pose half;  // 180 degrees about z
  half.rotation_wxyz = {0, 0, 0, 1};
  auto out = apply_pose(pts, half);
  CHECK(out(0, 0) == doctest::Approx(-1.0));
  CHECK(std::abs(out(0, 1)) < 1e-12);
}

TEST_CASE("pose composition oracle") {
  Rng rng(15);
  Points pts(16, 3);
  for (int i = 0; i < 16; ++i) pts.row(i) = rng.ball_point().transpose();
  for (int trial = 0; trial < 100; ++trial) {
    Pose a = random_pose(rng), b = random_pose(rng);
    auto two_step = apply_pose(apply_pose(pts, a), b);
    auto one_step = apply_pose(pts, compose(b, a));
    CHECK((two_step - one_step).cwiseAbs().maxCoeff() < 1e-6);
  }
}

TEST_CASE("pose validates quaternion norm") {
  Pose p;
  p.rotation_wxyz = {1.1, 0, 0, 0};
  CHECK_THROWS_AS(p.validate(), std::invalid_argument);
}

TEST_CASE("unit ball queries: bounds, determinism, mean norm") {
  auto a = sample_unit_ball_queries(100000, 77);
  auto b = sample_unit_ball_queries(100000, 77);
  CHECK((a - b).cwiseAbs().maxCoeff() == 0.0);
  double mean = 0;
  for (int i = 0; i < a.rows(); ++i) {
    const double n = a.row(i).norm();
    CHECK(n <= 1.0);
    mean += n;
  }
  mean /= a.rows();
  CHECK(std::abs(mean - 0.75) < 0.01);  // E|x| = 3/4 for the uniform ball
  CHECK_THROWS_AS(sample_unit_ball_queries(0, 1), std::invalid_argument);
}

TEST_CASE("rotation equivariance of the normalized cloud") {
  // the minimal enclosing sphere rotates with the points, so the normalized
  // cloud is equivariant for arbitrary clouds
  Rng rng(16);
  Points pts(40, 3);
  for (int i = 0; i < 40; ++i)
    pts.row(i) << rng.uniform(-2, 1), rng.uniform(0, 3), rng.uniform(-1, 1);
  auto [f0, n0] = normalize_to_unit_sphere(pts);
  for (int trial = 0; trial < 20; ++trial) {
    Pose p;
    p.rotation_wxyz = rng.unit_quaternion();
    auto [f1, n1] = normalize_to_unit_sphere(apply_pose(pts, p));
    CHECK(std::abs(f1.radius - f0.radius) < 1e-5);
    CHECK((n1 - apply_pose(n0, Pose{p.rotation_wxyz, {0, 0, 0}})).cwiseAbs().maxCoeff() < 1e-5);
  }
}
