// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <vector>

#include "unipr/geometry.hpp"
#include "unipr/synth/png_io.hpp"
#include "unipr/synth/primitives.hpp"

namespace unipr::synth {

struct SceneObject {
  PrimitiveShape shape;
  geom::Pose pose;
  double scale = 0.1;               // meters; local unit ball -> world
  Eigen::Vector3d albedo{0.7, 0.7, 0.7};
};

struct SceneSpec {
  std::vector<SceneObject> objects;
  geom::CameraRig rig;
  uint64_t seed = 0;
};

struct StereoRender {
  Image left, right;            // RGB
  Image mask_left, mask_right;  // instance ids, 0 = background
};

struct TriMesh {
  std::vector<Eigen::Vector3d> vertices;
  std::vector<std::array<int, 3>> triangles;
};

/// Fixed-tessellation triangulation of a primitive in its local frame.
TriMesh tessellate(const PrimitiveShape& shape);

/// Deterministic z-buffer render of both views; flat-shaded Lambertian with
/// one fixed directional light over a flat gray background. Mask value is
/// object index + 1. Triangles crossing the near plane are dropped.
StereoRender rasterize_stereo(const SceneSpec& spec);

}  // namespace unipr::synth
