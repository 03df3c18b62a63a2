// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "unipr/geometry.hpp"

namespace unipr::synth {

enum class ShapeKind { sphere, box, cylinder, ellipsoid, capsule };

std::string kind_name(ShapeKind k);
ShapeKind kind_from_name(const std::string& name);

/// Analytic solid in its local frame. Dimensions are pre-normalized at
/// construction so the shape touches the unit ball.
///   sphere:    params = (r, -, -)
///   box:       params = half extents (hx, hy, hz)
///   cylinder:  params = (r, hz, -)
///   ellipsoid: params = semi-axes (a, b, c)
///   capsule:   params = (r, hz, -), hz = half length of the cylindrical part
struct PrimitiveShape {
  ShapeKind kind = ShapeKind::sphere;
  Eigen::Vector3d params{1, 0, 0};

  void validate() const;
  double bounding_radius() const;

  /// Scales raw dimensions so bounding_radius() == 1.
  static PrimitiveShape normalized(ShapeKind kind, const Eigen::Vector3d& raw);
};

/// Proxy difficulty split by primitive kind.
enum class Difficulty { easy, medium, hard };
Difficulty shape_difficulty(const PrimitiveShape& shape);
std::string difficulty_name(Difficulty d);

/// Exact inside-or-on-boundary test per query, in the shape's local frame.
std::vector<uint8_t> analytic_occupancy(const PrimitiveShape& shape, const geom::Points& queries);

struct SurfaceSamples {
  geom::Points points;   // on the boundary
  geom::Points normals;  // outward unit normals
};

/// Deterministic area-weighted boundary sampling.
SurfaceSamples sample_surface_points(const PrimitiveShape& shape, int count, uint64_t seed);

}  // namespace unipr::synth
