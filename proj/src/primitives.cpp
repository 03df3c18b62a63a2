// SPDX-License-Identifier: Apache-2.0
#include "unipr/synth/primitives.hpp"

#include <cmath>

#include "unipr/rng.hpp"

namespace unipr::synth {

std::string kind_name(ShapeKind k) {
  switch (k) {
    case ShapeKind::sphere: return "sphere";
    case ShapeKind::box: return "box";
    case ShapeKind::cylinder: return "cylinder";
    case ShapeKind::ellipsoid: return "ellipsoid";
    case ShapeKind::capsule: return "capsule";
  }
  throw std::logic_error("kind_name: bad kind");
}

ShapeKind kind_from_name(const std::string& name) {
  if (name == "sphere") return ShapeKind::sphere;
  if (name == "box") return ShapeKind::box;
  if (name == "cylinder") return ShapeKind::cylinder;
  if (name == "ellipsoid") return ShapeKind::ellipsoid;
  if (name == "capsule") return ShapeKind::capsule;
  throw std::invalid_argument("kind_from_name: unknown kind " + name);
}

namespace {

int param_count(ShapeKind k) {
  switch (k) {
    case ShapeKind::sphere: return 1;
    case ShapeKind::box:
    case ShapeKind::ellipsoid: return 3;
    case ShapeKind::cylinder:
    case ShapeKind::capsule: return 2;
  }
  return 0;
}

}  // namespace

void PrimitiveShape::validate() const {
  for (int i = 0; i < param_count(kind); ++i)
    if (!(params[i] > 0)) throw std::invalid_argument("PrimitiveShape: dimensions must be positive");
  if (bounding_radius() > 1.0 + 1e-9)
    throw std::invalid_argument("PrimitiveShape: shape exceeds the unit ball");
}

double PrimitiveShape::bounding_radius() const {
  switch (kind) {
    case ShapeKind::sphere: return params[0];
    case ShapeKind::box: return params.norm();
    case ShapeKind::cylinder: return std::hypot(params[0], params[1]);
    case ShapeKind::ellipsoid: return params.maxCoeff();
    case ShapeKind::capsule: return params[0] + params[1];
  }
  throw std::logic_error("bounding_radius: bad kind");
}

PrimitiveShape PrimitiveShape::normalized(ShapeKind kind, const Eigen::Vector3d& raw) {
  PrimitiveShape s;
  s.kind = kind;
  s.params = raw;
  for (int i = param_count(kind); i < 3; ++i) s.params[i] = 0;
  const double r = s.bounding_radius();
  if (!(r > 0)) throw std::invalid_argument("PrimitiveShape::normalized: degenerate dimensions");
  for (int i = 0; i < param_count(kind); ++i) s.params[i] /= r;
  s.validate();
  return s;
}

Difficulty shape_difficulty(const PrimitiveShape& shape) {
  switch (shape.kind) {
    case ShapeKind::sphere: return Difficulty::easy;
    case ShapeKind::ellipsoid: {
      double lo = shape.params.minCoeff(), hi = shape.params.maxCoeff();
      return hi / lo > 2.5 ? Difficulty::hard : Difficulty::easy;
    }
    case ShapeKind::box:
    case ShapeKind::cylinder: return Difficulty::medium;
    case ShapeKind::capsule: return Difficulty::hard;
  }
  throw std::logic_error("shape_difficulty: bad kind");
}

std::string difficulty_name(Difficulty d) {
  switch (d) {
    case Difficulty::easy: return "easy";
    case Difficulty::medium: return "medium";
    case Difficulty::hard: return "hard";
  }
  throw std::logic_error("difficulty_name: bad value");
}

std::vector<uint8_t> analytic_occupancy(const PrimitiveShape& shape, const geom::Points& queries) {
  shape.validate();
  const auto n = queries.rows();
  std::vector<uint8_t> inside(n, 0);
  const double a = shape.params[0], b = shape.params[1], c = shape.params[2];
  for (Eigen::Index i = 0; i < n; ++i) {
    const double x = queries(i, 0), y = queries(i, 1), z = queries(i, 2);
    bool in = false;
    switch (shape.kind) {
      case ShapeKind::sphere:
        in = x * x + y * y + z * z <= a * a;
        break;
      case ShapeKind::box:
        in = std::abs(x) <= a && std::abs(y) <= b && std::abs(z) <= c;
        break;
      case ShapeKind::cylinder:
        in = x * x + y * y <= a * a && std::abs(z) <= b;
        break;
      case ShapeKind::ellipsoid: {
        const double k = (x / a) * (x / a) + (y / b) * (y / b) + (z / c) * (z / c);
        in = k <= 1.0;
        break;
      }
      case ShapeKind::capsule: {
        const double q = std::clamp(z, -b, b);
        in = x * x + y * y + (z - q) * (z - q) <= a * a;
        break;
      }
    }
    inside[i] = in ? 1 : 0;
  }
  return inside;
}

namespace {

Eigen::Vector3d unit_dir(Rng& rng) {
  Eigen::Vector3d d = rng.normal3();
  double n = d.norm();
  while (n < 1e-12) {
    d = rng.normal3();
    n = d.norm();
  }
  return d / n;
}

}  // namespace

SurfaceSamples sample_surface_points(const PrimitiveShape& shape, int count, uint64_t seed) {
  shape.validate();
  if (count < 1) throw std::invalid_argument("sample_surface_points: count must be >= 1");
  Rng rng(seed);
  SurfaceSamples out;
  out.points.resize(count, 3);
  out.normals.resize(count, 3);
  const double a = shape.params[0], b = shape.params[1], c = shape.params[2];

  for (int i = 0; i < count; ++i) {
    Eigen::Vector3d p, n;
    switch (shape.kind) {
      case ShapeKind::sphere: {
        n = unit_dir(rng);
        p = a * n;
        break;
      }
      case ShapeKind::box: {
        // face picked by area: x faces have area 4*b*c each, etc.
        const double ax = b * c, ay = a * c, az = a * b;
        const double total = 2 * (ax + ay + az);
        double pick = rng.uniform() * total;
        int axis = 0;
        double sign = 1;
        if (pick < 2 * ax) {
          axis = 0;
          sign = pick < ax ? 1 : -1;
        } else if (pick < 2 * ax + 2 * ay) {
          axis = 1;
          sign = pick < 2 * ax + ay ? 1 : -1;
        } else {
          axis = 2;
          sign = pick < 2 * ax + 2 * ay + az ? 1 : -1;
        }
        const Eigen::Vector3d h{a, b, c};
        p = {rng.uniform(-a, a), rng.uniform(-b, b), rng.uniform(-c, c)};
        p[axis] = sign * h[axis];
        n = Eigen::Vector3d::Zero();
        n[axis] = sign;
        break;
      }
      case ShapeKind::cylinder: {
        const double side = 2 * M_PI * a * 2 * b;
        const double cap = M_PI * a * a;
        double pick = rng.uniform() * (side + 2 * cap);
        if (pick < side) {
          const double t = rng.uniform(0, 2 * M_PI);
          p = {a * std::cos(t), a * std::sin(t), rng.uniform(-b, b)};
          n = {std::cos(t), std::sin(t), 0};
        } else {
          const double sign = pick < side + cap ? 1 : -1;
          const double r = a * std::sqrt(rng.uniform());
          const double t = rng.uniform(0, 2 * M_PI);
          p = {r * std::cos(t), r * std::sin(t), sign * b};
          n = {0, 0, sign};
        }
        break;
      }
      case ShapeKind::ellipsoid: {
        // map a uniform sphere direction through the ellipsoid, rejecting
        // by the area element so the density is uniform over the surface
        const double jmax = a * b * c / shape.params.minCoeff();
        while (true) {
          const Eigen::Vector3d d = unit_dir(rng);
          const double j = a * b * c *
                           std::sqrt((d.x() / a) * (d.x() / a) + (d.y() / b) * (d.y() / b) +
                                     (d.z() / c) * (d.z() / c));
          if (rng.uniform() * jmax <= j) {
            p = {a * d.x(), b * d.y(), c * d.z()};
            n = Eigen::Vector3d{p.x() / (a * a), p.y() / (b * b), p.z() / (c * c)}.normalized();
            break;
          }
        }
        break;
      }
      case ShapeKind::capsule: {
        const double side = 2 * M_PI * a * 2 * b;
        const double hemis = 4 * M_PI * a * a;
        double pick = rng.uniform() * (side + hemis);
        if (pick < side) {
          const double t = rng.uniform(0, 2 * M_PI);
          p = {a * std::cos(t), a * std::sin(t), rng.uniform(-b, b)};
          n = {std::cos(t), std::sin(t), 0};
        } else {
          Eigen::Vector3d d = unit_dir(rng);
          const double sign = pick < side + hemis / 2 ? 1 : -1;
          if (d.z() * sign < 0) d.z() = -d.z();
          p = a * d + Eigen::Vector3d{0, 0, sign * b};
          n = d;
        }
        break;
      }
    }
    out.points.row(i) = p.transpose();
    out.normals.row(i) = n.transpose();
  }
  return out;
}

}  // namespace unipr::synth
