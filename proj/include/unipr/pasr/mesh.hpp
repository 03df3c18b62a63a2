// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace unipr::pasr {

struct TriMesh {
  std::vector<Eigen::Vector3d> vertices;
  std::vector<std::array<int, 3>> triangles;

  bool empty() const { return triangles.empty(); }

  /// V - E + F over unique undirected edges.
  long euler_characteristic() const;

  void transform(double scale, const Eigen::Vector3d& offset);
};

void save_obj(const TriMesh& mesh, const std::string& path);
void save_stl(const TriMesh& mesh, const std::string& path);  // binary STL

/// Marching cubes over a scalar field sampled on an n^3 corner grid spanning
/// [-1,1]^3. `values` is indexed as ((z * n) + y) * n + x.
TriMesh marching_cubes(const std::vector<double>& values, int n, double iso);

}  // namespace unipr::pasr
