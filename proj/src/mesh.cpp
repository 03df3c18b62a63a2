// SPDX-License-Identifier: Apache-2.0
#include "unipr/pasr/mesh.hpp"

#include <Eigen/Geometry>

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <set>
#include <stdexcept>

namespace unipr::pasr {

long TriMesh::euler_characteristic() const {
  std::set<std::pair<int, int>> edges;
  for (const auto& t : triangles)
    for (int e = 0; e < 3; ++e) {
      int a = t[e], b = t[(e + 1) % 3];
      edges.insert({std::min(a, b), std::max(a, b)});
    }
  return static_cast<long>(vertices.size()) - static_cast<long>(edges.size()) +
         static_cast<long>(triangles.size());
}

void TriMesh::transform(double scale, const Eigen::Vector3d& offset) {
  for (auto& v : vertices) v = v * scale + offset;
}

void save_obj(const TriMesh& mesh, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("save_obj: cannot open " + path);
  f.precision(9);
  for (const auto& v : mesh.vertices) f << "v " << v.x() << " " << v.y() << " " << v.z() << "\n";
  for (const auto& t : mesh.triangles)
    f << "f " << t[0] + 1 << " " << t[1] + 1 << " " << t[2] + 1 << "\n";
  if (!f) throw std::runtime_error("save_obj: write failed for " + path);
}

void save_stl(const TriMesh& mesh, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("save_stl: cannot open " + path);
  char header[80] = {0};
  std::snprintf(header, sizeof(header), "unipr binary stl");
  f.write(header, 80);
  const uint32_t count = static_cast<uint32_t>(mesh.triangles.size());
  f.write(reinterpret_cast<const char*>(&count), 4);
  for (const auto& t : mesh.triangles) {
    const Eigen::Vector3d& a = mesh.vertices[t[0]];
    const Eigen::Vector3d& b = mesh.vertices[t[1]];
    const Eigen::Vector3d& c = mesh.vertices[t[2]];
    Eigen::Vector3d n = (b - a).cross(c - a);
    const double len = n.norm();
    if (len > 0) n /= len;
    float buf[12] = {static_cast<float>(n.x()), static_cast<float>(n.y()), static_cast<float>(n.z()),
                     static_cast<float>(a.x()), static_cast<float>(a.y()), static_cast<float>(a.z()),
                     static_cast<float>(b.x()), static_cast<float>(b.y()), static_cast<float>(b.z()),
                     static_cast<float>(c.x()), static_cast<float>(c.y()), static_cast<float>(c.z())};
    f.write(reinterpret_cast<const char*>(buf), sizeof(buf));
    const uint16_t attr = 0;
    f.write(reinterpret_cast<const char*>(&attr), 2);
  }
  if (!f) throw std::runtime_error("save_stl: write failed for " + path);
}

namespace {

#include "marching_cubes_tables.inc"

// cube corner offsets and the edges that connect them (Bourke numbering)
constexpr int kCorner[8][3] = {{0, 0, 0}, {1, 0, 0}, {1, 1, 0}, {0, 1, 0},
                               {0, 0, 1}, {1, 0, 1}, {1, 1, 1}, {0, 1, 1}};
constexpr int kEdge[12][2] = {{0, 1}, {1, 2}, {2, 3}, {3, 0}, {4, 5}, {6, 5},
                              {6, 7}, {7, 4}, {0, 4}, {1, 5}, {2, 6}, {3, 7}};

}  // namespace

TriMesh marching_cubes(const std::vector<double>& values, int n, double iso) {
  if (n < 2) throw std::invalid_argument("marching_cubes: grid too small");
  if (values.size() != static_cast<size_t>(n) * n * n)
    throw std::invalid_argument("marching_cubes: value count mismatch");
  TriMesh mesh;
  auto value_at = [&](int x, int y, int z) {
    return values[(static_cast<size_t>(z) * n + y) * n + x];
  };
  auto coord = [&](int i) { return -1.0 + 2.0 * i / (n - 1); };
  // shared vertices: key = (corner linear index, corner linear index) of the edge
  std::map<std::pair<int64_t, int64_t>, int> edge_vertex;
  auto corner_id = [&](int x, int y, int z) {
    return (static_cast<int64_t>(z) * n + y) * n + x;
  };

  for (int z = 0; z + 1 < n; ++z)
    for (int y = 0; y + 1 < n; ++y)
      for (int x = 0; x + 1 < n; ++x) {
        double v[8];
        int cube = 0;
        for (int i = 0; i < 8; ++i) {
          v[i] = value_at(x + kCorner[i][0], y + kCorner[i][1], z + kCorner[i][2]);
          if (v[i] < iso) cube |= 1 << i;  // table convention: bits mark below-iso corners
        }
        const int8_t* tris = kTriTable[cube];
        if (tris[0] < 0) continue;
        int verts[12];
        for (int t = 0; tris[t] >= 0; ++t) {
          const int e = tris[t];
          const int a = kEdge[e][0], b = kEdge[e][1];
          const int ax = x + kCorner[a][0], ay = y + kCorner[a][1], az = z + kCorner[a][2];
          const int bx = x + kCorner[b][0], by = y + kCorner[b][1], bz = z + kCorner[b][2];
          const int64_t ia = corner_id(ax, ay, az), ib = corner_id(bx, by, bz);
          const std::pair<int64_t, int64_t> key{std::min(ia, ib), std::max(ia, ib)};
          auto it = edge_vertex.find(key);
          if (it == edge_vertex.end()) {
            const double fa = v[a], fb = v[b];
            double frac = std::abs(fb - fa) < 1e-12 ? 0.5 : (iso - fa) / (fb - fa);
            frac = std::clamp(frac, 0.0, 1.0);
            Eigen::Vector3d pa{coord(ax), coord(ay), coord(az)};
            Eigen::Vector3d pb{coord(bx), coord(by), coord(bz)};
            mesh.vertices.push_back(pa + frac * (pb - pa));
            it = edge_vertex.emplace(key, static_cast<int>(mesh.vertices.size()) - 1).first;
          }
          verts[t] = it->second;
          if (t % 3 == 2)
            mesh.triangles.push_back({verts[t - 2], verts[t - 1], verts[t]});
        }
      }
  return mesh;
}

}  // namespace unipr::pasr
