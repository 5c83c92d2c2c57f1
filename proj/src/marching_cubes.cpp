#include "avk/marching_cubes.hpp"

#include <cstdint>
#include <unordered_map>

namespace avk {

#include "mc_tables.inl"

namespace {
// Bourke corner layout
const int kCorner[8][3] = {{0, 0, 0}, {1, 0, 0}, {1, 1, 0}, {0, 1, 0},
                           {0, 0, 1}, {1, 0, 1}, {1, 1, 1}, {0, 1, 1}};
const int kEdgeCorners[12][2] = {{0, 1}, {1, 2}, {2, 3}, {3, 0}, {4, 5}, {5, 6},
                                 {6, 7}, {7, 4}, {0, 4}, {1, 5}, {2, 6}, {3, 7}};
}  // namespace

SkinnedMesh marching_cubes(const std::vector<float>& values, int nx, int ny, int nz,
                           const Vec3& origin, double voxel, double iso) {
  if (static_cast<size_t>(nx) * ny * nz != values.size())
    throw InputError("marching_cubes: dims do not match value count");
  auto sample = [&](int x, int y, int z) -> double {
    return values[(static_cast<size_t>(z) * ny + y) * nx + x];
  };
  std::vector<Vec3> verts;
  std::vector<int> tris;
  // key: canonical grid-edge id -> vertex index
  std::unordered_map<uint64_t, int> edge_vertex;
  auto edge_key = [&](int x, int y, int z, int axis) -> uint64_t {
    return ((static_cast<uint64_t>(z) * ny + y) * nx + x) * 3 + axis;
  };
  bool any_cross = false;
  for (int z = 0; z < nz - 1; ++z)
    for (int y = 0; y < ny - 1; ++y)
      for (int x = 0; x < nx - 1; ++x) {
        double val[8];
        int cube = 0;
        for (int c = 0; c < 8; ++c) {
          val[c] = sample(x + kCorner[c][0], y + kCorner[c][1], z + kCorner[c][2]);
          if (val[c] < iso) cube |= 1 << c;
        }
        if (kEdgeTable[cube] == 0) continue;
        any_cross = true;
        int edge_v[12];
        for (int e = 0; e < 12; ++e) {
          if (!(kEdgeTable[cube] & (1 << e))) continue;
          const int c0 = kEdgeCorners[e][0], c1 = kEdgeCorners[e][1];
          const int gx = x + kCorner[c0][0], gy = y + kCorner[c0][1], gz = z + kCorner[c0][2];
          const int hx = x + kCorner[c1][0], hy = y + kCorner[c1][1], hz = z + kCorner[c1][2];
          // canonical edge id from the lower corner and the axis
          int axis = (hx != gx) ? 0 : (hy != gy) ? 1 : 2;
          const int lx = std::min(gx, hx), ly = std::min(gy, hy), lz = std::min(gz, hz);
          const uint64_t key = edge_key(lx, ly, lz, axis);
          auto it = edge_vertex.find(key);
          if (it == edge_vertex.end()) {
            const double v0 = val[c0], v1 = val[c1];
            double t = (std::abs(v1 - v0) < 1e-30) ? 0.5 : (iso - v0) / (v1 - v0);
            t = std::clamp(t, 0.0, 1.0);
            const Vec3 p0 = origin + voxel * Vec3(gx, gy, gz);
            const Vec3 p1 = origin + voxel * Vec3(hx, hy, hz);
            verts.push_back(p0 + t * (p1 - p0));
            it = edge_vertex.emplace(key, static_cast<int>(verts.size() - 1)).first;
          }
          edge_v[e] = it->second;
        }
        for (int t = 0; kTriTable[cube][t] != -1; t += 3) {
          const int a = edge_v[kTriTable[cube][t]];
          const int b = edge_v[kTriTable[cube][t + 1]];
          const int c = edge_v[kTriTable[cube][t + 2]];
          if (a == b || b == c || a == c) continue;  // collapsed on a corner
          // table winding faces inward for negative-inside fields; swap two
          // indices so normals point out of the surface
          tris.push_back(a);
          tris.push_back(c);
          tris.push_back(b);
        }
      }
  if (!any_cross) throw NumericalError("marching_cubes: no zero crossing in grid");
  SkinnedMesh mesh;
  mesh.vertices.resize(3, verts.size());
  for (size_t i = 0; i < verts.size(); ++i) mesh.vertices.col(i) = verts[i];
  mesh.faces.resize(3, tris.size() / 3);
  for (size_t f = 0; f < tris.size() / 3; ++f)
    mesh.faces.col(f) << tris[3 * f], tris[3 * f + 1], tris[3 * f + 2];
  return mesh;
}

}  // namespace avk
