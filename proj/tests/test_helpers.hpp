#pragma once

#include <cmath>
#include <random>

#include "avk/mesh_utils.hpp"
#include "avk/types.hpp"

namespace avk::testing {

inline SkinnedMesh make_cube(double half = 1.0, const Vec3& center = Vec3::Zero()) {
  SkinnedMesh m;
  m.vertices.resize(3, 8);
  int v = 0;
  for (int z = 0; z < 2; ++z)
    for (int y = 0; y < 2; ++y)
      for (int x = 0; x < 2; ++x)
        m.vertices.col(v++) = center + half * Vec3(2 * x - 1, 2 * y - 1, 2 * z - 1);
  // face-center fan triangulation: symmetric, so every corner accumulates
  // equal area per adjacent face plane
  const int quads[6][4] = {{1, 3, 7, 5}, {0, 4, 6, 2}, {2, 6, 7, 3},
                           {0, 1, 5, 4}, {4, 5, 7, 6}, {0, 2, 3, 1}};
  m.vertices.conservativeResize(3, 14);
  m.faces.resize(3, 24);
  int nf = 0;
  for (int q = 0; q < 6; ++q) {
    const int center = 8 + q;
    Vec3 c = Vec3::Zero();
    for (int k = 0; k < 4; ++k) c += m.vertices.col(quads[q][k]);
    m.vertices.col(center) = c / 4.0;
    for (int k = 0; k < 4; ++k)
      m.faces.col(nf++) << quads[q][k], quads[q][(k + 1) % 4], center;
  }
  return m;
}

inline SkinnedMesh make_icosphere(int subdivisions = 3, double radius = 1.0,
                                  const Vec3& center = Vec3::Zero()) {
  const double t = (1.0 + std::sqrt(5.0)) / 2.0;
  SkinnedMesh m;
  const double raw[12][3] = {{-1, t, 0}, {1, t, 0},  {-1, -t, 0}, {1, -t, 0},
                             {0, -1, t}, {0, 1, t},  {0, -1, -t}, {0, 1, -t},
                             {t, 0, -1}, {t, 0, 1},  {-t, 0, -1}, {-t, 0, 1}};
  m.vertices.resize(3, 12);
  for (int i = 0; i < 12; ++i)
    m.vertices.col(i) = Vec3(raw[i][0], raw[i][1], raw[i][2]).normalized();
  const int f[20][3] = {{0, 11, 5}, {0, 5, 1},  {0, 1, 7},   {0, 7, 10}, {0, 10, 11},
                        {1, 5, 9},  {5, 11, 4}, {11, 10, 2}, {10, 7, 6}, {7, 1, 8},
                        {3, 9, 4},  {3, 4, 2},  {3, 2, 6},   {3, 6, 8},  {3, 8, 9},
                        {4, 9, 5},  {2, 4, 11}, {6, 2, 10},  {8, 6, 7},  {9, 8, 1}};
  m.faces.resize(3, 20);
  for (int i = 0; i < 20; ++i) m.faces.col(i) << f[i][0], f[i][1], f[i][2];
  for (int s = 0; s < subdivisions; ++s) {
    m = subdivide_midpoint(m);
    for (int v = 0; v < m.vertex_count(); ++v) m.vertices.col(v).normalize();
  }
  for (int v = 0; v < m.vertex_count(); ++v)
    m.vertices.col(v) = center + radius * m.vertices.col(v);
  return m;
}

inline Skeleton make_chain(int joints, const Vec3& step = Vec3(0, 1, 0)) {
  Skeleton s;
  s.parent.resize(joints);
  s.rest_position.resize(3, joints);
  for (int i = 0; i < joints; ++i) {
    s.parent[i] = i - 1;
    s.rest_position.col(i) = step * i;
    s.name.push_back("j" + std::to_string(i));
  }
  return s;
}

inline Pose random_pose(int joints, double amplitude, std::mt19937& rng) {
  std::uniform_real_distribution<double> uni(-amplitude, amplitude);
  Pose p = Pose::Rest(joints);
  for (int j = 0; j < joints; ++j)
    for (int k = 0; k < 3; ++k) p.theta(k, j) = uni(rng);
  return p;
}

}  // namespace avk::testing
