#pragma once

#include "avk/types.hpp"

namespace avk {

// Exact distance from point to triangle (a,b,c); also returns the closest point.
double point_triangle_distance(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c,
                               Vec3* closest = nullptr);

// Median-split AABB tree over triangles. Supports nearest-triangle queries and
// ray-crossing parity for inside/outside classification.
class TriangleBvh {
 public:
  TriangleBvh(const Mat3X& vertices, const Faces& faces);

  struct Nearest {
    double distance = 0;
    int face = -1;
    Vec3 point = Vec3::Zero();
  };
  Nearest nearest(const Vec3& q) const;

  // Counts crossings of the ray q + t*dir, t > 0. Returns -1 on a numerically
  // degenerate hit (edge graze); callers should retry with a jittered ray.
  int ray_crossings(const Vec3& q, const Vec3& dir) const;

  // Robust parity sign: +1 outside, -1 inside; retries with jittered rays.
  int inside_sign(const Vec3& q, unsigned seed = 0) const;

  const Mat3X& vertices() const { return verts_; }
  const Faces& faces() const { return faces_; }

 private:
  struct Node {
    Vec3 lo, hi;
    int left = -1, right = -1;  // children, or -1 for leaf
    int begin = 0, end = 0;     // triangle index range for leaves
  };
  int build(int begin, int end, int depth);

  Mat3X verts_;
  Faces faces_;
  std::vector<int> order_;   // triangle permutation
  std::vector<Node> nodes_;
  std::vector<Vec3> centroid_;
};

}  // namespace avk
