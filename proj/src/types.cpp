#include "avk/types.hpp"

#include <cmath>

namespace avk {

int Skeleton::root() const {
  for (int i = 0; i < joint_count(); ++i)
    if (parent[i] < 0) return i;
  throw InputError("skeleton has no root");
}

std::vector<std::vector<int>> Skeleton::children() const {
  std::vector<std::vector<int>> ch(joint_count());
  for (int i = 0; i < joint_count(); ++i)
    if (parent[i] >= 0) ch[parent[i]].push_back(i);
  return ch;
}

void Skeleton::validate() const {
  const int J = joint_count();
  if (J < 2) throw InputError("skeleton needs at least 2 joints");
  if (rest_position.cols() != J) throw InputError("rest_position size mismatch");
  int roots = 0;
  for (int i = 0; i < J; ++i) {
    if (parent[i] < 0) {
      ++roots;
      continue;
    }
    if (parent[i] >= J) throw InputError("parent index out of range");
    // walk to the root; a cycle would loop longer than J steps
    int steps = 0, j = i;
    while (parent[j] >= 0) {
      j = parent[j];
      if (++steps > J) throw InputError("skeleton parent indices contain a cycle");
    }
    if ((rest_position.col(i) - rest_position.col(parent[i])).norm() <= 0)
      throw InputError("zero-length bone");
  }
  if (roots != 1) throw InputError("skeleton must have exactly one root");
}

void SkinWeights::validate(double tol) const {
  for (int v = 0; v < vertex_count(); ++v) {
    double sum = w.row(v).sum();
    if (std::abs(sum - 1.0) > tol)
      throw InputError("skin weight row does not sum to 1");
    if (w.row(v).minCoeff() < -tol || w.row(v).maxCoeff() > 1.0 + tol)
      throw InputError("skin weight entry outside [0,1]");
  }
}

void SkinnedMesh::validate() const {
  const int V = vertex_count();
  for (int f = 0; f < face_count(); ++f) {
    const auto tri = faces.col(f);
    if (tri.minCoeff() < 0 || tri.maxCoeff() >= V)
      throw InputError("face index out of range");
    if (tri[0] == tri[1] || tri[1] == tri[2] || tri[0] == tri[2])
      throw InputError("degenerate face");
  }
  if (!weights.empty() && weights.vertex_count() != V)
    throw InputError("weight row count does not match vertex count");
}

void Camera::validate() const {
  if (!(near_m > 0 && near_m < far_m)) throw InputError("camera requires 0 < near < far");
  if (width <= 0 || height <= 0) throw InputError("camera image size must be positive");
  if (!(fov_deg > 0 && fov_deg < 180)) throw InputError("camera fov must be in (0, 180)");
}

}  // namespace avk
