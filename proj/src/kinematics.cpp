#include "avk/kinematics.hpp"

#include <Eigen/Geometry>
#include <cmath>

namespace avk {

Mat3 axis_angle_to_matrix(const Vec3& aa) {
  const double angle = aa.norm();
  if (angle < 1e-12) {
    // second-order expansion keeps the zero pose exact and gradients smooth
    Mat3 K;
    K << 0, -aa.z(), aa.y(), aa.z(), 0, -aa.x(), -aa.y(), aa.x(), 0;
    return Mat3::Identity() + K + 0.5 * K * K;
  }
  return Eigen::AngleAxisd(angle, aa / angle).toRotationMatrix();
}

static Mat3 skew(const Vec3& v) {
  Mat3 K;
  K << 0, -v.z(), v.y(), v.z(), 0, -v.x(), -v.y(), v.x(), 0;
  return K;
}

Mat3 axis_angle_jacobian(const Vec3& aa, int k) {
  // Gallego & Yezzi, "A compact formula for the derivative of a 3-D rotation
  // in exponential coordinates".
  const double n2 = aa.squaredNorm();
  const Vec3 e = Vec3::Unit(k);
  if (n2 < 1e-16) return skew(e);
  const Mat3 R = axis_angle_to_matrix(aa);
  const Vec3 cross = aa.cross((Mat3::Identity() - R) * e);
  return (aa[k] * skew(aa) + skew(cross)) * R / n2;
}

FkCache forward_kinematics_cache(const Skeleton& skeleton, const Pose& pose) {
  const int J = skeleton.joint_count();
  if (pose.joint_count() != J)
    throw InputError("pose joint count does not match skeleton");
  FkCache cache;
  cache.global.resize(J);
  cache.parent_global.resize(J);
  // topological order (parents before children); joint indices may be arbitrary
  std::vector<int> order;
  order.reserve(J);
  order.push_back(skeleton.root());
  const auto children = skeleton.children();
  for (size_t h = 0; h < order.size(); ++h)
    for (int c : children[order[h]]) order.push_back(c);
  for (int i : order) {
    const Vec3 c = skeleton.rest_position.col(i);
    // rotation about the joint's rest position
    RigidTransform local;
    local.R = axis_angle_to_matrix(pose.theta.col(i));
    local.t = c - local.R * c;
    RigidTransform parent;
    if (skeleton.parent[i] < 0) {
      parent = RigidTransform::Translation(pose.root_translation);
    } else {
      parent = cache.global[skeleton.parent[i]];
    }
    cache.parent_global[i] = parent;
    cache.global[i] = parent * local;
  }
  return cache;
}

JointTransforms forward_kinematics(const Skeleton& skeleton, const Pose& pose) {
  FkCache cache = forward_kinematics_cache(skeleton, pose);
  JointTransforms out;
  out.world_from_rest = std::move(cache.global);
  return out;
}

}  // namespace avk
