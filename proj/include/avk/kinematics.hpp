#pragma once

#include "avk/types.hpp"

namespace avk {

// World-from-rest rigid transforms for every joint. Each joint rotates about
// its rest position; local transforms compose root-to-leaf, so the zero pose
// maps to identity transforms exactly.
JointTransforms forward_kinematics(const Skeleton& skeleton, const Pose& pose);

// Global (root-to-leaf composed) transforms without the rest-pose pivot
// folding, i.e. G_i with T_i = G_i for the pivot convention used here.
// Exposed for pose-gradient computation.
struct FkCache {
  std::vector<RigidTransform> global;        // == world_from_rest per joint
  std::vector<RigidTransform> parent_global; // global of parent (identity+root translation for root)
};
FkCache forward_kinematics_cache(const Skeleton& skeleton, const Pose& pose);

Mat3 axis_angle_to_matrix(const Vec3& aa);
// Partial derivative of R(aa) with respect to component k of aa.
Mat3 axis_angle_jacobian(const Vec3& aa, int k);

}  // namespace avk
