#pragma once

#include "avk/types.hpp"

namespace avk {

// Weight-blended affine transform sum_i w_i T_i for one point.
struct BlendedTransform {
  Mat3 A = Mat3::Identity();
  Vec3 b = Vec3::Zero();

  Vec3 apply(const Vec3& x) const { return A * x + b; }
};

BlendedTransform blend_transforms(const Eigen::Ref<const Eigen::RowVectorXd>& w,
                                  const JointTransforms& transforms);

// x^p = (sum_i w_i T_i) x^c applied per point.
Mat3X lbs_forward(const Mat3X& points, const SkinWeights& weights,
                  const JointTransforms& transforms);

struct InverseSkinResult {
  Mat3X points;              // canonical positions; flagged points keep input
  std::vector<char> failed;  // 1 where the blended transform was near-singular
  int failure_count = 0;
};

// x^c = (sum_i w_i T_i)^-1 x^p. Points whose blended linear part has
// condition number above cond_threshold are flagged and left at the input.
InverseSkinResult lbs_inverse(const Mat3X& points, const SkinWeights& weights,
                              const JointTransforms& transforms,
                              double cond_threshold = 1e8);

// Uniform-grid nearest-point index. brute_force mode is the testing oracle.
class NearestVertex {
 public:
  explicit NearestVertex(const Mat3X& points, bool brute_force = false);
  // Index of the Euclidean-nearest point; ties broken by lowest index.
  int query(const Vec3& q) const;
  // Squared distance to the nearest point.
  double query_dist2(const Vec3& q) const;
  // True when some point lies strictly within `radius`; stops at the first
  // hit and never searches past `radius`, unlike the full nearest query.
  bool any_within(const Vec3& q, double radius) const;

 private:
  int query_impl(const Vec3& q, double* d2) const;
  Mat3X pts_;
  bool brute_;
  Vec3 origin_;
  double cell_ = 1;
  int nx_ = 0, ny_ = 0, nz_ = 0;
  std::vector<std::vector<int>> cells_;
  int cell_index(int ix, int iy, int iz) const { return (iz * ny_ + iy) * nx_ + ix; }
};

// Each query point takes the weight row of its nearest reference vertex.
SkinWeights transfer_weights_nearest(const Mat3X& query, const SkinnedMesh& reference,
                                     bool brute_force = false);

}  // namespace avk
