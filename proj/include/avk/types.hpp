#pragma once

#include <Eigen/Dense>
#include <stdexcept>
#include <string>
#include <vector>

namespace avk {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Mat3X = Eigen::Matrix3Xd;  // columns are points / per-joint vectors
using Faces = Eigen::Matrix3Xi;  // columns are triangles
using MatX = Eigen::MatrixXd;
using VecX = Eigen::VectorXd;

struct InputError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct NumericalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Rigid transform x -> R*x + t.
struct RigidTransform {
  Mat3 R = Mat3::Identity();
  Vec3 t = Vec3::Zero();

  Vec3 apply(const Vec3& x) const { return R * x + t; }
  RigidTransform inverse() const { return {R.transpose(), -(R.transpose() * t)}; }
  RigidTransform operator*(const RigidTransform& o) const {
    return {R * o.R, R * o.t + t};
  }
  static RigidTransform Identity() { return {}; }
  static RigidTransform Translation(const Vec3& t) { return {Mat3::Identity(), t}; }
};

struct Skeleton {
  std::vector<int> parent;             // -1 marks the root
  Mat3X rest_position;                 // 3 x J, meters
  std::vector<std::string> name;

  int joint_count() const { return static_cast<int>(parent.size()); }
  int root() const;
  // Children sorted by joint index.
  std::vector<std::vector<int>> children() const;
  // Throws InputError unless parents form a single-rooted tree with J >= 2
  // and every bone has nonzero length.
  void validate() const;
};

struct Pose {
  Mat3X theta;                         // 3 x J axis-angle, radians
  Vec3 root_translation = Vec3::Zero();

  int joint_count() const { return static_cast<int>(theta.cols()); }
  static Pose Rest(int joints) {
    Pose p;
    p.theta = Mat3X::Zero(3, joints);
    return p;
  }
};

struct JointTransforms {
  std::vector<RigidTransform> world_from_rest;

  int joint_count() const { return static_cast<int>(world_from_rest.size()); }
};

struct SkinWeights {
  MatX w;  // V x J, rows on the probability simplex

  int vertex_count() const { return static_cast<int>(w.rows()); }
  int joint_count() const { return static_cast<int>(w.cols()); }
  bool empty() const { return w.size() == 0; }
  void validate(double tol = 1e-5) const;
};

enum class SpaceTag { Canonical, Posed };

struct SkinnedMesh {
  Mat3X vertices;    // 3 x V
  Faces faces;       // 3 x F
  Mat3X colors;      // 3 x V linear RGB in [0,1], or empty
  SkinWeights weights;  // optional
  SpaceTag space = SpaceTag::Canonical;

  int vertex_count() const { return static_cast<int>(vertices.cols()); }
  int face_count() const { return static_cast<int>(faces.cols()); }
  bool has_colors() const { return colors.cols() == vertices.cols() && vertices.cols() > 0; }
  bool has_weights() const { return weights.w.rows() == vertices.cols() && vertices.cols() > 0; }
  // Face indices in range, no degenerate face, weight rows match vertices.
  void validate() const;
};

struct Camera {
  double fov_deg = 52.0;  // vertical field of view
  Vec3 eye = Vec3(0, 0, 3);
  Vec3 look_at = Vec3::Zero();
  Vec3 up = Vec3(0, 1, 0);
  int width = 512;
  int height = 512;
  double near_m = 0.1;
  double far_m = 10.0;

  void validate() const;
};

// Simple planar image, channel-interleaved, (x, y) with y = 0 the top row.
template <typename T>
struct Image {
  int width = 0, height = 0, channels = 1;
  std::vector<T> data;

  Image() = default;
  Image(int w, int h, int c, T fill = T(0))
      : width(w), height(h), channels(c), data(static_cast<size_t>(w) * h * c, fill) {}
  T& at(int x, int y, int c = 0) {
    return data[(static_cast<size_t>(y) * width + x) * channels + c];
  }
  const T& at(int x, int y, int c = 0) const {
    return data[(static_cast<size_t>(y) * width + x) * channels + c];
  }
  bool empty() const { return data.empty(); }
  size_t pixel_count() const { return static_cast<size_t>(width) * height; }
};

using ImageF = Image<float>;
using ImageU8 = Image<unsigned char>;
using ImageU16 = Image<unsigned short>;

}  // namespace avk
