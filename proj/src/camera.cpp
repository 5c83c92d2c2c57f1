#include "avk/camera.hpp"

#include <cmath>

namespace avk {

CameraFrame::CameraFrame(const Camera& c) : cam(c), eye(c.eye) {
  c.validate();
  const Vec3 backward = (c.eye - c.look_at).normalized();
  Vec3 right = c.up.cross(backward);
  if (right.norm() < 1e-9) throw InputError("camera up parallel to view direction");
  right.normalize();
  const Vec3 up = backward.cross(right);
  R_cw.row(0) = right.transpose();
  R_cw.row(1) = up.transpose();
  R_cw.row(2) = backward.transpose();
  const double f = (c.height / 2.0) / std::tan(c.fov_deg * M_PI / 180.0 / 2.0);
  fx = fy = f;
  cx = c.width / 2.0;
  cy = c.height / 2.0;
}

}  // namespace avk
