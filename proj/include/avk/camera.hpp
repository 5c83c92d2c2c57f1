#pragma once

#include "avk/types.hpp"

namespace avk {

// Precomputed pinhole frame. Camera space is right-handed with x right,
// y up, z toward the viewer (looks along -z). Depth is distance along the
// optical axis (-z_cam). Image y grows downward; pixel (i,j) has its center
// at continuous coordinates (i+0.5, j+0.5).
struct CameraFrame {
  Camera cam;
  Mat3 R_cw;   // world -> camera rotation (rows: right, up, backward)
  Vec3 eye;
  double fx, fy, cx, cy;

  explicit CameraFrame(const Camera& c);

  Vec3 to_camera(const Vec3& world) const { return R_cw * (world - eye); }
  Vec3 to_world(const Vec3& camera) const { return R_cw.transpose() * camera + eye; }

  // Projects a camera-space point; returns (u, v, depth).
  Vec3 project_cam(const Vec3& pc) const {
    const double d = -pc.z();
    return Vec3(cx + fx * pc.x() / d, cy - fy * pc.y() / d, d);
  }
  Vec3 project(const Vec3& world) const { return project_cam(to_camera(world)); }

  // Inverse projection of pixel coordinates (u,v) at optical-axis depth d.
  Vec3 backproject(double u, double v, double depth) const {
    const Vec3 pc((u - cx) / fx * depth, -(v - cy) / fy * depth, -depth);
    return to_world(pc);
  }
};

}  // namespace avk
