#pragma once

#include "avk/camera.hpp"
#include "avk/types.hpp"

namespace avk {

// Nearest keeps the closest surface per pixel; Farthest keeps the last one,
// which yields back-side maps on the same pixel grid as the front view.
enum class DepthOrder { Nearest, Farthest };

struct SoftMaskConfig {
  double kappa_px = 1.0;  // sigmoid sharpness
  double band_px = 3.0;   // half-width of the soft band around the silhouette
};

struct RenderedFrame {
  int width = 0, height = 0;
  Image<double> depth;        // optical-axis depth, 0 where uncovered
  Image<int> face_id;         // -1 where uncovered
  Image<double> bary;         // 3 channels, screen-space barycentrics
  Image<double> normal;       // 3 channels, unit camera-space normals
  Image<double> color;        // 3 channels, linear RGB
  Image<double> mask;         // soft coverage in [0, 1]
  // Silhouette routing for boundary gradients: nearest silhouette edge
  // (mesh vertex indices) and signed screen distance, band pixels only.
  Image<int> sil_v0, sil_v1;  // -1 outside the band
  Image<double> sil_dist;     // negative inside the silhouette

  bool covered(int x, int y) const { return face_id.at(x, y) >= 0; }
};

RenderedFrame rasterize(const SkinnedMesh& mesh, const Camera& camera,
                        DepthOrder order = DepthOrder::Nearest,
                        const SoftMaskConfig& soft = {});

// Normalized sigmoid band profile: 1 for d <= -band, 0 for d >= band,
// C0-continuous at the band edges.
double soft_mask_value(double d, const SoftMaskConfig& cfg = {});
double soft_mask_derivative(double d, const SoftMaskConfig& cfg = {});

// d(u,v)/d(world point) for the pinhole projection.
Eigen::Matrix<double, 2, 3> projection_jacobian(const CameraFrame& cam, const Vec3& world);

// Screen-space barycentrics of p in triangle (a, b, c) and their jacobian
// w.r.t. the stacked endpoint coordinates (ax, ay, bx, by, cx, cy).
Vec3 screen_barycentrics(const Vec2& p, const Vec2& a, const Vec2& b, const Vec2& c);
Eigen::Matrix<double, 3, 6> barycentric_jacobian(const Vec2& p, const Vec2& a,
                                                 const Vec2& b, const Vec2& c);

// Distance from p to segment [a, b] and its gradient w.r.t. (ax, ay, bx, by).
double point_segment_distance(const Vec2& p, const Vec2& a, const Vec2& b);
Eigen::Matrix<double, 1, 4> point_segment_distance_gradient(const Vec2& p, const Vec2& a,
                                                            const Vec2& b);

// Undirected mesh edges that bound the projected coverage region: boundary
// edges plus edges whose adjacent faces have opposite projected winding.
std::vector<std::pair<int, int>> silhouette_edges(const SkinnedMesh& mesh,
                                                  const CameraFrame& cam);

}  // namespace avk
