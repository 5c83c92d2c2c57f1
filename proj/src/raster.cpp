#include "avk/raster.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "avk/mesh_utils.hpp"

namespace avk {

namespace {

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

double projected_area2(const Vec2& a, const Vec2& b, const Vec2& c) {
  return (b.x() - a.x()) * (c.y() - a.y()) - (b.y() - a.y()) * (c.x() - a.x());
}

}  // namespace

double soft_mask_value(double d, const SoftMaskConfig& cfg) {
  if (d <= -cfg.band_px) return 1.0;
  if (d >= cfg.band_px) return 0.0;
  const double lo = sigmoid(-cfg.band_px / cfg.kappa_px);
  const double hi = sigmoid(cfg.band_px / cfg.kappa_px);
  return (sigmoid(-d / cfg.kappa_px) - lo) / (hi - lo);
}

double soft_mask_derivative(double d, const SoftMaskConfig& cfg) {
  if (d <= -cfg.band_px || d >= cfg.band_px) return 0.0;
  const double lo = sigmoid(-cfg.band_px / cfg.kappa_px);
  const double hi = sigmoid(cfg.band_px / cfg.kappa_px);
  const double s = sigmoid(-d / cfg.kappa_px);
  return -s * (1.0 - s) / (cfg.kappa_px * (hi - lo));
}

Eigen::Matrix<double, 2, 3> projection_jacobian(const CameraFrame& cam, const Vec3& world) {
  const Vec3 pc = cam.to_camera(world);
  const double d = -pc.z();
  Eigen::Matrix<double, 2, 3> duv_dpc;
  duv_dpc << cam.fx / d, 0, cam.fx * pc.x() / (d * d),
             0, -cam.fy / d, -cam.fy * pc.y() / (d * d);
  return duv_dpc * cam.R_cw;
}

Vec3 screen_barycentrics(const Vec2& p, const Vec2& a, const Vec2& b, const Vec2& c) {
  const double area = projected_area2(a, b, c);
  return Vec3(projected_area2(p, b, c), projected_area2(a, p, c),
              projected_area2(a, b, p)) /
         area;
}

Eigen::Matrix<double, 3, 6> barycentric_jacobian(const Vec2& p, const Vec2& a,
                                                 const Vec2& b, const Vec2& c) {
  const double area = projected_area2(a, b, c);
  const Vec3 w = screen_barycentrics(p, a, b, c);
  // d area2(a,b,c) / d endpoints
  Eigen::Matrix<double, 1, 6> dA;
  dA << b.y() - c.y(), c.x() - b.x(), c.y() - a.y(), a.x() - c.x(),
        a.y() - b.y(), b.x() - a.x();
  // numerators: N0 = area2(p,b,c), N1 = area2(a,p,c), N2 = area2(a,b,p)
  Eigen::Matrix<double, 3, 6> dN = Eigen::Matrix<double, 3, 6>::Zero();
  dN.row(0) << 0, 0, c.y() - p.y(), p.x() - c.x(), p.y() - b.y(), b.x() - p.x();
  dN.row(1) << p.y() - c.y(), c.x() - p.x(), 0, 0, a.y() - p.y(), p.x() - a.x();
  dN.row(2) << b.y() - p.y(), p.x() - b.x(), p.y() - a.y(), a.x() - p.x(), 0, 0;
  return (dN - w * dA) / area;
}

double point_segment_distance(const Vec2& p, const Vec2& a, const Vec2& b) {
  const Vec2 ab = b - a;
  const double len2 = ab.squaredNorm();
  double t = len2 > 0 ? (p - a).dot(ab) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  return (p - (a + t * ab)).norm();
}

Eigen::Matrix<double, 1, 4> point_segment_distance_gradient(const Vec2& p, const Vec2& a,
                                                            const Vec2& b) {
  const Vec2 ab = b - a;
  const double len2 = ab.squaredNorm();
  double t = len2 > 0 ? (p - a).dot(ab) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  const Vec2 q = a + t * ab;
  const double dist = (p - q).norm();
  Eigen::Matrix<double, 1, 4> g = Eigen::Matrix<double, 1, 4>::Zero();
  if (dist < 1e-12) return g;
  const Vec2 dir = (q - p) / dist;  // d dist / d q
  // q depends on the endpoints directly and, at interior t, also through t;
  // the t-term vanishes because dq/dt = ab is orthogonal to (q - p) there.
  g(0) = dir.x() * (1 - t);
  g(1) = dir.y() * (1 - t);
  g(2) = dir.x() * t;
  g(3) = dir.y() * t;
  return g;
}

std::vector<std::pair<int, int>> silhouette_edges(const SkinnedMesh& mesh,
                                                  const CameraFrame& cam) {
  std::vector<Vec2> uv(mesh.vertex_count());
  for (int v = 0; v < mesh.vertex_count(); ++v)
    uv[v] = cam.project(mesh.vertices.col(v)).head<2>();
  // edge -> winding signs of adjacent non-degenerate faces
  std::map<std::pair<int, int>, std::vector<int>> adj;
  for (int f = 0; f < mesh.face_count(); ++f) {
    const int i0 = mesh.faces(0, f), i1 = mesh.faces(1, f), i2 = mesh.faces(2, f);
    const double area = projected_area2(uv[i0], uv[i1], uv[i2]);
    if (std::abs(area) < 1e-12) continue;
    const int s = area > 0 ? 1 : -1;
    const int e[3][2] = {{i0, i1}, {i1, i2}, {i2, i0}};
    for (auto& ed : e)
      adj[{std::min(ed[0], ed[1]), std::max(ed[0], ed[1])}].push_back(s);
  }
  std::vector<std::pair<int, int>> out;
  for (const auto& [edge, signs] : adj)
    if (signs.size() == 1 || (signs.size() == 2 && signs[0] != signs[1]))
      out.push_back(edge);
  return out;
}

RenderedFrame rasterize(const SkinnedMesh& mesh, const Camera& camera, DepthOrder order,
                        const SoftMaskConfig& soft) {
  if (mesh.vertex_count() == 0 || mesh.face_count() == 0)
    throw InputError("rasterize: empty mesh");
  camera.validate();
  const CameraFrame cam(camera);
  const int W = camera.width, H = camera.height;

  RenderedFrame out;
  out.width = W;
  out.height = H;
  out.depth = Image<double>(W, H, 1, 0.0);
  out.face_id = Image<int>(W, H, 1, -1);
  out.bary = Image<double>(W, H, 3, 0.0);
  out.normal = Image<double>(W, H, 3, 0.0);
  out.color = Image<double>(W, H, 3, 0.0);
  out.mask = Image<double>(W, H, 1, 0.0);
  out.sil_v0 = Image<int>(W, H, 1, -1);
  out.sil_v1 = Image<int>(W, H, 1, -1);
  out.sil_dist = Image<double>(W, H, 1, 0.0);

  std::vector<Vec3> proj(mesh.vertex_count());  // (u, v, depth)
  for (int v = 0; v < mesh.vertex_count(); ++v)
    proj[v] = cam.project(mesh.vertices.col(v));
  const VertexNormals vn = vertex_normals(mesh);

  for (int f = 0; f < mesh.face_count(); ++f) {
    const int i[3] = {mesh.faces(0, f), mesh.faces(1, f), mesh.faces(2, f)};
    if (proj[i[0]].z() <= camera.near_m || proj[i[1]].z() <= camera.near_m ||
        proj[i[2]].z() <= camera.near_m)
      continue;
    const Vec2 a = proj[i[0]].head<2>(), b = proj[i[1]].head<2>(), c = proj[i[2]].head<2>();
    if (std::abs(projected_area2(a, b, c)) < 1e-12) continue;
    const int x0 = std::max(0, static_cast<int>(std::floor(std::min({a.x(), b.x(), c.x()}) - 0.5)));
    const int x1 = std::min(W - 1, static_cast<int>(std::ceil(std::max({a.x(), b.x(), c.x()}))));
    const int y0 = std::max(0, static_cast<int>(std::floor(std::min({a.y(), b.y(), c.y()}) - 0.5)));
    const int y1 = std::min(H - 1, static_cast<int>(std::ceil(std::max({a.y(), b.y(), c.y()}))));
    for (int y = y0; y <= y1; ++y)
      for (int x = x0; x <= x1; ++x) {
        const Vec2 p(x + 0.5, y + 0.5);
        const Vec3 w = screen_barycentrics(p, a, b, c);
        if (w.minCoeff() < -1e-9) continue;
        // perspective-correct depth; attributes stay screen-affine
        const double invd = w(0) / proj[i[0]].z() + w(1) / proj[i[1]].z() +
                            w(2) / proj[i[2]].z();
        const double depth = 1.0 / invd;
        const bool take = out.face_id.at(x, y) < 0 ||
                          (order == DepthOrder::Nearest ? depth < out.depth.at(x, y)
                                                        : depth > out.depth.at(x, y));
        if (!take) continue;
        out.depth.at(x, y) = depth;
        out.face_id.at(x, y) = f;
        Vec3 n = Vec3::Zero(), col = Vec3::Zero();
        for (int k = 0; k < 3; ++k) {
          out.bary.at(x, y, k) = w(k);
          n += w(k) * vn.normals.col(i[k]);
          col += w(k) * (mesh.has_colors() ? Vec3(mesh.colors.col(i[k]))
                                           : Vec3(0.5, 0.5, 0.5));
        }
        n = cam.R_cw * n;
        const double nn = n.norm();
        if (nn > 1e-12) n /= nn;
        for (int k = 0; k < 3; ++k) {
          out.normal.at(x, y, k) = n(k);
          out.color.at(x, y, k) = col(k);
        }
      }
  }

  // soft silhouette band
  const auto sil = silhouette_edges(mesh, cam);
  for (const auto& [v0, v1] : sil) {
    const Vec2 a = proj[v0].head<2>(), b = proj[v1].head<2>();
    const double pad = soft.band_px + 1.0;
    const int x0 = std::max(0, static_cast<int>(std::floor(std::min(a.x(), b.x()) - pad)));
    const int x1 = std::min(W - 1, static_cast<int>(std::ceil(std::max(a.x(), b.x()) + pad)));
    const int y0 = std::max(0, static_cast<int>(std::floor(std::min(a.y(), b.y()) - pad)));
    const int y1 = std::min(H - 1, static_cast<int>(std::ceil(std::max(a.y(), b.y()) + pad)));
    for (int y = y0; y <= y1; ++y)
      for (int x = x0; x <= x1; ++x) {
        const Vec2 p(x + 0.5, y + 0.5);
        const double d = point_segment_distance(p, a, b);
        if (d > soft.band_px) continue;
        if (out.sil_v0.at(x, y) >= 0 && std::abs(out.sil_dist.at(x, y)) <= d) continue;
        out.sil_v0.at(x, y) = v0;
        out.sil_v1.at(x, y) = v1;
        out.sil_dist.at(x, y) = d;
      }
  }
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      const bool inside = out.face_id.at(x, y) >= 0;
      if (out.sil_v0.at(x, y) >= 0) {
        const double d = inside ? -out.sil_dist.at(x, y) : out.sil_dist.at(x, y);
        out.sil_dist.at(x, y) = d;
        out.mask.at(x, y) = soft_mask_value(d, soft);
      } else {
        out.mask.at(x, y) = inside ? 1.0 : 0.0;
      }
    }
  return out;
}

}  // namespace avk
