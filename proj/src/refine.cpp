#include "avk/refine.hpp"

#include <cmath>
#include <map>
#include <sstream>

#include "avk/io.hpp"
#include "avk/kinematics.hpp"
#include "avk/mesh_utils.hpp"
#include "avk/skinning.hpp"

namespace avk {

namespace {

Mat3 skew(const Vec3& v) {
  Mat3 m;
  m << 0, -v.z(), v.y(), v.z(), 0, -v.x(), -v.y(), v.x(), 0;
  return m;
}

struct Affine {
  Mat3 M = Mat3::Zero();
  Vec3 t = Vec3::Zero();
  Vec3 apply(const Vec3& x) const { return M * x + t; }
  Affine operator*(const Affine& o) const { return {M * o.M, M * o.t + t}; }
};

Affine from_rigid(const RigidTransform& r) { return {r.R, r.t}; }

// interior manifold edges as pairs of adjacent faces
std::vector<std::array<int, 2>> hinge_pairs(const SkinnedMesh& mesh) {
  std::map<std::pair<int, int>, std::vector<int>> edges;
  for (int f = 0; f < mesh.face_count(); ++f)
    for (int k = 0; k < 3; ++k) {
      const int a = mesh.faces(k, f), b = mesh.faces((k + 1) % 3, f);
      edges[{std::min(a, b), std::max(a, b)}].push_back(f);
    }
  std::vector<std::array<int, 2>> pairs;
  for (const auto& [e, fl] : edges)
    if (fl.size() == 2) pairs.push_back({fl[0], fl[1]});
  return pairs;
}

struct FrameChain {
  JointTransforms T;
  std::vector<Affine> axis_map;  // [j*3 + a]: E = P_j dL_{j,a} L_j^-1 P_j^-1
  std::vector<std::vector<int>> ancestors;  // joint -> chain up to the root
};

FrameChain build_chain(const Skeleton& skel, const Pose& pose) {
  FrameChain out;
  const FkCache cache = forward_kinematics_cache(skel, pose);
  out.T.world_from_rest = cache.global;
  const int J = skel.joint_count();
  out.axis_map.resize(3 * J);
  out.ancestors.resize(J);
  for (int j = 0; j < J; ++j) {
    for (int a = j; a >= 0;) {
      out.ancestors[j].push_back(a);
      a = skel.parent[a];
    }
    const RigidTransform& P = cache.parent_global[j];
    const RigidTransform L = cache.parent_global[j].inverse() * cache.global[j];
    const RigidTransform Linv = L.inverse();
    const RigidTransform Pinv = P.inverse();
    const Vec3 c = skel.rest_position.col(j);
    for (int a = 0; a < 3; ++a) {
      const Mat3 dR = axis_angle_jacobian(pose.theta.col(j), a);
      const Affine dL{dR, -dR * c};
      // the left factor acts on a derivative, so only its linear part applies
      out.axis_map[3 * j + a] =
          Affine{P.R, Vec3::Zero()} * dL * from_rigid(Linv) * from_rigid(Pinv);
    }
  }
  return out;
}

struct ViewAccum {
  double normal_abs_sum = 0;
  long normal_count = 0;
  double mask_sq_sum = 0;
  long mask_count = 0;
  double color_sq_sum = 0;
  long color_count = 0;
};

// shared forward pass for one rendered view against its targets; optional
// gradient sinks for posed vertices (bary/silhouette paths), world vertex
// normals, and vertex colors
struct ViewGradSink {
  Mat3X* g_posed = nullptr;
  Mat3X* g_world_normals = nullptr;
  Mat3X* g_colors = nullptr;
  double normal_scale = 0;  // lambda3 / count, filled by caller
  double mask_scale = 0;
  double color_scale = 0;
  bool color_to_geometry = true;
};

void scan_view_losses(const RenderedFrame& pred, const Image<double>& target_normal,
                      const Image<double>& target_color, const ImageU8& mask,
                      bool include_mask_term, ViewAccum& acc) {
  for (int y = 0; y < pred.height; ++y)
    for (int x = 0; x < pred.width; ++x) {
      const bool tgt = mask.at(x, y) > 0;
      if (include_mask_term) {
        const double dm = pred.mask.at(x, y) - (tgt ? 1.0 : 0.0);
        acc.mask_sq_sum += dm * dm;
        ++acc.mask_count;
      }
      if (!tgt || pred.mask.at(x, y) <= 0.5 || !pred.covered(x, y)) continue;
      ++acc.normal_count;
      for (int k = 0; k < 3; ++k)
        acc.normal_abs_sum +=
            std::abs(pred.normal.at(x, y, k) - target_normal.at(x, y, k));
      ++acc.color_count;
      for (int k = 0; k < 3; ++k) {
        const double d = pred.color.at(x, y, k) - target_color.at(x, y, k);
        acc.color_sq_sum += d * d;
      }
    }
}

void backward_view(const RenderedFrame& pred, const Image<double>& target_normal,
                   const Image<double>& target_color, const ImageU8& mask,
                   bool include_mask_term, const SkinnedMesh& posed,
                   const CameraFrame& cam, const VertexNormals& vn,
                   const SoftMaskConfig& soft, const ViewGradSink& sink) {
  for (int y = 0; y < pred.height; ++y)
    for (int x = 0; x < pred.width; ++x) {
      const bool tgt = mask.at(x, y) > 0;
      const Vec2 p(x + 0.5, y + 0.5);
      if (include_mask_term && sink.mask_scale != 0 && pred.sil_v0.at(x, y) >= 0) {
        const double d = pred.sil_dist.at(x, y);
        const double dm = pred.mask.at(x, y) - (tgt ? 1.0 : 0.0);
        const double coef =
            sink.mask_scale * 2.0 * dm * soft_mask_derivative(d, soft) *
            (d < 0 ? -1.0 : 1.0);
        if (coef != 0) {
          const int v0 = pred.sil_v0.at(x, y), v1 = pred.sil_v1.at(x, y);
          const Vec2 a = cam.project(posed.vertices.col(v0)).head<2>();
          const Vec2 b = cam.project(posed.vertices.col(v1)).head<2>();
          const auto g = point_segment_distance_gradient(p, a, b);
          sink.g_posed->col(v0) +=
              coef * projection_jacobian(cam, posed.vertices.col(v0)).transpose() *
              Vec2(g(0), g(1));
          sink.g_posed->col(v1) +=
              coef * projection_jacobian(cam, posed.vertices.col(v1)).transpose() *
              Vec2(g(2), g(3));
        }
      }
      if (!tgt || pred.mask.at(x, y) <= 0.5 || !pred.covered(x, y)) continue;
      const int f = pred.face_id.at(x, y);
      const int vi[3] = {posed.faces(0, f), posed.faces(1, f), posed.faces(2, f)};
      const Vec3 w(pred.bary.at(x, y, 0), pred.bary.at(x, y, 1), pred.bary.at(x, y, 2));
      Vec3 g_w = Vec3::Zero();
      if (sink.normal_scale != 0) {
        Vec3 m = Vec3::Zero();
        for (int k = 0; k < 3; ++k) m += w(k) * vn.normals.col(vi[k]);
        const double mn = m.norm();
        if (mn > 1e-12) {
          Vec3 gn;
          for (int k = 0; k < 3; ++k) {
            const double diff = pred.normal.at(x, y, k) - target_normal.at(x, y, k);
            gn(k) = sink.normal_scale * (diff > 0 ? 1.0 : (diff < 0 ? -1.0 : 0.0));
          }
          const Vec3 u = m / mn;
          const Vec3 g_m = (Mat3::Identity() - u * u.transpose()) / mn *
                           (cam.R_cw.transpose() * gn);
          for (int k = 0; k < 3; ++k) {
            sink.g_world_normals->col(vi[k]) += w(k) * g_m;
            g_w(k) += vn.normals.col(vi[k]).dot(g_m);
          }
        }
      }
      if (sink.color_scale != 0) {
        for (int c = 0; c < 3; ++c) {
          const double diff = pred.color.at(x, y, c) - target_color.at(x, y, c);
          const double gc = sink.color_scale * 2.0 * diff;
          for (int k = 0; k < 3; ++k) {
            if (sink.g_colors) (*sink.g_colors)(c, vi[k]) += gc * w(k);
            if (sink.color_to_geometry)
              g_w(k) += gc * (posed.has_colors() ? posed.colors(c, vi[k]) : 0.5);
          }
        }
      }
      if (g_w.squaredNorm() > 0) {
        const Vec2 a = cam.project(posed.vertices.col(vi[0])).head<2>();
        const Vec2 b = cam.project(posed.vertices.col(vi[1])).head<2>();
        const Vec2 c = cam.project(posed.vertices.col(vi[2])).head<2>();
        const auto J = barycentric_jacobian(p, a, b, c);
        const Eigen::Matrix<double, 6, 1> g_uv = J.transpose() * g_w;
        for (int k = 0; k < 3; ++k)
          sink.g_posed->col(vi[k]) +=
              projection_jacobian(cam, posed.vertices.col(vi[k])).transpose() *
              g_uv.segment<2>(2 * k);
      }
    }
}

// g_world_normals -> posed vertex positions through area-weighted normals
void normals_backward(const SkinnedMesh& posed, const VertexNormals& vn,
                      const Mat3X& g_normals, Mat3X& g_posed) {
  const int n = posed.vertex_count();
  // accumulate raw (pre-normalization) vectors to recover lengths
  Mat3X raw = Mat3X::Zero(3, n);
  const Mat3X fn = face_normals_raw(posed.vertices, posed.faces);
  for (int f = 0; f < posed.face_count(); ++f)
    for (int k = 0; k < 3; ++k) raw.col(posed.faces(k, f)) += fn.col(f);
  Mat3X g_raw = Mat3X::Zero(3, n);
  for (int v = 0; v < n; ++v) {
    if (g_normals.col(v).squaredNorm() == 0) continue;
    const double len = raw.col(v).norm();
    if (len < 1e-12) continue;
    const Vec3 u = raw.col(v) / len;
    g_raw.col(v) =
        (Mat3::Identity() - u * u.transpose()) / len * g_normals.col(v);
  }
  for (int f = 0; f < posed.face_count(); ++f) {
    Vec3 g_c = Vec3::Zero();
    for (int k = 0; k < 3; ++k) g_c += g_raw.col(posed.faces(k, f));
    if (g_c.squaredNorm() == 0) continue;
    const Vec3 p0 = posed.vertices.col(posed.faces(0, f));
    const Vec3 p1 = posed.vertices.col(posed.faces(1, f));
    const Vec3 p2 = posed.vertices.col(posed.faces(2, f));
    g_posed.col(posed.faces(0, f)) += skew(p2 - p1).transpose() * g_c;
    g_posed.col(posed.faces(1, f)) += skew(p0 - p2).transpose() * g_c;
    g_posed.col(posed.faces(2, f)) += skew(p1 - p0).transpose() * g_c;
  }
  (void)vn;
}

std::vector<int> stride_subset(int n, int max_points) {
  const int stride = std::max(1, (n + max_points - 1) / max_points);
  std::vector<int> idx;
  for (int i = 0; i < n; i += stride) idx.push_back(i);
  return idx;
}

}  // namespace

void RefineConfig::validate() const {
  if (lambda1 < 0 || lambda2 < 0 || lambda3 < 0 || lambda4 < 0 || lambda5 < 0 ||
      lambda6 < 0 || color_stage_lambda6 < 0)
    throw InputError("refine config: negative loss weight");
  if (schedule_interval <= 0 || schedule_total <= 0 ||
      schedule_total % schedule_interval != 0)
    throw InputError("refine config: schedule_total must divide into intervals");
  if (step_vertices <= 0 || step_pose <= 0 || step_colors <= 0)
    throw InputError("refine config: step sizes must be positive");
}

void RefineTargets::validate() const {
  if (observations.empty()) throw InputError("refine targets: no frames");
  if (observations.size() != posed_targets.size())
    throw InputError("refine targets: observation/mesh count mismatch");
  skeleton.validate();
  for (const auto& obs : observations) obs.validate();
}

LossAndGrads refine_loss(const SkinnedMesh& canonical, const std::vector<Pose>& poses,
                         const RefineTargets& targets, const RefineConfig& cfg,
                         bool want_grads) {
  if (!canonical.has_weights()) throw InputError("refine_loss: canonical mesh has no weights");
  if (poses.size() != targets.observations.size())
    throw InputError("refine_loss: pose count mismatch");
  const int n = canonical.vertex_count();
  const int J = targets.skeleton.joint_count();
  LossAndGrads out;
  if (want_grads) {
    out.g_vertices = Mat3X::Zero(3, n);
    out.g_colors = Mat3X::Zero(3, n);
    for (size_t f = 0; f < poses.size(); ++f) {
      out.g_theta.push_back(Mat3X::Zero(3, J));
      out.g_root.push_back(Vec3::Zero());
    }
  }

  // Laplacian regularizer: (1/m) sum ||delta_i||^2, delta = L P
  const GraphLaplacian gl = graph_laplacian(canonical);
  const MatX P = canonical.vertices.transpose();
  const MatX D = gl.L * P;
  out.loss.laplacian = D.squaredNorm() / n;
  if (want_grads && cfg.lambda1 != 0)
    out.g_vertices +=
        (cfg.lambda1 * 2.0 / n) * (gl.L.transpose() * D).transpose();

  // normal-consistency regularizer over face hinges
  const auto pairs = hinge_pairs(canonical);
  if (!pairs.empty()) {
    const Mat3X fn_raw = face_normals_raw(canonical.vertices, canonical.faces);
    Mat3X fn(3, canonical.face_count());
    std::vector<double> fl(canonical.face_count());
    for (int f = 0; f < canonical.face_count(); ++f) {
      fl[f] = fn_raw.col(f).norm();
      fn.col(f) = fl[f] > 1e-15 ? (fn_raw.col(f) / fl[f]).eval() : Vec3(0, 0, 1);
    }
    double e = 0;
    Mat3X g_fn = Mat3X::Zero(3, canonical.face_count());
    for (const auto& [f1, f2] : pairs) {
      const double d = 1.0 - fn.col(f1).dot(fn.col(f2));
      e += d * d;
      if (want_grads && cfg.lambda2 != 0) {
        g_fn.col(f1) += -2.0 * d * fn.col(f2) / pairs.size();
        g_fn.col(f2) += -2.0 * d * fn.col(f1) / pairs.size();
      }
    }
    out.loss.normal_reg = e / pairs.size();
    if (want_grads && cfg.lambda2 != 0) {
      for (int f = 0; f < canonical.face_count(); ++f) {
        if (g_fn.col(f).squaredNorm() == 0 || fl[f] < 1e-15) continue;
        const Vec3 u = fn.col(f);
        const Vec3 g_c = cfg.lambda2 *
                         ((Mat3::Identity() - u * u.transpose()) / fl[f] * g_fn.col(f));
        const Vec3 p0 = canonical.vertices.col(canonical.faces(0, f));
        const Vec3 p1 = canonical.vertices.col(canonical.faces(1, f));
        const Vec3 p2 = canonical.vertices.col(canonical.faces(2, f));
        out.g_vertices.col(canonical.faces(0, f)) += skew(p2 - p1).transpose() * g_c;
        out.g_vertices.col(canonical.faces(1, f)) += skew(p0 - p2).transpose() * g_c;
        out.g_vertices.col(canonical.faces(2, f)) += skew(p1 - p0).transpose() * g_c;
      }
    }
  }

  for (size_t fi = 0; fi < poses.size(); ++fi) {
    const FrameObservation& obs = targets.observations[fi];
    const FrameChain chain = build_chain(targets.skeleton, poses[fi]);
    SkinnedMesh posed = canonical;
    posed.vertices = lbs_forward(canonical.vertices, canonical.weights, chain.T);
    posed.space = SpaceTag::Posed;
    const CameraFrame cam(obs.camera);
    const RenderedFrame front = rasterize(posed, obs.camera, DepthOrder::Nearest, cfg.soft);
    const RenderedFrame back = rasterize(posed, obs.camera, DepthOrder::Farthest, cfg.soft);

    ViewAccum acc;
    scan_view_losses(front, obs.normal_front, obs.color_front, obs.mask, true, acc);
    scan_view_losses(back, obs.normal_back, obs.color_back, obs.mask, false, acc);
    if (acc.normal_count == 0) out.loss.empty_mask_intersection = true;
    const double normal_term =
        acc.normal_count > 0 ? acc.normal_abs_sum / (3.0 * acc.normal_count) : 0.0;
    const double mask_term = acc.mask_sq_sum / std::max<long>(1, acc.mask_count);
    const double color_term =
        acc.color_count > 0 ? acc.color_sq_sum / acc.color_count : 0.0;
    out.loss.normal_l1 += normal_term;
    out.loss.mask_mse += mask_term;
    out.loss.color_mse += color_term;

    // squared symmetric chamfer on stride-subsampled vertex sets
    const SkinnedMesh& tgt_mesh = targets.posed_targets[fi];
    const auto pred_idx = stride_subset(n, cfg.chamfer_max_points);
    const auto tgt_idx = stride_subset(tgt_mesh.vertex_count(), cfg.chamfer_max_points);
    Mat3X pred_pts(3, pred_idx.size()), tgt_pts(3, tgt_idx.size());
    for (size_t i = 0; i < pred_idx.size(); ++i)
      pred_pts.col(i) = posed.vertices.col(pred_idx[i]);
    for (size_t i = 0; i < tgt_idx.size(); ++i)
      tgt_pts.col(i) = tgt_mesh.vertices.col(tgt_idx[i]);
    const NearestVertex near_tgt(tgt_pts), near_pred(pred_pts);
    double cd = 0;
    Mat3X g_posed = want_grads ? Mat3X::Zero(3, n) : Mat3X();
    for (size_t i = 0; i < pred_idx.size(); ++i) {
      const Vec3 d = pred_pts.col(i) - tgt_pts.col(near_tgt.query(pred_pts.col(i)));
      cd += 0.5 * d.squaredNorm() / pred_idx.size();
      if (want_grads)
        g_posed.col(pred_idx[i]) += cfg.lambda5 * d / pred_idx.size();
    }
    for (size_t i = 0; i < tgt_idx.size(); ++i) {
      const int nn = near_pred.query(tgt_pts.col(i));
      const Vec3 d = pred_pts.col(nn) - tgt_pts.col(i);
      cd += 0.5 * d.squaredNorm() / tgt_idx.size();
      if (want_grads)
        g_posed.col(pred_idx[nn]) += cfg.lambda5 * d / tgt_idx.size();
    }
    out.loss.chamfer += cd;

    if (want_grads) {
      const VertexNormals vn = vertex_normals(posed);
      Mat3X g_world_normals = Mat3X::Zero(3, n);
      ViewGradSink sink;
      sink.g_posed = &g_posed;
      sink.g_world_normals = &g_world_normals;
      sink.g_colors = &out.g_colors;
      sink.normal_scale =
          acc.normal_count > 0 ? cfg.lambda3 / (3.0 * acc.normal_count) : 0.0;
      sink.mask_scale = cfg.lambda4 / std::max<long>(1, acc.mask_count);
      sink.color_scale =
          acc.color_count > 0 ? cfg.lambda6 / acc.color_count : 0.0;
      sink.color_to_geometry = !cfg.freeze_geometry_in_color_stage;
      ViewGradSink back_sink = sink;
      back_sink.mask_scale = 0;
      backward_view(front, obs.normal_front, obs.color_front, obs.mask, true, posed,
                    cam, vn, cfg.soft, sink);
      backward_view(back, obs.normal_back, obs.color_back, obs.mask, false, posed,
                    cam, vn, cfg.soft, back_sink);
      normals_backward(posed, vn, g_world_normals, g_posed);

      // chain posed-vertex gradients into canonical vertices, pose, root
      const int nnzJ = J;
      for (int v = 0; v < n; ++v) {
        if (g_posed.col(v).squaredNorm() == 0) continue;
        const Vec3 g = g_posed.col(v);
        const Vec3 x = canonical.vertices.col(v);
        Mat3 A = Mat3::Zero();
        // per-ancestor partial blends
        static thread_local std::vector<Vec3> Y;
        static thread_local std::vector<double> S;
        Y.assign(nnzJ, Vec3::Zero());
        S.assign(nnzJ, 0.0);
        for (int k = 0; k < J; ++k) {
          const double w = canonical.weights.w(v, k);
          if (w < 1e-9) continue;
          const RigidTransform& G = chain.T.world_from_rest[k];
          A += w * G.R;
          const Vec3 contrib = w * (G.R * x + G.t);
          for (int anc : chain.ancestors[k]) {
            Y[anc] += contrib;
            S[anc] += w;
          }
        }
        out.g_vertices.col(v) += A.transpose() * g;
        out.g_root[fi] += g;
        for (int j = 0; j < J; ++j) {
          if (S[j] == 0) continue;
          for (int a = 0; a < 3; ++a) {
            const Affine& E = chain.axis_map[3 * j + a];
            out.g_theta[fi](a, j) += g.dot(E.M * Y[j] + S[j] * E.t);
          }
        }
      }
    }
  }

  out.loss.total = cfg.lambda1 * out.loss.laplacian + cfg.lambda2 * out.loss.normal_reg +
                   cfg.lambda3 * out.loss.normal_l1 + cfg.lambda4 * out.loss.mask_mse +
                   cfg.lambda5 * out.loss.chamfer + cfg.lambda6 * out.loss.color_mse;
  return out;
}

LossBreakdown render_losses(const RenderedFrame& pred_front,
                            const RenderedFrame& pred_back,
                            const FrameObservation& target,
                            const SkinnedMesh& canonical,
                            const SkinnedMesh& posed_pred,
                            const SkinnedMesh& posed_target,
                            const RefineConfig& cfg) {
  if (pred_front.width != target.width() || pred_front.height != target.height())
    throw InputError("render_losses: resolution mismatch");
  LossBreakdown loss;
  {
    const GraphLaplacian gl = graph_laplacian(canonical);
    const MatX D = gl.L * canonical.vertices.transpose();
    loss.laplacian = D.squaredNorm() / canonical.vertex_count();
    const auto pairs = hinge_pairs(canonical);
    if (!pairs.empty()) {
      const Mat3X fn_raw = face_normals_raw(canonical.vertices, canonical.faces);
      double e = 0;
      for (const auto& [f1, f2] : pairs) {
        const Vec3 n1 = fn_raw.col(f1).normalized();
        const Vec3 n2 = fn_raw.col(f2).normalized();
        const double d = 1.0 - n1.dot(n2);
        e += d * d;
      }
      loss.normal_reg = e / pairs.size();
    }
  }
  ViewAccum acc;
  scan_view_losses(pred_front, target.normal_front, target.color_front, target.mask,
                   true, acc);
  scan_view_losses(pred_back, target.normal_back, target.color_back, target.mask,
                   false, acc);
  if (acc.normal_count == 0) loss.empty_mask_intersection = true;
  loss.normal_l1 =
      acc.normal_count > 0 ? acc.normal_abs_sum / (3.0 * acc.normal_count) : 0.0;
  loss.mask_mse = acc.mask_sq_sum / std::max<long>(1, acc.mask_count);
  loss.color_mse = acc.color_count > 0 ? acc.color_sq_sum / acc.color_count : 0.0;

  const auto a_idx = stride_subset(posed_pred.vertex_count(), cfg.chamfer_max_points);
  const auto b_idx = stride_subset(posed_target.vertex_count(), cfg.chamfer_max_points);
  Mat3X a_pts(3, a_idx.size()), b_pts(3, b_idx.size());
  for (size_t i = 0; i < a_idx.size(); ++i) a_pts.col(i) = posed_pred.vertices.col(a_idx[i]);
  for (size_t i = 0; i < b_idx.size(); ++i) b_pts.col(i) = posed_target.vertices.col(b_idx[i]);
  const NearestVertex na(a_pts), nb(b_pts);
  double cd = 0;
  for (int i = 0; i < a_pts.cols(); ++i)
    cd += 0.5 * (a_pts.col(i) - b_pts.col(nb.query(a_pts.col(i)))).squaredNorm() /
          a_pts.cols();
  for (int i = 0; i < b_pts.cols(); ++i)
    cd += 0.5 * (b_pts.col(i) - a_pts.col(na.query(b_pts.col(i)))).squaredNorm() /
          b_pts.cols();
  loss.chamfer = cd;

  loss.total = cfg.lambda1 * loss.laplacian + cfg.lambda2 * loss.normal_reg +
               cfg.lambda3 * loss.normal_l1 + cfg.lambda4 * loss.mask_mse +
               cfg.lambda5 * loss.chamfer + cfg.lambda6 * loss.color_mse;
  return loss;
}

namespace {

struct AdamState {
  MatX m, v;
  long t = 0;
  void init(int rows, int cols) {
    m = MatX::Zero(rows, cols);
    v = MatX::Zero(rows, cols);
    t = 0;
  }
  void step(Eigen::Ref<MatX> param, const MatX& g, double lr, double b1, double b2) {
    ++t;
    m = b1 * m + (1 - b1) * g;
    v = (b2 * v.array() + (1 - b2) * g.array().square()).matrix();
    const double c1 = 1 - std::pow(b1, static_cast<double>(t));
    const double c2 = 1 - std::pow(b2, static_cast<double>(t));
    param.array() -=
        lr * (m.array() / c1) / ((v.array() / c2).sqrt() + 1e-8);
  }
};

bool has_nan(const LossAndGrads& lg) {
  if (!std::isfinite(lg.loss.total)) return true;
  if (lg.g_vertices.size() && !lg.g_vertices.allFinite()) return true;
  for (const auto& g : lg.g_theta)
    if (!g.allFinite()) return true;
  for (const auto& g : lg.g_root)
    if (!g.allFinite()) return true;
  return false;
}

void write_checkpoint(const std::filesystem::path& dir, int iter,
                      const SkinnedMesh& mesh, const std::vector<Pose>& poses) {
  if (dir.empty()) return;
  std::filesystem::create_directories(dir);
  io::save_ply(mesh, dir / ("canonical_" + std::to_string(iter) + ".ply"));
  for (size_t f = 0; f < poses.size(); ++f)
    io::save_pose_json(poses[f], dir / ("pose_" + std::to_string(iter) + "_" +
                                        std::to_string(f) + ".json"));
}

}  // namespace

RefineResult refine_shape_and_pose(const SkinnedMesh& canonical,
                                   const RefineTargets& targets,
                                   const RefineConfig& config, uint64_t seed,
                                   const std::filesystem::path& checkpoint_dir) {
  (void)seed;  // the optimization is deterministic end to end
  config.validate();
  targets.validate();
  if (!canonical.has_weights())
    throw InputError("refine_shape_and_pose: canonical mesh has no weights");

  RefineResult out;
  out.mesh = canonical;
  if (config.downsample_divisor > 1) {
    const int budget =
        std::max(64, canonical.vertex_count() / config.downsample_divisor);
    out.mesh = decimate_to(out.mesh, budget);
  }
  for (const auto& obs : targets.observations) out.poses.push_back(obs.pose);
  const int F = targets.frame_count();
  const int J = targets.skeleton.joint_count();

  RefineConfig cfg = config;
  AdamState adam_v, adam_theta, adam_root;
  adam_v.init(3, out.mesh.vertex_count());
  adam_theta.init(3, J * F);
  adam_root.init(3, F);
  double step_v = cfg.step_vertices, step_p = cfg.step_pose;

  for (int iter = 0; iter < cfg.schedule_total; ++iter) {
    if (iter > 0 && iter % cfg.schedule_interval == 0) {
      // stop subdividing once the working mesh reaches the input resolution;
      // the loss-weight schedule still advances
      if (out.mesh.vertex_count() < canonical.vertex_count()) {
        out.mesh = subdivide_midpoint(out.mesh);
        adam_v.init(3, out.mesh.vertex_count());
      }
      cfg.lambda3 *= cfg.lambda_multiplier;
      cfg.lambda4 *= cfg.lambda_multiplier;
      write_checkpoint(checkpoint_dir, iter, out.mesh, out.poses);
    }
    LossAndGrads lg = refine_loss(out.mesh, out.poses, targets, cfg, true);
    if (has_nan(lg)) {
      step_v *= 0.5;
      step_p *= 0.5;
      lg = refine_loss(out.mesh, out.poses, targets, cfg, true);
      if (has_nan(lg)) {
        out.aborted = true;
        write_checkpoint(checkpoint_dir.empty()
                             ? std::filesystem::temp_directory_path() / "avk_abort"
                             : checkpoint_dir,
                         iter, out.mesh, out.poses);
        break;
      }
    }
    adam_v.step(out.mesh.vertices, lg.g_vertices, step_v, cfg.beta1, cfg.beta2);
    MatX theta_all(3, J * F), g_theta_all(3, J * F);
    MatX root_all(3, F), g_root_all(3, F);
    for (int f = 0; f < F; ++f) {
      theta_all.middleCols(f * J, J) = out.poses[f].theta;
      g_theta_all.middleCols(f * J, J) = lg.g_theta[f];
      root_all.col(f) = out.poses[f].root_translation;
      g_root_all.col(f) = lg.g_root[f];
    }
    adam_theta.step(theta_all, g_theta_all, step_p, cfg.beta1, cfg.beta2);
    adam_root.step(root_all, g_root_all, step_p, cfg.beta1, cfg.beta2);
    for (int f = 0; f < F; ++f) {
      out.poses[f].theta = theta_all.middleCols(f * J, J);
      out.poses[f].root_translation = root_all.col(f);
    }
    out.history.push_back(lg.loss);
  }
  write_checkpoint(checkpoint_dir, cfg.schedule_total, out.mesh, out.poses);
  return out;
}

RefineResult refine_colors(const SkinnedMesh& canonical, const std::vector<Pose>& poses,
                           const RefineTargets& targets, const RefineConfig& config,
                           uint64_t seed) {
  (void)seed;
  config.validate();
  targets.validate();
  RefineResult out;
  out.mesh = canonical;
  out.poses = poses;
  const int n = canonical.vertex_count();
  if (!out.mesh.has_colors()) out.mesh.colors = Mat3X::Constant(3, n, 0.5);
  const double lambda6 = config.color_stage_lambda6;

  // rasters are fixed: cache one sample list per qualifying pixel
  struct Sample {
    int v[3];
    double w[3];
    Vec3 target;
  };
  std::vector<Sample> samples;
  for (size_t fi = 0; fi < poses.size(); ++fi) {
    const FrameObservation& obs = targets.observations[fi];
    const FrameChain chain = build_chain(targets.skeleton, poses[fi]);
    SkinnedMesh posed = canonical;
    posed.vertices = lbs_forward(canonical.vertices, canonical.weights, chain.T);
    const RenderedFrame front =
        rasterize(posed, obs.camera, DepthOrder::Nearest, config.soft);
    const RenderedFrame back =
        rasterize(posed, obs.camera, DepthOrder::Farthest, config.soft);
    for (const auto* view : {&front, &back}) {
      const Image<double>& tgt =
          view == &front ? obs.color_front : obs.color_back;
      for (int y = 0; y < view->height; ++y)
        for (int x = 0; x < view->width; ++x) {
          if (obs.mask.at(x, y) == 0 || view->mask.at(x, y) <= 0.5 ||
              !view->covered(x, y))
            continue;
          Sample s;
          const int f = view->face_id.at(x, y);
          for (int k = 0; k < 3; ++k) {
            s.v[k] = posed.faces(k, f);
            s.w[k] = view->bary.at(x, y, k);
          }
          s.target = Vec3(tgt.at(x, y, 0), tgt.at(x, y, 1), tgt.at(x, y, 2));
          samples.push_back(s);
        }
    }
  }

  std::vector<char> visible(n, 0);
  for (const auto& s : samples)
    for (int k = 0; k < 3; ++k)
      if (s.w[k] > 1e-6) visible[s.v[k]] = 1;

  AdamState adam;
  adam.init(3, n);
  for (int iter = 0; iter < config.color_stage_iterations; ++iter) {
    Mat3X g = Mat3X::Zero(3, n);
    double loss = 0;
    for (const auto& s : samples) {
      Vec3 c = Vec3::Zero();
      for (int k = 0; k < 3; ++k) c += s.w[k] * out.mesh.colors.col(s.v[k]);
      const Vec3 d = c - s.target;
      loss += d.squaredNorm();
      for (int k = 0; k < 3; ++k) g.col(s.v[k]) += 2.0 * s.w[k] * d;
    }
    const double scale = lambda6 / std::max<size_t>(1, samples.size());
    g *= scale;
    loss *= scale;
    adam.step(out.mesh.colors, g, config.step_colors, config.beta1, config.beta2);
    out.mesh.colors = out.mesh.colors.cwiseMax(0.0).cwiseMin(1.0);
    LossBreakdown row;
    row.color_mse = loss / std::max(lambda6, 1e-12);
    row.total = loss;
    out.history.push_back(row);
  }

  // vertices never seen by any frame inherit the nearest visible color
  std::vector<int> vis_idx;
  for (int v = 0; v < n; ++v)
    if (visible[v]) vis_idx.push_back(v);
  if (!vis_idx.empty()) {
    Mat3X vis_pts(3, vis_idx.size());
    for (size_t i = 0; i < vis_idx.size(); ++i)
      vis_pts.col(i) = canonical.vertices.col(vis_idx[i]);
    const NearestVertex nearest(vis_pts);
    for (int v = 0; v < n; ++v)
      if (!visible[v]) {
        out.mesh.colors.col(v) =
            out.mesh.colors.col(vis_idx[nearest.query(canonical.vertices.col(v))]);
        out.never_visible.push_back(v);
      }
  }
  return out;
}

void write_loss_history_csv(const std::vector<LossBreakdown>& history,
                            const std::filesystem::path& path) {
  std::ostringstream out;
  out << "iteration,laplacian,normal_reg,normal_l1,mask_mse,chamfer,color_mse,total\n";
  for (size_t i = 0; i < history.size(); ++i) {
    const auto& h = history[i];
    out << i << ',' << h.laplacian << ',' << h.normal_reg << ',' << h.normal_l1
        << ',' << h.mask_mse << ',' << h.chamfer << ',' << h.color_mse << ','
        << h.total << '\n';
  }
  io::write_text_file(path, out.str());
}

}  // namespace avk
