#include "avk/skinning.hpp"

#include <algorithm>
#include <cmath>

namespace avk {

BlendedTransform blend_transforms(const Eigen::Ref<const Eigen::RowVectorXd>& w,
                                  const JointTransforms& transforms) {
  BlendedTransform bt;
  bt.A.setZero();
  bt.b.setZero();
  for (int i = 0; i < transforms.joint_count(); ++i) {
    const double wi = w(i);
    if (wi == 0) continue;
    bt.A += wi * transforms.world_from_rest[i].R;
    bt.b += wi * transforms.world_from_rest[i].t;
  }
  return bt;
}

static void check_dims(const Mat3X& points, const SkinWeights& weights,
                       const JointTransforms& transforms) {
  if (weights.vertex_count() != points.cols())
    throw InputError("weight rows do not match point count");
  if (weights.joint_count() != transforms.joint_count())
    throw InputError("weight columns do not match joint count");
}

Mat3X lbs_forward(const Mat3X& points, const SkinWeights& weights,
                  const JointTransforms& transforms) {
  check_dims(points, weights, transforms);
  Mat3X out(3, points.cols());
  for (int v = 0; v < points.cols(); ++v) {
    const BlendedTransform bt = blend_transforms(weights.w.row(v), transforms);
    out.col(v) = bt.apply(points.col(v));
  }
  return out;
}

InverseSkinResult lbs_inverse(const Mat3X& points, const SkinWeights& weights,
                              const JointTransforms& transforms, double cond_threshold) {
  check_dims(points, weights, transforms);
  InverseSkinResult res;
  res.points.resize(3, points.cols());
  res.failed.assign(points.cols(), 0);
  for (int v = 0; v < points.cols(); ++v) {
    const BlendedTransform bt = blend_transforms(weights.w.row(v), transforms);
    Eigen::JacobiSVD<Mat3> svd(bt.A, Eigen::ComputeFullU | Eigen::ComputeFullV);
    const double smin = svd.singularValues()(2);
    const double smax = svd.singularValues()(0);
    if (smin <= 0 || smax / smin >= cond_threshold) {
      res.points.col(v) = points.col(v);
      res.failed[v] = 1;
      res.failure_count++;
      continue;
    }
    res.points.col(v) = svd.solve(points.col(v) - bt.b);
  }
  return res;
}

NearestVertex::NearestVertex(const Mat3X& points, bool brute_force)
    : pts_(points), brute_(brute_force) {
  if (points.cols() == 0) throw InputError("NearestVertex: empty point set");
  if (brute_) return;
  const Vec3 lo = points.rowwise().minCoeff();
  const Vec3 hi = points.rowwise().maxCoeff();
  const double extent = std::max((hi - lo).maxCoeff(), 1e-9);
  // aim for a few points per cell
  const double target = std::cbrt(static_cast<double>(points.cols()));
  cell_ = std::max(extent / std::max(target, 1.0), 1e-9);
  origin_ = lo;
  nx_ = static_cast<int>((hi.x() - lo.x()) / cell_) + 1;
  ny_ = static_cast<int>((hi.y() - lo.y()) / cell_) + 1;
  nz_ = static_cast<int>((hi.z() - lo.z()) / cell_) + 1;
  cells_.resize(static_cast<size_t>(nx_) * ny_ * nz_);
  for (int i = 0; i < points.cols(); ++i) {
    const Vec3 p = points.col(i);
    int ix = std::clamp(static_cast<int>((p.x() - origin_.x()) / cell_), 0, nx_ - 1);
    int iy = std::clamp(static_cast<int>((p.y() - origin_.y()) / cell_), 0, ny_ - 1);
    int iz = std::clamp(static_cast<int>((p.z() - origin_.z()) / cell_), 0, nz_ - 1);
    cells_[cell_index(ix, iy, iz)].push_back(i);
  }
}

int NearestVertex::query_impl(const Vec3& q, double* d2_out) const {
  int best = -1;
  double best_d2 = std::numeric_limits<double>::infinity();
  auto consider = [&](int i) {
    const double d2 = (pts_.col(i) - q).squaredNorm();
    if (d2 < best_d2 || (d2 == best_d2 && i < best)) {
      best_d2 = d2;
      best = i;
    }
  };
  if (brute_) {
    for (int i = 0; i < pts_.cols(); ++i) consider(i);
  } else {
    const int cx = std::clamp(static_cast<int>((q.x() - origin_.x()) / cell_), 0, nx_ - 1);
    const int cy = std::clamp(static_cast<int>((q.y() - origin_.y()) / cell_), 0, ny_ - 1);
    const int cz = std::clamp(static_cast<int>((q.z() - origin_.z()) / cell_), 0, nz_ - 1);
    const int rmax = std::max({nx_, ny_, nz_});
    for (int r = 0; r <= rmax; ++r) {
      if (best >= 0) {
        // cells at ring r are at least (r-1)*cell away from q's cell
        const double lower = (r - 1) * cell_;
        if (lower > 0 && lower * lower > best_d2) break;
      }
      for (int iz = std::max(0, cz - r); iz <= std::min(nz_ - 1, cz + r); ++iz)
        for (int iy = std::max(0, cy - r); iy <= std::min(ny_ - 1, cy + r); ++iy)
          for (int ix = std::max(0, cx - r); ix <= std::min(nx_ - 1, cx + r); ++ix) {
            const int ring = std::max({std::abs(ix - cx), std::abs(iy - cy), std::abs(iz - cz)});
            if (ring != r) continue;
            for (int i : cells_[cell_index(ix, iy, iz)]) consider(i);
          }
    }
  }
  if (d2_out) *d2_out = best_d2;
  return best;
}

int NearestVertex::query(const Vec3& q) const { return query_impl(q, nullptr); }

bool NearestVertex::any_within(const Vec3& q, double radius) const {
  const double r2 = radius * radius;
  if (brute_) {
    for (int i = 0; i < pts_.cols(); ++i)
      if ((pts_.col(i) - q).squaredNorm() < r2) return true;
    return false;
  }
  const int cx = std::clamp(static_cast<int>((q.x() - origin_.x()) / cell_), 0, nx_ - 1);
  const int cy = std::clamp(static_cast<int>((q.y() - origin_.y()) / cell_), 0, ny_ - 1);
  const int cz = std::clamp(static_cast<int>((q.z() - origin_.z()) / cell_), 0, nz_ - 1);
  const int rmax = std::max({nx_, ny_, nz_});
  for (int r = 0; r <= rmax; ++r) {
    // cells at ring r are at least (r-1)*cell away from q's cell
    const double lower = (r - 1) * cell_;
    if (lower > 0 && lower > radius) break;
    for (int iz = std::max(0, cz - r); iz <= std::min(nz_ - 1, cz + r); ++iz)
      for (int iy = std::max(0, cy - r); iy <= std::min(ny_ - 1, cy + r); ++iy)
        for (int ix = std::max(0, cx - r); ix <= std::min(nx_ - 1, cx + r); ++ix) {
          const int ring =
              std::max({std::abs(ix - cx), std::abs(iy - cy), std::abs(iz - cz)});
          if (ring != r) continue;
          for (int i : cells_[cell_index(ix, iy, iz)])
            if ((pts_.col(i) - q).squaredNorm() < r2) return true;
        }
  }
  return false;
}

double NearestVertex::query_dist2(const Vec3& q) const {
  double d2;
  query_impl(q, &d2);
  return d2;
}

SkinWeights transfer_weights_nearest(const Mat3X& query, const SkinnedMesh& reference,
                                     bool brute_force) {
  if (!reference.has_weights())
    throw InputError("transfer_weights_nearest: reference mesh has no weights");
  NearestVertex nn(reference.vertices, brute_force);
  SkinWeights out;
  out.w.resize(query.cols(), reference.weights.joint_count());
  for (int i = 0; i < query.cols(); ++i)
    out.w.row(i) = reference.weights.w.row(nn.query(query.col(i)));
  return out;
}

}  // namespace avk
