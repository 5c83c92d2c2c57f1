#include "avk/bvh.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace avk {

double point_triangle_distance(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c,
                               Vec3* closest) {
  // Ericson, "Real-Time Collision Detection", closest point on triangle.
  const Vec3 ab = b - a, ac = c - a, ap = p - a;
  const double d1 = ab.dot(ap), d2 = ac.dot(ap);
  Vec3 q;
  if (d1 <= 0 && d2 <= 0) {
    q = a;
  } else {
    const Vec3 bp = p - b;
    const double d3 = ab.dot(bp), d4 = ac.dot(bp);
    if (d3 >= 0 && d4 <= d3) {
      q = b;
    } else {
      const double vc = d1 * d4 - d3 * d2;
      if (vc <= 0 && d1 >= 0 && d3 <= 0) {
        q = a + (d1 / (d1 - d3)) * ab;
      } else {
        const Vec3 cp = p - c;
        const double d5 = ab.dot(cp), d6 = ac.dot(cp);
        if (d6 >= 0 && d5 <= d6) {
          q = c;
        } else {
          const double vb = d5 * d2 - d1 * d6;
          if (vb <= 0 && d2 >= 0 && d6 <= 0) {
            q = a + (d2 / (d2 - d6)) * ac;
          } else {
            const double va = d3 * d6 - d5 * d4;
            if (va <= 0 && (d4 - d3) >= 0 && (d5 - d6) >= 0) {
              q = b + ((d4 - d3) / ((d4 - d3) + (d5 - d6))) * (c - b);
            } else {
              const double denom = 1.0 / (va + vb + vc);
              q = a + ab * (vb * denom) + ac * (vc * denom);
            }
          }
        }
      }
    }
  }
  if (closest) *closest = q;
  return (p - q).norm();
}

TriangleBvh::TriangleBvh(const Mat3X& vertices, const Faces& faces)
    : verts_(vertices), faces_(faces) {
  const int F = static_cast<int>(faces.cols());
  if (F == 0) throw InputError("TriangleBvh: empty mesh");
  order_.resize(F);
  centroid_.resize(F);
  for (int f = 0; f < F; ++f) {
    order_[f] = f;
    centroid_[f] = (verts_.col(faces(0, f)) + verts_.col(faces(1, f)) +
                    verts_.col(faces(2, f))) / 3.0;
  }
  nodes_.reserve(2 * F);
  build(0, F, 0);
}

int TriangleBvh::build(int begin, int end, int depth) {
  const int idx = static_cast<int>(nodes_.size());
  nodes_.emplace_back();
  Vec3 lo = Vec3::Constant(std::numeric_limits<double>::infinity());
  Vec3 hi = -lo;
  for (int i = begin; i < end; ++i) {
    const int f = order_[i];
    for (int k = 0; k < 3; ++k) {
      lo = lo.cwiseMin(verts_.col(faces_(k, f)));
      hi = hi.cwiseMax(verts_.col(faces_(k, f)));
    }
  }
  nodes_[idx].lo = lo;
  nodes_[idx].hi = hi;
  if (end - begin <= 4 || depth > 40) {
    nodes_[idx].begin = begin;
    nodes_[idx].end = end;
    return idx;
  }
  int axis;
  (hi - lo).maxCoeff(&axis);
  const int mid = (begin + end) / 2;
  std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                   [&](int a, int b) { return centroid_[a][axis] < centroid_[b][axis]; });
  const int l = build(begin, mid, depth + 1);
  const int r = build(mid, end, depth + 1);
  nodes_[idx].left = l;
  nodes_[idx].right = r;
  return idx;
}

static double box_dist2(const Vec3& q, const Vec3& lo, const Vec3& hi) {
  const Vec3 d = (lo - q).cwiseMax(q - hi).cwiseMax(0.0);
  return d.squaredNorm();
}

TriangleBvh::Nearest TriangleBvh::nearest(const Vec3& q) const {
  Nearest best;
  best.distance = std::numeric_limits<double>::infinity();
  // explicit stack ordered by box distance
  struct Entry {
    int node;
    double d2;
  };
  std::vector<Entry> stack;
  stack.push_back({0, box_dist2(q, nodes_[0].lo, nodes_[0].hi)});
  while (!stack.empty()) {
    const Entry e = stack.back();
    stack.pop_back();
    if (e.d2 >= best.distance * best.distance) continue;
    const Node& n = nodes_[e.node];
    if (n.left < 0) {
      for (int i = n.begin; i < n.end; ++i) {
        const int f = order_[i];
        Vec3 cp;
        const double d = point_triangle_distance(q, verts_.col(faces_(0, f)),
                                                 verts_.col(faces_(1, f)),
                                                 verts_.col(faces_(2, f)), &cp);
        if (d < best.distance) {
          best.distance = d;
          best.face = f;
          best.point = cp;
        }
      }
      continue;
    }
    Entry l{n.left, box_dist2(q, nodes_[n.left].lo, nodes_[n.left].hi)};
    Entry r{n.right, box_dist2(q, nodes_[n.right].lo, nodes_[n.right].hi)};
    if (l.d2 < r.d2) std::swap(l, r);  // visit nearer child last (top of stack)
    stack.push_back(l);
    stack.push_back(r);
  }
  return best;
}

namespace {
// Moller-Trumbore; returns t or NaN; degenerate=true on edge grazes.
double ray_tri(const Vec3& o, const Vec3& d, const Vec3& a, const Vec3& b, const Vec3& c,
               bool* degenerate) {
  constexpr double eps = 1e-12;
  const Vec3 e1 = b - a, e2 = c - a;
  const Vec3 p = d.cross(e2);
  const double det = e1.dot(p);
  if (std::abs(det) < eps) return std::numeric_limits<double>::quiet_NaN();
  const double inv = 1.0 / det;
  const Vec3 tv = o - a;
  const double u = tv.dot(p) * inv;
  if (u < -1e-9 || u > 1 + 1e-9) return std::numeric_limits<double>::quiet_NaN();
  const Vec3 qv = tv.cross(e1);
  const double v = d.dot(qv) * inv;
  if (v < -1e-9 || u + v > 1 + 1e-9) return std::numeric_limits<double>::quiet_NaN();
  const double t = e2.dot(qv) * inv;
  if (t <= 1e-12) return std::numeric_limits<double>::quiet_NaN();
  if (u < 1e-9 || v < 1e-9 || u + v > 1 - 1e-9) *degenerate = true;
  return t;
}

bool ray_box(const Vec3& o, const Vec3& inv_d, const Vec3& lo, const Vec3& hi) {
  double tmin = 0, tmax = std::numeric_limits<double>::infinity();
  for (int k = 0; k < 3; ++k) {
    double t0 = (lo[k] - o[k]) * inv_d[k];
    double t1 = (hi[k] - o[k]) * inv_d[k];
    if (t0 > t1) std::swap(t0, t1);
    tmin = std::max(tmin, t0);
    tmax = std::min(tmax, t1);
    if (tmin > tmax) return false;
  }
  return true;
}
}  // namespace

int TriangleBvh::ray_crossings(const Vec3& q, const Vec3& dir) const {
  const Vec3 inv_d = dir.cwiseInverse();
  int count = 0;
  bool degenerate = false;
  std::vector<int> stack{0};
  while (!stack.empty()) {
    const int ni = stack.back();
    stack.pop_back();
    const Node& n = nodes_[ni];
    if (!ray_box(q, inv_d, n.lo, n.hi)) continue;
    if (n.left < 0) {
      for (int i = n.begin; i < n.end; ++i) {
        const int f = order_[i];
        const double t = ray_tri(q, dir, verts_.col(faces_(0, f)), verts_.col(faces_(1, f)),
                                 verts_.col(faces_(2, f)), &degenerate);
        if (!std::isnan(t)) ++count;
        if (degenerate) return -1;
      }
      continue;
    }
    stack.push_back(n.left);
    stack.push_back(n.right);
  }
  return count;
}

int TriangleBvh::inside_sign(const Vec3& q, unsigned seed) const {
  std::mt19937 rng(seed * 2654435761u + 12345u);
  std::normal_distribution<double> gauss(0.0, 1.0);
  Vec3 dir(1, 0.5773, 0.3331);  // deterministic first try, unlikely to graze
  for (int attempt = 0; attempt < 16; ++attempt) {
    const int c = ray_crossings(q, dir.normalized());
    if (c >= 0) return (c % 2 == 0) ? 1 : -1;
    dir = Vec3(gauss(rng), gauss(rng), gauss(rng));
    if (dir.norm() < 1e-6) dir = Vec3(1, 0, 0);
  }
  return 1;  // give up, call it outside
}

}  // namespace avk
