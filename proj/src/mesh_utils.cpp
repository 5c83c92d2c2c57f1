#include "avk/mesh_utils.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <unordered_map>

namespace avk {

Mat3X face_normals_raw(const Mat3X& vertices, const Faces& faces) {
  Mat3X fn(3, faces.cols());
  for (int f = 0; f < faces.cols(); ++f) {
    const Vec3 a = vertices.col(faces(0, f));
    const Vec3 b = vertices.col(faces(1, f));
    const Vec3 c = vertices.col(faces(2, f));
    fn.col(f) = (b - a).cross(c - a);
  }
  return fn;
}

VertexNormals vertex_normals(const SkinnedMesh& mesh) {
  if (mesh.face_count() == 0) throw InputError("vertex_normals: mesh has no faces");
  const Mat3X fn = face_normals_raw(mesh.vertices, mesh.faces);
  Mat3X acc = Mat3X::Zero(3, mesh.vertex_count());
  for (int f = 0; f < mesh.face_count(); ++f)
    for (int k = 0; k < 3; ++k) acc.col(mesh.faces(k, f)) += fn.col(f);
  VertexNormals out;
  out.normals.resize(3, mesh.vertex_count());
  for (int v = 0; v < mesh.vertex_count(); ++v) {
    const double n = acc.col(v).norm();
    if (n < 1e-14) {
      out.normals.col(v) = Vec3(0, 0, 1);
      out.degenerate.push_back(v);
    } else {
      out.normals.col(v) = acc.col(v) / n;
    }
  }
  return out;
}

GraphLaplacian graph_laplacian(const SkinnedMesh& mesh) {
  const int V = mesh.vertex_count();
  std::vector<std::vector<int>> nbr(V);
  auto add = [&](int a, int b) {
    auto& n = nbr[a];
    if (std::find(n.begin(), n.end(), b) == n.end()) n.push_back(b);
  };
  for (int f = 0; f < mesh.face_count(); ++f) {
    for (int k = 0; k < 3; ++k) {
      int a = mesh.faces(k, f), b = mesh.faces((k + 1) % 3, f);
      add(a, b);
      add(b, a);
    }
  }
  GraphLaplacian out;
  std::vector<Eigen::Triplet<double>> trips;
  for (int v = 0; v < V; ++v) {
    if (nbr[v].empty()) {
      out.isolated.push_back(v);
      continue;
    }
    const double inv = 1.0 / static_cast<double>(nbr[v].size());
    trips.emplace_back(v, v, 1.0);
    for (int u : nbr[v]) trips.emplace_back(v, u, -inv);
  }
  out.L.resize(V, V);
  out.L.setFromTriplets(trips.begin(), trips.end());
  return out;
}

namespace {
struct EdgeKey {
  int a, b;  // a < b
  bool operator<(const EdgeKey& o) const { return a != o.a ? a < o.a : b < o.b; }
};
}  // namespace

MeshTopology analyze_topology(const SkinnedMesh& mesh) {
  std::map<EdgeKey, std::pair<int, int>> edges;  // -> (count, directed balance)
  for (int f = 0; f < mesh.face_count(); ++f) {
    for (int k = 0; k < 3; ++k) {
      int a = mesh.faces(k, f), b = mesh.faces((k + 1) % 3, f);
      EdgeKey key{std::min(a, b), std::max(a, b)};
      auto& e = edges[key];
      e.first++;
      e.second += (a < b) ? 1 : -1;
    }
  }
  MeshTopology t;
  t.total_edges = static_cast<int>(edges.size());
  for (auto& [k, e] : edges) {
    if (e.first == 1) t.boundary_edges++;
    if (e.first > 2) t.nonmanifold_edges++;
    if (e.first == 2 && e.second != 0) t.oriented = false;
  }
  t.euler_characteristic = mesh.vertex_count() - t.total_edges + mesh.face_count();
  return t;
}

double signed_volume(const SkinnedMesh& mesh) {
  double vol = 0;
  for (int f = 0; f < mesh.face_count(); ++f) {
    const Vec3 a = mesh.vertices.col(mesh.faces(0, f));
    const Vec3 b = mesh.vertices.col(mesh.faces(1, f));
    const Vec3 c = mesh.vertices.col(mesh.faces(2, f));
    vol += a.dot(b.cross(c)) / 6.0;
  }
  return vol;
}

static SkinnedMesh rebuild_from_map(const SkinnedMesh& mesh, const std::vector<int>& vmap,
                                    int new_count) {
  SkinnedMesh out;
  out.space = mesh.space;
  out.vertices = Mat3X::Zero(3, new_count);
  std::vector<int> hits(new_count, 0);
  const bool colors = mesh.has_colors();
  const bool weights = mesh.has_weights();
  if (colors) out.colors = Mat3X::Zero(3, new_count);
  if (weights) out.weights.w = MatX::Zero(new_count, mesh.weights.joint_count());
  for (int v = 0; v < mesh.vertex_count(); ++v) {
    const int nv = vmap[v];
    if (nv < 0) continue;
    out.vertices.col(nv) += mesh.vertices.col(v);
    if (colors) out.colors.col(nv) += mesh.colors.col(v);
    if (weights) out.weights.w.row(nv) += mesh.weights.w.row(v);
    hits[nv]++;
  }
  for (int v = 0; v < new_count; ++v) {
    const double inv = hits[v] > 0 ? 1.0 / hits[v] : 0.0;
    out.vertices.col(v) *= inv;
    if (colors) out.colors.col(v) *= inv;
    if (weights) {
      out.weights.w.row(v) *= inv;
      const double s = out.weights.w.row(v).sum();
      if (s > 0) out.weights.w.row(v) /= s;
    }
  }
  std::vector<int> tris;
  for (int f = 0; f < mesh.face_count(); ++f) {
    int a = vmap[mesh.faces(0, f)], b = vmap[mesh.faces(1, f)], c = vmap[mesh.faces(2, f)];
    if (a < 0 || b < 0 || c < 0) continue;
    if (a == b || b == c || a == c) continue;
    tris.push_back(a);
    tris.push_back(b);
    tris.push_back(c);
  }
  out.faces.resize(3, tris.size() / 3);
  for (size_t i = 0; i < tris.size() / 3; ++i)
    out.faces.col(i) << tris[3 * i], tris[3 * i + 1], tris[3 * i + 2];
  return out;
}

SkinnedMesh weld_vertices(const SkinnedMesh& mesh, double eps) {
  const double inv = 1.0 / std::max(eps, 1e-12);
  std::unordered_map<uint64_t, int> cells;
  std::vector<int> vmap(mesh.vertex_count(), -1);
  int next = 0;
  for (int v = 0; v < mesh.vertex_count(); ++v) {
    const Vec3 p = mesh.vertices.col(v);
    const uint64_t key = (static_cast<uint64_t>(static_cast<int64_t>(std::floor(p.x() * inv)) & 0x1FFFFF) << 42) |
                         (static_cast<uint64_t>(static_cast<int64_t>(std::floor(p.y() * inv)) & 0x1FFFFF) << 21) |
                         (static_cast<uint64_t>(static_cast<int64_t>(std::floor(p.z() * inv)) & 0x1FFFFF));
    auto [it, inserted] = cells.emplace(key, next);
    vmap[v] = it->second;
    if (inserted) ++next;
  }
  return rebuild_from_map(mesh, vmap, next);
}

SkinnedMesh largest_component(const SkinnedMesh& mesh, int* dropped_components) {
  const int V = mesh.vertex_count();
  std::vector<int> comp(V, -1);
  std::vector<std::vector<int>> adj(V);
  for (int f = 0; f < mesh.face_count(); ++f)
    for (int k = 0; k < 3; ++k) {
      adj[mesh.faces(k, f)].push_back(mesh.faces((k + 1) % 3, f));
      adj[mesh.faces((k + 1) % 3, f)].push_back(mesh.faces(k, f));
    }
  int ncomp = 0;
  std::vector<int> stack;
  for (int v = 0; v < V; ++v) {
    if (comp[v] >= 0 || adj[v].empty()) continue;
    stack.push_back(v);
    comp[v] = ncomp;
    while (!stack.empty()) {
      int u = stack.back();
      stack.pop_back();
      for (int w : adj[u])
        if (comp[w] < 0) {
          comp[w] = ncomp;
          stack.push_back(w);
        }
    }
    ++ncomp;
  }
  std::vector<int> faces_per(ncomp, 0);
  for (int f = 0; f < mesh.face_count(); ++f) faces_per[comp[mesh.faces(0, f)]]++;
  const int best = ncomp == 0 ? -1
                              : static_cast<int>(std::max_element(faces_per.begin(), faces_per.end()) -
                                                 faces_per.begin());
  if (dropped_components) *dropped_components = std::max(0, ncomp - 1);
  std::vector<int> vmap(V, -1);
  int next = 0;
  for (int v = 0; v < V; ++v)
    if (comp[v] == best) vmap[v] = next++;
  return rebuild_from_map(mesh, vmap, next);
}

void laplacian_smooth(SkinnedMesh& mesh, int iterations, double lambda) {
  const int V = mesh.vertex_count();
  std::vector<std::vector<int>> nbr(V);
  auto add = [&](int a, int b) {
    auto& n = nbr[a];
    if (std::find(n.begin(), n.end(), b) == n.end()) n.push_back(b);
  };
  for (int f = 0; f < mesh.face_count(); ++f)
    for (int k = 0; k < 3; ++k) {
      add(mesh.faces(k, f), mesh.faces((k + 1) % 3, f));
      add(mesh.faces((k + 1) % 3, f), mesh.faces(k, f));
    }
  Mat3X next(3, V);
  for (int it = 0; it < iterations; ++it) {
    for (int v = 0; v < V; ++v) {
      if (nbr[v].empty()) {
        next.col(v) = mesh.vertices.col(v);
        continue;
      }
      Vec3 mean = Vec3::Zero();
      for (int u : nbr[v]) mean += mesh.vertices.col(u);
      mean /= static_cast<double>(nbr[v].size());
      next.col(v) = mesh.vertices.col(v) + lambda * (mean - mesh.vertices.col(v));
    }
    mesh.vertices.swap(next);
  }
}

SkinnedMesh subdivide_midpoint(const SkinnedMesh& mesh) {
  const int V = mesh.vertex_count();
  std::map<EdgeKey, int> midpoint;
  SkinnedMesh out;
  out.space = mesh.space;
  const bool colors = mesh.has_colors();
  const bool weights = mesh.has_weights();
  std::vector<Vec3> verts;
  std::vector<Vec3> cols;
  std::vector<VecX> wts;
  verts.reserve(V * 4);
  for (int v = 0; v < V; ++v) {
    verts.push_back(mesh.vertices.col(v));
    if (colors) cols.push_back(mesh.colors.col(v));
    if (weights) wts.push_back(mesh.weights.w.row(v).transpose());
  }
  auto mid = [&](int a, int b) {
    EdgeKey key{std::min(a, b), std::max(a, b)};
    auto it = midpoint.find(key);
    if (it != midpoint.end()) return it->second;
    const int idx = static_cast<int>(verts.size());
    verts.push_back(0.5 * (mesh.vertices.col(a) + mesh.vertices.col(b)));
    if (colors) cols.push_back(0.5 * (mesh.colors.col(a) + mesh.colors.col(b)));
    if (weights) {
      VecX w = 0.5 * (mesh.weights.w.row(a) + mesh.weights.w.row(b)).transpose();
      const double s = w.sum();
      if (s > 0) w /= s;
      wts.push_back(w);
    }
    midpoint.emplace(key, idx);
    return idx;
  };
  out.faces.resize(3, mesh.face_count() * 4);
  int nf = 0;
  for (int f = 0; f < mesh.face_count(); ++f) {
    const int a = mesh.faces(0, f), b = mesh.faces(1, f), c = mesh.faces(2, f);
    const int ab = mid(a, b), bc = mid(b, c), ca = mid(c, a);
    out.faces.col(nf++) << a, ab, ca;
    out.faces.col(nf++) << ab, b, bc;
    out.faces.col(nf++) << ca, bc, c;
    out.faces.col(nf++) << ab, bc, ca;
  }
  out.vertices.resize(3, verts.size());
  for (size_t i = 0; i < verts.size(); ++i) out.vertices.col(i) = verts[i];
  if (colors) {
    out.colors.resize(3, cols.size());
    for (size_t i = 0; i < cols.size(); ++i) out.colors.col(i) = cols[i];
  }
  if (weights) {
    out.weights.w.resize(wts.size(), mesh.weights.joint_count());
    for (size_t i = 0; i < wts.size(); ++i) out.weights.w.row(i) = wts[i].transpose();
  }
  return out;
}

SkinnedMesh decimate_to(const SkinnedMesh& mesh, int target_vertices) {
  if (target_vertices >= mesh.vertex_count() || mesh.vertex_count() == 0) return mesh;
  const Vec3 lo = mesh.vertices.rowwise().minCoeff();
  const Vec3 hi = mesh.vertices.rowwise().maxCoeff();
  const double extent = std::max((hi - lo).maxCoeff(), 1e-9);
  // Surface-like scaling: cluster count grows ~ (extent/cell)^2 on a surface.
  double cell = extent / std::sqrt(static_cast<double>(target_vertices));
  SkinnedMesh best = mesh;
  for (int iter = 0; iter < 24; ++iter) {
    SkinnedMesh cand = weld_vertices(mesh, cell);
    best = cand;
    if (cand.vertex_count() <= target_vertices * 5 / 4 &&
        cand.vertex_count() >= target_vertices * 3 / 4)
      break;
    cell *= cand.vertex_count() > target_vertices ? 1.25 : 0.85;
  }
  return best;
}

SkinnedMesh drop_faces(const SkinnedMesh& mesh, const std::vector<char>& keep_face,
                       std::vector<int>* old_vertex_of_new) {
  std::vector<char> used(mesh.vertex_count(), 0);
  int kept = 0;
  for (int f = 0; f < mesh.face_count(); ++f)
    if (keep_face[f]) {
      ++kept;
      for (int k = 0; k < 3; ++k) used[mesh.faces(k, f)] = 1;
    }
  std::vector<int> vmap(mesh.vertex_count(), -1);
  int next = 0;
  for (int v = 0; v < mesh.vertex_count(); ++v)
    if (used[v]) vmap[v] = next++;
  SkinnedMesh out = rebuild_from_map(mesh, vmap, next);
  // rebuild_from_map kept all faces whose vertices survived; restrict to kept
  Faces faces(3, kept);
  int nf = 0;
  for (int f = 0; f < mesh.face_count(); ++f) {
    if (!keep_face[f]) continue;
    faces.col(nf++) << vmap[mesh.faces(0, f)], vmap[mesh.faces(1, f)], vmap[mesh.faces(2, f)];
  }
  out.faces = faces;
  if (old_vertex_of_new) {
    old_vertex_of_new->assign(next, -1);
    for (int v = 0; v < mesh.vertex_count(); ++v)
      if (vmap[v] >= 0) (*old_vertex_of_new)[vmap[v]] = v;
  }
  return out;
}

}  // namespace avk
