#include "avk/canonical.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "avk/bvh.hpp"
#include "avk/io.hpp"
#include "avk/marching_cubes.hpp"
#include "avk/mesh_utils.hpp"
#include "avk/skinning.hpp"
#include "json.hpp"

namespace avk {

namespace {

// Parity signs for all voxel centers: one x-line per (iy, iz) row, faces
// bucketed by their (y, z) footprint. Degenerate grazes retry on a nudged row.
std::vector<int8_t> row_parity_signs(const SkinnedMesh& mesh, const GridSpec& spec) {
  std::vector<std::vector<int>> rows(static_cast<size_t>(spec.ny) * spec.nz);
  auto row_range = [&](double lo, double hi, double origin, int n) {
    int a = static_cast<int>(std::floor((lo - origin) / spec.voxel_size)) - 1;
    int b = static_cast<int>(std::ceil((hi - origin) / spec.voxel_size)) + 1;
    return std::pair<int, int>(std::max(0, a), std::min(n - 1, b));
  };
  for (int f = 0; f < mesh.face_count(); ++f) {
    double ylo = 1e30, yhi = -1e30, zlo = 1e30, zhi = -1e30;
    for (int k = 0; k < 3; ++k) {
      const Vec3 v = mesh.vertices.col(mesh.faces(k, f));
      ylo = std::min(ylo, v.y());
      yhi = std::max(yhi, v.y());
      zlo = std::min(zlo, v.z());
      zhi = std::max(zhi, v.z());
    }
    const auto [ya, yb] = row_range(ylo, yhi, spec.origin.y(), spec.ny);
    const auto [za, zb] = row_range(zlo, zhi, spec.origin.z(), spec.nz);
    for (int iz = za; iz <= zb; ++iz)
      for (int iy = ya; iy <= yb; ++iy)
        rows[static_cast<size_t>(iz) * spec.ny + iy].push_back(f);
  }
  std::vector<int8_t> sign(spec.count(), 1);
  std::vector<double> xs;
  for (int iz = 0; iz < spec.nz; ++iz)
    for (int iy = 0; iy < spec.ny; ++iy) {
      const auto& bucket = rows[static_cast<size_t>(iz) * spec.ny + iy];
      if (bucket.empty()) continue;
      double y0 = spec.origin.y() + spec.voxel_size * iy;
      double z0 = spec.origin.z() + spec.voxel_size * iz;
      bool clean = false;
      for (int attempt = 0; attempt < 16 && !clean; ++attempt) {
        clean = true;
        xs.clear();
        for (int f : bucket) {
          const Vec3 a = mesh.vertices.col(mesh.faces(0, f));
          const Vec3 b = mesh.vertices.col(mesh.faces(1, f));
          const Vec3 c = mesh.vertices.col(mesh.faces(2, f));
          // 2D barycentrics in the (y, z) plane
          const double d00 = (b.y() - a.y()) * (c.z() - a.z()) -
                             (b.z() - a.z()) * (c.y() - a.y());
          if (std::abs(d00) < 1e-14) continue;  // edge-on triangle
          const double w1 = ((y0 - a.y()) * (c.z() - a.z()) -
                             (z0 - a.z()) * (c.y() - a.y())) / d00;
          const double w2 = ((b.y() - a.y()) * (z0 - a.z()) -
                             (b.z() - a.z()) * (y0 - a.y())) / d00;
          const double w0 = 1.0 - w1 - w2;
          const double eps = 1e-10;
          if (w0 < -eps || w1 < -eps || w2 < -eps) continue;
          if (w0 < eps || w1 < eps || w2 < eps) {  // graze: nudge the row
            clean = false;
            y0 += 3.7e-7 * (attempt + 1);
            z0 += 1.9e-7 * (attempt + 1);
            break;
          }
          xs.push_back(w0 * a.x() + w1 * b.x() + w2 * c.x());
        }
      }
      std::sort(xs.begin(), xs.end());
      for (int ix = 0; ix < spec.nx; ++ix) {
        const double x = spec.origin.x() + spec.voxel_size * ix;
        const size_t below = std::lower_bound(xs.begin(), xs.end(), x) - xs.begin();
        // odd number of crossings behind the point means inside
        if ((xs.size() - below) % 2 == 1)
          sign[spec.index(ix, iy, iz)] = -1;
      }
    }
  return sign;
}

}  // namespace

CanonicalizedFrame canonicalize_frame(const SkinnedMesh& posed,
                                      const JointTransforms& transforms,
                                      double stretch_factor) {
  if (!posed.has_weights()) throw InputError("canonicalize_frame: posed mesh has no weights");
  if (stretch_factor <= 1.0) throw InputError("canonicalize_frame: stretch_factor must exceed 1");
  CanonicalizedFrame out;
  out.mesh_p = posed;
  out.mesh_p.space = SpaceTag::Posed;
  out.transforms = transforms;
  const InverseSkinResult inv = lbs_inverse(posed.vertices, posed.weights, transforms);
  out.failed_vertices = inv.failure_count;
  out.mesh_c = posed;
  out.mesh_c.vertices = inv.points;
  out.mesh_c.space = SpaceTag::Canonical;
  std::vector<char> keep(posed.face_count(), 1);
  for (int f = 0; f < posed.face_count(); ++f) {
    bool drop = false;
    for (int k = 0; k < 3 && !drop; ++k) {
      const int a = posed.faces(k, f), b = posed.faces((k + 1) % 3, f);
      if (inv.failure_count > 0 && (inv.failed[a] || inv.failed[b])) drop = true;
      const double lp = (posed.vertices.col(a) - posed.vertices.col(b)).norm();
      const double lc = (out.mesh_c.vertices.col(a) - out.mesh_c.vertices.col(b)).norm();
      if (lc > stretch_factor * std::max(lp, 1e-12)) drop = true;
    }
    if (drop) {
      keep[f] = 0;
      ++out.removed_faces;
    }
  }
  if (out.removed_faces > 0) {
    // keep full vertex arrays so mesh_c and mesh_p stay index-aligned
    Faces kept(3, posed.face_count() - out.removed_faces);
    int n = 0;
    for (int f = 0; f < posed.face_count(); ++f)
      if (keep[f]) kept.col(n++) = out.mesh_c.faces.col(f);
    out.mesh_c.faces = kept;
  }
  out.warning_high_removal = out.removed_faces * 2 > posed.face_count();
  return out;
}

SdfGrid sdf_from_mesh(const SkinnedMesh& mesh, const GridSpec& spec) {
  if (mesh.face_count() == 0) throw InputError("sdf_from_mesh: empty mesh");
  SdfGrid grid;
  grid.spec = spec;
  grid.values.resize(spec.count());
  grid.source.assign(spec.count(), static_cast<uint8_t>(SdfSource::CanonicalBranch));
  const bool watertight = analyze_topology(mesh).watertight();
  grid.unsigned_fallback = !watertight;
  const TriangleBvh bvh(mesh.vertices, mesh.faces);
  std::vector<int8_t> sign;
  if (watertight) sign = row_parity_signs(mesh, spec);
  for (int iz = 0; iz < spec.nz; ++iz)
    for (int iy = 0; iy < spec.ny; ++iy)
      for (int ix = 0; ix < spec.nx; ++ix) {
        const size_t i = spec.index(ix, iy, iz);
        const double d = bvh.nearest(spec.center(ix, iy, iz)).distance;
        grid.values[i] = static_cast<float>(watertight ? sign[i] * d : d);
      }
  return grid;
}

SdfGrid fuse_sdf(const std::vector<CanonicalizedFrame>& frames,
                 const SkinnedMesh& template_c, const GridSpec& spec, double tau) {
  if (frames.empty()) throw InputError("fuse_sdf: no frames");
  if (!template_c.has_weights()) throw InputError("fuse_sdf: template has no weights");

  SdfGrid fused = sdf_from_mesh(template_c, spec);  // S_c everywhere
  if (fused.unsigned_fallback)
    throw InputError("fuse_sdf: template must be watertight");

  struct FrameCtx {
    std::unique_ptr<NearestVertex> gate;  // retained canonical vertices
    std::unique_ptr<TriangleBvh> posed;
    bool posed_watertight = false;
  };
  std::vector<FrameCtx> ctx(frames.size());
  for (size_t fi = 0; fi < frames.size(); ++fi) {
    const auto& fr = frames[fi];
    std::vector<char> used(fr.mesh_c.vertex_count(), 0);
    for (int f = 0; f < fr.mesh_c.face_count(); ++f)
      for (int k = 0; k < 3; ++k) used[fr.mesh_c.faces(k, f)] = 1;
    int n = 0;
    for (char u : used) n += u;
    if (n == 0) throw InputError("fuse_sdf: frame has no retained canonical vertices");
    Mat3X retained(3, n);
    n = 0;
    for (int v = 0; v < fr.mesh_c.vertex_count(); ++v)
      if (used[v]) retained.col(n++) = fr.mesh_c.vertices.col(v);
    ctx[fi].gate = std::make_unique<NearestVertex>(retained);
    ctx[fi].posed = std::make_unique<TriangleBvh>(fr.mesh_p.vertices, fr.mesh_p.faces);
    ctx[fi].posed_watertight = analyze_topology(fr.mesh_p).watertight();
    if (!ctx[fi].posed_watertight)
      throw InputError("fuse_sdf: posed mesh of frame " + std::to_string(fi) +
                       " is not watertight");
  }
  const NearestVertex tmpl_nearest(template_c.vertices);

  for (int iz = 0; iz < spec.nz; ++iz)
    for (int iy = 0; iy < spec.ny; ++iy)
      for (int ix = 0; ix < spec.nx; ++ix) {
        const size_t i = spec.index(ix, iy, iz);
        const Vec3 xc = spec.center(ix, iy, iz);
        double sum = 0;
        int passing = 0;
        bool gated = false;
        int tv = -1;
        for (size_t fi = 0; fi < frames.size(); ++fi) {
          if (!ctx[fi].gate->any_within(xc, tau)) continue;
          gated = true;
          if (tv < 0) tv = tmpl_nearest.query(xc);
          const BlendedTransform blended =
              blend_transforms(template_c.weights.w.row(tv), frames[fi].transforms);
          if (std::abs(blended.A.determinant()) < 1e-12) continue;  // singular blend
          const Vec3 xp = blended.apply(xc);
          const auto near = ctx[fi].posed->nearest(xp);
          const int s = ctx[fi].posed->inside_sign(xp);
          sum += s * near.distance;
          ++passing;
        }
        if (gated) {
          fused.source[i] = static_cast<uint8_t>(SdfSource::PosedBranch);
          if (passing > 0) fused.values[i] = static_cast<float>(sum / passing);
        }
      }
  return fused;
}

SkinnedMesh extract_mesh(const SdfGrid& grid, const SkinnedMesh& template_c,
                         ExtractStats* stats) {
  SkinnedMesh mesh = marching_cubes(grid.values, grid.spec.nx, grid.spec.ny,
                                    grid.spec.nz, grid.spec.origin,
                                    grid.spec.voxel_size, 0.0);
  int dropped = 0;
  mesh = largest_component(mesh, &dropped);
  if (stats) stats->dropped_components = dropped;
  laplacian_smooth(mesh, 10, 0.5);
  mesh = weld_vertices(mesh, 1e-9);
  mesh.space = SpaceTag::Canonical;
  if (template_c.has_weights())
    mesh.weights = transfer_weights_nearest(mesh.vertices, template_c);
  if (template_c.has_colors()) {
    const NearestVertex nearest(template_c.vertices);
    mesh.colors.resize(3, mesh.vertex_count());
    for (int v = 0; v < mesh.vertex_count(); ++v)
      mesh.colors.col(v) = template_c.colors.col(nearest.query(mesh.vertices.col(v)));
  }
  mesh.validate();
  return mesh;
}

int select_reference_frame(const std::vector<CanonicalizedFrame>& frames,
                           const SkinnedMesh& template_c) {
  if (frames.empty()) throw InputError("select_reference_frame: no frames");
  const TriangleBvh tmpl_bvh(template_c.vertices, template_c.faces);
  int best = 0;
  double best_score = std::numeric_limits<double>::max();
  for (size_t fi = 0; fi < frames.size(); ++fi) {
    const Mat3X& pts = frames[fi].mesh_c.vertices;
    if (pts.cols() == 0) continue;
    double to_tmpl = 0;
    for (int v = 0; v < pts.cols(); ++v) to_tmpl += tmpl_bvh.nearest(pts.col(v)).distance;
    to_tmpl /= pts.cols();
    const NearestVertex frame_nearest(pts);
    double from_tmpl = 0;
    for (int v = 0; v < template_c.vertex_count(); ++v)
      from_tmpl += std::sqrt(frame_nearest.query_dist2(template_c.vertices.col(v)));
    from_tmpl /= template_c.vertex_count();
    const double score = 0.5 * (to_tmpl + from_tmpl);
    if (score < best_score) {
      best_score = score;
      best = static_cast<int>(fi);
    }
  }
  return best;
}

void save_sdf(const SdfGrid& grid, const std::filesystem::path& volume_path,
              const std::filesystem::path& header_path) {
  std::ofstream out(volume_path, std::ios::binary);
  if (!out) throw InputError("cannot write " + volume_path.string());
  out.write(reinterpret_cast<const char*>(grid.values.data()),
            grid.values.size() * sizeof(float));
  out.write(reinterpret_cast<const char*>(grid.source.data()), grid.source.size());
  nlohmann::json h;
  h["origin"] = {grid.spec.origin.x(), grid.spec.origin.y(), grid.spec.origin.z()};
  h["voxel_size"] = grid.spec.voxel_size;
  h["dims"] = {grid.spec.nx, grid.spec.ny, grid.spec.nz};
  h["unsigned_fallback"] = grid.unsigned_fallback;
  h["volume"] = volume_path.filename().string();
  io::write_text_file(header_path, h.dump(2) + "\n");
}

SdfGrid load_sdf(const std::filesystem::path& volume_path,
                 const std::filesystem::path& header_path) {
  const auto h = nlohmann::json::parse(io::read_text_file(header_path));
  SdfGrid grid;
  grid.spec.origin = Vec3(h.at("origin")[0], h.at("origin")[1], h.at("origin")[2]);
  grid.spec.voxel_size = h.at("voxel_size");
  grid.spec.nx = h.at("dims")[0];
  grid.spec.ny = h.at("dims")[1];
  grid.spec.nz = h.at("dims")[2];
  grid.unsigned_fallback = h.at("unsigned_fallback");
  std::ifstream in(volume_path, std::ios::binary);
  if (!in) throw InputError("cannot open " + volume_path.string());
  grid.values.resize(grid.spec.count());
  grid.source.resize(grid.spec.count());
  in.read(reinterpret_cast<char*>(grid.values.data()), grid.values.size() * sizeof(float));
  in.read(reinterpret_cast<char*>(grid.source.data()), grid.source.size());
  if (!in) throw InputError("truncated SDF volume " + volume_path.string());
  return grid;
}

}  // namespace avk
