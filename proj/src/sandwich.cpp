#include "avk/sandwich.hpp"

#include <map>

#include "avk/mesh_utils.hpp"

namespace avk {

void FrameObservation::validate() const {
  const int W = width(), H = height();
  if (W <= 0 || H <= 0) throw InputError("observation: empty maps");
  auto check_dims = [&](int w, int h, const char* what) {
    if (w != W || h != H)
      throw InputError(std::string("observation: resolution mismatch in ") + what);
  };
  check_dims(depth_back.width, depth_back.height, "depth_back");
  check_dims(normal_front.width, normal_front.height, "normal_front");
  check_dims(normal_back.width, normal_back.height, "normal_back");
  check_dims(color_front.width, color_front.height, "color_front");
  check_dims(color_back.width, color_back.height, "color_back");
  check_dims(latent_front.width, latent_front.height, "latent_front");
  check_dims(latent_back.width, latent_back.height, "latent_back");
  check_dims(mask.width, mask.height, "mask");
  camera.validate();
  if (camera.width != W || camera.height != H)
    throw InputError("observation: camera resolution mismatch");
  long joint = 0, ordered = 0;
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      if ((depth_front.at(x, y) > 0 || depth_back.at(x, y) > 0) && mask.at(x, y) == 0)
        throw InputError("observation: valid depth outside the mask");
      if (valid_front(x, y) && valid_back(x, y)) {
        ++joint;
        if (depth_back.at(x, y) >= depth_front.at(x, y)) ++ordered;
      }
    }
  if (joint > 0 && ordered < 0.999 * joint)
    throw InputError("observation: back surface in front of the front surface");
}

Mat3X backproject_depth(const Image<double>& depth, const ImageU8& mask,
                        const Camera& camera,
                        std::vector<std::pair<int, int>>* pixels) {
  camera.validate();
  const CameraFrame cam(camera);
  std::vector<Vec3> pts;
  if (pixels) pixels->clear();
  for (int y = 0; y < depth.height; ++y)
    for (int x = 0; x < depth.width; ++x) {
      const double d = depth.at(x, y);
      if (d <= 0 || (!mask.empty() && mask.at(x, y) == 0)) continue;
      if (d < camera.near_m || d > camera.far_m) continue;
      pts.push_back(cam.backproject(x + 0.5, y + 0.5, d));
      if (pixels) pixels->emplace_back(x, y);
    }
  Mat3X out(3, pts.size());
  for (size_t i = 0; i < pts.size(); ++i) out.col(i) = pts[i];
  return out;
}

SkinnedMesh mesh_from_depth_pair(const FrameObservation& frame, const CodecModel& codec,
                                 double depth_jump_threshold, SandwichStats* stats) {
  frame.validate();
  const int W = frame.width(), H = frame.height();
  const CameraFrame cam(frame.camera);
  SandwichStats local;
  SandwichStats& st = stats ? *stats : local;
  st = SandwichStats{};

  // jointly valid pixels become a front and a back vertex each
  Image<int> fid(W, H, 1, -1), bid(W, H, 1, -1);
  std::vector<Vec3> verts;
  std::vector<Vec3> colors;
  std::vector<Vec3> latents;
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      const bool vf = frame.valid_front(x, y), vb = frame.valid_back(x, y);
      if (vf) ++st.valid_front;
      if (vb) ++st.valid_back;
      if (vf != vb) ++st.hole_pixels;
      if (!(vf && vb)) continue;
      fid.at(x, y) = static_cast<int>(verts.size());
      verts.push_back(cam.backproject(x + 0.5, y + 0.5, frame.depth_front.at(x, y)));
      colors.emplace_back(frame.color_front.at(x, y, 0), frame.color_front.at(x, y, 1),
                          frame.color_front.at(x, y, 2));
      latents.emplace_back(frame.latent_front.at(x, y, 0), frame.latent_front.at(x, y, 1),
                           frame.latent_front.at(x, y, 2));
      bid.at(x, y) = static_cast<int>(verts.size());
      verts.push_back(cam.backproject(x + 0.5, y + 0.5, frame.depth_back.at(x, y)));
      colors.emplace_back(frame.color_back.at(x, y, 0), frame.color_back.at(x, y, 1),
                          frame.color_back.at(x, y, 2));
      latents.emplace_back(frame.latent_back.at(x, y, 0), frame.latent_back.at(x, y, 1),
                           frame.latent_back.at(x, y, 2));
    }
  if (verts.empty()) throw InputError("mesh_from_depth_pair: no valid pixels");

  auto jump = [&](const Image<double>& d, int x0, int y0, int x1, int y1) {
    return std::abs(d.at(x0, y0) - d.at(x1, y1));
  };
  // quad (x, y) spans pixels (x..x+1, y..y+1); kept when all four corners are
  // valid and no bounding edge jumps in depth
  Image<char> kept(W - 1, H - 1, 1, 0);
  for (int y = 0; y + 1 < H; ++y)
    for (int x = 0; x + 1 < W; ++x) {
      if (fid.at(x, y) < 0 || fid.at(x + 1, y) < 0 || fid.at(x, y + 1) < 0 ||
          fid.at(x + 1, y + 1) < 0)
        continue;
      bool split = false;
      const int edges[4][4] = {{x, y, x + 1, y}, {x, y, x, y + 1},
                               {x + 1, y, x + 1, y + 1}, {x, y + 1, x + 1, y + 1}};
      for (auto& e : edges)
        if (jump(frame.depth_front, e[0], e[1], e[2], e[3]) > depth_jump_threshold ||
            jump(frame.depth_back, e[0], e[1], e[2], e[3]) > depth_jump_threshold)
          split = true;
      if (split)
        ++st.skipped_quads;
      else
        kept.at(x, y) = 1;
    }
  // Diagonally-kept quads around a corner would give that corner four boundary
  // edges and the silhouette stitch a non-manifold seam; drop one quad of each
  // such bowtie until none remain.
  for (bool changed = true; changed;) {
    changed = false;
    for (int y = 0; y + 1 < H - 1; ++y)
      for (int x = 0; x + 1 < W - 1; ++x) {
        const bool k00 = kept.at(x, y), k10 = kept.at(x + 1, y);
        const bool k01 = kept.at(x, y + 1), k11 = kept.at(x + 1, y + 1);
        if (k00 && k11 && !k10 && !k01) {
          kept.at(x, y) = 0;
          ++st.skipped_quads;
          changed = true;
        } else if (k10 && k01 && !k00 && !k11) {
          kept.at(x + 1, y) = 0;
          ++st.skipped_quads;
          changed = true;
        }
      }
  }

  std::vector<Eigen::Vector3i> faces;
  std::map<std::pair<int, int>, int> front_edge_use;  // undirected, front sheet only
  auto add_front = [&](int a, int b, int c) {
    faces.emplace_back(a, b, c);
    const int vs[3][2] = {{a, b}, {b, c}, {c, a}};
    for (auto& e : vs)
      ++front_edge_use[{std::min(e[0], e[1]), std::max(e[0], e[1])}];
  };
  for (int y = 0; y + 1 < H; ++y)
    for (int x = 0; x + 1 < W; ++x) {
      if (!kept.at(x, y)) continue;
      const int f00 = fid.at(x, y), f10 = fid.at(x + 1, y);
      const int f01 = fid.at(x, y + 1), f11 = fid.at(x + 1, y + 1);
      const int b00 = bid.at(x, y), b10 = bid.at(x + 1, y);
      const int b01 = bid.at(x, y + 1), b11 = bid.at(x + 1, y + 1);
      // front sheet faces the camera, back sheet faces away
      add_front(f00, f11, f10);
      add_front(f00, f01, f11);
      faces.emplace_back(b00, b10, b11);
      faces.emplace_back(b00, b11, b01);
    }

  // stitch the silhouette ring: every boundary edge of the front sheet gets a
  // quad down to the corresponding back vertices, oriented against its face
  const int front_face_count = static_cast<int>(faces.size());
  std::vector<int> front_of(verts.size(), -1);  // front vertex -> back vertex
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x)
      if (fid.at(x, y) >= 0) front_of[fid.at(x, y)] = bid.at(x, y);
  for (int f = 0; f < front_face_count; ++f) {
    for (int k = 0; k < 3; ++k) {
      const int a = faces[f](k), b = faces[f]((k + 1) % 3);
      if (front_of[a] < 0 || front_of[b] < 0) continue;  // back-sheet face
      auto it = front_edge_use.find({std::min(a, b), std::max(a, b)});
      if (it == front_edge_use.end() || it->second != 1) continue;
      const int ab = front_of[a], bb = front_of[b];
      faces.emplace_back(b, a, ab);
      faces.emplace_back(b, ab, bb);
    }
  }

  SkinnedMesh mesh;
  mesh.space = SpaceTag::Posed;
  mesh.vertices.resize(3, verts.size());
  mesh.colors.resize(3, verts.size());
  Mat3X lat(3, verts.size());
  for (size_t i = 0; i < verts.size(); ++i) {
    mesh.vertices.col(i) = verts[i];
    mesh.colors.col(i) = colors[i].cwiseMax(0.0).cwiseMin(1.0);
    lat.col(i) = latents[i];
  }
  mesh.faces.resize(3, faces.size());
  for (size_t i = 0; i < faces.size(); ++i) mesh.faces.col(i) = faces[i];

  // repair: drop excess faces on non-manifold edges
  std::map<std::pair<int, int>, std::vector<int>> edge_faces;
  for (int f = 0; f < mesh.face_count(); ++f)
    for (int k = 0; k < 3; ++k) {
      const int a = mesh.faces(k, f), b = mesh.faces((k + 1) % 3, f);
      edge_faces[{std::min(a, b), std::max(a, b)}].push_back(f);
    }
  std::vector<char> keep(mesh.face_count(), 1);
  for (const auto& [edge, fl] : edge_faces)
    if (fl.size() > 2) {
      ++st.repaired_edges;
      for (size_t i = 2; i < fl.size(); ++i) keep[fl[i]] = 0;
    }
  // the drop pass also sheds vertices that never made it into a quad
  std::vector<int> old_of_new;
  mesh = drop_faces(mesh, keep, &old_of_new);
  Mat3X lat2(3, mesh.vertex_count());
  for (int v = 0; v < mesh.vertex_count(); ++v) lat2.col(v) = lat.col(old_of_new[v]);
  lat = lat2;

  mesh.weights = codec.decode(lat);
  mesh.validate();
  return mesh;
}

}  // namespace avk
