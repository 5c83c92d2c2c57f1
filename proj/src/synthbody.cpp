#include "avk/synthbody.hpp"

#include <cmath>
#include <random>

#include "avk/io.hpp"
#include "avk/kinematics.hpp"
#include "avk/marching_cubes.hpp"
#include "avk/mesh_utils.hpp"
#include "avk/raster.hpp"
#include "avk/skinning.hpp"
#include "json.hpp"

namespace avk {

namespace {

struct JointDef {
  const char* name;
  int parent;
  double x, y, z;
  double radius;  // bone capsule parent -> joint; 0 for the root
  double limit;   // anatomical rotation limit, radians
};

// Rest layout: y up, pelvis at the origin, heels at y = -0.95, crown at
// y = +0.75 (head center 0.65 + radius 0.10) for a 1.70 m body.
const JointDef kJoints[24] = {
    {"pelvis", -1, 0.00, 0.00, 0.00, 0.000, 0.20},
    {"spine1", 0, 0.00, 0.13, 0.00, 0.120, 0.25},
    {"spine2", 1, 0.00, 0.26, 0.00, 0.120, 0.25},
    {"spine3", 2, 0.00, 0.40, 0.00, 0.110, 0.25},
    {"neck", 3, 0.00, 0.52, 0.00, 0.060, 0.30},
    {"head", 4, 0.00, 0.65, 0.00, 0.100, 0.30},
    {"clavicle_l", 3, 0.07, 0.46, 0.00, 0.070, 0.10},
    {"shoulder_l", 6, 0.20, 0.46, 0.00, 0.070, 0.90},
    {"elbow_l", 7, 0.49, 0.46, 0.00, 0.055, 1.20},
    {"wrist_l", 8, 0.75, 0.46, 0.00, 0.045, 0.30},
    {"hand_l", 9, 0.85, 0.46, 0.00, 0.040, 0.30},
    {"clavicle_r", 3, -0.07, 0.46, 0.00, 0.070, 0.10},
    {"shoulder_r", 11, -0.20, 0.46, 0.00, 0.070, 0.90},
    {"elbow_r", 12, -0.49, 0.46, 0.00, 0.055, 1.20},
    {"wrist_r", 13, -0.75, 0.46, 0.00, 0.045, 0.30},
    {"hand_r", 14, -0.85, 0.46, 0.00, 0.040, 0.30},
    {"hip_l", 0, 0.10, -0.08, 0.00, 0.090, 0.70},
    {"knee_l", 16, 0.10, -0.50, 0.00, 0.085, 1.00},
    {"ankle_l", 17, 0.10, -0.88, 0.00, 0.060, 0.40},
    {"foot_l", 18, 0.10, -0.90, 0.12, 0.050, 0.30},
    {"hip_r", 0, -0.10, -0.08, 0.00, 0.090, 0.70},
    {"knee_r", 20, -0.10, -0.50, 0.00, 0.085, 1.00},
    {"ankle_r", 21, -0.10, -0.88, 0.00, 0.060, 0.40},
    {"foot_r", 22, -0.10, -0.90, 0.12, 0.050, 0.30},
};

double segment_distance(const Vec3& x, const Vec3& a, const Vec3& b) {
  const Vec3 ab = b - a;
  const double len2 = ab.squaredNorm();
  const double t = len2 > 0 ? std::clamp((x - a).dot(ab) / len2, 0.0, 1.0) : 0.0;
  return (x - (a + t * ab)).norm();
}

bool skirt_bone(int joint) {
  return joint == 16 || joint == 17 || joint == 20 || joint == 21;
}

}  // namespace

Skeleton default_skeleton() {
  Skeleton s;
  s.parent.resize(24);
  s.rest_position.resize(3, 24);
  for (int j = 0; j < 24; ++j) {
    s.parent[j] = kJoints[j].parent;
    s.rest_position.col(j) = Vec3(kJoints[j].x, kJoints[j].y, kJoints[j].z);
    s.name.push_back(kJoints[j].name);
  }
  s.validate();
  return s;
}

std::vector<CapsuleBone> body_bones(const Skeleton& skeleton, const BodySpec& spec) {
  if (spec.radius_scale <= 0 || spec.grid_resolution < 16)
    throw InputError("body_bones: invalid spec");
  std::vector<CapsuleBone> bones;
  for (int j = 0; j < skeleton.joint_count(); ++j) {
    const int p = skeleton.parent[j];
    if (p < 0) continue;
    CapsuleBone bone;
    bone.joint = j;
    bone.a = skeleton.rest_position.col(p);
    bone.b = skeleton.rest_position.col(j);
    bone.radius = kJoints[j].radius * spec.radius_scale;
    if (bone.radius >= (bone.b - bone.a).norm())
      throw InputError("body_bones: capsule radius exceeds bone length at joint " +
                       skeleton.name[j]);
    if (spec.cloth_offset > 0 && skirt_bone(j)) bone.radius += spec.cloth_offset;
    bones.push_back(bone);
  }
  return bones;
}

double body_sdf(const Vec3& x, const std::vector<CapsuleBone>& bones) {
  double d = std::numeric_limits<double>::max();
  for (const auto& bone : bones)
    d = std::min(d, segment_distance(x, bone.a, bone.b) - bone.radius);
  return d;
}

SkinWeights body_weights(const Mat3X& points, const Skeleton& skeleton,
                         double smoothing_length) {
  const int J = skeleton.joint_count();
  const auto children = skeleton.children();
  SkinWeights w;
  w.w.resize(points.cols(), J);
  for (int i = 0; i < points.cols(); ++i) {
    const Vec3 x = points.col(i);
    Eigen::RowVectorXd score(J);
    for (int j = 0; j < J; ++j) {
      // influence region of joint j: the bones it drives (j -> children)
      double d = std::numeric_limits<double>::max();
      for (int c : children[j])
        d = std::min(d, segment_distance(x, skeleton.rest_position.col(j),
                                         skeleton.rest_position.col(c)));
      if (children[j].empty()) d = (x - skeleton.rest_position.col(j)).norm();
      score(j) = -d / smoothing_length;
    }
    score.array() -= score.maxCoeff();
    Eigen::RowVectorXd e = score.array().exp();
    w.w.row(i) = e / e.sum();
  }
  return w;
}

SkinnedMesh build_body(const BodySpec& spec) {
  const Skeleton skeleton = default_skeleton();
  const auto bones = body_bones(skeleton, spec);
  const int n = spec.grid_resolution + 1;
  const double side = 2.0;
  const double voxel = side / spec.grid_resolution;
  const Vec3 origin(-1.0, -1.0, -1.0);
  std::vector<float> values(static_cast<size_t>(n) * n * n);
  for (int iz = 0; iz < n; ++iz)
    for (int iy = 0; iy < n; ++iy)
      for (int ix = 0; ix < n; ++ix)
        values[(static_cast<size_t>(iz) * n + iy) * n + ix] =
            static_cast<float>(body_sdf(origin + voxel * Vec3(ix, iy, iz), bones));
  SkinnedMesh mesh = marching_cubes(values, n, n, n, origin, voxel, 0.0);
  mesh = weld_vertices(mesh, 1e-9);
  mesh = largest_component(mesh);
  mesh.space = SpaceTag::Canonical;
  mesh.weights = body_weights(mesh.vertices, skeleton, spec.smoothing_length);
  // flat two-tone albedo: skin on head/hands, fabric elsewhere
  mesh.colors.resize(3, mesh.vertex_count());
  for (int v = 0; v < mesh.vertex_count(); ++v) {
    int best;
    mesh.weights.w.row(v).maxCoeff(&best);
    const bool skin = best == 4 || best == 5 || best == 9 || best == 10 ||
                      best == 14 || best == 15;
    mesh.colors.col(v) = skin ? Vec3(0.80, 0.62, 0.50) : Vec3(0.30, 0.38, 0.62);
  }
  mesh.validate();
  return mesh;
}

std::vector<Pose> sample_poses(int count, double amplitude, uint64_t seed) {
  if (count < 1) throw InputError("sample_poses: count must be positive");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0, 1);
  std::uniform_real_distribution<double> uni(0, 1);
  std::vector<Pose> poses;
  poses.push_back(Pose::Rest(24));
  for (int i = 1; i < count; ++i) {
    Pose p = Pose::Rest(24);
    for (int j = 0; j < 24; ++j) {
      Vec3 axis(gauss(rng), gauss(rng), gauss(rng));
      const double norm = axis.norm();
      if (norm < 1e-12) continue;
      const double angle = uni(rng) * amplitude * kJoints[j].limit;
      p.theta.col(j) = axis / norm * angle;
    }
    poses.push_back(p);
  }
  return poses;
}

FrameObservation render_observation(const SkinnedMesh& body, const Skeleton& skeleton,
                                    const Pose& pose, const Camera& camera,
                                    const CodecModel& codec, const NoiseSpec& noise) {
  if (!body.has_weights()) throw InputError("render_observation: body has no weights");
  const JointTransforms T = forward_kinematics(skeleton, pose);
  SkinnedMesh posed = body;
  posed.vertices = lbs_forward(body.vertices, body.weights, T);
  posed.space = SpaceTag::Posed;

  const RenderedFrame front = rasterize(posed, camera, DepthOrder::Nearest);
  const RenderedFrame back = rasterize(posed, camera, DepthOrder::Farthest);

  const int W = camera.width, H = camera.height;
  FrameObservation obs;
  obs.camera = camera;
  obs.pose = pose;
  obs.depth_front = Image<double>(W, H, 1, 0.0);
  obs.depth_back = Image<double>(W, H, 1, 0.0);
  obs.normal_front = Image<double>(W, H, 3, 0.0);
  obs.normal_back = Image<double>(W, H, 3, 0.0);
  obs.color_front = Image<double>(W, H, 3, 0.0);
  obs.color_back = Image<double>(W, H, 3, 0.0);
  obs.latent_front = Image<double>(W, H, 3, 0.0);
  obs.latent_back = Image<double>(W, H, 3, 0.0);
  obs.mask = ImageU8(W, H, 1, 0);

  std::mt19937_64 rng(noise.seed);
  std::normal_distribution<double> gauss(0, 1);

  // per-pixel true weights, batched through the codec
  std::vector<std::pair<int, int>> px;
  std::vector<char> is_front;
  std::vector<Eigen::RowVectorXd> rows;
  long covered = 0;
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      if (!front.covered(x, y) || !back.covered(x, y)) continue;
      ++covered;
      obs.mask.at(x, y) = 255;
      obs.depth_front.at(x, y) = front.depth.at(x, y);
      obs.depth_back.at(x, y) = back.depth.at(x, y);
      if (noise.depth_sigma_m > 0) {
        obs.depth_front.at(x, y) += noise.depth_sigma_m * gauss(rng);
        obs.depth_back.at(x, y) += noise.depth_sigma_m * gauss(rng);
        if (obs.depth_back.at(x, y) < obs.depth_front.at(x, y))
          std::swap(obs.depth_front.at(x, y), obs.depth_back.at(x, y));
      }
      for (int k = 0; k < 3; ++k) {
        obs.normal_front.at(x, y, k) = front.normal.at(x, y, k);
        obs.normal_back.at(x, y, k) = back.normal.at(x, y, k);
        obs.color_front.at(x, y, k) = front.color.at(x, y, k);
        obs.color_back.at(x, y, k) = back.color.at(x, y, k);
      }
      for (const RenderedFrame* rf : {&front, &back}) {
        const int f = rf->face_id.at(x, y);
        Eigen::RowVectorXd w = Eigen::RowVectorXd::Zero(body.weights.joint_count());
        for (int k = 0; k < 3; ++k)
          w += rf->bary.at(x, y, k) * body.weights.w.row(posed.faces(k, f));
        w = w.cwiseMax(0.0);
        w /= w.sum();
        px.emplace_back(x, y);
        is_front.push_back(rf == &front);
        rows.push_back(w);
      }
    }
  if (covered == 0) throw InputError("render_observation: body outside the frustum");

  MatX batch(rows.size(), body.weights.joint_count());
  for (size_t i = 0; i < rows.size(); ++i) batch.row(i) = rows[i];
  MatX lat = codec.encode_rows(batch);
  for (size_t i = 0; i < rows.size(); ++i) {
    auto& img = is_front[i] ? obs.latent_front : obs.latent_back;
    for (int k = 0; k < 3; ++k) {
      double v = lat(i, k);
      if (noise.latent_sigma > 0) v += noise.latent_sigma * gauss(rng);
      img.at(px[i].first, px[i].second, k) = v;
    }
  }

  if (noise.pose_sigma_deg > 0) {
    const double sigma = noise.pose_sigma_deg * M_PI / 180.0;
    for (int j = 0; j < obs.pose.joint_count(); ++j)
      for (int k = 0; k < 3; ++k) obs.pose.theta(k, j) += sigma * gauss(rng);
  }
  return obs;
}

namespace {

ImageF to_f(const Image<double>& img) {
  ImageF out(img.width, img.height, img.channels);
  for (size_t i = 0; i < img.data.size(); ++i)
    out.data[i] = static_cast<float>(img.data[i]);
  return out;
}

Image<double> to_d(const ImageF& img) {
  Image<double> out(img.width, img.height, img.channels);
  for (size_t i = 0; i < img.data.size(); ++i) out.data[i] = img.data[i];
  return out;
}

}  // namespace

void write_frame_bundle(const FrameObservation& frame, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  const std::pair<const char*, const Image<double>*> maps[] = {
      {"depth_front.pfm", &frame.depth_front}, {"depth_back.pfm", &frame.depth_back},
      {"normal_front.pfm", &frame.normal_front}, {"normal_back.pfm", &frame.normal_back},
      {"color_front.pfm", &frame.color_front}, {"color_back.pfm", &frame.color_back},
      {"latent_front.pfm", &frame.latent_front}, {"latent_back.pfm", &frame.latent_back},
  };
  nlohmann::json manifest;
  for (const auto& [name, img] : maps) {
    io::save_pfm(to_f(*img), dir / name);
    manifest["maps"].push_back(name);
  }
  io::save_png_gray8(frame.mask, dir / "mask.png");
  manifest["mask"] = "mask.png";
  io::save_pose_json(frame.pose, dir / "pose.json");
  manifest["pose"] = "pose.json";
  nlohmann::json cam;
  cam["fov_deg"] = frame.camera.fov_deg;
  cam["eye"] = {frame.camera.eye.x(), frame.camera.eye.y(), frame.camera.eye.z()};
  cam["look_at"] = {frame.camera.look_at.x(), frame.camera.look_at.y(),
                    frame.camera.look_at.z()};
  cam["up"] = {frame.camera.up.x(), frame.camera.up.y(), frame.camera.up.z()};
  cam["width"] = frame.camera.width;
  cam["height"] = frame.camera.height;
  cam["near_m"] = frame.camera.near_m;
  cam["far_m"] = frame.camera.far_m;
  io::write_text_file(dir / "camera.json", cam.dump(2) + "\n");
  manifest["camera"] = "camera.json";
  io::write_text_file(dir / "manifest.json", manifest.dump(2) + "\n");
}

FrameObservation read_frame_bundle(const std::filesystem::path& dir) {
  if (!std::filesystem::exists(dir / "manifest.json"))
    throw InputError("read_frame_bundle: no manifest.json in " + dir.string());
  FrameObservation obs;
  obs.depth_front = to_d(io::load_pfm(dir / "depth_front.pfm"));
  obs.depth_back = to_d(io::load_pfm(dir / "depth_back.pfm"));
  obs.normal_front = to_d(io::load_pfm(dir / "normal_front.pfm"));
  obs.normal_back = to_d(io::load_pfm(dir / "normal_back.pfm"));
  obs.color_front = to_d(io::load_pfm(dir / "color_front.pfm"));
  obs.color_back = to_d(io::load_pfm(dir / "color_back.pfm"));
  obs.latent_front = to_d(io::load_pfm(dir / "latent_front.pfm"));
  obs.latent_back = to_d(io::load_pfm(dir / "latent_back.pfm"));
  obs.mask = io::load_png_gray8(dir / "mask.png");
  obs.pose = io::load_pose_json(dir / "pose.json");
  const auto cam = nlohmann::json::parse(io::read_text_file(dir / "camera.json"));
  obs.camera.fov_deg = cam.at("fov_deg");
  obs.camera.eye = Vec3(cam.at("eye")[0], cam.at("eye")[1], cam.at("eye")[2]);
  obs.camera.look_at =
      Vec3(cam.at("look_at")[0], cam.at("look_at")[1], cam.at("look_at")[2]);
  obs.camera.up = Vec3(cam.at("up")[0], cam.at("up")[1], cam.at("up")[2]);
  obs.camera.width = cam.at("width");
  obs.camera.height = cam.at("height");
  obs.camera.near_m = cam.at("near_m");
  obs.camera.far_m = cam.at("far_m");
  return obs;
}

}  // namespace avk
