#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>

#include "avk/kinematics.hpp"
#include "avk/mesh_utils.hpp"
#include "avk/skinning.hpp"
#include "avk/synthbody.hpp"
#include "doctest.h"

using namespace avk;

namespace {

const SkinnedMesh& cached_body() {
  static SkinnedMesh body = build_body();
  return body;
}

const CodecModel& cached_codec() {
  static CodecModel model = [] {
    CodecConfig cfg;
    auto samples = build_sample_set(cached_body(), 20000, 11);
    cfg.epochs = 30;
    auto result = train_codec(samples, cfg, 101);
    REQUIRE(!result.diverged);
    return result.model;
  }();
  return model;
}

}  // namespace

TEST_CASE("default skeleton has 24 named joints in a valid tree") {
  const Skeleton s = default_skeleton();
  CHECK(s.joint_count() == 24);
  CHECK(s.name[0] == "pelvis");
  CHECK(s.root() == 0);
  int leaves = 0;
  for (const auto& kids : s.children())
    if (kids.empty()) ++leaves;
  CHECK(leaves == 5);  // head, two hands, two feet
}

TEST_CASE("body mesh is watertight and 1.70 m tall") {
  const auto& body = cached_body();
  const auto topo = analyze_topology(body);
  CHECK(topo.watertight());
  CHECK(signed_volume(body) > 0);
  const double height =
      body.vertices.row(1).maxCoeff() - body.vertices.row(1).minCoeff();
  CHECK(height == doctest::Approx(1.70).epsilon(0.01 / 1.70));
  CHECK(body.has_weights());
  CHECK(body.has_colors());
}

TEST_CASE("weights live on the simplex and favor the elbow mid-forearm") {
  const auto& body = cached_body();
  for (int v = 0; v < body.vertex_count(); ++v)
    CHECK(std::abs(body.weights.w.row(v).sum() - 1.0) < 1e-9);
  // surface vertex nearest the middle of the left forearm
  const Vec3 probe(0.62, 0.46, 0.0);
  int best = 0;
  double bd = 1e9;
  for (int v = 0; v < body.vertex_count(); ++v) {
    const double d = (body.vertices.col(v) - probe).norm();
    if (d < bd) {
      bd = d;
      best = v;
    }
  }
  CHECK(body.weights.w(best, 8) > 0.9);  // elbow_l drives the forearm
}

TEST_CASE("zero-pose LBS reproduces the body exactly") {
  const auto& body = cached_body();
  const auto T = forward_kinematics(default_skeleton(), Pose::Rest(24));
  const Mat3X posed = lbs_forward(body.vertices, body.weights, T);
  CHECK((posed - body.vertices).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("sample_poses respects limits and determinism") {
  auto poses = sample_poses(10000, 0.7, 42);
  REQUIRE(poses.size() == 10000);
  CHECK(poses[0].theta.cwiseAbs().maxCoeff() == 0.0);  // rest at index 0
  const Skeleton s = default_skeleton();
  // per-joint limits from the spec table, checked exhaustively
  const double limits[24] = {0.20, 0.25, 0.25, 0.25, 0.30, 0.30, 0.10, 0.90,
                             1.20, 0.30, 0.30, 0.10, 0.90, 1.20, 0.30, 0.30,
                             0.70, 1.00, 0.40, 0.30, 0.70, 1.00, 0.40, 0.30};
  for (const auto& p : poses)
    for (int j = 0; j < 24; ++j)
      CHECK(p.theta.col(j).norm() <= 0.7 * limits[j] + 1e-12);
  auto zero = sample_poses(5, 0.0, 7);
  for (const auto& p : zero) CHECK(p.theta.cwiseAbs().maxCoeff() == 0.0);
  auto again = sample_poses(50, 0.7, 42);
  for (int i = 0; i < 50; ++i) CHECK((again[i].theta - poses[i].theta).norm() == 0.0);
}

TEST_CASE("radii exceeding bone length are rejected") {
  BodySpec bad;
  bad.radius_scale = 4.0;
  CHECK_THROWS_AS(body_bones(default_skeleton(), bad), InputError);
}

TEST_CASE("cloth offset fattens only the skirt bones") {
  BodySpec plain, skirt;
  skirt.cloth_offset = 0.06;
  auto a = body_bones(default_skeleton(), plain);
  auto b = body_bones(default_skeleton(), skirt);
  REQUIRE(a.size() == b.size());
  int fattened = 0;
  for (size_t i = 0; i < a.size(); ++i) {
    if (b[i].radius > a[i].radius) {
      CHECK(b[i].radius == doctest::Approx(a[i].radius + 0.06));
      ++fattened;
    } else {
      CHECK(b[i].radius == a[i].radius);
    }
  }
  CHECK(fattened == 4);  // both hips, both thighs
}

TEST_CASE("rest observation: mask equals valid depth, torso depth analytic") {
  const auto& body = cached_body();
  FrameObservation obs = render_observation(body, default_skeleton(), Pose::Rest(24),
                                            Camera{}, cached_codec());
  obs.validate();
  for (int y = 0; y < obs.height(); y += 3)
    for (int x = 0; x < obs.width(); x += 3)
      CHECK((obs.mask.at(x, y) > 0) == (obs.depth_front.at(x, y) > 0));
  // the pelvis projects to the image center; torso front surface sits one
  // spine-capsule radius (0.12 m) before the 3 m optical center
  const int cx = obs.width() / 2, cy = obs.height() / 2;
  CHECK(obs.depth_front.at(cx, cy) == doctest::Approx(3.0 - 0.12).epsilon(0.02 / 2.88));
  CHECK(obs.depth_back.at(cx, cy) == doctest::Approx(3.0 + 0.12).epsilon(0.02 / 3.12));
}

TEST_CASE("latent maps decode back to true weights within L1 0.05") {
  const auto& body = cached_body();
  const auto& codec = cached_codec();
  FrameObservation obs =
      render_observation(body, default_skeleton(), Pose::Rest(24), Camera{}, codec);
  const JointTransforms T = forward_kinematics(default_skeleton(), Pose::Rest(24));
  (void)T;
  NearestVertex nearest(body.vertices);
  const CameraFrame cam(obs.camera);
  double l1 = 0;
  long count = 0;
  for (int y = 0; y < obs.height(); y += 5)
    for (int x = 0; x < obs.width(); x += 5) {
      if (!obs.valid_front(x, y)) continue;
      const Vec3 p = cam.backproject(x + 0.5, y + 0.5, obs.depth_front.at(x, y));
      const Eigen::RowVectorXd truth = body.weights.w.row(nearest.query(p));
      Mat3X lat(3, 1);
      lat.col(0) = Vec3(obs.latent_front.at(x, y, 0), obs.latent_front.at(x, y, 1),
                        obs.latent_front.at(x, y, 2));
      const SkinWeights decoded = codec.decode(lat);
      l1 += (decoded.w.row(0) - truth).cwiseAbs().mean();
      ++count;
    }
  REQUIRE(count > 500);
  CHECK(l1 / count < 0.05);
}

TEST_CASE("observations are deterministic and bundle IO round-trips") {
  const auto& body = cached_body();
  const auto& codec = cached_codec();
  NoiseSpec noise;
  noise.depth_sigma_m = 0.003;
  noise.latent_sigma = 0.01;
  noise.pose_sigma_deg = 3.0;
  noise.seed = 9;
  Camera small;
  small.width = small.height = 128;
  auto a = render_observation(body, default_skeleton(), Pose::Rest(24), small, codec, noise);
  auto b = render_observation(body, default_skeleton(), Pose::Rest(24), small, codec, noise);
  CHECK(a.depth_front.data == b.depth_front.data);
  CHECK(a.latent_back.data == b.latent_back.data);
  CHECK((a.pose.theta - b.pose.theta).norm() == 0.0);
  CHECK((a.pose.theta - Pose::Rest(24).theta).norm() > 0.0);  // noisy reported pose

  const auto dir = std::filesystem::temp_directory_path() / "avk_bundle_test";
  write_frame_bundle(a, dir);
  FrameObservation back = read_frame_bundle(dir);
  std::filesystem::remove_all(dir);
  back.validate();
  CHECK(back.width() == a.width());
  CHECK(back.mask.data == a.mask.data);
  // PFM stores float32
  for (size_t i = 0; i < a.depth_front.data.size(); ++i)
    CHECK(std::abs(back.depth_front.data[i] - a.depth_front.data[i]) < 1e-6);
  CHECK((back.pose.theta - a.pose.theta).norm() < 1e-12);
  CHECK(back.camera.fov_deg == a.camera.fov_deg);
}
