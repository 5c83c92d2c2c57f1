#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>

#include "avk/bvh.hpp"
#include "avk/canonical.hpp"
#include "avk/kinematics.hpp"
#include "avk/mesh_utils.hpp"
#include "avk/skinning.hpp"
#include "avk/synthbody.hpp"
#include "doctest.h"
#include "test_helpers.hpp"

using namespace avk;

namespace {

const SkinnedMesh& cached_body() {
  static SkinnedMesh body = [] {
    BodySpec spec;
    spec.grid_resolution = 64;
    return build_body(spec);
  }();
  return body;
}

JointTransforms identity_transforms(int joints) {
  JointTransforms T;
  T.world_from_rest.assign(joints, RigidTransform::Identity());
  return T;
}

double box_sdf(const Vec3& p, double half) {
  const Vec3 q = p.cwiseAbs() - Vec3::Constant(half);
  const double outside = q.cwiseMax(0.0).norm();
  const double inside = std::min(q.maxCoeff(), 0.0);
  return outside + inside;
}

std::vector<float> sphere_field(const GridSpec& spec, const Vec3& center, double r) {
  std::vector<float> values(spec.count());
  for (int iz = 0; iz < spec.nz; ++iz)
    for (int iy = 0; iy < spec.ny; ++iy)
      for (int ix = 0; ix < spec.nx; ++ix)
        values[spec.index(ix, iy, iz)] =
            static_cast<float>((spec.center(ix, iy, iz) - center).norm() - r);
  return values;
}

}  // namespace

TEST_CASE("canonicalize_frame: zero pose is the identity, nothing removed") {
  const auto& body = cached_body();
  auto frame = canonicalize_frame(body, identity_transforms(24), 4.0);
  CHECK(frame.removed_faces == 0);
  CHECK(frame.failed_vertices == 0);
  CHECK(!frame.warning_high_removal);
  CHECK((frame.mesh_c.vertices - body.vertices).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("canonicalize_frame: 90-degree shoulder pose round-trips") {
  const auto& body = cached_body();
  const Skeleton skel = default_skeleton();
  Pose pose = Pose::Rest(24);
  pose.theta.col(7) = Vec3(0, 0, M_PI / 2);  // raise the left arm
  const JointTransforms T = forward_kinematics(skel, pose);
  SkinnedMesh posed = body;
  posed.vertices = lbs_forward(body.vertices, body.weights, T);
  auto frame = canonicalize_frame(posed, T, 4.0);
  CHECK(frame.failed_vertices == 0);
  // inverse skinning with the true weights recovers rest geometry exactly
  CHECK((frame.mesh_c.vertices - body.vertices).cwiseAbs().maxCoeff() < 1e-9);
  CHECK(frame.removed_faces < body.face_count() / 20);
}

TEST_CASE("canonicalize_frame: conflicting weights stretch a face away") {
  // two-segment toy: one triangle corner follows a far-translated joint, so
  // inverse skinning tears the face apart
  SkinnedMesh tri;
  tri.vertices.resize(3, 3);
  tri.vertices.col(0) << 0, 0, 0;
  tri.vertices.col(1) << 0.1, 0, 0;
  tri.vertices.col(2) << 0, 0.1, 0;
  tri.faces.resize(3, 1);
  tri.faces.col(0) << 0, 1, 2;
  tri.weights.w = MatX::Zero(3, 2);
  tri.weights.w(0, 0) = 1;
  tri.weights.w(1, 0) = 1;
  tri.weights.w(2, 1) = 1;
  JointTransforms T;
  T.world_from_rest.push_back(RigidTransform::Identity());
  T.world_from_rest.push_back(RigidTransform::Translation(Vec3(3, 0, 0)));
  auto frame = canonicalize_frame(tri, T, 4.0);
  CHECK(frame.removed_faces == 1);
  CHECK(frame.mesh_c.face_count() == 0);
  CHECK(frame.warning_high_removal);
}

TEST_CASE("sdf_from_mesh: cube matches the analytic box distance") {
  auto cube = testing::make_cube(0.5);
  GridSpec spec;
  spec.origin = Vec3(-1, -1, -1);
  spec.nx = spec.ny = spec.nz = 32;
  spec.voxel_size = 2.0 / 31;
  auto grid = sdf_from_mesh(cube, spec);
  CHECK(!grid.unsigned_fallback);
  for (int iz = 0; iz < spec.nz; ++iz)
    for (int iy = 0; iy < spec.ny; ++iy)
      for (int ix = 0; ix < spec.nx; ++ix) {
        const double expect = box_sdf(spec.center(ix, iy, iz), 0.5);
        CHECK(std::abs(grid.values[spec.index(ix, iy, iz)] - expect) < 1e-6);
      }
}

TEST_CASE("sdf_from_mesh: icosphere stays within half a voxel of |x|-r") {
  auto sphere = testing::make_icosphere(3);
  GridSpec spec;
  spec.origin = Vec3(-1.1, -1.1, -1.1);
  spec.nx = spec.ny = spec.nz = 32;
  spec.voxel_size = 2.2 / 31;
  auto grid = sdf_from_mesh(sphere, spec);
  for (int iz = 0; iz < spec.nz; ++iz)
    for (int iy = 0; iy < spec.ny; ++iy)
      for (int ix = 0; ix < spec.nx; ++ix) {
        const double expect = spec.center(ix, iy, iz).norm() - 1.0;
        CHECK(std::abs(grid.values[spec.index(ix, iy, iz)] - expect) <
              spec.voxel_size / 2);
      }
}

TEST_CASE("sdf_from_mesh: translation equivariance") {
  auto sphere = testing::make_icosphere(2);
  GridSpec spec;
  spec.origin = Vec3(-1.2, -1.2, -1.2);
  spec.nx = spec.ny = spec.nz = 24;
  spec.voxel_size = 0.1;
  auto base = sdf_from_mesh(sphere, spec);
  const Vec3 t(0.37, -0.11, 0.52);
  SkinnedMesh moved = sphere;
  moved.vertices.colwise() += t;
  GridSpec shifted = spec;
  shifted.origin += t;
  auto moved_grid = sdf_from_mesh(moved, shifted);
  for (size_t i = 0; i < base.values.size(); ++i)
    CHECK(std::abs(base.values[i] - moved_grid.values[i]) < 1e-9);
}

TEST_CASE("sdf_from_mesh: open mesh falls back to unsigned distance") {
  auto cube = testing::make_cube(0.5);
  std::vector<char> keep(cube.face_count(), 1);
  keep[0] = 0;
  auto open = drop_faces(cube, keep);
  GridSpec spec;
  spec.origin = Vec3(-1, -1, -1);
  spec.nx = spec.ny = spec.nz = 16;
  spec.voxel_size = 2.0 / 15;
  auto grid = sdf_from_mesh(open, spec);
  CHECK(grid.unsigned_fallback);
  for (float v : grid.values) CHECK(v >= 0.0f);
}

TEST_CASE("fuse_sdf: single zero-pose frame reproduces the template SDF") {
  const auto& body = cached_body();
  GridSpec spec;
  spec.nx = spec.ny = spec.nz = 64;
  spec.voxel_size = 2.0 / 63;
  auto frame = canonicalize_frame(body, identity_transforms(24), 4.0);
  auto fused = fuse_sdf({frame}, body, spec, 0.05);
  auto reference = sdf_from_mesh(body, spec);
  double worst = 0;
  for (size_t i = 0; i < fused.values.size(); ++i)
    worst = std::max(worst, std::abs(static_cast<double>(fused.values[i]) -
                                     reference.values[i]));
  CHECK(worst <= 1e-6);
  // gate flag recomputation and the far-voxel bit-equality contract
  const NearestVertex gate(body.vertices);
  const double tau2 = 0.05 * 0.05;
  for (int iz = 0; iz < spec.nz; ++iz)
    for (int iy = 0; iy < spec.ny; ++iy)
      for (int ix = 0; ix < spec.nx; ++ix) {
        const size_t i = spec.index(ix, iy, iz);
        const bool pass = gate.query_dist2(spec.center(ix, iy, iz)) < tau2;
        CHECK(fused.source[i] ==
              static_cast<uint8_t>(pass ? SdfSource::PosedBranch
                                        : SdfSource::CanonicalBranch));
        if (!pass) CHECK(fused.values[i] == reference.values[i]);
      }
}

TEST_CASE("fuse_sdf: two posed frames recover the rest surface") {
  const auto& body = cached_body();
  const Skeleton skel = default_skeleton();
  auto poses = sample_poses(3, 0.3, 21);
  std::vector<CanonicalizedFrame> frames;
  for (int i = 1; i < 3; ++i) {
    const JointTransforms T = forward_kinematics(skel, poses[i]);
    SkinnedMesh posed = body;
    posed.vertices = lbs_forward(body.vertices, body.weights, T);
    frames.push_back(canonicalize_frame(posed, T, 4.0));
  }
  GridSpec spec;
  spec.nx = spec.ny = spec.nz = 64;
  spec.voxel_size = 2.0 / 63;
  auto fused = fuse_sdf(frames, body, spec, 0.05);
  auto mesh = extract_mesh(fused, body);
  CHECK(analyze_topology(mesh).watertight());
  const TriangleBvh truth(body.vertices, body.faces);
  int ok = 0;
  for (int v = 0; v < mesh.vertex_count(); ++v)
    if (truth.nearest(mesh.vertices.col(v)).distance < 1.5 * spec.voxel_size) ++ok;
  CHECK(ok >= 0.95 * mesh.vertex_count());
}

TEST_CASE("extract_mesh: analytic sphere at 64^3") {
  GridSpec spec;
  spec.origin = Vec3(-0.8, -0.8, -0.8);
  spec.nx = spec.ny = spec.nz = 64;
  spec.voxel_size = 1.6 / 63;
  SdfGrid grid;
  grid.spec = spec;
  grid.values = sphere_field(spec, Vec3::Zero(), 0.5);
  grid.source.assign(spec.count(), 0);
  SkinnedMesh tmpl = testing::make_icosphere(2, 0.5);
  tmpl.weights.w = MatX::Constant(tmpl.vertex_count(), 2, 0.5);
  auto mesh = extract_mesh(grid, tmpl);
  const auto topo = analyze_topology(mesh);
  CHECK(topo.watertight());
  CHECK(topo.euler_characteristic == 2);
  for (int v = 0; v < mesh.vertex_count(); ++v)
    CHECK(std::abs(mesh.vertices.col(v).norm() - 0.5) < spec.voxel_size);
  CHECK(mesh.has_weights());
}

TEST_CASE("extract_mesh: keeps the larger of two spheres") {
  GridSpec spec;
  spec.origin = Vec3(-1, -1, -1);
  spec.nx = spec.ny = spec.nz = 64;
  spec.voxel_size = 2.0 / 63;
  SdfGrid grid;
  grid.spec = spec;
  auto a = sphere_field(spec, Vec3(-0.45, 0, 0), 0.4);
  auto b = sphere_field(spec, Vec3(0.55, 0, 0), 0.15);
  grid.values.resize(spec.count());
  for (size_t i = 0; i < grid.values.size(); ++i)
    grid.values[i] = std::min(a[i], b[i]);
  grid.source.assign(spec.count(), 0);
  SkinnedMesh tmpl = testing::make_icosphere(2, 0.4, Vec3(-0.45, 0, 0));
  tmpl.weights.w = MatX::Constant(tmpl.vertex_count(), 2, 0.5);
  ExtractStats stats;
  auto mesh = extract_mesh(grid, tmpl, &stats);
  CHECK(stats.dropped_components == 1);
  for (int v = 0; v < mesh.vertex_count(); ++v)
    CHECK((mesh.vertices.col(v) - Vec3(-0.45, 0, 0)).norm() < 0.55);
}

TEST_CASE("extract_mesh: grid without a crossing is an error") {
  GridSpec spec;
  spec.nx = spec.ny = spec.nz = 8;
  spec.voxel_size = 0.1;
  SdfGrid grid;
  grid.spec = spec;
  grid.values.assign(spec.count(), 1.0f);
  grid.source.assign(spec.count(), 0);
  CHECK_THROWS_AS(extract_mesh(grid, SkinnedMesh{}), NumericalError);
}

TEST_CASE("select_reference_frame prefers the least-deformed frame") {
  const auto& body = cached_body();
  const Skeleton skel = default_skeleton();
  auto rest_frame = canonicalize_frame(body, identity_transforms(24), 4.0);
  CHECK(select_reference_frame({rest_frame}, body) == 0);

  // heavily bent frame, canonicalized with slightly wrong weights
  auto poses = sample_poses(2, 1.0, 77);
  const JointTransforms T = forward_kinematics(skel, poses[1]);
  SkinnedMesh posed = body;
  posed.vertices = lbs_forward(body.vertices, body.weights, T);
  SkinnedMesh wrong = posed;
  // blur the weights toward uniform so the inverse leaves residue
  wrong.weights.w = 0.7 * posed.weights.w +
                    0.3 * MatX::Constant(posed.vertex_count(), 24, 1.0 / 24);
  auto bent_frame = canonicalize_frame(wrong, T, 4.0);
  CHECK(select_reference_frame({rest_frame, bent_frame}, body) == 0);
  CHECK(select_reference_frame({bent_frame, rest_frame}, body) == 1);
}

TEST_CASE("SDF grid serialization round-trips") {
  GridSpec spec;
  spec.origin = Vec3(-0.3, 0.1, -0.9);
  spec.nx = 6;
  spec.ny = 5;
  spec.nz = 4;
  spec.voxel_size = 0.25;
  SdfGrid grid;
  grid.spec = spec;
  grid.values.resize(spec.count());
  grid.source.resize(spec.count());
  for (size_t i = 0; i < grid.values.size(); ++i) {
    grid.values[i] = static_cast<float>(std::sin(0.1 * i));
    grid.source[i] = i % 2;
  }
  const auto dir = std::filesystem::temp_directory_path();
  save_sdf(grid, dir / "avk_test.vol", dir / "avk_test.json");
  auto loaded = load_sdf(dir / "avk_test.vol", dir / "avk_test.json");
  std::filesystem::remove(dir / "avk_test.vol");
  std::filesystem::remove(dir / "avk_test.json");
  CHECK(loaded.values == grid.values);
  CHECK(loaded.source == grid.source);
  CHECK((loaded.spec.origin - spec.origin).norm() == 0.0);
  CHECK(loaded.spec.nx == 6);
  CHECK(loaded.spec.ny == 5);
  CHECK(loaded.spec.nz == 4);
}
