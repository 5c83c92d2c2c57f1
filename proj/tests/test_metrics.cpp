#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>

#include "avk/bvh.hpp"
#include "avk/camera.hpp"
#include "avk/kinematics.hpp"
#include "avk/metrics.hpp"
#include "doctest.h"
#include "test_helpers.hpp"

using namespace avk;

namespace {

// quad lying in the plane through the origin with the given unit normal,
// whose corners project exactly onto the image corners
SkinnedMesh full_frame_plane(const Camera& cam, const Vec3& normal) {
  const CameraFrame frame(cam);
  SkinnedMesh m;
  m.vertices.resize(3, 4);
  const double corners[4][2] = {
      {0.0, 0.0},
      {static_cast<double>(cam.width), 0.0},
      {static_cast<double>(cam.width), static_cast<double>(cam.height)},
      {0.0, static_cast<double>(cam.height)}};
  for (int i = 0; i < 4; ++i) {
    const Vec3 p0 = frame.backproject(corners[i][0], corners[i][1], 1.0);
    const Vec3 dir = (p0 - frame.eye).normalized();
    const double t = -normal.dot(frame.eye) / normal.dot(dir);  // plane n.x = 0
    m.vertices.col(i) = frame.eye + t * dir;
  }
  m.faces.resize(3, 2);
  m.faces.col(0) << 0, 2, 1;
  m.faces.col(1) << 0, 3, 2;
  return m;
}

}  // namespace

TEST_CASE("identical meshes score zero on every metric") {
  auto sphere = testing::make_icosphere(3);
  CHECK(p2s(sphere, sphere) < 1e-9);
  CHECK(chamfer(sphere, sphere) < 1e-9);
  Camera cam;
  cam.width = cam.height = 128;
  CHECK(normal_error(sphere, sphere, cam) == 0.0);
}

TEST_CASE("sphere pair: 1 cm radius gap reads as 1 cm") {
  auto inner = testing::make_icosphere(5, 1.0);
  auto outer = testing::make_icosphere(5, 1.01);
  CHECK(p2s(outer, inner) == doctest::Approx(1.0).epsilon(2e-3));
  CHECK(chamfer(inner, outer) == doctest::Approx(1.0).epsilon(2e-3));
}

TEST_CASE("chamfer is exactly symmetric") {
  auto a = testing::make_icosphere(3, 1.0);
  auto b = testing::make_icosphere(3, 0.8, Vec3(0.1, 0.05, -0.02));
  CHECK(chamfer(a, b) == chamfer(b, a));
  CHECK(chamfer(a, b) > 0);
}

TEST_CASE("rigid motion applied to both meshes leaves p2s unchanged") {
  auto a = testing::make_icosphere(3, 1.0);
  auto b = testing::make_icosphere(2, 0.9);
  const double before = p2s(a, b);
  const Mat3 R = axis_angle_to_matrix(Vec3(0.3, -0.5, 0.7));
  const Vec3 t(0.4, -1.2, 0.6);
  a.vertices = (R * a.vertices).colwise() + t;
  b.vertices = (R * b.vertices).colwise() + t;
  CHECK(p2s(a, b) == doctest::Approx(before).epsilon(1e-9));
}

TEST_CASE("chamfer matches brute force on small meshes") {
  auto a = testing::make_icosphere(1, 1.0);
  auto b = testing::make_icosphere(1, 0.85, Vec3(0.05, 0, 0));
  // brute-force p2s: exact distance over every triangle
  auto brute_p2s = [](const SkinnedMesh& pred, const SkinnedMesh& gt) {
    double sum = 0;
    for (int v = 0; v < pred.vertex_count(); ++v) {
      double best = 1e30;
      for (int f = 0; f < gt.face_count(); ++f)
        best = std::min(best, point_triangle_distance(
                                  pred.vertices.col(v), gt.vertices.col(gt.faces(0, f)),
                                  gt.vertices.col(gt.faces(1, f)),
                                  gt.vertices.col(gt.faces(2, f))));
      sum += best;
    }
    return 100.0 * sum / pred.vertex_count();
  };
  const double expect = 0.5 * (brute_p2s(a, b) + brute_p2s(b, a));
  CHECK(chamfer(a, b) == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("normal error: 60-degree plane tilt scores 100") {
  Camera cam;
  cam.width = cam.height = 256;
  auto flat = full_frame_plane(cam, Vec3(0, 0, 1));
  const double s = std::sin(M_PI / 3), c = std::cos(M_PI / 3);
  auto tilted = full_frame_plane(cam, Vec3(0, s, c));
  CHECK(normal_error(flat, tilted, cam) == doctest::Approx(100.0).epsilon(0.5 / 100));
}

TEST_CASE("normal error is stable between 256 and 512 resolution") {
  auto a = testing::make_icosphere(4, 1.0);
  auto b = testing::make_icosphere(4, 0.9);
  Camera lo, hi;
  lo.width = lo.height = 256;
  hi.width = hi.height = 512;
  const double e_lo = normal_error(a, b, lo);
  const double e_hi = normal_error(a, b, hi);
  CHECK(std::abs(e_lo - e_hi) / e_hi < 0.02);
}

TEST_CASE("empty inputs are rejected") {
  SkinnedMesh empty;
  auto sphere = testing::make_icosphere(2);
  CHECK_THROWS_AS(p2s(empty, sphere), InputError);
  CHECK_THROWS_AS(p2s(sphere, empty), InputError);
}
