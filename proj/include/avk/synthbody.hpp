#pragma once

#include <filesystem>

#include "avk/sandwich.hpp"
#include "avk/types.hpp"

namespace avk {

// Procedural 24-joint capsule body standing 1.7 m tall in rest pose, used as
// the ground-truth data source for the whole pipeline.
struct BodySpec {
  int grid_resolution = 96;        // marching-cubes cells across the 2 m cube
  double smoothing_length = 0.02;  // softmax temperature for weight blends
  double cloth_offset = 0.0;       // skirt-like radial offset on hip/thigh bones
  double radius_scale = 1.0;
};

Skeleton default_skeleton();

struct CapsuleBone {
  int joint;  // bone runs from parent(joint) to joint
  Vec3 a, b;
  double radius;
};

// Bone capsules of the rest skeleton; throws InputError when a scaled radius
// exceeds its bone length (self-intersecting spec).
std::vector<CapsuleBone> body_bones(const Skeleton& skeleton, const BodySpec& spec);

double body_sdf(const Vec3& x, const std::vector<CapsuleBone>& bones);

// Distance-softmax skinning weights for arbitrary points near the body.
SkinWeights body_weights(const Mat3X& points, const Skeleton& skeleton,
                         double smoothing_length);

// Union-of-capsules surface with weights, two-tone albedo, canonical space.
SkinnedMesh build_body(const BodySpec& spec = {});

// Deterministic anatomically-limited pose sampling; index 0 is the rest pose.
std::vector<Pose> sample_poses(int count, double amplitude, uint64_t seed);

struct NoiseSpec {
  double depth_sigma_m = 0.0;
  double latent_sigma = 0.0;
  double pose_sigma_deg = 0.0;  // perturbs the *reported* pose, not the render
  uint64_t seed = 1;
};

// Renders the posed body into a dual-sided observation: front maps from the
// camera, back maps as the farthest surface along the same rays.
FrameObservation render_observation(const SkinnedMesh& body, const Skeleton& skeleton,
                                    const Pose& pose, const Camera& camera,
                                    const CodecModel& codec, const NoiseSpec& noise = {});

// Frame-bundle directory: PFM maps, PNG mask, JSON camera/pose + manifest.
void write_frame_bundle(const FrameObservation& frame, const std::filesystem::path& dir);
FrameObservation read_frame_bundle(const std::filesystem::path& dir);

}  // namespace avk
