#pragma once

#include "avk/camera.hpp"
#include "avk/codec.hpp"
#include "avk/types.hpp"

namespace avk {

// Dual-sided observation of one frame. All maps share one resolution; depth
// maps are optical-axis meters with <= 0 marking invalid pixels; normals are
// unit camera-space vectors; latent maps are codec-compressed LBS weights.
struct FrameObservation {
  Image<double> depth_front, depth_back;
  Image<double> normal_front, normal_back;  // 3 channels
  Image<double> color_front, color_back;    // 3 channels
  Image<double> latent_front, latent_back;  // 3 channels
  ImageU8 mask;                             // binary silhouette, 0 or 255
  Camera camera;
  Pose pose;

  int width() const { return depth_front.width; }
  int height() const { return depth_front.height; }
  bool valid_front(int x, int y) const {
    return depth_front.at(x, y) > 0 && mask.at(x, y) > 0;
  }
  bool valid_back(int x, int y) const {
    return depth_back.at(x, y) > 0 && mask.at(x, y) > 0;
  }
  // Resolution agreement, mask containment, front-before-back ordering on
  // >= 99.9% of jointly valid pixels. Throws InputError.
  void validate() const;
};

// Pinhole inverse projection of every valid depth pixel. Optionally reports
// which pixel produced each point.
Mat3X backproject_depth(const Image<double>& depth, const ImageU8& mask,
                        const Camera& camera,
                        std::vector<std::pair<int, int>>* pixels = nullptr);

struct SandwichStats {
  int valid_front = 0, valid_back = 0;
  int hole_pixels = 0;       // pixels valid on one side only
  int repaired_edges = 0;    // non-manifold stitches removed
  int skipped_quads = 0;     // depth-discontinuity rejections
};

// Grid-triangulates the front and back depth sheets, stitches the silhouette
// boundary ring, decodes per-pixel latents into full skinning weights.
SkinnedMesh mesh_from_depth_pair(const FrameObservation& frame, const CodecModel& codec,
                                 double depth_jump_threshold = 0.02,
                                 SandwichStats* stats = nullptr);

}  // namespace avk
