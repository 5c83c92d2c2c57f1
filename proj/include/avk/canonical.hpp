#pragma once

#include <filesystem>

#include "avk/types.hpp"

namespace avk {

enum class SdfSource : uint8_t { CanonicalBranch = 0, PosedBranch = 1 };

struct GridSpec {
  Vec3 origin = Vec3(-1, -1, -1);  // 2 m cube around the template pelvis
  double voxel_size = 2.0 / 127;
  int nx = 128, ny = 128, nz = 128;

  Vec3 center(int ix, int iy, int iz) const {
    return origin + voxel_size * Vec3(ix, iy, iz);
  }
  size_t index(int ix, int iy, int iz) const {
    return (static_cast<size_t>(iz) * ny + iy) * nx + ix;
  }
  size_t count() const { return static_cast<size_t>(nx) * ny * nz; }
};

struct SdfGrid {
  GridSpec spec;
  std::vector<float> values;        // meters
  std::vector<uint8_t> source;      // SdfSource per voxel
  bool unsigned_fallback = false;   // set when the mesh was not watertight
};

// Raw little-endian float32 volume + JSON header.
void save_sdf(const SdfGrid& grid, const std::filesystem::path& volume_path,
              const std::filesystem::path& header_path);
SdfGrid load_sdf(const std::filesystem::path& volume_path,
                 const std::filesystem::path& header_path);

struct CanonicalizedFrame {
  SkinnedMesh mesh_c;        // canonical, stretched faces removed (may have holes)
  SkinnedMesh mesh_p;        // posed, watertight, as observed
  int removed_faces = 0;
  int failed_vertices = 0;   // near-singular inverse-skinning points
  bool warning_high_removal = false;  // >50% of faces dropped
  JointTransforms transforms;
};

// Inverse-skins every vertex and drops faces whose longest edge grew by more
// than stretch_factor relative to its posed length.
CanonicalizedFrame canonicalize_frame(const SkinnedMesh& posed,
                                      const JointTransforms& transforms,
                                      double stretch_factor = 4.0);

// Exact point-to-triangle distance, sign by ray parity. Open meshes yield
// unsigned distance with the fallback flag set.
SdfGrid sdf_from_mesh(const SkinnedMesh& mesh, const GridSpec& spec);

// Gated fusion: voxels within tau of a frame's retained canonical vertices
// take that frame's posed-space SDF (mean over passing frames), the rest keep
// the template SDF.
SdfGrid fuse_sdf(const std::vector<CanonicalizedFrame>& frames,
                 const SkinnedMesh& template_c, const GridSpec& spec,
                 double tau = 0.05);

struct ExtractStats {
  int dropped_components = 0;
};

// Marching cubes + component filter + 10 iterations of lambda 0.5 Laplacian
// smoothing + weld; weights transferred from the template.
SkinnedMesh extract_mesh(const SdfGrid& grid, const SkinnedMesh& template_c,
                         ExtractStats* stats = nullptr);

// Argmin of symmetric Chamfer distance between each frame's canonicalized
// vertices and the template surface; ties break to the lowest index.
int select_reference_frame(const std::vector<CanonicalizedFrame>& frames,
                           const SkinnedMesh& template_c);

}  // namespace avk
