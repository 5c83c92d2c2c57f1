#pragma once

#include <functional>

#include "avk/types.hpp"

namespace avk {

// Extracts the zero level set of a scalar field sampled on a regular grid.
// values[(iz*ny + iy)*nx + ix] is the sample at origin + voxel*(ix,iy,iz).
// Vertices on shared cell edges are merged via an edge map; linear
// interpolation places each vertex on its edge.
SkinnedMesh marching_cubes(const std::vector<float>& values, int nx, int ny, int nz,
                           const Vec3& origin, double voxel, double iso = 0.0);

}  // namespace avk
