#pragma once

#include <Eigen/Sparse>

#include "avk/types.hpp"

namespace avk {

struct VertexNormals {
  Mat3X normals;                 // unit vectors
  std::vector<int> degenerate;   // vertices whose accumulation had zero area
};

// Area-weighted average of incident face normals. Zero-area accumulations map
// to (0,0,1) and are flagged.
VertexNormals vertex_normals(const SkinnedMesh& mesh);

// Unnormalized face normals, cross(v1-v0, v2-v0); norm = 2*area.
Mat3X face_normals_raw(const Mat3X& vertices, const Faces& faces);

// Uniform graph Laplacian, L = I - D^-1 A; rows sum to zero; isolated
// vertices get a zero row and are reported.
struct GraphLaplacian {
  Eigen::SparseMatrix<double> L;  // V x V
  std::vector<int> isolated;
};
GraphLaplacian graph_laplacian(const SkinnedMesh& mesh);

struct MeshTopology {
  int boundary_edges = 0;
  int nonmanifold_edges = 0;  // edges with more than two incident faces
  int total_edges = 0;
  int euler_characteristic = 0;
  bool oriented = true;       // every interior edge used once in each direction
  bool watertight() const {
    return boundary_edges == 0 && nonmanifold_edges == 0 && oriented;
  }
};
MeshTopology analyze_topology(const SkinnedMesh& mesh);

double signed_volume(const SkinnedMesh& mesh);

// Merge vertices closer than eps; remaps faces, drops collapsed faces.
SkinnedMesh weld_vertices(const SkinnedMesh& mesh, double eps);

// Keep the largest connected component (by face count). Reports dropped count.
SkinnedMesh largest_component(const SkinnedMesh& mesh, int* dropped_components = nullptr);

// Uniform Laplacian smoothing, v += lambda * (neighborhood mean - v).
void laplacian_smooth(SkinnedMesh& mesh, int iterations, double lambda);

// 1-to-4 edge-midpoint subdivision. New-vertex attributes (colors, weights)
// are means of edge endpoints; weights renormalized onto the simplex.
SkinnedMesh subdivide_midpoint(const SkinnedMesh& mesh);

// Vertex-clustering decimation onto a uniform grid sized so the output has
// roughly target_vertices vertices. Attributes averaged per cluster.
SkinnedMesh decimate_to(const SkinnedMesh& mesh, int target_vertices);

// Drop faces whose index appears in keep[]==false, then drop unused vertices.
SkinnedMesh drop_faces(const SkinnedMesh& mesh, const std::vector<char>& keep_face,
                       std::vector<int>* old_vertex_of_new = nullptr);

}  // namespace avk
