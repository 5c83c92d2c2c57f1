#pragma once

#include "avk/types.hpp"

namespace avk {

// Mean point-to-surface distance from pred vertices to the gt surface, cm.
double p2s(const SkinnedMesh& pred, const SkinnedMesh& gt);

// Symmetric: mean of p2s in both directions, cm.
double chamfer(const SkinnedMesh& pred, const SkinnedMesh& gt);

// Mean per-pixel L2 distance between rendered camera-space normal maps from
// the front and back views, x100. Pixels covered by only one mesh contribute
// the maximum error of 2.
double normal_error(const SkinnedMesh& pred, const SkinnedMesh& gt,
                    const Camera& camera);

struct MetricsReport {
  double p2s_cm = 0;
  double chamfer_cm = 0;
  double normal_err_x100 = 0;
};

MetricsReport evaluate(const SkinnedMesh& pred, const SkinnedMesh& gt,
                       const Camera& camera);

}  // namespace avk
