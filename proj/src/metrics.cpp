#include "avk/metrics.hpp"

#include <cmath>

#include "avk/bvh.hpp"
#include "avk/raster.hpp"

namespace avk {

double p2s(const SkinnedMesh& pred, const SkinnedMesh& gt) {
  if (pred.vertex_count() == 0 || gt.face_count() == 0)
    throw InputError("p2s: empty input");
  const TriangleBvh bvh(gt.vertices, gt.faces);
  double sum = 0;
  for (int v = 0; v < pred.vertex_count(); ++v)
    sum += bvh.nearest(pred.vertices.col(v)).distance;
  return 100.0 * sum / pred.vertex_count();
}

double chamfer(const SkinnedMesh& pred, const SkinnedMesh& gt) {
  return 0.5 * (p2s(pred, gt) + p2s(gt, pred));
}

double normal_error(const SkinnedMesh& pred, const SkinnedMesh& gt,
                    const Camera& camera) {
  double sum = 0;
  long count = 0;
  for (DepthOrder order : {DepthOrder::Nearest, DepthOrder::Farthest}) {
    const RenderedFrame a = rasterize(pred, camera, order);
    const RenderedFrame b = rasterize(gt, camera, order);
    for (int y = 0; y < camera.height; ++y)
      for (int x = 0; x < camera.width; ++x) {
        const bool ca = a.covered(x, y), cb = b.covered(x, y);
        if (!ca && !cb) continue;
        ++count;
        if (ca != cb) {
          sum += 2.0;  // silhouette mismatch: maximum possible L2
          continue;
        }
        double d2 = 0;
        for (int k = 0; k < 3; ++k) {
          const double d = a.normal.at(x, y, k) - b.normal.at(x, y, k);
          d2 += d * d;
        }
        sum += std::sqrt(d2);
      }
  }
  if (count == 0) throw InputError("normal_error: neither mesh covers a pixel");
  return 100.0 * sum / count;
}

MetricsReport evaluate(const SkinnedMesh& pred, const SkinnedMesh& gt,
                       const Camera& camera) {
  MetricsReport r;
  r.p2s_cm = p2s(pred, gt);
  r.chamfer_cm = chamfer(pred, gt);
  r.normal_err_x100 = normal_error(pred, gt, camera);
  return r;
}

}  // namespace avk
