#pragma once

#include <filesystem>

#include "avk/raster.hpp"
#include "avk/sandwich.hpp"
#include "avk/types.hpp"

namespace avk {

struct RefineConfig {
  // data/regularizer weights, shape stage
  double lambda1 = 40;      // Laplacian regularizer
  double lambda2 = 0.1;     // normal-consistency regularizer
  double lambda3 = 1;       // rendered-normal L1
  double lambda4 = 2;       // mask MSE
  double lambda5 = 0.0001;  // squared chamfer
  double lambda6 = 0;       // color MSE (raised in the color stage)
  int schedule_interval = 500;
  int schedule_total = 2000;
  int upsample_factor = 4;        // 1-to-4 midpoint subdivision
  double lambda_multiplier = 4;   // applied to lambda3/lambda4 at each interval
  double color_stage_lambda6 = 10;
  int color_stage_iterations = 300;
  double beta1 = 0.9, beta2 = 0.999;
  double step_vertices = 1e-4;
  double step_pose = 5e-3;
  double step_colors = 1e-2;
  int downsample_divisor = 64;    // initial budget = V / divisor
  int chamfer_max_points = 4096;  // stride-subsampled pairings per direction
  bool freeze_geometry_in_color_stage = true;
  SoftMaskConfig soft;

  void validate() const;
};

struct RefineTargets {
  Skeleton skeleton;
  std::vector<FrameObservation> observations;
  std::vector<SkinnedMesh> posed_targets;  // sandwich meshes, chamfer term

  int frame_count() const { return static_cast<int>(observations.size()); }
  void validate() const;
};

struct LossBreakdown {
  double total = 0;
  double laplacian = 0, normal_reg = 0;
  double normal_l1 = 0, mask_mse = 0, chamfer = 0, color_mse = 0;
  bool empty_mask_intersection = false;
};

// Eq-11 style objective over all frames (dual-sided views) plus canonical
// regularizers. Gradient outputs are optional and share the loss code path.
struct LossAndGrads {
  LossBreakdown loss;
  Mat3X g_vertices;             // d total / d canonical vertex, 3 x V
  std::vector<Mat3X> g_theta;   // per frame, 3 x J
  std::vector<Vec3> g_root;     // per frame root translation
  Mat3X g_colors;               // 3 x V, color-term only
};
LossAndGrads refine_loss(const SkinnedMesh& canonical, const std::vector<Pose>& poses,
                         const RefineTargets& targets, const RefineConfig& config,
                         bool want_grads);

// Single-frame breakdown per the documented operation signature; regularizers
// are evaluated on `canonical`.
LossBreakdown render_losses(const RenderedFrame& pred_front,
                            const RenderedFrame& pred_back,
                            const FrameObservation& target,
                            const SkinnedMesh& canonical,
                            const SkinnedMesh& posed_pred,
                            const SkinnedMesh& posed_target,
                            const RefineConfig& config);

struct RefineResult {
  SkinnedMesh mesh;            // refined canonical mesh
  std::vector<Pose> poses;     // refined per-frame poses
  std::vector<LossBreakdown> history;
  bool aborted = false;        // NaN gradients twice in a row
  std::vector<int> never_visible;  // color stage: vertices filled from neighbors
};

RefineResult refine_shape_and_pose(const SkinnedMesh& canonical,
                                   const RefineTargets& targets,
                                   const RefineConfig& config, uint64_t seed,
                                   const std::filesystem::path& checkpoint_dir = {});

// Optimizes per-vertex colors with lambda6 = color_stage_lambda6 and frozen
// geometry/poses; rasters are computed once and reused.
RefineResult refine_colors(const SkinnedMesh& canonical, const std::vector<Pose>& poses,
                           const RefineTargets& targets, const RefineConfig& config,
                           uint64_t seed);

void write_loss_history_csv(const std::vector<LossBreakdown>& history,
                            const std::filesystem::path& path);

}  // namespace avk
