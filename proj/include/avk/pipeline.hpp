#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "avk/config.hpp"
#include "avk/metrics.hpp"

namespace avk {

// Stages operate on a run directory:
//   config.toml        pinned configuration
//   manifest.json      config hash, seeds, per-stage output hashes
//   codec/             trained weight codec
//   truth/             ground-truth body, skeleton, camera, poses
//   frames/frame_XXX/  dual-sided observations
//   recon/             per-frame sandwich meshes (posed space)
//   canonical/         canonicalized frames, fused SDF, initial mesh
//   refine/            refined canonical mesh + poses + loss history
//   eval/              metrics report
//
// Chaining order: train-codec -> synth -> reconstruct -> canonicalize ->
// fuse -> refine -> eval. The codec precedes synth because observations
// carry codec-compressed latent maps.
class PipelineRun {
 public:
  PipelineRun(const std::filesystem::path& run_dir, const RunConfig& config);
  // Loads config.toml from an existing run directory.
  explicit PipelineRun(const std::filesystem::path& run_dir);

  const RunConfig& config() const { return config_; }
  const std::filesystem::path& dir() const { return dir_; }

  void train_codec_stage();
  void synth_stage();
  void reconstruct_stage();
  void canonicalize_stage();
  void fuse_stage();
  void refine_stage();
  MetricsReport eval_stage();

  // All of the above in order.
  MetricsReport run_all();

  // Applies a pose file to the refined canonical mesh.
  void repose(const std::filesystem::path& pose_path,
              const std::filesystem::path& out_path);

  // Recorded output hash for a manifest entry, empty when absent.
  std::string manifest_hash(const std::string& relative_path) const;

 private:
  void require(const std::filesystem::path& file, const std::string& stage) const;
  void record_outputs(const std::string& stage,
                      const std::vector<std::string>& relative_paths);
  Skeleton load_skeleton() const;

  std::filesystem::path dir_;
  RunConfig config_;
};

}  // namespace avk
