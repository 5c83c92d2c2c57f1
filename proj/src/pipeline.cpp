#include "avk/pipeline.hpp"

#include <json.hpp>

#include "avk/canonical.hpp"
#include "avk/io.hpp"
#include "avk/kinematics.hpp"
#include "avk/refine.hpp"
#include "avk/sandwich.hpp"
#include "avk/skinning.hpp"

namespace avk {

namespace {

using nlohmann::json;

std::string frame_name(int i) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "frame_%03d", i);
  return buf;
}

BodySpec template_spec(const RunConfig& cfg) {
  BodySpec spec = cfg.body;
  spec.cloth_offset = 0;  // the template is always the unclothed body
  return spec;
}

Camera run_camera(const RunConfig& cfg) {
  Camera cam;
  cam.width = cam.height = cfg.image_size;
  return cam;
}

GridSpec fuse_grid(const RunConfig& cfg) {
  GridSpec spec;
  spec.nx = spec.ny = spec.nz = cfg.fuse_resolution;
  spec.voxel_size = 2.0 / (cfg.fuse_resolution - 1);
  return spec;
}

void save_mesh_by_extension(const SkinnedMesh& mesh, const std::filesystem::path& p) {
  if (p.extension() == ".obj") io::save_obj(mesh, p);
  else io::save_ply(mesh, p);
}

}  // namespace

PipelineRun::PipelineRun(const std::filesystem::path& run_dir, const RunConfig& config)
    : dir_(run_dir), config_(config) {
  config_.validate();
  std::filesystem::create_directories(dir_);
  save_run_config(config_, dir_ / "config.toml");
  json manifest;
  const std::filesystem::path mpath = dir_ / "manifest.json";
  if (std::filesystem::exists(mpath)) manifest = json::parse(io::read_text_file(mpath));
  manifest["config_hash"] = config_hash(config_);
  manifest["seed"] = config_.seed;
  if (!manifest.contains("stages")) manifest["stages"] = json::object();
  io::write_text_file(mpath, manifest.dump(2) + "\n");
}

PipelineRun::PipelineRun(const std::filesystem::path& run_dir)
    : PipelineRun(run_dir, load_run_config(run_dir / "config.toml")) {}

void PipelineRun::require(const std::filesystem::path& file,
                          const std::string& stage) const {
  if (!std::filesystem::exists(file))
    throw InputError(file.string() + " is missing; run the '" + stage +
                     "' stage first");
}

void PipelineRun::record_outputs(const std::string& stage,
                                 const std::vector<std::string>& relative_paths) {
  const std::filesystem::path mpath = dir_ / "manifest.json";
  json manifest = json::parse(io::read_text_file(mpath));
  json outputs = json::object();
  for (const auto& rel : relative_paths) outputs[rel] = hash_file(dir_ / rel);
  manifest["stages"][stage] = {{"outputs", outputs}};
  io::write_text_file(mpath, manifest.dump(2) + "\n");
}

std::string PipelineRun::manifest_hash(const std::string& relative_path) const {
  const std::filesystem::path mpath = dir_ / "manifest.json";
  if (!std::filesystem::exists(mpath)) return "";
  const json manifest = json::parse(io::read_text_file(mpath));
  if (!manifest.contains("stages")) return "";
  for (const auto& [stage, entry] : manifest["stages"].items()) {
    (void)stage;
    const auto& outputs = entry["outputs"];
    if (outputs.contains(relative_path)) return outputs[relative_path];
  }
  return "";
}

Skeleton PipelineRun::load_skeleton() const {
  const auto path = dir_ / "truth" / "skeleton.json";
  require(path, "synth");
  return io::load_skeleton_json(path);
}

void PipelineRun::train_codec_stage() {
  const SkinnedMesh tmpl = build_body(template_spec(config_));
  const WeightSampleSet samples =
      build_sample_set(tmpl, config_.codec_samples, config_.seed);
  CodecConfig cc = config_.codec;
  cc.input_dim = tmpl.weights.joint_count();
  const TrainResult trained = train_codec(samples, cc, config_.seed);
  if (trained.diverged)
    throw NumericalError("codec training diverged; best checkpoint discarded");
  std::filesystem::create_directories(dir_ / "codec");
  save_codec(trained.model, dir_ / "codec" / "codec.bin");
  record_outputs("train-codec", {"codec/codec.bin"});
}

void PipelineRun::synth_stage() {
  require(dir_ / "codec" / "codec.bin", "train-codec");
  const CodecModel codec = load_codec(dir_ / "codec" / "codec.bin");
  const SkinnedMesh body = build_body(config_.body);
  const Skeleton skeleton = default_skeleton();
  const Camera camera = run_camera(config_);
  const std::vector<Pose> poses =
      sample_poses(config_.frame_count, config_.pose_amplitude, config_.seed);
  std::filesystem::create_directories(dir_ / "truth");
  io::save_ply(body, dir_ / "truth" / "body.ply");
  io::save_skeleton_json(skeleton, dir_ / "truth" / "skeleton.json");
  std::vector<std::string> outputs = {"truth/body.ply", "truth/skeleton.json"};
  for (int i = 0; i < config_.frame_count; ++i) {
    io::save_pose_json(poses[i], dir_ / "truth" / ("pose_" + std::to_string(i) + ".json"));
    outputs.push_back("truth/pose_" + std::to_string(i) + ".json");
    NoiseSpec noise = config_.noise;
    noise.seed = config_.noise.seed + static_cast<uint64_t>(i);
    const FrameObservation obs =
        render_observation(body, skeleton, poses[i], camera, codec, noise);
    const auto fdir = dir_ / "frames" / frame_name(i);
    write_frame_bundle(obs, fdir);
    outputs.push_back("frames/" + frame_name(i) + "/manifest.json");
  }
  record_outputs("synth", outputs);
}

void PipelineRun::reconstruct_stage() {
  require(dir_ / "codec" / "codec.bin", "train-codec");
  const CodecModel codec = load_codec(dir_ / "codec" / "codec.bin");
  std::filesystem::create_directories(dir_ / "recon");
  std::vector<std::string> outputs;
  for (int i = 0; i < config_.frame_count; ++i) {
    const auto fdir = dir_ / "frames" / frame_name(i);
    require(fdir / "manifest.json", "synth");
    const FrameObservation obs = read_frame_bundle(fdir);
    const SkinnedMesh mesh = mesh_from_depth_pair(obs, codec);
    const std::string rel = "recon/" + frame_name(i) + ".ply";
    io::save_ply(mesh, dir_ / rel);
    outputs.push_back(rel);
  }
  record_outputs("reconstruct", outputs);
}

void PipelineRun::canonicalize_stage() {
  const Skeleton skeleton = load_skeleton();
  std::filesystem::create_directories(dir_ / "canonical");
  std::vector<std::string> outputs;
  for (int i = 0; i < config_.frame_count; ++i) {
    const auto recon_path = dir_ / ("recon/" + frame_name(i) + ".ply");
    require(recon_path, "reconstruct");
    const SkinnedMesh posed = io::load_ply(recon_path);
    const FrameObservation obs = read_frame_bundle(dir_ / "frames" / frame_name(i));
    const JointTransforms transforms = forward_kinematics(skeleton, obs.pose);
    const CanonicalizedFrame frame =
        canonicalize_frame(posed, transforms, config_.stretch_factor);
    const std::string rel = "canonical/" + frame_name(i) + "_c.ply";
    io::save_ply(frame.mesh_c, dir_ / rel);
    outputs.push_back(rel);
  }
  record_outputs("canonicalize", outputs);
}

void PipelineRun::fuse_stage() {
  const Skeleton skeleton = load_skeleton();
  const SkinnedMesh tmpl = build_body(template_spec(config_));
  std::vector<CanonicalizedFrame> frames;
  for (int i = 0; i < config_.frame_count; ++i) {
    const auto cpath = dir_ / ("canonical/" + frame_name(i) + "_c.ply");
    require(cpath, "canonicalize");
    CanonicalizedFrame f;
    f.mesh_c = io::load_ply(cpath);
    f.mesh_c.space = SpaceTag::Canonical;
    f.mesh_p = io::load_ply(dir_ / ("recon/" + frame_name(i) + ".ply"));
    f.mesh_p.space = SpaceTag::Posed;
    const FrameObservation obs = read_frame_bundle(dir_ / "frames" / frame_name(i));
    f.transforms = forward_kinematics(skeleton, obs.pose);
    frames.push_back(std::move(f));
  }
  const GridSpec grid = fuse_grid(config_);
  const SdfGrid fused = fuse_sdf(frames, tmpl, grid, config_.tau);
  std::filesystem::create_directories(dir_ / "canonical");
  save_sdf(fused, dir_ / "canonical" / "fused.sdf", dir_ / "canonical" / "fused.json");
  const SkinnedMesh initial = extract_mesh(fused, tmpl);
  io::save_ply(initial, dir_ / "canonical" / "initial.ply");
  io::save_ply(tmpl, dir_ / "canonical" / "template.ply");
  const int reference = select_reference_frame(frames, tmpl);
  io::write_text_file(dir_ / "canonical" / "reference_frame.txt",
                      std::to_string(reference) + "\n");
  record_outputs("fuse", {"canonical/fused.sdf", "canonical/fused.json",
                          "canonical/initial.ply", "canonical/template.ply",
                          "canonical/reference_frame.txt"});
}

void PipelineRun::refine_stage() {
  const auto initial_path = dir_ / "canonical" / "initial.ply";
  require(initial_path, "fuse");
  SkinnedMesh initial = io::load_ply(initial_path);
  initial.space = SpaceTag::Canonical;
  RefineTargets targets;
  targets.skeleton = load_skeleton();
  for (int i = 0; i < config_.frame_count; ++i) {
    targets.observations.push_back(read_frame_bundle(dir_ / "frames" / frame_name(i)));
    const auto recon_path = dir_ / ("recon/" + frame_name(i) + ".ply");
    require(recon_path, "reconstruct");
    targets.posed_targets.push_back(io::load_ply(recon_path));
  }
  std::filesystem::create_directories(dir_ / "refine");
  const RefineResult shaped = refine_shape_and_pose(
      initial, targets, config_.refine, config_.seed, dir_ / "refine" / "checkpoints");
  if (shaped.aborted)
    throw NumericalError("refinement aborted on non-finite gradients; see checkpoints");
  const RefineResult colored =
      refine_colors(shaped.mesh, shaped.poses, targets, config_.refine, config_.seed);
  io::save_ply(colored.mesh, dir_ / "refine" / "refined.ply");
  std::vector<std::string> outputs = {"refine/refined.ply", "refine/history.csv",
                                      "refine/color_history.csv"};
  write_loss_history_csv(shaped.history, dir_ / "refine" / "history.csv");
  write_loss_history_csv(colored.history, dir_ / "refine" / "color_history.csv");
  for (int i = 0; i < config_.frame_count; ++i) {
    const std::string rel = "refine/pose_" + std::to_string(i) + ".json";
    io::save_pose_json(shaped.poses[i], dir_ / rel);
    outputs.push_back(rel);
  }
  record_outputs("refine", outputs);
}

MetricsReport PipelineRun::eval_stage() {
  const auto refined_path = dir_ / "refine" / "refined.ply";
  require(refined_path, "refine");
  const auto truth_path = dir_ / "truth" / "body.ply";
  require(truth_path, "synth");
  const SkinnedMesh refined = io::load_ply(refined_path);
  const SkinnedMesh truth = io::load_ply(truth_path);
  const MetricsReport report = evaluate(refined, truth, run_camera(config_));
  json j = {{"p2s_cm", report.p2s_cm},
            {"chamfer_cm", report.chamfer_cm},
            {"normal_err_x100", report.normal_err_x100}};
  std::filesystem::create_directories(dir_ / "eval");
  io::write_text_file(dir_ / "eval" / "metrics.json", j.dump(2) + "\n");
  record_outputs("eval", {"eval/metrics.json"});
  return report;
}

MetricsReport PipelineRun::run_all() {
  train_codec_stage();
  synth_stage();
  reconstruct_stage();
  canonicalize_stage();
  fuse_stage();
  refine_stage();
  return eval_stage();
}

void PipelineRun::repose(const std::filesystem::path& pose_path,
                         const std::filesystem::path& out_path) {
  const auto refined_path = dir_ / "refine" / "refined.ply";
  require(refined_path, "refine");
  SkinnedMesh mesh = io::load_ply(refined_path);
  if (!mesh.has_weights())
    throw InputError("refined mesh carries no skinning weights");
  const Skeleton skeleton = load_skeleton();
  const Pose pose = io::load_pose_json(pose_path);
  const JointTransforms transforms = forward_kinematics(skeleton, pose);
  mesh.vertices = lbs_forward(mesh.vertices, mesh.weights, transforms);
  mesh.space = SpaceTag::Posed;
  save_mesh_by_extension(mesh, out_path);
}

}  // namespace avk
