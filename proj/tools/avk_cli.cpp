#include <CLI11.hpp>
#include <cstdio>
#include <string>

#include "avk/pipeline.hpp"

namespace {

// Opens an existing run, or creates one when a config file (or --defaults)
// is supplied.
avk::PipelineRun open_run(const std::string& run_dir, const std::string& config_path,
                          bool defaults) {
  if (!config_path.empty())
    return avk::PipelineRun(run_dir, avk::load_run_config(config_path));
  if (defaults) return avk::PipelineRun(run_dir, avk::RunConfig{});
  return avk::PipelineRun(run_dir);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Drivable-avatar reconstruction pipeline"};
  app.require_subcommand(1);

  std::string run_dir = "run";
  std::string config_path;
  bool defaults = false;
  app.add_option("--run", run_dir, "Run directory (all stage paths are relative to it)")
      ->capture_default_str();
  app.add_option("--config", config_path, "Config file; initializes the run directory");
  app.add_flag("--defaults", defaults, "Initialize the run directory with default config");

  struct Stage {
    const char* name;
    const char* help;
    void (avk::PipelineRun::*fn)();
  };
  const Stage stages[] = {
      {"train-codec", "Train the skinning-weight codec on the template body",
       &avk::PipelineRun::train_codec_stage},
      {"synth", "Render the synthetic dual-sided observations",
       &avk::PipelineRun::synth_stage},
      {"reconstruct", "Sandwich-mesh every frame from its depth pair",
       &avk::PipelineRun::reconstruct_stage},
      {"canonicalize", "Inverse-skin frames into canonical space",
       &avk::PipelineRun::canonicalize_stage},
      {"fuse", "Gated SDF fusion and initial mesh extraction",
       &avk::PipelineRun::fuse_stage},
      {"refine", "Differentiable-rendering shape/pose/color refinement",
       &avk::PipelineRun::refine_stage},
  };
  for (const Stage& s : stages) app.add_subcommand(s.name, s.help);
  CLI::App* eval_cmd = app.add_subcommand("eval", "Metrics against the ground-truth body");
  CLI::App* pipeline_cmd = app.add_subcommand("pipeline", "All stages in order");
  CLI::App* repose_cmd =
      app.add_subcommand("repose", "Apply a pose file to the refined canonical mesh");
  std::string pose_path, out_path = "reposed.ply";
  repose_cmd->add_option("--pose", pose_path, "Pose JSON file")->required();
  repose_cmd->add_option("--out", out_path, "Output mesh (.ply or .obj)")
      ->capture_default_str();

  CLI11_PARSE(app, argc, argv);

  try {
    avk::PipelineRun run = open_run(run_dir, config_path, defaults);
    for (const Stage& s : stages)
      if (app.got_subcommand(s.name)) (run.*s.fn)();
    if (app.got_subcommand(eval_cmd) || app.got_subcommand(pipeline_cmd)) {
      const avk::MetricsReport report =
          app.got_subcommand(pipeline_cmd) ? run.run_all() : run.eval_stage();
      std::printf("p2s_cm %.4f\nchamfer_cm %.4f\nnormal_err_x100 %.4f\n",
                  report.p2s_cm, report.chamfer_cm, report.normal_err_x100);
    }
    if (app.got_subcommand(repose_cmd)) run.repose(pose_path, out_path);
  } catch (const avk::InputError& e) {
    std::fprintf(stderr, "input error: %s\n", e.what());
    return 2;
  } catch (const avk::NumericalError& e) {
    std::fprintf(stderr, "numerical error: %s\n", e.what());
    return 3;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  }
  return 0;
}
