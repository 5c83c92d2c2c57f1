#pragma once

#include <filesystem>
#include <string>

#include "avk/codec.hpp"
#include "avk/refine.hpp"
#include "avk/synthbody.hpp"

namespace avk {

// One human-editable file drives every stage; each section mirrors the
// corresponding module's config struct and every paper-given constant
// appears under its own key with the paper default.
struct RunConfig {
  // [synth]
  BodySpec body;
  int frame_count = 5;
  double pose_amplitude = 0.5;
  int image_size = 512;
  NoiseSpec noise;
  uint64_t seed = 1;

  // [codec]
  CodecConfig codec;
  int codec_samples = 100000;

  // [canonical]
  double stretch_factor = 4.0;
  double tau = 0.05;
  int fuse_resolution = 128;

  // [refine]
  RefineConfig refine;

  void validate() const;
};

// TOML subset: [section] headers, `key = value` pairs (int / float / bool /
// string), `#` comments. Unknown sections or keys are input errors.
RunConfig load_run_config(const std::filesystem::path& path);
void save_run_config(const RunConfig& config, const std::filesystem::path& path);

// Canonical serialization (same ordering as save_run_config).
std::string serialize_run_config(const RunConfig& config);

// FNV-1a over the canonical serialization; stable across runs.
std::string config_hash(const RunConfig& config);

// FNV-1a over raw bytes, hex string; used for manifest output hashes.
std::string hash_bytes(const std::string& bytes);
std::string hash_file(const std::filesystem::path& path);

}  // namespace avk
