#pragma once

#include <filesystem>
#include <string>

#include "avk/types.hpp"

namespace avk::io {

// Skeleton / Pose JSON. Field names: joints, parents, rest_positions,
// theta, root_translation.
void save_skeleton_json(const Skeleton& s, const std::filesystem::path& path);
Skeleton load_skeleton_json(const std::filesystem::path& path);
void save_pose_json(const Pose& p, const std::filesystem::path& path);
Pose load_pose_json(const std::filesystem::path& path);

// ASCII OBJ; vertex colors as trailing floats on the v lines.
void save_obj(const SkinnedMesh& mesh, const std::filesystem::path& path);
SkinnedMesh load_obj(const std::filesystem::path& path);

// Binary little-endian PLY with a float-list property "skin_weights".
void save_ply(const SkinnedMesh& mesh, const std::filesystem::path& path);
SkinnedMesh load_ply(const std::filesystem::path& path);

// PFM, little-endian (negative scale); 1 or 3 channels.
void save_pfm(const ImageF& img, const std::filesystem::path& path);
ImageF load_pfm(const std::filesystem::path& path);

// PNG.
void save_png_gray8(const ImageU8& img, const std::filesystem::path& path);
ImageU8 load_png_gray8(const std::filesystem::path& path);
void save_png_rgba16(const ImageU16& img, const std::filesystem::path& path);
ImageU16 load_png_rgba16(const std::filesystem::path& path);
void save_png_gray16(const ImageU16& img, const std::filesystem::path& path);
ImageU16 load_png_gray16(const std::filesystem::path& path);

std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, const std::string& text);

}  // namespace avk::io
