#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "diffsfm/camera.hpp"
#include "diffsfm/tensor.hpp"

namespace dsfm {

/// Grayscale PFM ("Pf"), float32, scale -1.0 (little-endian), rows
/// bottom-to-top per convention. Accepts [H,W] or [H,W,1].
void write_pfm(const std::filesystem::path& path, const Tensor& map);
Tensor read_pfm(const std::filesystem::path& path);  // returns [H,W]

/// Binary PPM (P6, maxval 255). [H,W] / [H,W,1] replicate to gray RGB;
/// [H,W,3] writes channels directly. Values clamped to [0,1].
void write_ppm(const std::filesystem::path& path, const Tensor& image);
Tensor read_ppm(const std::filesystem::path& path);  // returns [H,W,3] in [0,1]

/// Pose CSV: header "frame,rx,ry,rz,tx,ty,tz", one row per pose.
void write_poses_csv(const std::filesystem::path& path, std::span<const PoseSE3> poses);
std::vector<PoseSE3> read_poses_csv(const std::filesystem::path& path);

void write_text(const std::filesystem::path& path, const std::string& text);
std::string read_text(const std::filesystem::path& path);

/// Fixed shortest-round-trip formatting so files are byte-stable.
std::string format_double(double v);

}  // namespace dsfm
