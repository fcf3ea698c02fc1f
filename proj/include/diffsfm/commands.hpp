#pragma once

#include <filesystem>
#include <string>

#include "diffsfm/config.hpp"

namespace dsfm {

// Process exit codes shared by the CLI and the C API.
constexpr int kExitOk = 0;
constexpr int kExitUserError = 1;   // bad arguments, files, or domains
constexpr int kExitNumericError = 2;  // NaN/Inf or diverged optimization

/// Render the configured scene along the configured trajectory:
/// frame_%03d.ppm (+ exact .pfm), depth_%03d.pfm, poses.csv (relative
/// steps k -> k+1), intrinsics.json, config.json. Deterministic per seed.
void cmd_synth(const ExperimentConfig& config, const std::filesystem::path& out_dir);

/// Recover depth/pose (and intrinsics, arm-dependent) from a data
/// directory laid out like cmd_synth's output. Arms: "baseline" freezes
/// intrinsics at the data directory's values, "camera" frees them,
/// "camera+costvolume" frees them and adds the consistency supervision.
void cmd_optimize(const ExperimentConfig& config, const std::filesystem::path& data_dir,
                  const std::filesystem::path& out_dir, const std::string& ablation);

/// Score a prediction directory against ground truth: median scaling,
/// capping, the five depth metrics, pose/trajectory/intrinsic errors.
/// Writes metrics.json, table.txt, trajectory.csv and trajectory.svg.
/// `pred2_dir` (optional) adds a second run for side-by-side trajectories.
void cmd_eval(const ExperimentConfig& config, const std::filesystem::path& pred_dir,
              const std::filesystem::path& gt_dir, const std::filesystem::path& out_dir,
              const std::filesystem::path& pred2_dir = {});

struct GradcheckOptions {
    std::uint64_t seed = 0;
    double tolerance = 1e-4;
    std::string term = "all";  // all | data | rs | ax | es
    int size = 16;
};

struct GradcheckResult {
    std::string report;
    bool pass = false;
};

/// Finite-difference the full supervision stack on a random synthetic
/// pair w.r.t. depth, pose, intrinsics and calibration.
GradcheckResult cmd_gradcheck(const GradcheckOptions& opts);

}  // namespace dsfm
