#pragma once

#include <span>
#include <vector>

#include "diffsfm/camera.hpp"
#include "diffsfm/tensor.hpp"

namespace dsfm {

struct DepthMetrics {
    double abs_rel = 0.0;
    double sq_rel = 0.0;
    double rmse = 0.0;
    double rmse_log = 0.0;
    double delta1 = 0.0;  // percent under max(d*/d, d/d*) < 1.25
    double delta2 = 0.0;  // < 1.25^2
    double delta3 = 0.0;  // < 1.25^3
    std::size_t n_valid = 0;
};

/// Rescale d_pred so its median over valid pixels matches d_gt's median.
/// Even-length medians are the mean of the two central values.
Tensor median_scale(const Tensor& d_pred, const Tensor& d_gt, const Tensor& valid);

/// The five depth scores. Callers scale first (the CLI pipeline enforces
/// scale-then-cap); pixels with valid = 0 or d_gt <= 0 are excluded, and
/// both depths are clamped to (0, cap].
DepthMetrics depth_metrics(const Tensor& d_pred, const Tensor& d_gt, const Tensor& valid, double cap);

/// Component-wise (v - lo) / (hi - lo) applied before the l2 norm;
/// identity by default, matching an unspecified-protocol surface.
struct NormBounds {
    double lo = 0.0;
    double hi = 1.0;
};

struct MeanStd {
    double mean = 0.0;
    double std = 0.0;  // population
};

struct PoseErrors {
    MeanStd rotation;
    MeanStd trajectory;
};

/// Per-frame rotation error: l2 of the normalized axis-angle difference.
/// Per-frame trajectory error: l2 of the normalized difference of
/// accumulated positions. Reported mean +- population std.
PoseErrors pose_errors(std::span<const PoseSE3> pred, std::span<const PoseSE3> gt,
                       const NormBounds& rotation_norm = {}, const NormBounds& trajectory_norm = {});

struct IntrinsicError {
    double fx = 0.0, fy = 0.0, cx = 0.0, cy = 0.0;  // absolute differences
    double mean() const { return (fx + fy + cx + cy) / 4.0; }
};

IntrinsicError intrinsic_error(const Intrinsics& pred, const Intrinsics& gt);
/// Aggregate per-parameter errors over repeated runs.
std::array<MeanStd, 4> intrinsic_error_stats(std::span<const IntrinsicError> runs);

/// Left-fold of pose_compose from identity; positions are the translation
/// components of the partial composes. n relative poses -> n+1 positions.
std::vector<Vec3> accumulate_trajectory(std::span<const PoseSE3> relative_poses);

MeanStd mean_std(std::span<const double> values);

}  // namespace dsfm
