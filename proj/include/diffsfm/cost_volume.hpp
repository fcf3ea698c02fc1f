#pragma once

#include <span>
#include <vector>

#include "diffsfm/camera.hpp"
#include "diffsfm/tensor.hpp"

namespace dsfm {

/// Ordered fronto-parallel depth hypotheses, linearly spaced over
/// [d_min, d_max] inclusive.
struct DepthPlanes {
    std::vector<double> values;
};

DepthPlanes make_planes(double d_min, double d_max, int n_planes);

/// Stand-ins for a learned feature encoder: the image itself, or
/// (intensity, |grad x|, |grad y|) with gradient channels scaled to [0,1].
enum class FeatureMode { identity, gradient3 };

Tensor extract_features(const Tensor& image, FeatureMode mode);

/// costs[p,i,j]: mean-over-channels-and-sources l1 distance between the
/// target features and every source's features warped at plane depth p.
/// coverage[p,i,j]: fraction of sources with a valid sample (constant).
/// Cells nothing covers hold max-observed-cost + 1 and are excluded from
/// the soft argmin.
struct CostVolume {
    Tensor costs;     // [P,H,W]
    Tensor coverage;  // [P,H,W] constant
};

struct SourceView {
    Tensor features;  // [H,W,F]
    Tensor pose6;     // target -> source, differentiable handle
};

CostVolume build_cost_volume(const Tensor& target_features, std::span<const SourceView> sources,
                             const Tensor& intr4, const DepthPlanes& planes, const PixelGrid& grid);

/// Plane value of minimal cost per pixel; ties resolve to the smaller
/// depth. Forward-only.
Tensor argmin_depth_hard(const CostVolume& vol, const DepthPlanes& planes);

/// Softmin-weighted average of plane values, temperature tau.
/// Differentiable through the costs. Pixels with no coverage at any
/// plane fall back to the mid-range depth.
Tensor argmin_depth_soft(const CostVolume& vol, const DepthPlanes& planes, double tau);

}  // namespace dsfm
