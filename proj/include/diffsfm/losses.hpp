#pragma once

#include <optional>
#include <vector>

#include "diffsfm/sampling.hpp"
#include "diffsfm/tensor.hpp"

namespace dsfm {

/// Supervision weights. Defaults are the training configuration of the
/// implemented method: alpha 0.85, kappa 1, lambda 0.01/0.001/0.0001.
struct LossWeights {
    double alpha = 0.85;     // SSIM share of the photometric penalty
    double kappa = 1.0;      // regularizer weight
    double lambda1 = 0.01;   // residual smoothness
    double lambda2 = 0.001;  // auxiliary photometric term
    double lambda3 = 0.0001; // edge-aware depth smoothness
    double mu = 1.0;         // depth consistency coupling

    void validate() const;
};

/// How the per-pixel photometric penalty combines multiple source views.
enum class PhotoAggregate { min_over_sources, mean_over_sources };

/// Everything the data-fidelity stack consumes. `views` are synthesized
/// target frames from geometric warping; `flow_view` is an optional
/// second reconstruction (flow-based in the original setup) feeding the
/// auxiliary term. Empty calibration means zero; empty visibility
/// defaults to the union of the view masks.
struct SupervisionInputs {
    Tensor target;  // [H,W,C]
    std::vector<SynthesizedView> views;
    std::optional<SynthesizedView> flow_view;
    Tensor calibration;  // [H,W], additive brightness correction
    Tensor visibility;   // [H,W] in [0,1]
    PhotoAggregate aggregate = PhotoAggregate::min_over_sources;
};

/// Per-pixel SSIM map in [-1,1]: 3x3 box window, C1 = 0.01^2,
/// C2 = 0.03^2, channel-averaged.
Tensor ssim(const Tensor& a, const Tensor& b);

/// alpha * (1 - SSIM)/2 + (1 - alpha) * |a - b| (channel-mean L1).
Tensor photometric_phi(const Tensor& a, const Tensor& b, double alpha);

/// Visibility-weighted mean of Phi between the synthesized view(s) and
/// the calibrated target (target + C). Scalar.
Tensor data_fidelity(const SupervisionInputs& inp, const LossWeights& w);

/// Mean over pixels and axes of |grad C| * exp(-|grad(target - synthesized)|),
/// per-axis pairing. Scalar.
Tensor residual_smoothness(const Tensor& calibration, const Tensor& target, const Tensor& synthesized);

/// Same formula as data_fidelity but consuming flow_view.
Tensor auxiliary_loss(const SupervisionInputs& inp, const LossWeights& w);

/// Mean over pixels and axes of |grad(depth / mean(depth))| * exp(-|grad target|).
/// Scalar; invariant to uniform depth scaling.
Tensor edge_aware_smoothness(const Tensor& depth, const Tensor& target);

/// Mean |log d_sfm - log d_c|. Scalar; symmetric, scale-aware.
Tensor depth_consistency(const Tensor& d_sfm, const Tensor& d_c);

/// Unweighted term values plus the weighted total:
/// total = D + kappa*(l1*rs + l2*ax + l3*es) + mu*consistency.
struct LossBreakdown {
    Tensor total;
    Tensor data;
    Tensor residual_smooth;
    Tensor auxiliary;
    Tensor edge_smooth;
    Tensor consistency;
};

LossBreakdown total_loss(const SupervisionInputs& inp, const Tensor& depth, const Tensor* d_c,
                         const LossWeights& w);

}  // namespace dsfm
