#pragma once

#include "diffsfm/camera.hpp"
#include "diffsfm/tensor.hpp"

namespace dsfm {

/// A warped view plus its sampling validity. Pixels with oob_mask = 0 are
/// zero-filled, never edge-clamped, so a forgotten mask shows up loudly.
struct SynthesizedView {
    Tensor image;     // [H,W,C]
    Tensor oob_mask;  // [H,W] constant 0/1
};

/// Bilinear interpolation of src [H,W,C] at coords [H,W,2] (x, y).
/// Differentiable w.r.t. src values and coords.
SynthesizedView bilinear_sample(const Tensor& src, const Tensor& coords);
SynthesizedView bilinear_sample(const Tensor& src, const Tensor& x, const Tensor& y);

/// Warp `source` into the target frame: bilinear_sample at
/// warp_coords(depth, pose, intr). oob_mask combines warp validity with
/// sampling bounds.
SynthesizedView synthesize_target(const Tensor& source, const Tensor& depth, const Tensor& pose6,
                                  const Tensor& intr4, const PixelGrid& grid);
SynthesizedView synthesize_target(const Tensor& source, const Tensor& depth, const PoseSE3& pose,
                                  const Intrinsics& intr, const PixelGrid& grid);

}  // namespace dsfm
