#include "diffsfm/sampling.hpp"

namespace dsfm {

SynthesizedView bilinear_sample(const Tensor& src, const Tensor& x, const Tensor& y) {
    if (src.rank() != 2 && src.rank() != 3)
        throw std::invalid_argument("bilinear_sample: src must be [H,W] or [H,W,C], got " + shape_str(src.shape()));
    const int H = src.shape()[0], W = src.shape()[1];
    Tensor image = gather_bilinear(src, x, y);
    Tensor mask = gather_in_bounds(x, y, W, H);
    return {std::move(image), std::move(mask)};
}

SynthesizedView bilinear_sample(const Tensor& src, const Tensor& coords) {
    if (coords.rank() != 3 || coords.shape()[2] != 2)
        throw std::invalid_argument("bilinear_sample: coords must be [H,W,2], got " + shape_str(coords.shape()));
    return bilinear_sample(src, slice_last(coords, 0), slice_last(coords, 1));
}

SynthesizedView synthesize_target(const Tensor& source, const Tensor& depth, const Tensor& pose6,
                                  const Tensor& intr4, const PixelGrid& grid) {
    WarpResult w = warp_coords(depth, pose6, intr4, grid);
    SynthesizedView view = bilinear_sample(source, w.x, w.y);
    view.oob_mask = mul(view.oob_mask, w.valid);  // both constant 0/1
    return view;
}

SynthesizedView synthesize_target(const Tensor& source, const Tensor& depth, const PoseSE3& pose,
                                  const Intrinsics& intr, const PixelGrid& grid) {
    return synthesize_target(source, depth, pose_tensor(pose), intrinsics_tensor(intr), grid);
}

}  // namespace dsfm
