#pragma once

#include <array>
#include <optional>

#include "diffsfm/tensor.hpp"

namespace dsfm {

using Vec3 = std::array<double, 3>;
using Vec2 = std::array<double, 2>;
// Row-major 3x3.
using Mat3 = std::array<double, 9>;

/// Normalized pinhole intrinsics: focal lengths as pixels/width and
/// pixels/height, principal point as a fraction of the image size.
struct Intrinsics {
    double fx = 1.0;
    double fy = 1.0;
    double cx = 0.5;
    double cy = 0.5;

    void validate() const;
    std::array<double, 4> as_array() const { return {fx, fy, cx, cy}; }
    static Intrinsics from_array(const std::array<double, 4>& a) { return {a[0], a[1], a[2], a[3]}; }
};

/// Rigid transform: x -> R(rotation) * x + translation, rotation in
/// axis-angle (|rotation| < pi canonical).
struct PoseSE3 {
    Vec3 rotation{0, 0, 0};
    Vec3 translation{0, 0, 0};

    static PoseSE3 identity() { return {}; }
    std::array<double, 6> as_array() const {
        return {rotation[0], rotation[1], rotation[2], translation[0], translation[1], translation[2]};
    }
    static PoseSE3 from_array(const std::array<double, 6>& a) {
        return {{a[0], a[1], a[2]}, {a[3], a[4], a[5]}};
    }
};

/// Pixel centers at integer coordinates, origin top-left. x = column,
/// y = row.
struct PixelGrid {
    int width = 320;
    int height = 256;

    void validate() const;
};

// ---- small fixed-size helpers ----

Mat3 rodrigues(const Vec3& axis_angle);
Vec3 rotation_log(const Mat3& rot);  // inverse of rodrigues, |result| <= pi
Vec3 mat_apply(const Mat3& m, const Vec3& v);
Mat3 mat_mul(const Mat3& a, const Mat3& b);

// ---- the pinhole model ----

/// K in pixel units: [[fx*W, 0, cx*W], [0, fy*H, cy*H], [0, 0, 1]].
Mat3 pixel_matrix(const Intrinsics& intr, const PixelGrid& grid);

/// d * K^-1 * (u, v, 1)^T; z component equals d. Requires d > 0.
Vec3 unproject(const Vec2& pixel, double depth, const Intrinsics& intr, const PixelGrid& grid);

/// R * point + t.
Vec3 transform(const Vec3& point, const PoseSE3& pose);

/// (K*point).xy / (K*point).z; nullopt when z <= 0 (behind the camera).
std::optional<Vec2> project(const Vec3& point, const Intrinsics& intr, const PixelGrid& grid);

/// compose(a, b)(x) == a(b(x)).
PoseSE3 pose_compose(const PoseSE3& a, const PoseSE3& b);
PoseSE3 pose_inverse(const PoseSE3& a);

// ---- differentiable warp ----

struct WarpResult {
    Tensor x;      // [H,W] source-frame x coordinate per target pixel
    Tensor y;      // [H,W]
    Tensor valid;  // [H,W] constant 0/1: z > 0 and inside the source frame

    Tensor coords() const;  // [H,W,2] (x, y)
};

/// Per-pixel source coordinates of each target pixel under (depth, pose,
/// intrinsics). Differentiable w.r.t. all three tensor arguments: depth
/// [H,W] (strictly positive), pose [6] (axis-angle + translation),
/// intrinsics [4] (fx, fy, cx, cy normalized).
WarpResult warp_coords(const Tensor& depth, const Tensor& pose6, const Tensor& intr4, const PixelGrid& grid);

/// Convenience overload for fixed (non-optimized) pose/intrinsics.
WarpResult warp_coords(const Tensor& depth, const PoseSE3& pose, const Intrinsics& intr, const PixelGrid& grid);

Tensor pose_tensor(const PoseSE3& pose);
Tensor intrinsics_tensor(const Intrinsics& intr);
PoseSE3 pose_from_tensor(const Tensor& t);
Intrinsics intrinsics_from_tensor(const Tensor& t);

}  // namespace dsfm
