#include "diffsfm/camera.hpp"

#include <cmath>

namespace dsfm {

void Intrinsics::validate() const {
    if (!(fx > 0.0) || !(fy > 0.0))
        throw std::domain_error("intrinsics: focal lengths must be positive (fx=" + std::to_string(fx) +
                                ", fy=" + std::to_string(fy) + ")");
    if (!(cx > 0.0 && cx < 1.0) || !(cy > 0.0 && cy < 1.0))
        throw std::domain_error("intrinsics: principal point must lie in (0,1) (cx=" + std::to_string(cx) +
                                ", cy=" + std::to_string(cy) + ")");
}

void PixelGrid::validate() const {
    if (width < 2 || height < 2)
        throw std::invalid_argument("pixel grid: width and height must be >= 2, got " + std::to_string(width) + "x" +
                                    std::to_string(height));
}

namespace {

double dot3(const Vec3& a, const Vec3& b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; }

}  // namespace

Mat3 rodrigues(const Vec3& r) {
    const double s = dot3(r, r);
    double a, b;  // sin(t)/t and (1-cos(t))/t^2
    if (s < 1e-12) {
        a = 1.0 - s / 6.0;
        b = 0.5 - s / 24.0;
    } else {
        const double t = std::sqrt(s);
        a = std::sin(t) / t;
        b = (1.0 - std::cos(t)) / s;
    }
    const double x = r[0], y = r[1], z = r[2];
    return Mat3{1.0 + b * (x * x - s), b * x * y - a * z,       b * x * z + a * y,
                b * x * y + a * z,     1.0 + b * (y * y - s),   b * y * z - a * x,
                b * x * z - a * y,     b * y * z + a * x,       1.0 + b * (z * z - s)};
}

Vec3 rotation_log(const Mat3& m) {
    const double tr = m[0] + m[4] + m[8];
    const double c = std::min(1.0, std::max(-1.0, (tr - 1.0) / 2.0));
    const double t = std::acos(c);
    const Vec3 w = {m[7] - m[5], m[2] - m[6], m[3] - m[1]};  // 2 sin(t) * axis
    if (t < 1e-7) return {w[0] / 2.0, w[1] / 2.0, w[2] / 2.0};
    if (t < M_PI - 1e-6) {
        const double k = t / (2.0 * std::sin(t));
        return {k * w[0], k * w[1], k * w[2]};
    }
    // Near pi the skew part degenerates; recover the axis from the
    // symmetric part (R + I)/2 ~ a a^T at t = pi.
    Vec3 a;
    const double d0 = (m[0] - c) / (1.0 - c);
    const double d1 = (m[4] - c) / (1.0 - c);
    const double d2 = (m[8] - c) / (1.0 - c);
    if (d0 >= d1 && d0 >= d2) {
        a[0] = std::sqrt(std::max(0.0, d0));
        a[1] = (m[1] + m[3]) / (2.0 * (1.0 - c) * a[0]);
        a[2] = (m[2] + m[6]) / (2.0 * (1.0 - c) * a[0]);
    } else if (d1 >= d2) {
        a[1] = std::sqrt(std::max(0.0, d1));
        a[0] = (m[1] + m[3]) / (2.0 * (1.0 - c) * a[1]);
        a[2] = (m[5] + m[7]) / (2.0 * (1.0 - c) * a[1]);
    } else {
        a[2] = std::sqrt(std::max(0.0, d2));
        a[0] = (m[2] + m[6]) / (2.0 * (1.0 - c) * a[2]);
        a[1] = (m[5] + m[7]) / (2.0 * (1.0 - c) * a[2]);
    }
    if (dot3(w, a) < 0.0) {
        a = {-a[0], -a[1], -a[2]};
    }
    return {t * a[0], t * a[1], t * a[2]};
}

Vec3 mat_apply(const Mat3& m, const Vec3& v) {
    return {m[0] * v[0] + m[1] * v[1] + m[2] * v[2], m[3] * v[0] + m[4] * v[1] + m[5] * v[2],
            m[6] * v[0] + m[7] * v[1] + m[8] * v[2]};
}

Mat3 mat_mul(const Mat3& a, const Mat3& b) {
    Mat3 r{};
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) {
            double s = 0.0;
            for (int k = 0; k < 3; ++k) s += a[i * 3 + k] * b[k * 3 + j];
            r[i * 3 + j] = s;
        }
    return r;
}

Mat3 pixel_matrix(const Intrinsics& intr, const PixelGrid& grid) {
    intr.validate();
    grid.validate();
    return Mat3{intr.fx * grid.width, 0.0, intr.cx * grid.width,
                0.0, intr.fy * grid.height, intr.cy * grid.height,
                0.0, 0.0, 1.0};
}

Vec3 unproject(const Vec2& pixel, double depth, const Intrinsics& intr, const PixelGrid& grid) {
    if (!(depth > 0.0)) throw std::domain_error("unproject: depth must be positive, got " + std::to_string(depth));
    intr.validate();
    grid.validate();
    const double fxp = intr.fx * grid.width, fyp = intr.fy * grid.height;
    const double cxp = intr.cx * grid.width, cyp = intr.cy * grid.height;
    return {(pixel[0] - cxp) / fxp * depth, (pixel[1] - cyp) / fyp * depth, depth};
}

Vec3 transform(const Vec3& point, const PoseSE3& pose) {
    const Vec3 r = mat_apply(rodrigues(pose.rotation), point);
    return {r[0] + pose.translation[0], r[1] + pose.translation[1], r[2] + pose.translation[2]};
}

std::optional<Vec2> project(const Vec3& point, const Intrinsics& intr, const PixelGrid& grid) {
    if (!(point[2] > 0.0)) return std::nullopt;
    const double fxp = intr.fx * grid.width, fyp = intr.fy * grid.height;
    const double cxp = intr.cx * grid.width, cyp = intr.cy * grid.height;
    return Vec2{fxp * point[0] / point[2] + cxp, fyp * point[1] / point[2] + cyp};
}

PoseSE3 pose_compose(const PoseSE3& a, const PoseSE3& b) {
    const Mat3 ra = rodrigues(a.rotation);
    const Mat3 rb = rodrigues(b.rotation);
    const Vec3 t = mat_apply(ra, b.translation);
    return {rotation_log(mat_mul(ra, rb)),
            {t[0] + a.translation[0], t[1] + a.translation[1], t[2] + a.translation[2]}};
}

PoseSE3 pose_inverse(const PoseSE3& a) {
    const Mat3 r = rodrigues(a.rotation);
    // R^T t, negated; log(R^T) = -log(R)
    const Vec3 t = {r[0] * a.translation[0] + r[3] * a.translation[1] + r[6] * a.translation[2],
                    r[1] * a.translation[0] + r[4] * a.translation[1] + r[7] * a.translation[2],
                    r[2] * a.translation[0] + r[5] * a.translation[1] + r[8] * a.translation[2]};
    return {{-a.rotation[0], -a.rotation[1], -a.rotation[2]}, {-t[0], -t[1], -t[2]}};
}

// ---- differentiable warp ----

Tensor pose_tensor(const PoseSE3& pose) {
    const auto a = pose.as_array();
    return Tensor::of({6}, std::vector<double>(a.begin(), a.end()));
}

Tensor intrinsics_tensor(const Intrinsics& intr) {
    const auto a = intr.as_array();
    return Tensor::of({4}, std::vector<double>(a.begin(), a.end()));
}

PoseSE3 pose_from_tensor(const Tensor& t) {
    if (t.size() != 6) throw std::invalid_argument("pose_from_tensor: want 6 elements, got " + shape_str(t.shape()));
    const auto& v = t.data();
    return {{v[0], v[1], v[2]}, {v[3], v[4], v[5]}};
}

Intrinsics intrinsics_from_tensor(const Tensor& t) {
    if (t.size() != 4)
        throw std::invalid_argument("intrinsics_from_tensor: want 4 elements, got " + shape_str(t.shape()));
    const auto& v = t.data();
    return {v[0], v[1], v[2], v[3]};
}

Tensor WarpResult::coords() const {
    const Tensor parts[2] = {x, y};
    return stack_last(std::span<const Tensor>(parts, 2));
}

namespace {

void meshgrid(const PixelGrid& grid, Tensor& u, Tensor& v) {
    const int H = grid.height, W = grid.width;
    std::vector<double> uu(static_cast<std::size_t>(H) * W), vv(static_cast<std::size_t>(H) * W);
    for (int i = 0; i < H; ++i)
        for (int j = 0; j < W; ++j) {
            uu[static_cast<std::size_t>(i) * W + j] = j;
            vv[static_cast<std::size_t>(i) * W + j] = i;
        }
    u = Tensor::of({H, W}, std::move(uu));
    v = Tensor::of({H, W}, std::move(vv));
}

}  // namespace

WarpResult warp_coords(const Tensor& depth, const Tensor& pose6, const Tensor& intr4, const PixelGrid& grid) {
    grid.validate();
    const int H = grid.height, W = grid.width;
    if (depth.shape() != Shape{H, W})
        throw std::invalid_argument("warp_coords: depth shape " + shape_str(depth.shape()) + " does not match grid " +
                                    shape_str({H, W}));
    if (pose6.size() != 6) throw std::invalid_argument("warp_coords: pose must have 6 elements");
    if (intr4.size() != 4) throw std::invalid_argument("warp_coords: intrinsics must have 4 elements");
    for (double d : depth.data())
        if (!(d > 0.0)) throw std::domain_error("warp_coords: non-positive depth entry");

    Tensor u, v;
    meshgrid(grid, u, v);

    Tensor fx = select(intr4, 0) * static_cast<double>(W);
    Tensor fy = select(intr4, 1) * static_cast<double>(H);
    Tensor cx = select(intr4, 2) * static_cast<double>(W);
    Tensor cy = select(intr4, 3) * static_cast<double>(H);

    Tensor px = (u - cx) / fx * depth;
    Tensor py = (v - cy) / fy * depth;
    const Tensor& pz = depth;

    Tensor rx = select(pose6, 0), ry = select(pose6, 1), rz = select(pose6, 2);
    Tensor tx = select(pose6, 3), ty = select(pose6, 4), tz = select(pose6, 5);
    Tensor s = rx * rx + ry * ry + rz * rz;
    Tensor a = sinc_sqrt(s);
    Tensor b = verc_sqrt(s);

    // R = I + a [r]x + b [r]x^2, [r]x^2 = r r^T - s I
    Tensor r00 = 1.0 + b * (rx * rx - s);
    Tensor r01 = b * (rx * ry) - a * rz;
    Tensor r02 = b * (rx * rz) + a * ry;
    Tensor r10 = b * (rx * ry) + a * rz;
    Tensor r11 = 1.0 + b * (ry * ry - s);
    Tensor r12 = b * (ry * rz) - a * rx;
    Tensor r20 = b * (rx * rz) - a * ry;
    Tensor r21 = b * (ry * rz) + a * rx;
    Tensor r22 = 1.0 + b * (rz * rz - s);

    Tensor qx = r00 * px + r01 * py + r02 * pz + tx;
    Tensor qy = r10 * px + r11 * py + r12 * pz + ty;
    Tensor qz = r20 * px + r21 * py + r22 * pz + tz;

    // Pixels behind the camera are masked, not errored; the clamp keeps
    // their coordinates finite without touching valid-pixel gradients.
    Tensor z_safe = maximum(qz, Tensor::scalar(1e-9));
    Tensor xs = fx * (qx / z_safe) + cx;
    Tensor ys = fy * (qy / z_safe) + cy;

    const auto& zv = qz.data();
    const auto& xv = xs.data();
    const auto& yv = ys.data();
    std::vector<double> ok(zv.size());
    for (std::size_t i = 0; i < ok.size(); ++i)
        ok[i] = (zv[i] > 0.0 && xv[i] >= -kCoordEdgeTolerance && xv[i] <= W - 1 + kCoordEdgeTolerance &&
                 yv[i] >= -kCoordEdgeTolerance && yv[i] <= H - 1 + kCoordEdgeTolerance)
                    ? 1.0
                    : 0.0;

    return {std::move(xs), std::move(ys), Tensor::of({H, W}, std::move(ok))};
}

WarpResult warp_coords(const Tensor& depth, const PoseSE3& pose, const Intrinsics& intr, const PixelGrid& grid) {
    return warp_coords(depth, pose_tensor(pose), intrinsics_tensor(intr), grid);
}

}  // namespace dsfm
