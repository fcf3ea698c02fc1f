#include "diffsfm/evaluate.hpp"

#include <algorithm>
#include <cmath>

namespace dsfm {

namespace {

double median_of(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return (n % 2 == 1) ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

void check_mask(const Tensor& valid, const Tensor& ref, const char* who) {
    if (!valid.empty() && valid.shape() != ref.shape())
        throw std::invalid_argument(std::string(who) + ": mask shape " + shape_str(valid.shape()) +
                                    " vs data " + shape_str(ref.shape()));
}

}  // namespace

Tensor median_scale(const Tensor& d_pred, const Tensor& d_gt, const Tensor& valid) {
    if (d_pred.shape() != d_gt.shape())
        throw std::invalid_argument("median_scale: shape mismatch " + shape_str(d_pred.shape()) + " vs " +
                                    shape_str(d_gt.shape()));
    check_mask(valid, d_pred, "median_scale");
    std::vector<double> pv, gv;
    for (std::size_t i = 0; i < d_pred.size(); ++i) {
        if (!valid.empty() && !(valid[i] > 0.0)) continue;
        if (!(d_pred[i] > 0.0) || !(d_gt[i] > 0.0))
            throw std::domain_error("median_scale: non-positive depth on a valid pixel");
        pv.push_back(d_pred[i]);
        gv.push_back(d_gt[i]);
    }
    if (pv.empty()) throw std::invalid_argument("median_scale: empty valid set");
    const double factor = median_of(gv) / median_of(pv);
    std::vector<double> out(d_pred.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = d_pred[i] * factor;
    return Tensor::of(d_pred.shape(), std::move(out));
}

DepthMetrics depth_metrics(const Tensor& d_pred, const Tensor& d_gt, const Tensor& valid, double cap) {
    if (d_pred.shape() != d_gt.shape())
        throw std::invalid_argument("depth_metrics: shape mismatch " + shape_str(d_pred.shape()) + " vs " +
                                    shape_str(d_gt.shape()));
    check_mask(valid, d_pred, "depth_metrics");
    if (!(cap > 0.0)) throw std::invalid_argument("depth_metrics: cap must be positive");

    DepthMetrics m;
    double abs_rel = 0, sq_rel = 0, sq = 0, sq_log = 0;
    std::size_t hit1 = 0, hit2 = 0, hit3 = 0;
    constexpr double kThresh = 1.25;
    for (std::size_t i = 0; i < d_pred.size(); ++i) {
        if (!valid.empty() && !(valid[i] > 0.0)) continue;
        if (!(d_gt[i] > 0.0)) continue;
        const double gt = std::min(d_gt[i], cap);
        const double pr = std::min(std::max(d_pred[i], 1e-12), cap);
        const double diff = std::fabs(gt - pr);
        abs_rel += diff / gt;
        sq_rel += diff * diff / gt;
        sq += diff * diff;
        const double dlog = std::log(gt) - std::log(pr);
        sq_log += dlog * dlog;
        const double ratio = std::max(gt / pr, pr / gt);
        if (ratio < kThresh) ++hit1;
        if (ratio < kThresh * kThresh) ++hit2;
        if (ratio < kThresh * kThresh * kThresh) ++hit3;
        ++m.n_valid;
    }
    if (m.n_valid == 0) throw std::invalid_argument("depth_metrics: zero evaluated pixels");
    const double n = static_cast<double>(m.n_valid);
    m.abs_rel = abs_rel / n;
    m.sq_rel = sq_rel / n;
    m.rmse = std::sqrt(sq / n);
    m.rmse_log = std::sqrt(sq_log / n);
    m.delta1 = 100.0 * hit1 / n;
    m.delta2 = 100.0 * hit2 / n;
    m.delta3 = 100.0 * hit3 / n;
    return m;
}

MeanStd mean_std(std::span<const double> values) {
    if (values.empty()) return {};
    double s = 0.0;
    for (double v : values) s += v;
    const double mean = s / static_cast<double>(values.size());
    double var = 0.0;
    for (double v : values) var += (v - mean) * (v - mean);
    return {mean, std::sqrt(var / static_cast<double>(values.size()))};
}

namespace {

double norm_apply(double v, const NormBounds& b) {
    if (!(b.hi > b.lo)) throw std::invalid_argument("pose_errors: normalization bounds need hi > lo");
    return (v - b.lo) / (b.hi - b.lo);
}

double l2_normed_diff(const Vec3& a, const Vec3& b, const NormBounds& nb) {
    double s = 0.0;
    for (int i = 0; i < 3; ++i) {
        const double d = norm_apply(a[i], nb) - norm_apply(b[i], nb);
        s += d * d;
    }
    return std::sqrt(s);
}

}  // namespace

PoseErrors pose_errors(std::span<const PoseSE3> pred, std::span<const PoseSE3> gt, const NormBounds& rotation_norm,
                       const NormBounds& trajectory_norm) {
    if (pred.size() != gt.size())
        throw std::invalid_argument("pose_errors: " + std::to_string(pred.size()) + " predictions vs " +
                                    std::to_string(gt.size()) + " ground-truth poses");
    if (pred.empty()) throw std::invalid_argument("pose_errors: empty sequences");

    std::vector<double> rot_err;
    for (std::size_t i = 0; i < pred.size(); ++i)
        rot_err.push_back(l2_normed_diff(pred[i].rotation, gt[i].rotation, rotation_norm));

    const std::vector<Vec3> pos_pred = accumulate_trajectory(pred);
    const std::vector<Vec3> pos_gt = accumulate_trajectory(gt);
    std::vector<double> traj_err;
    for (std::size_t i = 1; i < pos_pred.size(); ++i)
        traj_err.push_back(l2_normed_diff(pos_pred[i], pos_gt[i], trajectory_norm));

    PoseErrors out;
    out.rotation = mean_std(rot_err);
    out.trajectory = mean_std(traj_err);
    return out;
}

IntrinsicError intrinsic_error(const Intrinsics& pred, const Intrinsics& gt) {
    return {std::fabs(pred.fx - gt.fx), std::fabs(pred.fy - gt.fy), std::fabs(pred.cx - gt.cx),
            std::fabs(pred.cy - gt.cy)};
}

std::array<MeanStd, 4> intrinsic_error_stats(std::span<const IntrinsicError> runs) {
    std::vector<double> fx, fy, cx, cy;
    for (const IntrinsicError& e : runs) {
        fx.push_back(e.fx);
        fy.push_back(e.fy);
        cx.push_back(e.cx);
        cy.push_back(e.cy);
    }
    return {mean_std(fx), mean_std(fy), mean_std(cx), mean_std(cy)};
}

std::vector<Vec3> accumulate_trajectory(std::span<const PoseSE3> relative_poses) {
    std::vector<Vec3> positions;
    positions.push_back({0, 0, 0});
    PoseSE3 acc = PoseSE3::identity();
    for (const PoseSE3& p : relative_poses) {
        acc = pose_compose(acc, p);
        positions.push_back(acc.translation);
    }
    return positions;
}

}  // namespace dsfm
