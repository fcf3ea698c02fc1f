#include "diffsfm/losses.hpp"

#include <cmath>

namespace dsfm {

namespace {

constexpr double kSsimC1 = 0.01 * 0.01;
constexpr double kSsimC2 = 0.03 * 0.03;
constexpr int kSsimWindow = 3;
// Fill value for pixels no source view covers; loud on purpose so a
// missing mask shows up in any test.
constexpr double kUncoveredPenalty = 1e4;

void check_image(const Tensor& t, const char* who) {
    if (t.rank() != 2 && t.rank() != 3)
        throw std::invalid_argument(std::string(who) + ": want [H,W] or [H,W,C], got " + shape_str(t.shape()));
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* who) {
    if (a.shape() != b.shape())
        throw std::invalid_argument(std::string(who) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                                    shape_str(b.shape()));
}

// |.| then channel mean, so rank-2 and rank-3 images meet at [H,W].
Tensor abs_channel_mean(const Tensor& t) {
    Tensor a = abs(t);
    return t.rank() == 3 ? mean_last(a) : a;
}

Tensor edge_weight_x(const Tensor& image) { return exp(neg(abs_channel_mean(gradient_x(image)))); }
Tensor edge_weight_y(const Tensor& image) { return exp(neg(abs_channel_mean(gradient_y(image)))); }

Tensor as_hw1(const Tensor& t) {
    // [H,W] -> [H,W,1] so it broadcasts against [H,W,C]
    return reshape(t, {t.shape()[0], t.shape()[1], 1});
}

Tensor calibrated_target(const SupervisionInputs& inp) {
    if (inp.calibration.empty()) return inp.target;
    if (inp.calibration.rank() != 2 || inp.calibration.shape()[0] != inp.target.shape()[0] ||
        inp.calibration.shape()[1] != inp.target.shape()[1])
        throw std::invalid_argument("calibration: shape " + shape_str(inp.calibration.shape()) +
                                    " does not match target " + shape_str(inp.target.shape()));
    for (double v : inp.calibration.data())
        if (!std::isfinite(v)) throw std::invalid_argument("calibration: non-finite value");
    return inp.target.rank() == 3 ? inp.target + as_hw1(inp.calibration) : inp.target + inp.calibration;
}

Tensor default_visibility(const SupervisionInputs& inp) {
    Tensor v = inp.views.at(0).oob_mask.detach();
    for (std::size_t i = 1; i < inp.views.size(); ++i) v = maximum(v, inp.views[i].oob_mask);
    return v;
}

Tensor visibility_or_default(const SupervisionInputs& inp) {
    if (inp.visibility.empty()) return default_visibility(inp);
    const auto& vv = inp.visibility.data();
    for (double v : vv)
        if (!(v >= 0.0 && v <= 1.0))
            throw std::invalid_argument("visibility: values must lie in [0,1]");
    return inp.visibility;
}

// Phi compares k x k windows, so it is only well-defined where the whole
// window holds real samples; erosion keeps the zero-filled out-of-bounds
// pixels from leaking into the SSIM statistics of their neighbors.
Tensor erode_to_window_support(const Tensor& mask01) {
    Tensor filled = box_filter(mask01, kSsimWindow);
    std::vector<double> out(filled.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = filled[i] > 1.0 - 1e-9 ? 1.0 : 0.0;
    return Tensor::of(mask01.shape(), std::move(out));
}

// Per-pixel photometric penalty against the calibrated target, combined
// over source views (uncovered pixels get the loud fill).
Tensor combined_phi(const SupervisionInputs& inp, const Tensor& target_cal, double alpha) {
    if (inp.views.empty()) throw std::invalid_argument("data_fidelity: no synthesized views");
    std::vector<Tensor> masked, eroded;
    masked.reserve(inp.views.size());
    eroded.reserve(inp.views.size());
    for (const SynthesizedView& view : inp.views) {
        check_same_shape(view.image, inp.target, "synthesized view");
        Tensor support = erode_to_window_support(view.oob_mask);
        Tensor phi = photometric_phi(view.image, target_cal, alpha);
        masked.push_back(phi * support + kUncoveredPenalty * (1.0 - support));
        eroded.push_back(std::move(support));
    }
    if (inp.aggregate == PhotoAggregate::min_over_sources) {
        Tensor out = masked[0];
        for (std::size_t i = 1; i < masked.size(); ++i) out = minimum(out, masked[i]);
        return out;
    }
    // mean over covered views per pixel
    Tensor num = masked[0] * eroded[0];
    Tensor den = eroded[0];
    for (std::size_t i = 1; i < masked.size(); ++i) {
        num = num + masked[i] * eroded[i];
        den = den + eroded[i];
    }
    Tensor den_safe = maximum(den, Tensor::scalar(1.0));
    Tensor any = minimum(den, Tensor::scalar(1.0));  // 1 where covered by >= 1 view
    return num / den_safe + kUncoveredPenalty * (1.0 - any);
}

// Weight carried by the visibility masking. The comparator is windowed,
// so a pixel counts only when (a) some view's window support is complete
// and (b) every pixel of its own window is visible; otherwise occlusion
// edges leak into the SSIM statistics of their visible neighbors.
Tensor coverage_weight(const SupervisionInputs& inp, const Tensor& visibility) {
    Tensor covered = erode_to_window_support(inp.views.at(0).oob_mask);
    for (std::size_t i = 1; i < inp.views.size(); ++i)
        covered = maximum(covered, erode_to_window_support(inp.views[i].oob_mask));
    std::vector<double> pos(visibility.size());
    for (std::size_t i = 0; i < pos.size(); ++i) pos[i] = visibility[i] > 0.0 ? 1.0 : 0.0;
    Tensor gate = erode_to_window_support(Tensor::of(visibility.shape(), std::move(pos)));
    return mul(mul(visibility, gate), covered);
}

Tensor masked_phi_mean(const Tensor& phi, const Tensor& visibility, const char* who) {
    double vis_sum = 0.0;
    for (double v : visibility.data()) vis_sum += v;
    if (!(vis_sum > 0.0)) throw std::invalid_argument(std::string(who) + ": no visible pixels");
    return sum(phi * visibility) / sum(visibility);
}

}  // namespace

void LossWeights::validate() const {
    if (!(alpha >= 0.0 && alpha <= 1.0))
        throw std::invalid_argument("weights: alpha must lie in [0,1], got " + std::to_string(alpha));
    if (kappa < 0 || lambda1 < 0 || lambda2 < 0 || lambda3 < 0 || mu < 0)
        throw std::invalid_argument("weights: negative loss weight");
}

Tensor ssim(const Tensor& a, const Tensor& b) {
    check_image(a, "ssim");
    check_same_shape(a, b, "ssim");
    Tensor mu_a = box_filter(a, kSsimWindow);
    Tensor mu_b = box_filter(b, kSsimWindow);
    Tensor var_a = box_filter(a * a, kSsimWindow) - mu_a * mu_a;
    Tensor var_b = box_filter(b * b, kSsimWindow) - mu_b * mu_b;
    Tensor cov = box_filter(a * b, kSsimWindow) - mu_a * mu_b;
    Tensor num = (2.0 * (mu_a * mu_b) + kSsimC1) * (2.0 * cov + kSsimC2);
    Tensor den = (mu_a * mu_a + mu_b * mu_b + kSsimC1) * (var_a + var_b + kSsimC2);
    Tensor map = num / den;
    return a.rank() == 3 ? mean_last(map) : map;
}

Tensor photometric_phi(const Tensor& a, const Tensor& b, double alpha) {
    check_image(a, "photometric_phi");
    check_same_shape(a, b, "photometric_phi");
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw std::invalid_argument("photometric_phi: alpha must lie in [0,1]");
    Tensor l1 = abs_channel_mean(a - b);
    if (alpha == 0.0) return l1;
    Tensor structural = (1.0 - ssim(a, b)) * 0.5;
    if (alpha == 1.0) return structural;
    return alpha * structural + (1.0 - alpha) * l1;
}

Tensor data_fidelity(const SupervisionInputs& inp, const LossWeights& w) {
    w.validate();
    check_image(inp.target, "data_fidelity");
    Tensor phi = combined_phi(inp, calibrated_target(inp), w.alpha);
    return masked_phi_mean(phi, coverage_weight(inp, visibility_or_default(inp)), "data_fidelity");
}

Tensor residual_smoothness(const Tensor& calibration, const Tensor& target, const Tensor& synthesized) {
    check_image(target, "residual_smoothness");
    check_same_shape(target, synthesized, "residual_smoothness");
    if (calibration.rank() != 2 || calibration.shape()[0] != target.shape()[0] ||
        calibration.shape()[1] != target.shape()[1])
        throw std::invalid_argument("residual_smoothness: calibration shape " + shape_str(calibration.shape()) +
                                    " does not match image " + shape_str(target.shape()));
    Tensor residual = target - synthesized;
    Tensor wx = edge_weight_x(residual);
    Tensor wy = edge_weight_y(residual);
    return mean((abs(gradient_x(calibration)) * wx + abs(gradient_y(calibration)) * wy) * 0.5);
}

Tensor auxiliary_loss(const SupervisionInputs& inp, const LossWeights& w) {
    if (!inp.flow_view.has_value())
        throw std::invalid_argument("auxiliary_loss: flow-synthesized view missing");
    w.validate();
    SupervisionInputs flow_inp;
    flow_inp.target = inp.target;
    flow_inp.views = {*inp.flow_view};
    flow_inp.calibration = inp.calibration;
    flow_inp.visibility = inp.visibility;
    flow_inp.aggregate = inp.aggregate;
    if (flow_inp.visibility.empty() && !inp.views.empty()) flow_inp.visibility = visibility_or_default(inp);
    Tensor phi = combined_phi(flow_inp, calibrated_target(flow_inp), w.alpha);
    return masked_phi_mean(phi, coverage_weight(flow_inp, visibility_or_default(flow_inp)), "auxiliary_loss");
}

Tensor edge_aware_smoothness(const Tensor& depth, const Tensor& target) {
    if (depth.rank() != 2) throw std::invalid_argument("edge_aware_smoothness: depth must be [H,W]");
    check_image(target, "edge_aware_smoothness");
    if (target.shape()[0] != depth.shape()[0] || target.shape()[1] != depth.shape()[1])
        throw std::invalid_argument("edge_aware_smoothness: depth " + shape_str(depth.shape()) +
                                    " vs image " + shape_str(target.shape()));
    for (double d : depth.data())
        if (!(d > 0.0)) throw std::domain_error("edge_aware_smoothness: non-positive depth");
    Tensor dn = depth / mean(depth);  // scale-free
    Tensor wx = edge_weight_x(target);
    Tensor wy = edge_weight_y(target);
    return mean((abs(gradient_x(dn)) * wx + abs(gradient_y(dn)) * wy) * 0.5);
}

Tensor depth_consistency(const Tensor& d_sfm, const Tensor& d_c) {
    check_same_shape(d_sfm, d_c, "depth_consistency");
    for (double d : d_sfm.data())
        if (!(d > 0.0)) throw std::domain_error("depth_consistency: non-positive depth");
    for (double d : d_c.data())
        if (!(d > 0.0)) throw std::domain_error("depth_consistency: non-positive depth");
    return mean(abs(log(d_sfm) - log(d_c)));
}

LossBreakdown total_loss(const SupervisionInputs& inp, const Tensor& depth, const Tensor* d_c,
                         const LossWeights& w) {
    w.validate();
    LossBreakdown out;
    out.data = data_fidelity(inp, w);
    out.residual_smooth = inp.calibration.empty()
                              ? Tensor::scalar(0.0)
                              : residual_smoothness(inp.calibration, inp.target, inp.views.at(0).image);
    out.auxiliary = inp.flow_view.has_value() ? auxiliary_loss(inp, w) : Tensor::scalar(0.0);
    out.edge_smooth = edge_aware_smoothness(depth, inp.target);
    out.consistency = d_c ? depth_consistency(depth, *d_c) : Tensor::scalar(0.0);
    out.total = out.data +
                w.kappa * (w.lambda1 * out.residual_smooth + w.lambda2 * out.auxiliary +
                           w.lambda3 * out.edge_smooth) +
                w.mu * out.consistency;
    return out;
}

}  // namespace dsfm
