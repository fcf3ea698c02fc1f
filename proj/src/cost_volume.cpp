#include "diffsfm/cost_volume.hpp"

#include <cmath>

#include "diffsfm/sampling.hpp"

namespace dsfm {

DepthPlanes make_planes(double d_min, double d_max, int n_planes) {
    if (!(d_min > 0.0) || !(d_min < d_max))
        throw std::invalid_argument("make_planes: need 0 < d_min < d_max, got [" + std::to_string(d_min) + ", " +
                                    std::to_string(d_max) + "]");
    if (n_planes < 2) throw std::invalid_argument("make_planes: need at least 2 planes");
    DepthPlanes p;
    p.values.resize(n_planes);
    const double step = (d_max - d_min) / (n_planes - 1);
    for (int i = 0; i < n_planes; ++i) p.values[i] = d_min + step * i;
    p.values.back() = d_max;
    return p;
}

Tensor extract_features(const Tensor& image, FeatureMode mode) {
    if (image.rank() != 2 && image.rank() != 3)
        throw std::invalid_argument("extract_features: want [H,W] or [H,W,C], got " + shape_str(image.shape()));
    const int H = image.shape()[0], W = image.shape()[1];
    if (mode == FeatureMode::identity)
        return image.rank() == 3 ? image : reshape(image, {H, W, 1});

    Tensor intensity = image.rank() == 3 ? mean_last(image) : image;
    Tensor gx = abs(gradient_x(intensity));
    Tensor gy = abs(gradient_y(intensity));
    // scale gradient channels into [0,1]; constant images stay zero
    auto max_of = [](const Tensor& t) {
        double m = 0.0;
        for (double v : t.data()) m = std::max(m, v);
        return m;
    };
    const double mx = max_of(gx), my = max_of(gy);
    if (mx > 0.0) gx = gx / mx;
    if (my > 0.0) gy = gy / my;
    const Tensor parts[3] = {intensity, gx, gy};
    return stack_last(std::span<const Tensor>(parts, 3));
}

CostVolume build_cost_volume(const Tensor& target_features, std::span<const SourceView> sources,
                             const Tensor& intr4, const DepthPlanes& planes, const PixelGrid& grid) {
    if (sources.empty()) throw std::invalid_argument("build_cost_volume: empty source list");
    if (planes.values.size() < 2) throw std::invalid_argument("build_cost_volume: need at least 2 planes");
    Tensor f_t = target_features.rank() == 2
                     ? reshape(target_features, {target_features.shape()[0], target_features.shape()[1], 1})
                     : target_features;
    const int H = grid.height, W = grid.width;
    if (f_t.shape()[0] != H || f_t.shape()[1] != W)
        throw std::invalid_argument("build_cost_volume: target features " + shape_str(f_t.shape()) +
                                    " do not match grid");
    for (const SourceView& s : sources)
        if (s.features.shape() != f_t.shape() && !(s.features.rank() == 2 && f_t.shape()[2] == 1))
            throw std::invalid_argument("build_cost_volume: source features " + shape_str(s.features.shape()) +
                                        " vs target " + shape_str(f_t.shape()));

    const int P = static_cast<int>(planes.values.size());
    const double n_src = static_cast<double>(sources.size());
    std::vector<Tensor> plane_costs, plane_cov;
    plane_costs.reserve(P);
    plane_cov.reserve(P);
    for (int p = 0; p < P; ++p) {
        Tensor hypo = Tensor::full({H, W}, planes.values[p]);
        Tensor num, den;
        bool first = true;
        for (const SourceView& s : sources) {
            Tensor feat = s.features.rank() == 2 ? reshape(s.features, {H, W, 1}) : s.features;
            SynthesizedView v = synthesize_target(feat, hypo, s.pose6, intr4, grid);
            Tensor cost_s = mean_last(abs(v.image - f_t)) * v.oob_mask;
            if (first) {
                num = cost_s;
                den = v.oob_mask.detach();
                first = false;
            } else {
                num = num + cost_s;
                den = den + v.oob_mask;
            }
        }
        plane_costs.push_back(num / maximum(den, Tensor::scalar(1.0)));
        plane_cov.push_back(den * (1.0 / n_src));
    }

    // Sentinel for uncovered cells: keeps them off every argmin without
    // fabricating a gradient path.
    double max_cost = 0.0;
    for (int p = 0; p < P; ++p) {
        const auto& cv = plane_cov[p].data();
        const auto& cc = plane_costs[p].data();
        for (std::size_t i = 0; i < cc.size(); ++i)
            if (cv[i] > 0.0) max_cost = std::max(max_cost, cc[i]);
    }
    const double sentinel = max_cost + 1.0;
    std::vector<Tensor> masked;
    masked.reserve(P);
    for (int p = 0; p < P; ++p) {
        const auto& cv = plane_cov[p].data();
        std::vector<double> m(cv.size());
        for (std::size_t i = 0; i < cv.size(); ++i) m[i] = cv[i] > 0.0 ? 1.0 : 0.0;
        Tensor covered = Tensor::of({H, W}, std::move(m));
        masked.push_back(plane_costs[p] * covered + sentinel * (1.0 - covered));
    }
    return {stack_first(masked), stack_first(plane_cov).detach()};
}

Tensor argmin_depth_hard(const CostVolume& vol, const DepthPlanes& planes) {
    if (vol.costs.rank() != 3) throw std::invalid_argument("argmin_depth: want costs [P,H,W]");
    const int P = vol.costs.shape()[0];
    if (P != static_cast<int>(planes.values.size()))
        throw std::invalid_argument("argmin_depth: plane count mismatch");
    const std::size_t n = static_cast<std::size_t>(vol.costs.shape()[1]) * vol.costs.shape()[2];
    const auto& c = vol.costs.data();
    std::vector<double> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        int best = 0;
        double best_cost = c[i];
        for (int p = 1; p < P; ++p) {
            const double v = c[static_cast<std::size_t>(p) * n + i];
            if (v < best_cost) {  // ties keep the smaller depth
                best_cost = v;
                best = p;
            }
        }
        out[i] = planes.values[best];
    }
    return Tensor::of({vol.costs.shape()[1], vol.costs.shape()[2]}, std::move(out));
}

Tensor argmin_depth_soft(const CostVolume& vol, const DepthPlanes& planes, double tau) {
    if (vol.costs.rank() != 3) throw std::invalid_argument("argmin_depth: want costs [P,H,W]");
    if (!(tau > 0.0)) throw std::invalid_argument("argmin_depth: tau must be positive");
    const int P = vol.costs.shape()[0];
    if (P != static_cast<int>(planes.values.size()))
        throw std::invalid_argument("argmin_depth: plane count mismatch");
    const int H = vol.costs.shape()[1], W = vol.costs.shape()[2];
    const std::size_t n = static_cast<std::size_t>(H) * W;

    // Per-pixel shift by the covered minimum (detached): softmin is
    // shift-invariant, and this pins the largest weight at exp(0).
    const auto& c = vol.costs.data();
    const auto& cov = vol.coverage.data();
    std::vector<double> shift(n, 0.0), covered_any(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        double m = 0.0;
        bool any = false;
        for (int p = 0; p < P; ++p) {
            const std::size_t k = static_cast<std::size_t>(p) * n + i;
            if (cov[k] > 0.0 && (!any || c[k] < m)) {
                m = c[k];
                any = true;
            }
        }
        shift[i] = m;
        covered_any[i] = any ? 1.0 : 0.0;
    }
    Tensor m_t = Tensor::of({H, W}, std::move(shift));
    Tensor any_t = Tensor::of({H, W}, std::move(covered_any));

    Tensor weight_sum, value_sum;
    for (int p = 0; p < P; ++p) {
        std::vector<double> cm(n);
        for (std::size_t i = 0; i < n; ++i) cm[i] = cov[static_cast<std::size_t>(p) * n + i] > 0.0 ? 1.0 : 0.0;
        Tensor covered = Tensor::of({H, W}, std::move(cm));
        Tensor w = exp((m_t - slice_first(vol.costs, p)) * (1.0 / tau)) * covered;
        Tensor wd = w * planes.values[p];
        if (p == 0) {
            weight_sum = w;
            value_sum = wd;
        } else {
            weight_sum = weight_sum + w;
            value_sum = value_sum + wd;
        }
    }
    Tensor soft = value_sum / maximum(weight_sum, Tensor::scalar(1e-12));
    const double mid = 0.5 * (planes.values.front() + planes.values.back());
    return soft * any_t + mid * (1.0 - any_t);
}

}  // namespace dsfm
