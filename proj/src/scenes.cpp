#include "diffsfm/scenes.hpp"

#include <cmath>
#include <optional>
#include <random>

namespace dsfm {

namespace {

constexpr double kTwoPi = 6.283185307179586476925286766559;

double dot3(const Vec3& a, const Vec3& b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; }

Vec3 sub3(const Vec3& a, const Vec3& b) { return {a[0] - b[0], a[1] - b[1], a[2] - b[2]}; }

Vec3 scale3(const Vec3& a, double k) { return {a[0] * k, a[1] * k, a[2] * k}; }

Vec3 add3(const Vec3& a, const Vec3& b) { return {a[0] + b[0], a[1] + b[1], a[2] + b[2]}; }

Vec3 cross3(const Vec3& a, const Vec3& b) {
    return {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]};
}

Vec3 normalize3(const Vec3& a) {
    const double n = std::sqrt(dot3(a, a));
    return {a[0] / n, a[1] / n, a[2] / n};
}

struct Camera {
    Vec3 center;   // in world
    Mat3 rot_t;    // R^T: camera dirs -> world dirs
    double fxp, fyp, cxp, cyp;
};

Camera make_camera(const PoseSE3& pose, const Intrinsics& intr, const PixelGrid& grid) {
    const Mat3 r = rodrigues(pose.rotation);
    Mat3 rt;
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) rt[i * 3 + j] = r[j * 3 + i];
    const Vec3 c = mat_apply(rt, pose.translation);
    return {{-c[0], -c[1], -c[2]},
            rt,
            intr.fx * grid.width,
            intr.fy * grid.height,
            intr.cx * grid.width,
            intr.cy * grid.height};
}

Vec3 pixel_ray_world(const Camera& cam, double u, double v) {
    const Vec3 dir_c = {(u - cam.cxp) / cam.fxp, (v - cam.cyp) / cam.fyp, 1.0};
    return mat_apply(cam.rot_t, dir_c);
}

struct Hit {
    double t = 0.0;  // camera depth (ray direction has unit camera z)
    int plane = -1;
    Vec3 point{0, 0, 0};
};

bool patch_contains(const PlanePatch& p, const Vec3& x) {
    if (p.extent_u <= 0.0 && p.extent_v <= 0.0) return true;
    const Vec3 d = sub3(x, p.origin);
    if (p.extent_u > 0.0 && std::fabs(dot3(d, p.u_axis)) > p.extent_u) return false;
    if (p.extent_v > 0.0 && std::fabs(dot3(d, p.v_axis)) > p.extent_v) return false;
    return true;
}

std::optional<Hit> nearest_hit(const Scene& scene, const Vec3& origin, const Vec3& dir) {
    std::optional<Hit> best;
    for (std::size_t k = 0; k < scene.planes.size(); ++k) {
        const PlanePatch& p = scene.planes[k];
        const double denom = dot3(p.normal, dir);
        if (std::fabs(denom) < 1e-12) continue;
        const double t = (p.offset - dot3(p.normal, origin)) / denom;
        if (t <= 1e-9) continue;
        const Vec3 x = add3(origin, scale3(dir, t));
        if (!patch_contains(p, x)) continue;
        if (!best || t < best->t) best = Hit{t, static_cast<int>(k), x};
    }
    return best;
}

double eval_waves(const std::vector<Sinusoid>& waves, const PlanePatch& p, const Vec3& x) {
    const Vec3 d = sub3(x, p.origin);
    const double a = dot3(d, p.u_axis);
    const double b = dot3(d, p.v_axis);
    double s = 0.0;
    for (const Sinusoid& w : waves) s += w.amplitude * std::sin(kTwoPi * (w.fu * a + w.fv * b) + w.phase);
    return s;
}

// Worst-case plane-coordinate step per pixel for the identity camera,
// sampled on a coarse pixel lattice (extent ignored: the unbounded plane).
double plane_footprint_max(const PlanePatch& p, const Intrinsics& intr, const PixelGrid& grid) {
    const Camera cam = make_camera(PoseSE3::identity(), intr, grid);
    auto plane_coords = [&](double u, double v) -> std::optional<Vec2> {
        const Vec3 dir = pixel_ray_world(cam, u, v);
        const double denom = dot3(p.normal, dir);
        if (std::fabs(denom) < 1e-12) return std::nullopt;
        const double t = (p.offset - dot3(p.normal, cam.center)) / denom;
        if (t <= 0.0) return std::nullopt;
        const Vec3 x = add3(cam.center, scale3(dir, t));
        const Vec3 d = sub3(x, p.origin);
        return Vec2{dot3(d, p.u_axis), dot3(d, p.v_axis)};
    };
    double worst = 0.0;
    const int n = 8;
    for (int i = 0; i <= n; ++i)
        for (int j = 0; j <= n; ++j) {
            const double u = j * (grid.width - 1) / static_cast<double>(n);
            const double v = i * (grid.height - 1) / static_cast<double>(n);
            const auto c0 = plane_coords(u, v);
            const auto cu = plane_coords(u + 1.0, v);
            const auto cv = plane_coords(u, v + 1.0);
            if (!c0 || !cu || !cv) continue;
            const double du = std::hypot((*cu)[0] - (*c0)[0], (*cu)[1] - (*c0)[1]);
            const double dv = std::hypot((*cv)[0] - (*c0)[0], (*cv)[1] - (*c0)[1]);
            worst = std::max({worst, du, dv});
        }
    if (worst <= 0.0) throw std::runtime_error("scene not fully visible");
    return worst;
}

struct TextureBudget {
    int waves = 8;
    double max_cycles_per_pixel = 0.04;
    double amplitude = 0.30;
};

TextureBudget preset_budget(TexturePreset preset) {
    if (preset == TexturePreset::precise) return {8, 0.04, 0.30};
    return {8, 0.10, 0.40};
}

// Sources see the plane from elsewhere; leave headroom for their larger
// footprints.
constexpr double kFootprintMargin = 1.6;

std::vector<Sinusoid> make_waves(std::mt19937_64& rng, const TextureBudget& budget, double footprint) {
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const double f_max = budget.max_cycles_per_pixel / (footprint * kFootprintMargin);
    std::vector<Sinusoid> waves(budget.waves);
    std::vector<double> weight(budget.waves);
    double weight_sum = 0.0;
    for (int i = 0; i < budget.waves; ++i) {
        const double f = f_max * (0.2 + 0.8 * unit(rng));
        const double psi = kTwoPi * unit(rng);
        waves[i].fu = f * std::cos(psi);
        waves[i].fv = f * std::sin(psi);
        waves[i].phase = kTwoPi * unit(rng);
        weight[i] = 1.0 / (1.0 + (f / (0.3 * f_max)) * (f / (0.3 * f_max)));
        weight_sum += weight[i];
    }
    for (int i = 0; i < budget.waves; ++i) waves[i].amplitude = budget.amplitude * weight[i] / weight_sum;
    return waves;
}

std::vector<Sinusoid> make_brightness(std::mt19937_64& rng, double amplitude, double footprint) {
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const double f = 0.015 / (footprint * kFootprintMargin);
    const double psi = kTwoPi * unit(rng);
    Sinusoid w;
    w.fu = f * std::cos(psi);
    w.fv = f * std::sin(psi);
    w.phase = kTwoPi * unit(rng);
    w.amplitude = amplitude;
    return {w};
}

PlanePatch base_patch(const Vec3& normal, double depth_on_axis) {
    PlanePatch p;
    p.normal = normalize3(normal);
    p.origin = {0, 0, depth_on_axis};
    p.offset = dot3(p.normal, p.origin);
    // in-plane frame by Gram-Schmidt against x (or y when degenerate)
    Vec3 seed = std::fabs(p.normal[0]) < 0.9 ? Vec3{1, 0, 0} : Vec3{0, 1, 0};
    Vec3 u = sub3(seed, scale3(p.normal, dot3(seed, p.normal)));
    p.u_axis = normalize3(u);
    p.v_axis = cross3(p.normal, p.u_axis);
    return p;
}

}  // namespace

Scene make_scene(const SceneSpec& spec, const Intrinsics& intr, const PixelGrid& grid) {
    intr.validate();
    grid.validate();
    if (!(spec.depth > 0.0)) throw std::invalid_argument("scene: depth must be positive");
    std::mt19937_64 rng(spec.seed * 0x2545f4914f6cdd1dull + 0x9e3779b97f4a7c15ull);
    std::uniform_real_distribution<double> unit(0.0, 1.0);

    Scene scene;
    scene.kind = spec.kind;
    scene.seed = spec.seed;
    const TextureBudget budget = preset_budget(spec.texture);

    switch (spec.kind) {
        case SceneKind::fronto_plane: {
            scene.planes.push_back(base_patch({0, 0, 1}, spec.depth));
            break;
        }
        case SceneKind::slanted_plane: {
            if (!(std::fabs(spec.slant) < 1.2))
                throw std::invalid_argument("scene: slant too steep");
            const double phi = kTwoPi * unit(rng);
            const double st = std::sin(spec.slant), ct = std::cos(spec.slant);
            scene.planes.push_back(base_patch({st * std::cos(phi), st * std::sin(phi), ct}, spec.depth));
            break;
        }
        case SceneKind::two_planes: {
            if (!(spec.fg_depth > 0.0 && spec.fg_depth < spec.depth))
                throw std::invalid_argument("scene: need 0 < fg_depth < depth");
            scene.planes.push_back(base_patch({0, 0, 1}, spec.depth));  // background first
            PlanePatch fg = base_patch({0, 0, 1}, spec.fg_depth);
            const double half_w = spec.fg_depth / (2.0 * intr.fx);
            const double half_h = spec.fg_depth / (2.0 * intr.fy);
            fg.extent_u = 0.45 * half_w;
            fg.extent_v = 0.45 * half_h;
            fg.origin = add3(fg.origin, add3(scale3(fg.u_axis, (unit(rng) - 0.5) * 0.5 * half_w),
                                             scale3(fg.v_axis, (unit(rng) - 0.5) * 0.5 * half_h)));
            scene.planes.push_back(fg);
            break;
        }
    }

    for (PlanePatch& p : scene.planes) {
        const double footprint = plane_footprint_max(p, intr, grid);
        p.texture = make_waves(rng, budget, footprint);
        if (spec.brightness > 0.0) p.brightness = make_brightness(rng, spec.brightness, footprint);
    }
    return scene;
}

RenderedImage render(const Scene& scene, const PoseSE3& cam_pose, const Intrinsics& intr, const PixelGrid& grid,
                     const RenderOptions& opts) {
    intr.validate();
    grid.validate();
    if (scene.planes.empty()) throw std::invalid_argument("render: scene has no surfaces");
    const Camera cam = make_camera(cam_pose, intr, grid);
    const int H = grid.height, W = grid.width;
    std::vector<double> img(static_cast<std::size_t>(H) * W);
    std::vector<double> dep(img.size());
    std::vector<double> pid(img.size());
    for (int i = 0; i < H; ++i)
        for (int j = 0; j < W; ++j) {
            const Vec3 dir = pixel_ray_world(cam, j, i);
            const auto hit = nearest_hit(scene, cam.center, dir);
            if (!hit) throw std::runtime_error("scene not fully visible");
            const PlanePatch& p = scene.planes[hit->plane];
            double v = scene.base + eval_waves(p.texture, p, hit->point);
            if (opts.add_brightness) v += eval_waves(p.brightness, p, hit->point);
            const std::size_t idx = static_cast<std::size_t>(i) * W + j;
            img[idx] = v;
            dep[idx] = hit->t;
            pid[idx] = hit->plane;
        }
    return {Tensor::of({H, W, 1}, std::move(img)), Tensor::of({H, W}, std::move(dep)),
            Tensor::of({H, W}, std::move(pid))};
}

RenderedPair make_pair(const Scene& scene, const PoseSE3& pose, const Intrinsics& intr, const PixelGrid& grid) {
    const RenderedImage target = render(scene, PoseSE3::identity(), intr, grid);
    RenderOptions src_opts;
    src_opts.add_brightness = true;  // no-op when the scene has no brightness field
    const RenderedImage source = render(scene, pose, intr, grid, src_opts);

    const int H = grid.height, W = grid.width;
    const Camera src_cam = make_camera(pose, intr, grid);
    std::vector<double> vis(static_cast<std::size_t>(H) * W, 0.0);
    std::vector<double> calib(vis.size(), 0.0);
    const bool has_brightness = !scene.planes.front().brightness.empty();

    for (int i = 0; i < H; ++i)
        for (int j = 0; j < W; ++j) {
            const std::size_t idx = static_cast<std::size_t>(i) * W + j;
            const double d = target.depth[idx];
            const Vec3 x_w = unproject({static_cast<double>(j), static_cast<double>(i)}, d, intr, grid);
            const int k = static_cast<int>(target.plane_id[idx]);
            if (has_brightness) calib[idx] = eval_waves(scene.planes[k].brightness, scene.planes[k], x_w);

            const Vec3 x_s = transform(x_w, pose);
            if (!(x_s[2] > 0.0)) continue;
            const auto q = project(x_s, intr, grid);
            if (!q || !((*q)[0] >= 0.0 && (*q)[0] <= W - 1 && (*q)[1] >= 0.0 && (*q)[1] <= H - 1)) continue;

            // occlusion: the nearest surface along the source ray must be
            // this very point
            const Vec3 dir_w = pixel_ray_world(src_cam, (*q)[0], (*q)[1]);
            const auto front = nearest_hit(scene, src_cam.center, dir_w);
            if (!front || front->t < x_s[2] - 1e-6 * x_s[2] - 1e-9) continue;

            // the bilinear footprint must sample the same surface
            const int x0 = std::min(static_cast<int>(std::floor((*q)[0])), W - 2);
            const int y0 = std::min(static_cast<int>(std::floor((*q)[1])), H - 2);
            const double dx = (*q)[0] - x0, dy = (*q)[1] - y0;
            const double wts[4] = {(1 - dx) * (1 - dy), dx * (1 - dy), (1 - dx) * dy, dx * dy};
            const int cxs[4] = {x0, x0 + 1, x0, x0 + 1};
            const int cys[4] = {y0, y0, y0 + 1, y0 + 1};
            bool same_surface = true;
            for (int c = 0; c < 4; ++c) {
                if (wts[c] <= 1e-12) continue;
                if (static_cast<int>(source.plane_id.at(cys[c], cxs[c])) != k) {
                    same_surface = false;
                    break;
                }
            }
            if (!same_surface) continue;
            vis[idx] = 1.0;
        }

    RenderedPair pair;
    pair.target = target.image;
    pair.source = source.image;
    pair.gt_depth = target.depth;
    pair.gt_pose = pose;
    pair.gt_intrinsics = intr;
    pair.gt_visibility = Tensor::of({H, W}, std::move(vis));
    pair.gt_calibration = Tensor::of({H, W}, std::move(calib));
    return pair;
}

std::vector<SequenceFrame> make_sequence(const Scene& scene, std::span<const PoseSE3> trajectory,
                                         const Intrinsics& intr, const PixelGrid& grid) {
    if (trajectory.empty()) throw std::invalid_argument("make_sequence: empty trajectory");
    std::vector<SequenceFrame> frames;
    frames.reserve(trajectory.size());
    for (const PoseSE3& pose : trajectory) {
        RenderedImage im = render(scene, pose, intr, grid);
        frames.push_back({std::move(im.image), std::move(im.depth), pose});
    }
    return frames;
}

std::vector<PoseSE3> relative_steps(std::span<const PoseSE3> absolute) {
    std::vector<PoseSE3> rel;
    for (std::size_t k = 0; k + 1 < absolute.size(); ++k)
        rel.push_back(pose_compose(absolute[k + 1], pose_inverse(absolute[k])));
    return rel;
}

double texture_max_cycles_per_pixel(const Scene& scene, const Intrinsics& intr, const PixelGrid& grid) {
    double worst = 0.0;
    for (const PlanePatch& p : scene.planes) {
        const double footprint = plane_footprint_max(p, intr, grid);
        for (const Sinusoid& w : p.texture)
            worst = std::max(worst, std::hypot(w.fu, w.fv) * footprint);
    }
    return worst;
}

}  // namespace dsfm
