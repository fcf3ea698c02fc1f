#include <doctest.h>

#include <cmath>
#include <random>

#include "diffsfm/sampling.hpp"
#include "diffsfm/scenes.hpp"
#include "test_util.hpp"

using namespace dsfm;

namespace {

const Intrinsics kIntr{0.82, 1.02, 0.5, 0.5};
const PixelGrid kGrid{48, 40};

double mean_abs_on_mask(const Tensor& a, const Tensor& b, const Tensor& mask) {
    double s = 0.0;
    int n = 0;
    for (int i = 0; i < a.shape()[0]; ++i)
        for (int j = 0; j < a.shape()[1]; ++j)
            if (mask.at(i, j) > 0) {
                s += std::fabs(a.at(i, j, 0) - b.at(i, j, 0));
                ++n;
            }
    return n ? s / n : 0.0;
}

}  // namespace

TEST_CASE("fronto plane renders constant depth") {
    SceneSpec spec;
    spec.seed = 2;
    spec.depth = 5.0;
    const Scene scene = make_scene(spec, kIntr, kGrid);
    const RenderedImage im = render(scene, PoseSE3::identity(), kIntr, kGrid);
    for (std::size_t i = 0; i < im.depth.size(); ++i) CHECK(im.depth[i] == doctest::Approx(5.0).epsilon(1e-12));
    for (std::size_t i = 0; i < im.image.size(); ++i) {
        CHECK(im.image[i] >= 0.0);
        CHECK(im.image[i] <= 1.0);
    }
}

TEST_CASE("slanted plane depth matches the closed-form ray intersection") {
    SceneSpec spec;
    spec.kind = SceneKind::slanted_plane;
    spec.seed = 3;
    spec.depth = 4.0;
    spec.slant = 0.4;
    const Scene scene = make_scene(spec, kIntr, kGrid);
    const RenderedImage im = render(scene, PoseSE3::identity(), kIntr, kGrid);
    const PlanePatch& p = scene.planes[0];
    // hand-picked pixels: depth = offset / <n, dir> for ray dir = K^-1 (u,v,1)
    for (auto [u, v] : {std::pair{0, 0}, {47, 0}, {24, 20}, {3, 39}, {47, 39}}) {
        const Vec3 dir = unproject({static_cast<double>(u), static_cast<double>(v)}, 1.0, kIntr, kGrid);
        const double denom = p.normal[0] * dir[0] + p.normal[1] * dir[1] + p.normal[2] * dir[2];
        const double expected = p.offset / denom;
        CHECK(im.depth.at(v, u) == doctest::Approx(expected).epsilon(1e-12));
    }
    // depth varies across the image for a slanted plane
    CHECK(std::fabs(im.depth.at(0, 0) - im.depth.at(39, 47)) > 1e-3);
}

TEST_CASE("identity pose pair: target equals source, full visibility") {
    SceneSpec spec;
    spec.seed = 5;
    const Scene scene = make_scene(spec, kIntr, kGrid);
    const RenderedPair pair = make_pair(scene, PoseSE3::identity(), kIntr, kGrid);
    CHECK(testutil::max_abs_diff(pair.target, pair.source) == 0.0);
    CHECK(mean(pair.gt_visibility).value() == 1.0);
}

TEST_CASE("pure x translation leaves an invisible band of the closed-form disparity width") {
    SceneSpec spec;
    spec.seed = 6;
    spec.depth = 5.0;
    const Scene scene = make_scene(spec, kIntr, kGrid);
    const double tx = 0.5;
    const RenderedPair pair = make_pair(scene, PoseSE3{{0, 0, 0}, {tx, 0, 0}}, kIntr, kGrid);
    // source pixel u' = u + fx*W*tx/d; pixels with u' > W-1 are invisible
    const double disparity = kIntr.fx * kGrid.width * tx / spec.depth;
    for (int i = 0; i < kGrid.height; ++i)
        for (int j = 0; j < kGrid.width; ++j) {
            const bool expect_visible = j + disparity <= kGrid.width - 1 + 1e-9;
            CHECK(pair.gt_visibility.at(i, j) == (expect_visible ? 1.0 : 0.0));
        }
}

TEST_CASE("two-plane occlusion: hidden pixels are flagged invisible") {
    SceneSpec spec;
    spec.kind = SceneKind::two_planes;
    spec.seed = 7;
    spec.depth = 6.0;
    spec.fg_depth = 3.0;
    const Scene scene = make_scene(spec, kIntr, kGrid);
    const PoseSE3 pose{{0, 0, 0}, {0.45, 0, 0}};
    const RenderedPair pair = make_pair(scene, pose, kIntr, kGrid);

    // brute force: background pixels whose reprojection hits the moved
    // foreground patch must be invisible
    const RenderedImage src = render(scene, pose, kIntr, kGrid);
    int occluded = 0, checked = 0;
    for (int i = 0; i < kGrid.height; ++i)
        for (int j = 0; j < kGrid.width; ++j) {
            if (pair.gt_depth.at(i, j) < 5.0) continue;  // background only
            const Vec3 x = unproject({static_cast<double>(j), static_cast<double>(i)}, pair.gt_depth.at(i, j),
                                     kIntr, kGrid);
            const Vec3 xs = transform(x, pose);
            const auto q = project(xs, kIntr, kGrid);
            if (!q) continue;
            const int qu = static_cast<int>(std::lround((*q)[0]));
            const int qv = static_cast<int>(std::lround((*q)[1]));
            if (qu < 1 || qu >= kGrid.width - 1 || qv < 1 || qv >= kGrid.height - 1) continue;
            ++checked;
            const bool source_sees_fg = src.depth.at(qv, qu) < xs[2] - 1e-3;
            if (source_sees_fg) {
                ++occluded;
                CHECK(pair.gt_visibility.at(i, j) == 0.0);
            }
        }
    CHECK(checked > 100);
    CHECK(occluded > 10);  // the configuration genuinely occludes something
}

TEST_CASE("keystone: warping the source by ground truth reproduces the target") {
    std::mt19937_64 rng(321);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    int tested = 0;
    for (int trial = 0; trial < 20; ++trial) {
        SceneSpec spec;
        spec.kind = static_cast<SceneKind>(trial % 3);
        spec.seed = 1000 + trial;
        spec.depth = 4.0 + 2.0 * u(rng);
        spec.slant = 0.3 * u(rng);
        spec.fg_depth = spec.depth * (0.45 + 0.1 * u(rng));
        const Scene scene = make_scene(spec, kIntr, kGrid);
        const PoseSE3 pose{{0.01 * u(rng), 0.02 * u(rng), 0.01 * u(rng)},
                           {0.2 * u(rng), 0.1 * u(rng), 0.1 * u(rng)}};
        const RenderedPair pair = make_pair(scene, pose, kIntr, kGrid);
        SynthesizedView v = synthesize_target(pair.source, pair.gt_depth, pose, kIntr, kGrid);
        const double err = mean_abs_on_mask(v.image, pair.target, pair.gt_visibility);
        CAPTURE(trial);
        CHECK(err < 1e-3);
        ++tested;
    }
    CHECK(tested == 20);
}

TEST_CASE("texture band limit stays under a quarter cycle per pixel") {
    for (std::uint64_t seed = 1; seed <= 6; ++seed) {
        SceneSpec spec;
        spec.kind = static_cast<SceneKind>(seed % 3);
        spec.seed = seed;
        spec.texture = seed % 2 ? TexturePreset::precise : TexturePreset::contrast;
        const Scene scene = make_scene(spec, kIntr, kGrid);
        CHECK(texture_max_cycles_per_pixel(scene, kIntr, kGrid) <= 0.25);
    }
}

TEST_CASE("same seed renders bit-identical images") {
    SceneSpec spec;
    spec.kind = SceneKind::slanted_plane;
    spec.seed = 77;
    const Scene s1 = make_scene(spec, kIntr, kGrid);
    const Scene s2 = make_scene(spec, kIntr, kGrid);
    const RenderedImage a = render(s1, PoseSE3::identity(), kIntr, kGrid);
    const RenderedImage b = render(s2, PoseSE3::identity(), kIntr, kGrid);
    CHECK(testutil::max_abs_diff(a.image, b.image) == 0.0);
    const Scene s3 = make_scene([&] { SceneSpec sp = spec; sp.seed = 78; return sp; }(), kIntr, kGrid);
    const RenderedImage c = render(s3, PoseSE3::identity(), kIntr, kGrid);
    CHECK(testutil::max_abs_diff(a.image, c.image) > 0.0);
}

TEST_CASE("sequences: identity trajectory repeats frames, dolly approaches") {
    SceneSpec spec;
    spec.seed = 8;
    spec.depth = 5.0;
    const Scene scene = make_scene(spec, kIntr, kGrid);

    const std::vector<PoseSE3> still(3, PoseSE3::identity());
    const auto frames = make_sequence(scene, still, kIntr, kGrid);
    CHECK(frames.size() == 3);
    CHECK(testutil::max_abs_diff(frames[0].image, frames[2].image) == 0.0);

    // dolly forward: depth decreases frame over frame
    std::vector<PoseSE3> dolly;
    for (int k = 0; k < 4; ++k) dolly.push_back(PoseSE3{{0, 0, 0}, {0, 0, -0.5 * k}});
    const auto moving = make_sequence(scene, dolly, kIntr, kGrid);
    for (int k = 1; k < 4; ++k)
        CHECK(moving[k].depth.at(20, 24) < moving[k - 1].depth.at(20, 24));

    const auto rel = relative_steps(dolly);
    CHECK(rel.size() == 3);
    CHECK(rel[1].translation[2] == doctest::Approx(-0.5).epsilon(1e-12));
}

TEST_CASE("scene not fully visible raises") {
    SceneSpec spec;
    spec.seed = 9;
    spec.depth = 2.0;
    const Scene scene = make_scene(spec, kIntr, kGrid);
    // walk through the plane: rays hit behind the camera
    CHECK_THROWS_WITH_AS(render(scene, PoseSE3{{0, 0, 0}, {0, 0, -3.0}}, kIntr, kGrid),
                         doctest::Contains("not fully visible"), std::runtime_error);
}

TEST_CASE("brightness field shows up in the source and its ground-truth calibration") {
    SceneSpec spec;
    spec.seed = 10;
    spec.brightness = 0.15;
    const Scene scene = make_scene(spec, kIntr, kGrid);
    const PoseSE3 pose{{0, 0, 0}, {0.1, 0, 0}};
    const RenderedPair pair = make_pair(scene, pose, kIntr, kGrid);
    double cmax = 0.0;
    for (std::size_t i = 0; i < pair.gt_calibration.size(); ++i)
        cmax = std::max(cmax, std::fabs(pair.gt_calibration[i]));
    CHECK(cmax > 0.05);

    // warping the brightened source matches target + C on visible pixels
    SynthesizedView v = synthesize_target(pair.source, pair.gt_depth, pose, kIntr, kGrid);
    Tensor corrected = pair.target + reshape(pair.gt_calibration, {kGrid.height, kGrid.width, 1});
    CHECK(mean_abs_on_mask(v.image, corrected, pair.gt_visibility) < 2e-3);
}
