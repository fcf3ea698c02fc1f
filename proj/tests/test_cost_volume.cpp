#include <doctest.h>

#include <cmath>

#include "diffsfm/cost_volume.hpp"
#include "diffsfm/scenes.hpp"
#include "test_util.hpp"

using namespace dsfm;

namespace {

const Intrinsics kIntr{0.82, 1.02, 0.5, 0.5};
const PixelGrid kGrid{40, 32};

struct PlaneSetup {
    Scene scene;
    RenderedPair pair;
    Tensor f_t;
    std::vector<SourceView> sources;
};

PlaneSetup fronto_setup(double depth, std::uint64_t seed, FeatureMode mode = FeatureMode::identity,
                        TexturePreset preset = TexturePreset::precise, double tx = 0.35) {
    SceneSpec spec;
    spec.kind = SceneKind::fronto_plane;
    spec.seed = seed;
    spec.depth = depth;
    spec.texture = preset;
    PlaneSetup s{make_scene(spec, kIntr, kGrid), {}, {}, {}};
    s.pair = make_pair(s.scene, PoseSE3{{0, 0, 0}, {tx, 0.0, 0.0}}, kIntr, kGrid);
    s.f_t = extract_features(s.pair.target, mode);
    s.sources.push_back({extract_features(s.pair.source, mode), pose_tensor(s.pair.gt_pose)});
    return s;
}

double mean_abs_gx(const Tensor& image) {
    Tensor g = gradient_x(image);
    double s = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) s += std::fabs(g[i]);
    return s / g.size();
}

}  // namespace

TEST_CASE("make_planes") {
    DepthPlanes p = make_planes(0.1, 10.0, 2);
    CHECK(p.values == std::vector<double>{0.1, 10.0});
    DepthPlanes q = make_planes(1.0, 3.0, 3);
    CHECK(q.values == std::vector<double>{1.0, 2.0, 3.0});

    DepthPlanes r = make_planes(0.1, 10.0, 64);
    CHECK(r.values.front() == 0.1);
    CHECK(r.values.back() == 10.0);
    const double step = r.values[1] - r.values[0];
    for (std::size_t i = 0; i + 1 < r.values.size(); ++i)
        CHECK(r.values[i + 1] - r.values[i] == doctest::Approx(step).epsilon(1e-12));

    CHECK_THROWS_AS(make_planes(0.0, 10, 4), std::invalid_argument);
    CHECK_THROWS_AS(make_planes(5, 2, 4), std::invalid_argument);
    CHECK_THROWS_AS(make_planes(1, 2, 1), std::invalid_argument);
}

TEST_CASE("extract_features") {
    Tensor image = testutil::random_tensor({6, 8, 1}, 3);
    Tensor id = extract_features(image, FeatureMode::identity);
    CHECK(testutil::max_abs_diff(id, image) == 0.0);

    Tensor flat = extract_features(Tensor::full({6, 8, 1}, 0.5), FeatureMode::gradient3);
    CHECK(flat.shape() == Shape{6, 8, 3});
    for (int i = 0; i < 6; ++i)
        for (int j = 0; j < 8; ++j) {
            CHECK(flat.at(i, j, 1) == 0.0);
            CHECK(flat.at(i, j, 2) == 0.0);
        }

    // vertical stripes: |grad x| fires, |grad y| stays silent
    std::vector<double> stripes(48);
    for (int i = 0; i < 6; ++i)
        for (int j = 0; j < 8; ++j) stripes[static_cast<std::size_t>(i) * 8 + j] = j % 2 ? 0.9 : 0.1;
    Tensor sf = extract_features(Tensor::of({6, 8, 1}, stripes), FeatureMode::gradient3);
    double gx = 0, gy = 0;
    for (int i = 0; i < 6; ++i)
        for (int j = 0; j < 8; ++j) {
            gx += sf.at(i, j, 1);
            gy += sf.at(i, j, 2);
        }
    CHECK(gx > 1.0);
    CHECK(gy == 0.0);
}

TEST_CASE("identity-pose source yields zero cost at every plane") {
    // degenerate case: with no baseline the warp is depth-independent
    SceneSpec spec;
    spec.seed = 4;
    const Scene scene = make_scene(spec, kIntr, kGrid);
    const RenderedImage im = render(scene, PoseSE3::identity(), kIntr, kGrid);
    Tensor f_t = extract_features(im.image, FeatureMode::identity);
    std::vector<SourceView> sources{{f_t, pose_tensor(PoseSE3::identity())}};
    CostVolume vol = build_cost_volume(f_t, sources, intrinsics_tensor(kIntr), make_planes(1, 8, 5), kGrid);
    for (std::size_t i = 0; i < vol.costs.size(); ++i)
        if (vol.coverage[i] > 0) CHECK(vol.costs[i] < 1e-11);
}

TEST_CASE("hard argmin recovers the true plane depth on interior textured pixels") {
    const double d_true = 4.0;
    // d_true sits exactly on the 13-plane grid over [1, 7]
    DepthPlanes planes = make_planes(1.0, 7.0, 13);
    // precise texture keeps the true-plane cost floor low; the wide
    // baseline separates the neighboring hypotheses
    PlaneSetup s = fronto_setup(d_true, 5, FeatureMode::identity, TexturePreset::precise, 0.6);
    CostVolume vol = build_cost_volume(s.f_t, s.sources, intrinsics_tensor(kIntr), planes, kGrid);
    Tensor depth = argmin_depth_hard(vol, planes);

    Tensor gx = gradient_x(s.pair.target);
    const double textured = mean_abs_gx(s.pair.target);  // needs texture along the baseline
    int checked = 0;
    const int P = static_cast<int>(planes.values.size());
    const std::size_t n = static_cast<std::size_t>(kGrid.height) * kGrid.width;
    for (int i = 2; i < kGrid.height - 2; ++i)
        for (int j = 2; j < kGrid.width - 2; ++j) {
            if (s.pair.gt_visibility.at(i, j) == 0.0) continue;
            if (std::fabs(gx.at(i, j, 0)) < textured) continue;
            bool full_cov = true;
            for (int p = 0; p < P; ++p)
                full_cov = full_cov && vol.coverage[static_cast<std::size_t>(p) * n +
                                                    static_cast<std::size_t>(i) * kGrid.width + j] > 0;
            if (!full_cov) continue;
            CHECK(depth.at(i, j) == d_true);
            ++checked;
        }
    CHECK(checked > 100);

    // zero cost at the true plane (resampling floor)
    const int true_idx = 6;
    Tensor slice = slice_first(vol.costs, true_idx);
    for (int i = 2; i < kGrid.height - 2; ++i)
        for (int j = 2; j < kGrid.width - 2; ++j)
            if (s.pair.gt_visibility.at(i, j) > 0) CHECK(slice.at(i, j) < 1e-3);
}

TEST_CASE("cost rises moving away from the true plane near it") {
    const double d_true = 4.0;
    DepthPlanes planes = make_planes(3.0, 5.0, 9);  // plane 4 is the truth, spacing 0.25
    PlaneSetup s = fronto_setup(d_true, 6, FeatureMode::identity, TexturePreset::contrast);
    CostVolume vol = build_cost_volume(s.f_t, s.sources, intrinsics_tensor(kIntr), planes, kGrid);
    Tensor gx = gradient_x(s.pair.target);
    const double textured = 1.5 * mean_abs_gx(s.pair.target);
    const std::size_t n = static_cast<std::size_t>(kGrid.height) * kGrid.width;
    int checked = 0;
    for (int i = 2; i < kGrid.height - 2; ++i)
        for (int j = 2; j < kGrid.width - 2; ++j) {
            if (s.pair.gt_visibility.at(i, j) == 0.0) continue;
            if (std::fabs(gx.at(i, j, 0)) < textured) continue;
            const std::size_t px = static_cast<std::size_t>(i) * kGrid.width + j;
            bool cov = true;
            for (int p = 2; p <= 6; ++p) cov = cov && vol.coverage[static_cast<std::size_t>(p) * n + px] > 0;
            if (!cov) continue;
            auto cost = [&](int p) { return vol.costs[static_cast<std::size_t>(p) * n + px]; };
            // within +-2 planes of the truth (index 4) the cost is monotone
            CHECK(cost(3) >= cost(4) - 1e-9);
            CHECK(cost(2) >= cost(3) - 1e-9);
            CHECK(cost(5) >= cost(4) - 1e-9);
            CHECK(cost(6) >= cost(5) - 1e-9);
            ++checked;
        }
    CHECK(checked > 100);
}

TEST_CASE("source order does not change the volume") {
    PlaneSetup s = fronto_setup(4.0, 7);
    // second source: another view of the same scene
    const RenderedPair pair2 = make_pair(s.scene, PoseSE3{{0, 0.01, 0}, {-0.2, 0.05, 0.1}}, kIntr, kGrid);
    std::vector<SourceView> ab{s.sources[0], {extract_features(pair2.source, FeatureMode::identity), pose_tensor(pair2.gt_pose)}};
    std::vector<SourceView> ba{ab[1], ab[0]};
    DepthPlanes planes = make_planes(2.0, 6.0, 7);
    CostVolume va = build_cost_volume(s.f_t, ab, intrinsics_tensor(kIntr), planes, kGrid);
    CostVolume vb = build_cost_volume(s.f_t, ba, intrinsics_tensor(kIntr), planes, kGrid);
    CHECK(testutil::max_abs_diff(va.costs, vb.costs) < 1e-14);
    CHECK(testutil::max_abs_diff(va.coverage, vb.coverage) == 0.0);
}

TEST_CASE("doubling the plane count never worsens the quantization error") {
    // a slanted plane sweeps true depth continuously across the image, so
    // the mean quantization error tracks spacing/4 rather than the luck of
    // one depth's grid alignment
    SceneSpec spec;
    spec.kind = SceneKind::slanted_plane;
    spec.seed = 8;
    spec.depth = 2.5;
    spec.slant = 0.35;
    spec.texture = TexturePreset::contrast;
    const Scene scene = make_scene(spec, kIntr, kGrid);
    const RenderedPair pair = make_pair(scene, PoseSE3{{0, 0, 0}, {0.3, 0.0, 0.0}}, kIntr, kGrid);
    Tensor f_t = extract_features(pair.target, FeatureMode::identity);
    std::vector<SourceView> sources{{extract_features(pair.source, FeatureMode::identity), pose_tensor(pair.gt_pose)}};
    Tensor gx = gradient_x(pair.target);
    const double textured = mean_abs_gx(pair.target);

    double prev_err = 1e300;
    for (int n_planes : {8, 16, 32}) {
        DepthPlanes planes = make_planes(1.0, 4.5, n_planes);
        CostVolume vol = build_cost_volume(f_t, sources, intrinsics_tensor(kIntr), planes, kGrid);
        Tensor depth = argmin_depth_hard(vol, planes);
        double err = 0.0;
        int n = 0;
        for (int i = 2; i < kGrid.height - 2; ++i)
            for (int j = 2; j < kGrid.width - 2; ++j) {
                if (pair.gt_visibility.at(i, j) == 0.0) continue;
                if (std::fabs(gx.at(i, j, 0)) < textured) continue;
                err += std::fabs(depth.at(i, j) - pair.gt_depth.at(i, j));
                ++n;
            }
        REQUIRE(n > 100);
        err /= n;
        CHECK(err <= prev_err + 1e-12);
        prev_err = err;
    }
}

TEST_CASE("argmin ties and soft-to-hard convergence") {
    // uniform costs: the tie rule picks the nearest (smallest) plane
    DepthPlanes planes = make_planes(1.0, 5.0, 5);
    Tensor flat = Tensor::full({5, 3, 4}, 0.7);
    CostVolume uniform{flat, Tensor::full({5, 3, 4}, 1.0)};
    Tensor hard = argmin_depth_hard(uniform, planes);
    for (std::size_t i = 0; i < hard.size(); ++i) CHECK(hard[i] == 1.0);

    // a single zero-cost plane wins in both modes
    std::vector<double> c(5 * 12, 0.9);
    for (int i = 0; i < 12; ++i) c[2 * 12 + i] = 0.0;
    CostVolume vol{Tensor::of({5, 3, 4}, c), Tensor::full({5, 3, 4}, 1.0)};
    Tensor h = argmin_depth_hard(vol, planes);
    for (std::size_t i = 0; i < h.size(); ++i) CHECK(h[i] == 3.0);
    Tensor soft = argmin_depth_soft(vol, planes, 0.05);
    for (std::size_t i = 0; i < soft.size(); ++i) CHECK(soft[i] == doctest::Approx(3.0).epsilon(1e-4));

    // tau -> 0 approaches the hard answer monotonically on a distinct-min volume
    double prev = 1e300;
    for (double tau : {1.0, 0.1, 0.01}) {
        Tensor s = argmin_depth_soft(vol, planes, tau);
        const double dev = std::fabs(s[0] - 3.0);
        CHECK(dev <= prev + 1e-15);
        prev = dev;
    }
}

TEST_CASE("zero-coverage cells take the sentinel and stay out of the soft argmin") {
    DepthPlanes planes = make_planes(1.0, 3.0, 3);
    // plane 0 covered with cost 0.2; planes 1,2 uncovered
    std::vector<double> costs{0.2, 0.2, 0.0, 0.0, 0.0, 0.0};
    (void)costs;
    PlaneSetup s = fronto_setup(4.0, 9);
    // craft directly: 1x2 image
    Tensor c = Tensor::of({3, 1, 2}, {0.2, 0.4, 0.0, 0.0, 0.0, 0.0});
    Tensor cov = Tensor::of({3, 1, 2}, {1, 1, 0, 0, 0, 0});
    // rebuild the public invariant via build_cost_volume is awkward here;
    // check argmin_depth_soft's contract directly instead
    CostVolume vol{c, cov};
    Tensor soft = argmin_depth_soft(vol, planes, 0.1);
    CHECK(soft[0] == doctest::Approx(1.0));  // only covered plane
    CHECK(soft[1] == doctest::Approx(1.0));

    // and the builder's sentinel: far translation leaves border cells uncovered
    PlaneSetup far = fronto_setup(3.0, 10);
    DepthPlanes wide = make_planes(0.4, 8.0, 6);
    CostVolume built = build_cost_volume(far.f_t, far.sources, intrinsics_tensor(kIntr), wide, kGrid);
    double max_cov_cost = 0.0;
    bool any_uncovered = false;
    for (std::size_t i = 0; i < built.costs.size(); ++i)
        if (built.coverage[i] > 0) max_cov_cost = std::max(max_cov_cost, built.costs[i]);
    for (std::size_t i = 0; i < built.costs.size(); ++i)
        if (built.coverage[i] == 0) {
            any_uncovered = true;
            CHECK(built.costs[i] == doctest::Approx(max_cov_cost + 1.0));
        }
    CHECK(any_uncovered);
}

TEST_CASE("soft argmin differentiates through the volume w.r.t. intrinsics") {
    PlaneSetup s = fronto_setup(4.0, 11, FeatureMode::gradient3);
    DepthPlanes planes = make_planes(2.0, 6.0, 9);
    auto loss = [&](const Tensor& intr4) {
        CostVolume vol = build_cost_volume(s.f_t, s.sources, intr4, planes, kGrid);
        return mean(argmin_depth_soft(vol, planes, 0.1));
    };
    for (std::uint64_t seed = 1; seed <= 3; ++seed) {
        FiniteDiffReport rep =
            finite_diff_check(loss, intrinsics_tensor({0.84, 1.0, 0.5, 0.5}), 1e-5, 1e-3, seed, 4);
        CAPTURE(rep.max_rel_error);
        CHECK(rep.pass);
        CHECK(rep.checked > 0);
    }
}

TEST_CASE("build_cost_volume validates inputs") {
    PlaneSetup s = fronto_setup(4.0, 12);
    DepthPlanes planes = make_planes(1, 5, 4);
    CHECK_THROWS_WITH_AS(
        build_cost_volume(s.f_t, std::span<const SourceView>{}, intrinsics_tensor(kIntr), planes, kGrid),
        doctest::Contains("empty source list"), std::invalid_argument);
}
