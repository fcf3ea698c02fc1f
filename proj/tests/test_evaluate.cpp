#include <doctest.h>

#include <cmath>
#include <random>

#include "diffsfm/evaluate.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace dsfm;

TEST_CASE("median scaling") {
    Tensor gt = testutil::random_tensor({4, 4}, 3, 1.0, 5.0);
    Tensor pred = (gt * 2.0).detach();
    Tensor scaled = median_scale(pred, gt, Tensor{});
    CHECK(testutil::max_abs_diff(scaled, gt) < 1e-12);

    Tensor same = median_scale(gt, gt, Tensor{});
    CHECK(testutil::max_abs_diff(same, gt) == 0.0);

    // hand-computed medians: 2.5 and 5 give factor 2
    Tensor p = Tensor::of({4}, {1, 2, 3, 100});
    Tensor g = Tensor::of({4}, {2, 4, 6, 8});
    Tensor s = median_scale(p, g, Tensor{});
    CHECK(s[0] == doctest::Approx(2.0));
    CHECK(s[1] == doctest::Approx(4.0));
    CHECK(s[2] == doctest::Approx(6.0));
    CHECK(s[3] == doctest::Approx(200.0));

    CHECK_THROWS_WITH_AS(median_scale(p, g, Tensor::zeros({4})), doctest::Contains("empty valid set"),
                         std::invalid_argument);
}

TEST_CASE("median scaling is idempotent and absorbs any input scale") {
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> u(0.5, 6.0);
    for (int trial = 0; trial < 50; ++trial) {
        Tensor gt = testutil::random_tensor({5, 5}, 100 + trial, 0.5, 6.0);
        Tensor pred = testutil::random_tensor({5, 5}, 200 + trial, 0.5, 6.0);
        Tensor once = median_scale(pred, gt, Tensor{});
        Tensor twice = median_scale(once, gt, Tensor{});
        CHECK(testutil::max_abs_diff(once, twice) < 1e-12);

        const double c = u(rng);
        DepthMetrics a = depth_metrics(median_scale(pred, gt, Tensor{}), gt, Tensor{}, 200.0);
        DepthMetrics b = depth_metrics(median_scale((pred * c).detach(), gt, Tensor{}), gt, Tensor{}, 200.0);
        CHECK(a.abs_rel == doctest::Approx(b.abs_rel).epsilon(1e-12));
        CHECK(a.rmse == doctest::Approx(b.rmse).epsilon(1e-12));
        CHECK(a.delta1 == doctest::Approx(b.delta1).epsilon(1e-12));
    }
}

TEST_CASE("depth metrics: perfect prediction and the two-pixel hand case") {
    Tensor gt = testutil::random_tensor({6, 6}, 11, 0.5, 8.0);
    DepthMetrics perfect = depth_metrics(gt, gt, Tensor{}, 200.0);
    CHECK(perfect.abs_rel == 0.0);
    CHECK(perfect.sq_rel == 0.0);
    CHECK(perfect.rmse == 0.0);
    CHECK(perfect.rmse_log == 0.0);
    CHECK(perfect.delta1 == 100.0);
    CHECK(perfect.delta2 == 100.0);
    CHECK(perfect.delta3 == 100.0);

    // d* = [2,4], d = [1,4]: ratios are (2, 1), so only the second pixel
    // clears every 1.25^k threshold
    DepthMetrics m = depth_metrics(Tensor::of({2}, {1, 4}), Tensor::of({2}, {2, 4}), Tensor{}, 200.0);
    CHECK(m.abs_rel == doctest::Approx(0.25).epsilon(1e-15));
    CHECK(m.sq_rel == doctest::Approx(0.25).epsilon(1e-15));
    CHECK(m.rmse == doctest::Approx(std::sqrt(0.5)).epsilon(1e-15));
    CHECK(m.rmse_log == doctest::Approx(std::sqrt(std::log(2.0) * std::log(2.0) / 2.0)).epsilon(1e-15));
    CHECK(m.delta1 == 50.0);
    CHECK(m.delta2 == 50.0);  // max ratio 2 also exceeds 1.25^2 and 1.25^3
    CHECK(m.delta3 == 50.0);

    // the cap clamps ground truth before comparison
    DepthMetrics capped = depth_metrics(Tensor::of({1}, {200.0}), Tensor::of({1}, {500.0}), Tensor{}, 200.0);
    CHECK(capped.abs_rel == 0.0);

    CHECK_THROWS_WITH_AS(depth_metrics(gt, gt, Tensor::zeros({6, 6}), 200.0),
                         doctest::Contains("zero evaluated pixels"), std::invalid_argument);
}

TEST_CASE("depth metrics match the single-loop oracle on 100 random instances") {
    std::mt19937_64 rng(13);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int trial = 0; trial < 100; ++trial) {
        const int n = 8 + static_cast<int>(u(rng) * 40);
        std::vector<double> pred(n), gt(n);
        std::vector<int> valid(n);
        for (int i = 0; i < n; ++i) {
            pred[i] = 0.2 + 8.0 * u(rng);
            gt[i] = 0.2 + 8.0 * u(rng);
            valid[i] = u(rng) < 0.8 ? 1 : 0;
        }
        valid[0] = 1;  // keep at least one pixel
        const double cap = u(rng) < 0.3 ? 4.0 : 200.0;
        std::vector<double> mask(valid.begin(), valid.end());
        DepthMetrics m = depth_metrics(Tensor::of({n}, pred), Tensor::of({n}, gt), Tensor::of({n}, mask), cap);
        oracle::DepthScores o = oracle::depth_scores(pred, gt, valid, cap);
        CHECK(std::fabs(m.abs_rel - o.abs_rel) < 1e-12);
        CHECK(std::fabs(m.sq_rel - o.sq_rel) < 1e-12);
        CHECK(std::fabs(m.rmse - o.rmse) < 1e-12);
        CHECK(std::fabs(m.rmse_log - o.rmse_log) < 1e-12);
        CHECK(std::fabs(m.delta1 - o.delta1) < 1e-12);
        CHECK(std::fabs(m.delta2 - o.delta2) < 1e-12);
        CHECK(std::fabs(m.delta3 - o.delta3) < 1e-12);
        CHECK(m.n_valid == o.n);
        // nesting holds on every instance
        CHECK(m.delta1 <= m.delta2);
        CHECK(m.delta2 <= m.delta3);
    }
}

TEST_CASE("pose errors") {
    std::vector<PoseSE3> gt{{{0.1, 0, 0}, {1, 0, 0}}, {{0, 0.2, 0}, {0, 1, 0}}};
    PoseErrors zero = pose_errors(gt, gt);
    CHECK(zero.rotation.mean == 0.0);
    CHECK(zero.rotation.std == 0.0);
    CHECK(zero.trajectory.mean == 0.0);

    // single frame, rotation off by (0.03, 0, 0) under identity normalization
    std::vector<PoseSE3> a{{{0.13, 0, 0}, {1, 0, 0}}};
    std::vector<PoseSE3> b{{{0.10, 0, 0}, {1, 0, 0}}};
    PoseErrors one = pose_errors(a, b);
    CHECK(one.rotation.mean == doctest::Approx(0.03).epsilon(1e-12));
    CHECK(one.rotation.std == 0.0);

    CHECK_THROWS_AS(pose_errors(a, gt), std::invalid_argument);

    // non-identity normalization rescales component space
    PoseErrors scaled = pose_errors(a, b, NormBounds{0.0, 0.1});
    CHECK(scaled.rotation.mean == doctest::Approx(0.3).epsilon(1e-12));
}

TEST_CASE("intrinsic errors mirror the reporting protocol") {
    const Intrinsics gt{0.82, 1.02, 0.5, 0.5};
    IntrinsicError zero = intrinsic_error(gt, gt);
    CHECK(zero.fx == 0.0);
    CHECK(zero.mean() == 0.0);

    IntrinsicError close = intrinsic_error({0.81, 1.02, 0.5, 0.5}, gt);
    CHECK(close.fx == doctest::Approx(0.01).epsilon(1e-12));
    IntrinsicError far = intrinsic_error({0.86, 1.02, 0.5, 0.5}, gt);
    CHECK(far.fx == doctest::Approx(0.04).epsilon(1e-12));
    CHECK(close.fx < far.fx);

    std::vector<IntrinsicError> runs{close, far};
    auto stats = intrinsic_error_stats(runs);
    CHECK(stats[0].mean == doctest::Approx(0.025).epsilon(1e-12));
    CHECK(stats[1].mean == 0.0);
}

TEST_CASE("trajectory accumulation") {
    CHECK(accumulate_trajectory({}).size() == 1);
    CHECK(accumulate_trajectory({})[0] == Vec3{0, 0, 0});

    std::vector<PoseSE3> straight{{{0, 0, 0}, {1, 0, 0}}, {{0, 0, 0}, {1, 0, 0}}};
    auto pos = accumulate_trajectory(straight);
    REQUIRE(pos.size() == 3);
    CHECK(pos[1] == Vec3{1, 0, 0});
    CHECK(pos[2][0] == doctest::Approx(2.0));

    // four 90-degree turns close a square; verified against the
    // rotation-matrix oracle step by step
    const PoseSE3 step{{0, M_PI / 2, 0}, {1, 0, 0}};
    std::vector<PoseSE3> square(4, step);
    auto sq = accumulate_trajectory(square);
    REQUIRE(sq.size() == 5);
    // oracle: accumulate R_k t via explicit matrices
    Mat3 acc_r{1, 0, 0, 0, 1, 0, 0, 0, 1};
    Vec3 acc_t{0, 0, 0};
    for (int k = 0; k < 4; ++k) {
        const Mat3 r = oracle::rotation_matrix(step.rotation);
        // compose(acc, step): t = acc_r * step.t + acc_t; r = acc_r * r
        Vec3 moved{};
        for (int i = 0; i < 3; ++i)
            moved[i] = acc_r[i * 3] * step.translation[0] + acc_r[i * 3 + 1] * step.translation[1] +
                       acc_r[i * 3 + 2] * step.translation[2] + acc_t[i];
        acc_t = moved;
        Mat3 nr{};
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) {
                double s = 0;
                for (int l = 0; l < 3; ++l) s += acc_r[i * 3 + l] * r[l * 3 + j];
                nr[i * 3 + j] = s;
            }
        acc_r = nr;
        for (int i = 0; i < 3; ++i) CHECK(sq[k + 1][i] == doctest::Approx(acc_t[i]).epsilon(1e-12));
    }
    for (int i = 0; i < 3; ++i) CHECK(std::fabs(sq[4][i]) < 1e-10);  // back at the start
}

TEST_CASE("mean/std helper uses population std") {
    std::vector<double> v{1.0, 3.0};
    MeanStd ms = mean_std(v);
    CHECK(ms.mean == 2.0);
    CHECK(ms.std == 1.0);  // population, not sample
}
