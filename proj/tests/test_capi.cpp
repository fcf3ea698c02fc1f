// Exercises the shared-library surface the way an external client would:
// only diffsfm/diffsfm.h, opaque handles and status codes.
#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <unistd.h>
#include <vector>

#include "diffsfm/diffsfm.h"

namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        static int counter = 0;
        path = fs::temp_directory_path() /
               ("diffsfm_capi_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

std::string slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>());
}

struct Config {
    dsfm_config* ptr = nullptr;
    Config() { REQUIRE(dsfm_config_create(&ptr) == DSFM_OK); }
    ~Config() { dsfm_config_free(ptr); }
    void set(const char* k, const char* v) { REQUIRE(dsfm_config_set(ptr, k, v) == DSFM_OK); }
};

// a tiny, fast experiment
void small_setup(Config& cfg) {
    cfg.set("image.width", "24");
    cfg.set("image.height", "20");
    cfg.set("scene.kind", "slanted_plane");
    cfg.set("scene.texture", "contrast");
    cfg.set("scene.depth", "2.5");
    cfg.set("trajectory.frames", "3");
    cfg.set("trajectory.step", "[0.08, 0, 0.03]");
    cfg.set("trajectory.rot", "[0, 0.01, 0]");
    cfg.set("optimizer.steps", "40");
    cfg.set("optimizer.depth_init", "2.0");
}

}  // namespace

TEST_CASE("version and error text") {
    CHECK(dsfm_version() != nullptr);
    CHECK(std::strlen(dsfm_version()) > 0);
}

TEST_CASE("config handle lifecycle and strict keys") {
    Config cfg;
    cfg.set("optimizer.steps", "321");
    char buf[8192];
    size_t needed = 0;
    REQUIRE(dsfm_config_dump(cfg.ptr, buf, sizeof(buf), &needed) == DSFM_OK);
    CHECK(needed > 0);
    CHECK(std::string(buf).find("\"steps\": 321") != std::string::npos);

    CHECK(dsfm_config_set(cfg.ptr, "optimizer.turbo", "1") == DSFM_ERR_ARG);
    CHECK(std::string(dsfm_last_error()).find("optimizer.turbo") != std::string::npos);
    CHECK(dsfm_config_set(nullptr, "a", "b") == DSFM_ERR_ARG);

    dsfm_config* loaded = nullptr;
    CHECK(dsfm_config_load("/definitely/not/here.json", &loaded) == DSFM_ERR_ARG);
}

TEST_CASE("depth metric entry points") {
    const double pred[4] = {1, 4, 2, 2};
    const double gt[4] = {2, 4, 2, 2};
    double out[8];
    REQUIRE(dsfm_depth_metrics(pred, gt, nullptr, 4, 200.0, out) == DSFM_OK);
    CHECK(out[0] == doctest::Approx(0.125));  // abs_rel over 4 pixels
    CHECK(out[7] == 4.0);

    const uint8_t valid[4] = {1, 1, 0, 0};
    REQUIRE(dsfm_depth_metrics(pred, gt, valid, 4, 200.0, out) == DSFM_OK);
    CHECK(out[0] == doctest::Approx(0.25));
    CHECK(out[4] == 50.0);

    double scale_me[4] = {1, 2, 3, 100};
    const double gt2[4] = {2, 4, 6, 8};
    REQUIRE(dsfm_median_scale(scale_me, gt2, nullptr, 4) == DSFM_OK);
    CHECK(scale_me[3] == doctest::Approx(200.0));

    CHECK(dsfm_depth_metrics(nullptr, gt, nullptr, 4, 200.0, out) == DSFM_ERR_ARG);
}

TEST_CASE("pipeline: synth is deterministic, optimize and eval run end to end") {
    TempDir dir;
    Config cfg;
    small_setup(cfg);

    const fs::path d1 = dir.path / "a", d2 = dir.path / "b";
    REQUIRE(dsfm_synth(cfg.ptr, d1.c_str()) == DSFM_OK);
    REQUIRE(dsfm_synth(cfg.ptr, d2.c_str()) == DSFM_OK);
    for (const char* name : {"frame_000.ppm", "frame_001.pfm", "depth_002.pfm", "poses.csv",
                             "intrinsics.json", "config.json"}) {
        CAPTURE(name);
        REQUIRE(fs::exists(d1 / name));
        CHECK(slurp(d1 / name) == slurp(d2 / name));
    }

    // ground truth scored against itself: zero errors, full deltas
    const fs::path ev = dir.path / "eval_self";
    REQUIRE(dsfm_eval(cfg.ptr, d1.c_str(), d1.c_str(), ev.c_str(), nullptr) == DSFM_OK);
    const std::string metrics = slurp(ev / "metrics.json");
    CHECK(metrics.find("\"abs_rel\": 0.0") != std::string::npos);
    CHECK(metrics.find("\"delta1\": 100.0") != std::string::npos);
    CHECK(fs::exists(ev / "table.txt"));
    CHECK(fs::exists(ev / "trajectory.svg"));

    // a short optimization run produces the full output layout
    const fs::path opt = dir.path / "opt";
    REQUIRE(dsfm_optimize(cfg.ptr, d1.c_str(), opt.c_str(), "baseline") == DSFM_OK);
    for (const char* name : {"depth_001.pfm", "depth_002.pfm", "poses.csv", "intrinsics.json", "trace.csv",
                             "summary.json"})
        CHECK(fs::exists(opt / name));

    // and the prediction evaluates against the ground truth
    const fs::path ev2 = dir.path / "eval_pred";
    REQUIRE(dsfm_eval(cfg.ptr, opt.c_str(), d1.c_str(), ev2.c_str(), nullptr) == DSFM_OK);
    CHECK(fs::exists(ev2 / "metrics.json"));

    // overlay with a second prediction directory
    const fs::path ev3 = dir.path / "eval_two";
    REQUIRE(dsfm_eval(cfg.ptr, opt.c_str(), d1.c_str(), ev3.c_str(), opt.c_str()) == DSFM_OK);
    CHECK(slurp(ev3 / "trajectory.svg").find("prediction 2") != std::string::npos);

    CHECK(dsfm_optimize(cfg.ptr, d1.c_str(), opt.c_str(), "warp-drive") == DSFM_ERR_ARG);
    CHECK(dsfm_eval(cfg.ptr, "/nowhere", d1.c_str(), ev.c_str(), nullptr) == DSFM_ERR_ARG);
}

TEST_CASE("gradcheck through the C surface") {
    std::vector<char> report(1 << 14);
    size_t needed = 0;
    REQUIRE(dsfm_gradcheck(5, 1e-4, "all", 12, report.data(), report.size(), &needed) == DSFM_OK);
    const std::string text(report.data());
    CHECK(text.find("depth") != std::string::npos);
    CHECK(text.find("intrinsics") != std::string::npos);
    CHECK(text.find("PASS") != std::string::npos);
    CHECK(needed == text.size() + 1);

    CHECK(dsfm_gradcheck(5, 1e-4, "everything", 12, report.data(), report.size(), &needed) == DSFM_ERR_ARG);
}
