#include "diffsfm/diffsfm.h"

#include <cstring>
#include <string>

#include "diffsfm/commands.hpp"
#include "diffsfm/evaluate.hpp"

namespace {

thread_local std::string t_last_error;

dsfm_status fail(dsfm_status code, const char* what) {
    t_last_error = what;
    return code;
}

// Map the core's exception taxonomy onto the two error codes.
template <class F>
dsfm_status guarded(F&& f) {
    try {
        f();
        t_last_error.clear();
        return DSFM_OK;
    } catch (const dsfm::NumericError& e) {
        return fail(DSFM_ERR_NUMERIC, e.what());
    } catch (const std::exception& e) {
        return fail(DSFM_ERR_ARG, e.what());
    }
}

dsfm_status copy_out(const std::string& text, char* buf, size_t cap, size_t* needed) {
    if (needed) *needed = text.size() + 1;
    if (!buf || cap == 0) return DSFM_OK;
    const size_t n = std::min(cap - 1, text.size());
    std::memcpy(buf, text.data(), n);
    buf[n] = '\0';
    return DSFM_OK;
}

}  // namespace

struct dsfm_config {
    dsfm::ExperimentConfig cfg;
};

extern "C" {

const char* dsfm_version(void) { return "0.1.0"; }

const char* dsfm_last_error(void) { return t_last_error.c_str(); }

dsfm_status dsfm_config_create(dsfm_config** out) {
    if (!out) return fail(DSFM_ERR_ARG, "config_create: null output pointer");
    return guarded([&] { *out = new dsfm_config{}; });
}

dsfm_status dsfm_config_load(const char* path, dsfm_config** out) {
    if (!path || !out) return fail(DSFM_ERR_ARG, "config_load: null argument");
    return guarded([&] { *out = new dsfm_config{dsfm::ExperimentConfig::load(path)}; });
}

dsfm_status dsfm_config_set(dsfm_config* cfg, const char* dotted_key, const char* value) {
    if (!cfg || !dotted_key || !value) return fail(DSFM_ERR_ARG, "config_set: null argument");
    return guarded([&] { cfg->cfg.set_key(dotted_key, value); });
}

dsfm_status dsfm_config_dump(const dsfm_config* cfg, char* buf, size_t cap, size_t* needed) {
    if (!cfg) return fail(DSFM_ERR_ARG, "config_dump: null config");
    return guarded([&] { copy_out(cfg->cfg.to_json().dump(2) + "\n", buf, cap, needed); });
}

void dsfm_config_free(dsfm_config* cfg) { delete cfg; }

dsfm_status dsfm_synth(const dsfm_config* cfg, const char* out_dir) {
    if (!cfg || !out_dir) return fail(DSFM_ERR_ARG, "synth: null argument");
    return guarded([&] { dsfm::cmd_synth(cfg->cfg, out_dir); });
}

dsfm_status dsfm_optimize(const dsfm_config* cfg, const char* data_dir, const char* out_dir,
                          const char* ablation) {
    if (!cfg || !data_dir || !out_dir || !ablation) return fail(DSFM_ERR_ARG, "optimize: null argument");
    return guarded([&] { dsfm::cmd_optimize(cfg->cfg, data_dir, out_dir, ablation); });
}

dsfm_status dsfm_eval(const dsfm_config* cfg, const char* pred_dir, const char* gt_dir, const char* out_dir,
                      const char* pred2_dir) {
    if (!cfg || !pred_dir || !gt_dir || !out_dir) return fail(DSFM_ERR_ARG, "eval: null argument");
    return guarded([&] {
        dsfm::cmd_eval(cfg->cfg, pred_dir, gt_dir, out_dir,
                       pred2_dir ? std::filesystem::path(pred2_dir) : std::filesystem::path{});
    });
}

dsfm_status dsfm_gradcheck(uint64_t seed, double tolerance, const char* term, int grid_size, char* report,
                           size_t cap, size_t* needed) {
    bool pass = false;
    const dsfm_status st = guarded([&] {
        dsfm::GradcheckOptions opts;
        opts.seed = seed;
        opts.tolerance = tolerance;
        if (term && *term) opts.term = term;
        if (grid_size > 0) opts.size = grid_size;
        const dsfm::GradcheckResult res = dsfm::cmd_gradcheck(opts);
        copy_out(res.report, report, cap, needed);
        pass = res.pass;
    });
    if (st != DSFM_OK) return st;
    if (!pass) return fail(DSFM_ERR_NUMERIC, "gradient check failed (see report)");
    return DSFM_OK;
}

dsfm_status dsfm_median_scale(double* pred, const double* gt, const uint8_t* valid, size_t n) {
    if (!pred || !gt || n == 0) return fail(DSFM_ERR_ARG, "median_scale: null or empty input");
    return guarded([&] {
        const int len = static_cast<int>(n);
        dsfm::Tensor p = dsfm::Tensor::of({len}, std::vector<double>(pred, pred + n));
        dsfm::Tensor g = dsfm::Tensor::of({len}, std::vector<double>(gt, gt + n));
        dsfm::Tensor mask;
        if (valid) {
            std::vector<double> m(n);
            for (size_t i = 0; i < n; ++i) m[i] = valid[i] ? 1.0 : 0.0;
            mask = dsfm::Tensor::of({len}, std::move(m));
        }
        const dsfm::Tensor scaled = dsfm::median_scale(p, g, mask);
        for (size_t i = 0; i < n; ++i) pred[i] = scaled[i];
    });
}

dsfm_status dsfm_depth_metrics(const double* pred, const double* gt, const uint8_t* valid, size_t n,
                               double cap, double out[8]) {
    if (!pred || !gt || !out || n == 0) return fail(DSFM_ERR_ARG, "depth_metrics: null or empty input");
    return guarded([&] {
        const int len = static_cast<int>(n);
        dsfm::Tensor p = dsfm::Tensor::of({len}, std::vector<double>(pred, pred + n));
        dsfm::Tensor g = dsfm::Tensor::of({len}, std::vector<double>(gt, gt + n));
        dsfm::Tensor mask;
        if (valid) {
            std::vector<double> m(n);
            for (size_t i = 0; i < n; ++i) m[i] = valid[i] ? 1.0 : 0.0;
            mask = dsfm::Tensor::of({len}, std::move(m));
        }
        const dsfm::DepthMetrics m = dsfm::depth_metrics(p, g, mask, cap);
        out[0] = m.abs_rel;
        out[1] = m.sq_rel;
        out[2] = m.rmse;
        out[3] = m.rmse_log;
        out[4] = m.delta1;
        out[5] = m.delta2;
        out[6] = m.delta3;
        out[7] = static_cast<double>(m.n_valid);
    });
}

}  // extern "C"
