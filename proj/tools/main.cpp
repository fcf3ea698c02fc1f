// diffsfm command line: synth | optimize | eval | gradcheck.
// Thin shell over the C API in diffsfm/diffsfm.h.

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <string>
#include <utility>
#include <vector>

#include <CLI11.hpp>

#include "diffsfm/diffsfm.h"

namespace {

struct ConfigHandle {
    dsfm_config* ptr = nullptr;
    ~ConfigHandle() { dsfm_config_free(ptr); }
};

int report_error(dsfm_status st) {
    std::cerr << "error: " << dsfm_last_error() << "\n";
    return static_cast<int>(st);
}

// --config file, then --set overrides, then the sugar flags (--seed, ...)
int build_config(ConfigHandle& handle, const std::string& config_path, const std::vector<std::string>& sets,
                 const std::vector<std::pair<std::string, std::string>>& sugar) {
    dsfm_status st = config_path.empty() ? dsfm_config_create(&handle.ptr)
                                         : dsfm_config_load(config_path.c_str(), &handle.ptr);
    if (st != DSFM_OK) return report_error(st);
    for (const std::string& kv : sets) {
        const std::size_t eq = kv.find('=');
        if (eq == std::string::npos) {
            std::cerr << "error: --set expects key=value, got '" << kv << "'\n";
            return 1;
        }
        st = dsfm_config_set(handle.ptr, kv.substr(0, eq).c_str(), kv.substr(eq + 1).c_str());
        if (st != DSFM_OK) return report_error(st);
    }
    for (const auto& [key, value] : sugar) {
        st = dsfm_config_set(handle.ptr, key.c_str(), value.c_str());
        if (st != DSFM_OK) return report_error(st);
    }
    return 0;
}

void print_file_if_present(const std::string& path) {
    std::ifstream f(path);
    if (!f) return;
    std::cout << f.rdbuf();
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"differentiable structure-from-motion sandbox"};
    app.require_subcommand(1);

    std::string config_path;
    std::vector<std::string> sets;
    app.add_option("--config", config_path, "experiment config (JSON)")->check(CLI::ExistingFile);
    app.add_option("--set", sets, "override a config key, e.g. --set optimizer.steps=500");

    bool has_seed = false;
    std::uint64_t seed = 0;
    app.add_option_function<std::uint64_t>(
        "--seed",
        [&](const std::uint64_t& v) {
            seed = v;
            has_seed = true;
        },
        "seed for the scene and the optimizer");

    // synth
    auto* synth = app.add_subcommand("synth", "render a synthetic sequence with ground truth");
    std::string synth_out = "out/synth";
    synth->add_option("--output", synth_out, "output directory");

    // optimize
    auto* optimize = app.add_subcommand("optimize", "recover depth/pose/intrinsics from frames");
    std::string opt_data, opt_out = "out/optimize", opt_ablation = "camera+costvolume";
    optimize->add_option("--data", opt_data, "data directory from synth")->required();
    optimize->add_option("--output", opt_out, "output directory");
    optimize->add_option("--ablation", opt_ablation, "baseline | camera | camera+costvolume");

    // eval
    auto* eval = app.add_subcommand("eval", "score predictions against ground truth");
    std::string eval_pred, eval_pred2, eval_gt, eval_out = "out/eval";
    double eval_cap = -1.0, eval_mm = -1.0;
    eval->add_option("--pred", eval_pred, "prediction directory")->required();
    eval->add_option("--pred2", eval_pred2, "second prediction directory (overlay)");
    eval->add_option("--gt", eval_gt, "ground-truth directory")->required();
    eval->add_option("--output", eval_out, "output directory");
    eval->add_option("--cap", eval_cap, "depth cap after median scaling (default 200)");
    eval->add_option("--mm-scale", eval_mm, "scene-unit to millimeter factor");

    // gradcheck
    auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference the full loss stack");
    double gc_tol = 1e-4;
    std::string gc_term = "all";
    int gc_size = 16;
    gradcheck->add_option("--tol", gc_tol, "relative tolerance");
    gradcheck->add_option("--term", gc_term, "all | data | rs | ax | es");
    gradcheck->add_option("--size", gc_size, "grid size (NxN)");

    CLI11_PARSE(app, argc, argv);

    if (gradcheck->parsed()) {
        std::vector<char> report(1 << 16);
        size_t needed = 0;
        const dsfm_status st =
            dsfm_gradcheck(seed, gc_tol, gc_term.c_str(), gc_size, report.data(), report.size(), &needed);
        std::cout << report.data();
        if (st == DSFM_ERR_ARG) return report_error(st);
        return static_cast<int>(st);
    }

    ConfigHandle cfg;
    std::vector<std::pair<std::string, std::string>> sugar;
    if (has_seed) {
        sugar.emplace_back("scene.seed", std::to_string(seed));
        sugar.emplace_back("optimizer.seed", std::to_string(seed));
    }
    if (eval->parsed()) {
        if (eval_cap > 0) sugar.emplace_back("eval.cap", std::to_string(eval_cap));
        if (eval_mm >= 0) sugar.emplace_back("eval.mm_scale", std::to_string(eval_mm));
    }
    if (const int rc = build_config(cfg, config_path, sets, sugar); rc != 0) return rc;

    dsfm_status st = DSFM_OK;
    if (synth->parsed()) {
        st = dsfm_synth(cfg.ptr, synth_out.c_str());
        if (st == DSFM_OK) std::cout << "wrote " << synth_out << "\n";
    } else if (optimize->parsed()) {
        st = dsfm_optimize(cfg.ptr, opt_data.c_str(), opt_out.c_str(), opt_ablation.c_str());
        if (st == DSFM_OK) std::cout << "wrote " << opt_out << "\n";
    } else if (eval->parsed()) {
        st = dsfm_eval(cfg.ptr, eval_pred.c_str(), eval_gt.c_str(), eval_out.c_str(),
                       eval_pred2.empty() ? nullptr : eval_pred2.c_str());
        if (st == DSFM_OK) {
            print_file_if_present(eval_out + "/table.txt");
            std::cout << "wrote " << eval_out << "\n";
        }
    }
    if (st != DSFM_OK) return report_error(st);
    return 0;
}
