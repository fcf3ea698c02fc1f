#pragma once

#include <filesystem>
#include <string>

#include "diffsfm/evaluate.hpp"
#include "diffsfm/optimize.hpp"
#include "diffsfm/scenes.hpp"

#include <json.hpp>

namespace dsfm {

/// One file describing a full experiment: scene + trajectory + intrinsics
/// + every supervision and optimizer knob. Parsing is strict (unknown
/// keys are rejected by name) and round-trips losslessly.
struct ExperimentConfig {
    PixelGrid image{64, 64};
    SceneSpec scene;

    struct Trajectory {
        int frames = 4;
        Vec3 step{0.12, 0.0, 0.06};  // constant relative translation per frame
        Vec3 rot{0.0, 0.02, 0.0};    // constant relative rotation per frame
    } trajectory;

    Intrinsics intrinsics_gt{0.82, 1.02, 0.5, 0.5};
    Intrinsics intrinsics_init{1.0, 1.0, 0.5, 0.5};

    LossWeights weights;
    CostVolumeConfig cost_volume;

    struct Optimizer {
        double lr = 0.01;
        int steps = 800;
        std::uint64_t seed = 7;
        double beta1 = 0.9;
        double beta2 = 0.99;
        double epsilon = 1e-8;
        int steps_per_epoch = 0;
        double grad_norm_stop = 1e-8;
        double depth_init = 1.0;
        double pose_init_jitter = 0.0;
        std::string aggregate = "min";  // min | mean
    } optimizer;

    struct Eval {
        double cap = 200.0;
        double mm_scale = 0.0;  // scene units -> millimeters; 0 = leave units alone
        NormBounds rotation_norm{0.0, 1.0};
        NormBounds trajectory_norm{0.0, 1.0};
        bool align_scale = true;  // scale-align predicted trajectory before comparison
    } eval;

    static ExperimentConfig from_json(const nlohmann::json& j);
    nlohmann::json to_json() const;
    static ExperimentConfig load(const std::filesystem::path& path);
    void save(const std::filesystem::path& path) const;

    /// Parse "a.b.c" = value (JSON literal or bare string) into the config.
    void set_key(const std::string& dotted_key, const std::string& value);

    SolveOptions solve_options() const;
    PhotoAggregate aggregate() const;
    /// Absolute camera poses of the configured trajectory (frame 0 at
    /// identity, constant relative steps).
    std::vector<PoseSE3> trajectory_poses() const;
};

std::string scene_kind_name(SceneKind k);
SceneKind scene_kind_from(const std::string& name);
std::string feature_mode_name(FeatureMode m);
FeatureMode feature_mode_from(const std::string& name);
std::string texture_preset_name(TexturePreset p);
TexturePreset texture_preset_from(const std::string& name);

}  // namespace dsfm
