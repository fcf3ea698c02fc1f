#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "diffsfm/cost_volume.hpp"
#include "diffsfm/losses.hpp"
#include "diffsfm/scenes.hpp"

namespace dsfm {

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.99;
    double epsilon = 1e-8;
};

struct AdamState {
    std::int64_t step = 0;
    std::vector<std::vector<double>> m;  // first moments, one entry per block
    std::vector<std::vector<double>> v;  // second moments
};

/// Bias-corrected Adam update, in place. Blocks and grads must align; the
/// state adopts the block layout on first use.
void adam_step(std::vector<std::vector<double>>& params, const std::vector<std::vector<double>>& grads,
               AdamState& state, double lr, const AdamConfig& cfg = {});

/// base_lr * 0.1^floor(epoch/10).
double lr_schedule(double base_lr, int epoch);

/// One supervised pair: a target frame with one or more source frames.
/// visibility/calibration are optional maps ([H,W]); empty means default.
struct FramePair {
    Tensor target;  // [H,W,1]
    std::vector<Tensor> sources;
    Tensor visibility;
    Tensor calibration;  // fixed C when calibration is not a free variable
};

FramePair frame_pair_from(const RenderedPair& pair, bool use_gt_visibility = true);

struct CostVolumeConfig {
    bool enabled = false;
    double d_min = 0.1;
    double d_max = 10.0;
    int n_planes = 64;
    FeatureMode feature_mode = FeatureMode::gradient3;
    int past_frames = 1;  // sources used per volume
    double tau = 0.1;
};

/// Direct-variable substitute for network training: minimize the total
/// loss over any subset of {log-depth, pose, intrinsics, calibration}.
struct RecoveryProblem {
    PixelGrid grid;
    std::vector<FramePair> pairs;

    bool free_depth = true;
    bool free_pose = true;
    bool free_intrinsics = false;
    bool free_calibration = false;
    bool shared_intrinsics = true;

    std::vector<Tensor> depth_init;  // per pair [H,W]; empty -> constant
    double depth_init_value = 1.0;
    // one pose per (pair, source), pair-major; empty -> identities
    std::vector<PoseSE3> pose_init;
    Intrinsics intrinsics_init;

    LossWeights weights;
    PhotoAggregate aggregate = PhotoAggregate::min_over_sources;
    CostVolumeConfig cost_volume;
};

struct SolveOptions {
    int steps = 800;
    double lr = 1e-2;
    std::uint64_t seed = 0;
    int steps_per_epoch = 0;  // 0: constant lr; else lr_schedule over step/steps_per_epoch
    double grad_norm_stop = 1e-8;
    double init_jitter = 0.0;  // seeded noise on free pose inits
    AdamConfig adam;
};

struct StepTrace {
    int step = 0;
    double lr = 0.0;
    double total = 0.0;
    double data = 0.0;
    double residual_smooth = 0.0;
    double auxiliary = 0.0;
    double edge_smooth = 0.0;
    double consistency = 0.0;
    double grad_norm = 0.0;
};

struct RecoveryResult {
    std::vector<Tensor> depth;           // per pair, positive
    std::vector<PoseSE3> poses;          // per (pair, source), pair-major
    std::vector<Intrinsics> intrinsics;  // one entry when shared
    std::vector<Tensor> calibration;     // per pair; empty tensors when unused
    std::vector<StepTrace> trace;
    bool converged = false;  // gradient-norm stop fired
    int steps_run = 0;
    std::string stop_reason;
    std::vector<std::string> warnings;
};

RecoveryResult solve(const RecoveryProblem& problem, const SolveOptions& opts);

/// Chained pairwise recovery over a frame sequence sharing one intrinsics
/// variable: pairs are (target = frame k+1, source = frame k), so each
/// recovered pose maps frame k+1 into frame k.
struct SequenceRecovery {
    std::vector<PoseSE3> steps;   // k -> k+1, ready for trajectory accumulation
    std::vector<Tensor> depths;   // recovered depth of frames 1..F-1
    Intrinsics intrinsics;
    RecoveryResult raw;
};

SequenceRecovery recover_sequence(std::span<const Tensor> frames, const RecoveryProblem& scaffold,
                                  const SolveOptions& opts);

}  // namespace dsfm
