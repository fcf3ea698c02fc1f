#include "diffsfm/optimize.hpp"

#include <cmath>
#include <random>

namespace dsfm {

void adam_step(std::vector<std::vector<double>>& params, const std::vector<std::vector<double>>& grads,
               AdamState& state, double lr, const AdamConfig& cfg) {
    if (params.size() != grads.size())
        throw std::invalid_argument("adam_step: " + std::to_string(params.size()) + " parameter blocks vs " +
                                    std::to_string(grads.size()) + " gradient blocks");
    if (!(lr > 0.0)) throw std::invalid_argument("adam_step: lr must be positive");
    if (state.m.empty()) {
        state.m.resize(params.size());
        state.v.resize(params.size());
        for (std::size_t b = 0; b < params.size(); ++b) {
            state.m[b].assign(params[b].size(), 0.0);
            state.v[b].assign(params[b].size(), 0.0);
        }
    }
    if (state.m.size() != params.size()) throw std::invalid_argument("adam_step: state does not match block layout");
    state.step += 1;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
    for (std::size_t b = 0; b < params.size(); ++b) {
        if (params[b].size() != grads[b].size())
            throw std::invalid_argument("adam_step: block " + std::to_string(b) + " size mismatch");
        auto& m = state.m[b];
        auto& v = state.v[b];
        auto& x = params[b];
        const auto& g = grads[b];
        for (std::size_t i = 0; i < x.size(); ++i) {
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
            const double mh = m[i] / bc1;
            const double vh = v[i] / bc2;
            x[i] -= lr * mh / (std::sqrt(vh) + cfg.epsilon);
        }
    }
}

double lr_schedule(double base_lr, int epoch) {
    if (epoch < 0) throw std::invalid_argument("lr_schedule: negative epoch");
    return base_lr * std::pow(0.1, epoch / 10);
}

FramePair frame_pair_from(const RenderedPair& pair, bool use_gt_visibility) {
    FramePair fp;
    fp.target = pair.target;
    fp.sources = {pair.source};
    if (use_gt_visibility) fp.visibility = pair.gt_visibility;
    return fp;
}

namespace {

// Soft box on free intrinsics: quadratic hinge outside (0.1, 3) for
// focals and (0.1, 0.9) for the principal point. Keeps early iterations
// out of degenerate K without biasing the interior.
Tensor intrinsics_bounds_penalty(const Tensor& intr4) {
    auto hinge = [](const Tensor& x, double lo, double hi) {
        Tensor over = maximum(x - hi, Tensor::scalar(0.0));
        Tensor under = maximum(lo - x, Tensor::scalar(0.0));
        return over * over + under * under;
    };
    Tensor p = hinge(select(intr4, 0), 0.1, 3.0) + hinge(select(intr4, 1), 0.1, 3.0) +
               hinge(select(intr4, 2), 0.1, 0.9) + hinge(select(intr4, 3), 0.1, 0.9);
    return p * 10.0;
}

bool pose_is_identity(const PoseSE3& p) {
    for (double v : p.rotation)
        if (std::fabs(v) > 1e-12) return false;
    for (double v : p.translation)
        if (std::fabs(v) > 1e-12) return false;
    return true;
}

struct Blocks {
    // flat parameter storage, one vector per free block
    std::vector<std::vector<double>> values;
    std::vector<Shape> shapes;
    // indices into `values` (-1 = frozen)
    std::vector<int> log_depth;  // per pair
    std::vector<int> pose;       // per pair
    std::vector<int> intr;       // per pair (all equal when shared)
    std::vector<int> calib;      // per pair
};

}  // namespace

RecoveryResult solve(const RecoveryProblem& problem, const SolveOptions& opts) {
    problem.grid.validate();
    problem.weights.validate();
    if (problem.pairs.empty()) throw std::invalid_argument("solve: no frame pairs");
    if (!problem.free_depth && !problem.free_pose && !problem.free_intrinsics && !problem.free_calibration)
        throw std::invalid_argument("solve: no free variables");
    if (opts.steps < 1) throw std::invalid_argument("solve: steps must be >= 1");
    const int H = problem.grid.height, W = problem.grid.width;
    const std::size_t n_pairs = problem.pairs.size();
    for (const FramePair& p : problem.pairs) {
        if (p.target.shape() != Shape{H, W, 1})
            throw std::invalid_argument("solve: target frame shape " + shape_str(p.target.shape()) +
                                        " does not match grid");
        if (p.sources.empty()) throw std::invalid_argument("solve: pair without source frames");
    }

    RecoveryResult result;
    std::mt19937_64 rng(opts.seed * 0x9e3779b97f4a7c15ull + 1);
    std::normal_distribution<double> noise(0.0, 1.0);

    // ---- assemble initial values ----
    std::vector<std::vector<double>> init_log_depth(n_pairs);
    for (std::size_t k = 0; k < n_pairs; ++k) {
        if (!problem.depth_init.empty()) {
            const Tensor& d = problem.depth_init.at(k);
            if (d.shape() != Shape{H, W}) throw std::invalid_argument("solve: depth_init shape mismatch");
            init_log_depth[k].resize(d.size());
            for (std::size_t i = 0; i < d.size(); ++i) {
                if (!(d[i] > 0.0)) throw std::domain_error("solve: non-positive depth_init");
                init_log_depth[k][i] = std::log(d[i]);
            }
        } else {
            if (!(problem.depth_init_value > 0.0)) throw std::domain_error("solve: non-positive depth_init_value");
            init_log_depth[k].assign(static_cast<std::size_t>(H) * W, std::log(problem.depth_init_value));
        }
    }
    std::size_t n_poses = 0;
    std::vector<std::size_t> pose_base(n_pairs);
    for (std::size_t k = 0; k < n_pairs; ++k) {
        pose_base[k] = n_poses;
        n_poses += problem.pairs[k].sources.size();
    }
    std::vector<PoseSE3> init_pose(n_poses);
    if (!problem.pose_init.empty()) {
        if (problem.pose_init.size() != n_poses)
            throw std::invalid_argument("solve: pose_init needs one pose per (pair, source), want " +
                                        std::to_string(n_poses) + ", got " +
                                        std::to_string(problem.pose_init.size()));
        init_pose = problem.pose_init;
    }
    if (problem.free_pose && opts.init_jitter > 0.0) {
        for (PoseSE3& p : init_pose) {
            for (double& r : p.rotation) r += 0.3 * opts.init_jitter * noise(rng);
            for (double& t : p.translation) t += opts.init_jitter * noise(rng);
        }
    }
    problem.intrinsics_init.validate();

    if (problem.free_intrinsics && !problem.free_pose) {
        bool all_identity = true;
        for (const PoseSE3& p : init_pose) all_identity = all_identity && pose_is_identity(p);
        if (all_identity) result.warnings.push_back("intrinsics unobservable: zero parallax");
    }

    // ---- block layout ----
    Blocks blocks;
    blocks.log_depth.assign(n_pairs, -1);
    blocks.pose.assign(n_poses, -1);
    blocks.intr.assign(n_pairs, -1);
    blocks.calib.assign(n_pairs, -1);
    auto add_block = [&](Shape shape, std::vector<double> v) {
        blocks.shapes.push_back(std::move(shape));
        blocks.values.push_back(std::move(v));
        return static_cast<int>(blocks.values.size() - 1);
    };
    for (std::size_t k = 0; k < n_pairs; ++k) {
        if (problem.free_depth) blocks.log_depth[k] = add_block({H, W}, init_log_depth[k]);
        if (problem.free_pose)
            for (std::size_t s = 0; s < problem.pairs[k].sources.size(); ++s) {
                const auto a = init_pose[pose_base[k] + s].as_array();
                blocks.pose[pose_base[k] + s] = add_block({6}, std::vector<double>(a.begin(), a.end()));
            }
    }
    if (problem.free_intrinsics) {
        const auto a = problem.intrinsics_init.as_array();
        if (problem.shared_intrinsics) {
            const int b = add_block({4}, std::vector<double>(a.begin(), a.end()));
            for (std::size_t k = 0; k < n_pairs; ++k) blocks.intr[k] = b;
        } else {
            for (std::size_t k = 0; k < n_pairs; ++k)
                blocks.intr[k] = add_block({4}, std::vector<double>(a.begin(), a.end()));
        }
    }
    if (problem.free_calibration) {
        for (std::size_t k = 0; k < n_pairs; ++k) {
            const Tensor& c0 = problem.pairs[k].calibration;
            std::vector<double> cv(static_cast<std::size_t>(H) * W, 0.0);
            if (!c0.empty()) {
                if (c0.shape() != Shape{H, W}) throw std::invalid_argument("solve: calibration shape mismatch");
                cv = c0.data();
            }
            blocks.calib[k] = add_block({H, W}, std::move(cv));
        }
    }

    DepthPlanes planes;
    if (problem.cost_volume.enabled)
        planes = make_planes(problem.cost_volume.d_min, problem.cost_volume.d_max, problem.cost_volume.n_planes);

    const AdamConfig adam_cfg = opts.adam;
    AdamState adam;
    const std::size_t n_blocks = blocks.values.size();

    for (int step = 0; step < opts.steps; ++step) {
        const double lr =
            opts.steps_per_epoch > 0 ? lr_schedule(opts.lr, step / opts.steps_per_epoch) : opts.lr;
        StepTrace tr;
        tr.step = step;
        tr.lr = lr;
        std::vector<std::vector<double>> grads(n_blocks);
        try {
            Tape tape;
            std::vector<Tensor> watched(n_blocks);
            for (std::size_t b = 0; b < n_blocks; ++b)
                watched[b] = tape.watch(Tensor::of(blocks.shapes[b], blocks.values[b]));
            // duplicate handles (shared intrinsics) must reuse one leaf
            auto handle = [&](int b) -> const Tensor& { return watched[static_cast<std::size_t>(b)]; };

            Tensor total;
            bool first = true;
            auto add_term = [&](const Tensor& t) {
                total = first ? t : total + t;
                first = false;
            };
            for (std::size_t k = 0; k < n_pairs; ++k) {
                const FramePair& pair = problem.pairs[k];
                Tensor depth = blocks.log_depth[k] >= 0 ? exp(handle(blocks.log_depth[k]))
                                                        : Tensor::of({H, W}, [&] {
                                                              std::vector<double> d(init_log_depth[k].size());
                                                              for (std::size_t i = 0; i < d.size(); ++i)
                                                                  d[i] = std::exp(init_log_depth[k][i]);
                                                              return d;
                                                          }());
                Tensor intr = blocks.intr[k] >= 0 ? handle(blocks.intr[k]) : intrinsics_tensor(problem.intrinsics_init);
                std::vector<Tensor> poses(pair.sources.size());
                for (std::size_t sv = 0; sv < pair.sources.size(); ++sv) {
                    const std::size_t pi = pose_base[k] + sv;
                    poses[sv] = blocks.pose[pi] >= 0 ? handle(blocks.pose[pi]) : pose_tensor(init_pose[pi]);
                }

                SupervisionInputs inp;
                inp.target = pair.target;
                inp.aggregate = problem.aggregate;
                for (std::size_t sv = 0; sv < pair.sources.size(); ++sv)
                    inp.views.push_back(synthesize_target(pair.sources[sv], depth, poses[sv], intr, problem.grid));
                inp.visibility = pair.visibility;
                if (blocks.calib[k] >= 0)
                    inp.calibration = handle(blocks.calib[k]);
                else if (!pair.calibration.empty())
                    inp.calibration = pair.calibration;

                Tensor d_c;
                const bool use_cv = problem.cost_volume.enabled;
                if (use_cv) {
                    Tensor f_t = extract_features(pair.target, problem.cost_volume.feature_mode);
                    std::vector<SourceView> srcs;
                    const int n_src = std::min<int>(problem.cost_volume.past_frames,
                                                    static_cast<int>(pair.sources.size()));
                    for (int s = 0; s < n_src; ++s)
                        srcs.push_back({extract_features(pair.sources[s], problem.cost_volume.feature_mode), poses[s]});
                    CostVolume vol = build_cost_volume(f_t, srcs, intr, planes, problem.grid);
                    d_c = argmin_depth_soft(vol, planes, problem.cost_volume.tau);
                }

                LossBreakdown bd = total_loss(inp, depth, use_cv ? &d_c : nullptr, problem.weights);
                add_term(bd.total);
                tr.data += bd.data.value();
                tr.residual_smooth += bd.residual_smooth.value();
                tr.auxiliary += bd.auxiliary.value();
                tr.edge_smooth += bd.edge_smooth.value();
                tr.consistency += bd.consistency.value();
            }
            total = total / static_cast<double>(n_pairs);
            if (problem.free_intrinsics)
                total = total + intrinsics_bounds_penalty(handle(blocks.intr[0]));
            tr.total = total.value();
            tr.data /= static_cast<double>(n_pairs);
            tr.residual_smooth /= static_cast<double>(n_pairs);
            tr.auxiliary /= static_cast<double>(n_pairs);
            tr.edge_smooth /= static_cast<double>(n_pairs);
            tr.consistency /= static_cast<double>(n_pairs);

            GradientMap gm = tape.backward(total, std::span<const Tensor>(watched.data(), watched.size()));
            double gnorm_sq = 0.0;
            for (std::size_t b = 0; b < n_blocks; ++b) {
                grads[b] = gm.at(watched[b]).data();
                for (double g : grads[b]) gnorm_sq += g * g;
            }
            tr.grad_norm = std::sqrt(gnorm_sq);
        } catch (const NumericError& e) {
            throw NumericError("solve: numerical failure at step " + std::to_string(step) + ": " + e.what());
        }
        result.trace.push_back(tr);
        result.steps_run = step + 1;
        if (tr.grad_norm < opts.grad_norm_stop) {
            result.converged = true;
            result.stop_reason = "gradient norm below " + std::to_string(opts.grad_norm_stop);
            break;
        }
        adam_step(blocks.values, grads, adam, lr, adam_cfg);
    }
    if (!result.converged) result.stop_reason = "max steps reached";

    // ---- read back ----
    for (std::size_t k = 0; k < n_pairs; ++k) {
        std::vector<double> d(static_cast<std::size_t>(H) * W);
        const auto& ld = blocks.log_depth[k] >= 0 ? blocks.values[blocks.log_depth[k]] : init_log_depth[k];
        for (std::size_t i = 0; i < d.size(); ++i) d[i] = std::exp(ld[i]);
        result.depth.push_back(Tensor::of({H, W}, std::move(d)));
        for (std::size_t sv = 0; sv < problem.pairs[k].sources.size(); ++sv) {
            const std::size_t pi = pose_base[k] + sv;
            if (blocks.pose[pi] >= 0) {
                const auto& pv = blocks.values[blocks.pose[pi]];
                result.poses.push_back({{pv[0], pv[1], pv[2]}, {pv[3], pv[4], pv[5]}});
            } else {
                result.poses.push_back(init_pose[pi]);
            }
        }
        if (blocks.calib[k] >= 0)
            result.calibration.push_back(Tensor::of({H, W}, blocks.values[blocks.calib[k]]));
        else
            result.calibration.push_back(problem.pairs[k].calibration);
    }
    if (problem.free_intrinsics) {
        if (problem.shared_intrinsics) {
            const auto& iv = blocks.values[blocks.intr[0]];
            result.intrinsics.push_back({iv[0], iv[1], iv[2], iv[3]});
        } else {
            for (std::size_t k = 0; k < n_pairs; ++k) {
                const auto& iv = blocks.values[blocks.intr[k]];
                result.intrinsics.push_back({iv[0], iv[1], iv[2], iv[3]});
            }
        }
    } else {
        result.intrinsics.push_back(problem.intrinsics_init);
    }
    return result;
}

SequenceRecovery recover_sequence(std::span<const Tensor> frames, const RecoveryProblem& scaffold,
                                  const SolveOptions& opts) {
    if (frames.size() < 3) throw std::invalid_argument("recover_sequence: need at least 3 frames");
    RecoveryProblem problem = scaffold;
    problem.pairs.clear();
    problem.shared_intrinsics = true;
    for (std::size_t k = 0; k + 1 < frames.size(); ++k) {
        FramePair fp;
        fp.target = frames[k + 1];
        fp.sources = {frames[k]};  // past frame as source
        problem.pairs.push_back(std::move(fp));
    }
    RecoveryResult raw = solve(problem, opts);

    SequenceRecovery out;
    out.depths = raw.depth;
    out.intrinsics = raw.intrinsics.front();
    for (const PoseSE3& p : raw.poses) out.steps.push_back(pose_inverse(p));  // (k+1)->k inverted to k->k+1
    out.raw = std::move(raw);
    return out;
}

}  // namespace dsfm
