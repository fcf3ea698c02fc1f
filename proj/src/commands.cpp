#include "diffsfm/commands.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include "diffsfm/image_io.hpp"

namespace dsfm {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string frame_name(int k) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "frame_%03d", k);
    return buf;
}

std::string depth_name(int k) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "depth_%03d", k);
    return buf;
}

Tensor gray_of(const Tensor& image) {
    // [H,W,1] -> [H,W] for the float-map writers
    return reshape(image, {image.shape()[0], image.shape()[1]});
}

void write_intrinsics_json(const fs::path& path, const Intrinsics& k) {
    json j{{"fx", k.fx}, {"fy", k.fy}, {"cx", k.cx}, {"cy", k.cy}};
    write_text(path, j.dump(2) + "\n");
}

Intrinsics read_intrinsics_json(const fs::path& path) {
    json j;
    try {
        j = json::parse(read_text(path));
    } catch (const json::parse_error& e) {
        throw std::runtime_error(path.string() + ": " + e.what());
    }
    for (const char* key : {"fx", "fy", "cx", "cy"})
        if (!j.contains(key) || !j[key].is_number())
            throw std::runtime_error(path.string() + ": missing numeric key '" + key + "'");
    return {j["fx"].get<double>(), j["fy"].get<double>(), j["cx"].get<double>(), j["cy"].get<double>()};
}

std::string trace_csv(const std::vector<StepTrace>& trace) {
    std::ostringstream out;
    out << "step,lr,total,data_fidelity,residual_smoothness,auxiliary,edge_smoothness,depth_consistency,"
           "grad_norm\n";
    for (const StepTrace& t : trace) {
        out << t.step << "," << format_double(t.lr) << "," << format_double(t.total) << ","
            << format_double(t.data) << "," << format_double(t.residual_smooth) << ","
            << format_double(t.auxiliary) << "," << format_double(t.edge_smooth) << ","
            << format_double(t.consistency) << "," << format_double(t.grad_norm) << "\n";
    }
    return out.str();
}

std::vector<Tensor> load_frames(const fs::path& dir, int expected_min = 2) {
    std::vector<Tensor> frames;
    for (int k = 0;; ++k) {
        const fs::path pfm = dir / (frame_name(k) + ".pfm");
        const fs::path ppm = dir / (frame_name(k) + ".ppm");
        if (fs::exists(pfm)) {
            Tensor g = read_pfm(pfm);
            frames.push_back(reshape(g, {g.shape()[0], g.shape()[1], 1}));
        } else if (fs::exists(ppm)) {
            frames.push_back(mean_last(read_ppm(ppm)));  // [H,W]
            Tensor& f = frames.back();
            f = reshape(f, {f.shape()[0], f.shape()[1], 1});
        } else {
            break;
        }
    }
    if (static_cast<int>(frames.size()) < expected_min)
        throw std::runtime_error("data directory '" + dir.string() + "' holds " +
                                 std::to_string(frames.size()) + " frames, need at least " +
                                 std::to_string(expected_min) + " (frame_000.pfm/.ppm, ...)");
    return frames;
}

json metrics_to_json(const DepthMetrics& m) {
    return json{{"abs_rel", m.abs_rel}, {"sq_rel", m.sq_rel},   {"rmse", m.rmse},     {"rmse_log", m.rmse_log},
                {"delta1", m.delta1},   {"delta2", m.delta2},   {"delta3", m.delta3}, {"n_valid", m.n_valid}};
}

std::string metrics_table(const DepthMetrics& m) {
    std::ostringstream out;
    out << "Abs Rel     Sq Rel      RMSE        RMSE log    δ<1.25     δ<1.25²    "
           "δ<1.25³\n";
    char buf[160];
    std::snprintf(buf, sizeof(buf), "%-11.4f %-11.4f %-11.4f %-11.4f %-10.2f %-10.2f %-10.2f\n", m.abs_rel,
                  m.sq_rel, m.rmse, m.rmse_log, m.delta1, m.delta2, m.delta3);
    out << buf;
    return out.str();
}

// Least-squares scale fitting predicted onto ground-truth positions (the
// monocular gauge): s = <p,g>/<p,p>, guarded for degenerate tracks.
double trajectory_scale(const std::vector<Vec3>& pred, const std::vector<Vec3>& gt) {
    double pp = 0.0, pg = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i)
        for (int c = 0; c < 3; ++c) {
            pp += pred[i][c] * pred[i][c];
            pg += pred[i][c] * gt[i][c];
        }
    if (pp < 1e-16) return 1.0;
    return pg / pp;
}

std::string trajectory_svg(const std::vector<std::vector<Vec3>>& tracks, const std::vector<std::string>& colors,
                           const std::vector<std::string>& labels) {
    double xmin = 1e300, xmax = -1e300, zmin = 1e300, zmax = -1e300;
    for (const auto& tr : tracks)
        for (const Vec3& p : tr) {
            xmin = std::min(xmin, p[0]);
            xmax = std::max(xmax, p[0]);
            zmin = std::min(zmin, p[2]);
            zmax = std::max(zmax, p[2]);
        }
    const double span = std::max({xmax - xmin, zmax - zmin, 1e-6});
    const double margin = 0.1 * span;
    xmin -= margin;
    zmin -= margin;
    const double scale = 400.0 / (span + 2 * margin);
    std::ostringstream svg;
    svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"440\" height=\"460\" viewBox=\"0 0 440 460\">\n";
    svg << "<rect width=\"440\" height=\"460\" fill=\"white\"/>\n";
    for (std::size_t t = 0; t < tracks.size(); ++t) {
        svg << "<polyline fill=\"none\" stroke=\"" << colors[t] << "\" stroke-width=\"2\" points=\"";
        for (const Vec3& p : tracks[t]) {
            const double sx = 20.0 + (p[0] - xmin) * scale;
            const double sy = 420.0 - (p[2] - zmin) * scale;  // z up the page
            svg << format_double(sx) << "," << format_double(sy) << " ";
        }
        svg << "\"/>\n";
        svg << "<text x=\"20\" y=\"" << 440 + 0 * t << "\" font-size=\"12\" fill=\"" << colors[t]
            << "\" dx=\"" << 100 * t << "\">" << labels[t] << "</text>\n";
    }
    svg << "</svg>\n";
    return svg.str();
}

struct PredEval {
    json depth_metrics_json;
    DepthMetrics depth_mean;
    PoseErrors pose;
    std::vector<Vec3> positions;  // scale-aligned when requested
    bool has_intrinsics = false;
    Intrinsics intrinsics;
};

PredEval evaluate_prediction(const ExperimentConfig& config, const fs::path& pred_dir, const fs::path& gt_dir,
                             const std::vector<PoseSE3>& gt_poses, const std::vector<Vec3>& gt_positions) {
    PredEval ev;

    // depth maps matched by filename
    json frames = json::object();
    std::vector<DepthMetrics> per_frame;
    for (int k = 0; k < 10000; ++k) {
        const fs::path gt_file = gt_dir / (depth_name(k) + ".pfm");
        const fs::path pred_file = pred_dir / (depth_name(k) + ".pfm");
        if (!fs::exists(gt_file) || !fs::exists(pred_file)) continue;
        Tensor gt = read_pfm(gt_file);
        Tensor pred = read_pfm(pred_file);
        if (gt.shape() != pred.shape())
            throw std::runtime_error("depth shape mismatch for " + depth_name(k) + ": " +
                                     shape_str(pred.shape()) + " vs " + shape_str(gt.shape()));
        if (config.eval.mm_scale > 0.0) {
            gt = (gt * config.eval.mm_scale).detach();
            pred = (pred * config.eval.mm_scale).detach();
        }
        Tensor scaled = median_scale(pred, gt, Tensor{});
        DepthMetrics m = depth_metrics(scaled, gt, Tensor{}, config.eval.cap);
        per_frame.push_back(m);
        frames[depth_name(k)] = metrics_to_json(m);
    }
    if (per_frame.empty())
        throw std::runtime_error("no matching depth_*.pfm between '" + pred_dir.string() + "' and '" +
                                 gt_dir.string() + "'");
    DepthMetrics mean{};
    for (const DepthMetrics& m : per_frame) {
        mean.abs_rel += m.abs_rel;
        mean.sq_rel += m.sq_rel;
        mean.rmse += m.rmse;
        mean.rmse_log += m.rmse_log;
        mean.delta1 += m.delta1;
        mean.delta2 += m.delta2;
        mean.delta3 += m.delta3;
        mean.n_valid += m.n_valid;
    }
    const double nf = static_cast<double>(per_frame.size());
    mean.abs_rel /= nf;
    mean.sq_rel /= nf;
    mean.rmse /= nf;
    mean.rmse_log /= nf;
    mean.delta1 /= nf;
    mean.delta2 /= nf;
    mean.delta3 /= nf;
    ev.depth_metrics_json = json{{"frames", frames}, {"mean", metrics_to_json(mean)}};
    ev.depth_mean = mean;

    // poses
    std::vector<PoseSE3> pred_poses = read_poses_csv(pred_dir / "poses.csv");
    if (pred_poses.size() != gt_poses.size())
        throw std::runtime_error("pose count mismatch: " + std::to_string(pred_poses.size()) + " predicted vs " +
                                 std::to_string(gt_poses.size()) + " ground truth");
    if (config.eval.align_scale) {
        const auto raw_positions = accumulate_trajectory(pred_poses);
        const double s = trajectory_scale(raw_positions, gt_positions);
        for (PoseSE3& p : pred_poses)
            for (double& t : p.translation) t *= s;
    }
    ev.pose = pose_errors(pred_poses, gt_poses, config.eval.rotation_norm, config.eval.trajectory_norm);
    ev.positions = accumulate_trajectory(pred_poses);

    const fs::path intr_file = pred_dir / "intrinsics.json";
    if (fs::exists(intr_file)) {
        ev.intrinsics = read_intrinsics_json(intr_file);
        ev.has_intrinsics = true;
    }
    return ev;
}

json pose_errors_json(const PoseErrors& p) {
    return json{{"rotation_error", {{"mean", p.rotation.mean}, {"std", p.rotation.std}}},
                {"trajectory_error", {{"mean", p.trajectory.mean}, {"std", p.trajectory.std}}}};
}

}  // namespace

void cmd_synth(const ExperimentConfig& config, const fs::path& out_dir) {
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) throw std::runtime_error("cannot create output directory: " + out_dir.string());

    const Scene scene = make_scene(config.scene, config.intrinsics_gt, config.image);
    const std::vector<PoseSE3> abs_poses = config.trajectory_poses();
    const std::vector<SequenceFrame> frames = make_sequence(scene, abs_poses, config.intrinsics_gt, config.image);

    for (std::size_t k = 0; k < frames.size(); ++k) {
        write_ppm(out_dir / (frame_name(static_cast<int>(k)) + ".ppm"), frames[k].image);
        write_pfm(out_dir / (frame_name(static_cast<int>(k)) + ".pfm"), gray_of(frames[k].image));
        write_pfm(out_dir / (depth_name(static_cast<int>(k)) + ".pfm"), frames[k].depth);
    }
    const std::vector<PoseSE3> steps = relative_steps(abs_poses);
    write_poses_csv(out_dir / "poses.csv", steps);
    write_intrinsics_json(out_dir / "intrinsics.json", config.intrinsics_gt);
    config.save(out_dir / "config.json");
}

void cmd_optimize(const ExperimentConfig& config, const fs::path& data_dir, const fs::path& out_dir,
                  const std::string& ablation) {
    if (ablation != "baseline" && ablation != "camera" && ablation != "camera+costvolume")
        throw std::invalid_argument("unknown ablation '" + ablation +
                                    "' (expected baseline, camera or camera+costvolume)");
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) throw std::runtime_error("cannot create output directory: " + out_dir.string());

    const std::vector<Tensor> frames = load_frames(data_dir, 3);
    const Intrinsics given = read_intrinsics_json(data_dir / "intrinsics.json");

    RecoveryProblem scaffold;
    scaffold.grid = {frames[0].shape()[1], frames[0].shape()[0]};
    scaffold.weights = config.weights;
    scaffold.aggregate = config.aggregate();
    scaffold.depth_init_value = config.optimizer.depth_init;
    scaffold.free_depth = true;
    scaffold.free_pose = true;
    scaffold.cost_volume = config.cost_volume;
    if (ablation == "baseline") {
        scaffold.free_intrinsics = false;
        scaffold.intrinsics_init = given;  // "given intrinsics"
        scaffold.cost_volume.enabled = false;
    } else if (ablation == "camera") {
        scaffold.free_intrinsics = true;
        scaffold.intrinsics_init = config.intrinsics_init;
        scaffold.cost_volume.enabled = false;
    } else {
        scaffold.free_intrinsics = true;
        scaffold.intrinsics_init = config.intrinsics_init;
        scaffold.cost_volume.enabled = true;
    }

    const SequenceRecovery rec = recover_sequence(frames, scaffold, config.solve_options());

    for (std::size_t k = 0; k < rec.depths.size(); ++k)
        write_pfm(out_dir / (depth_name(static_cast<int>(k) + 1) + ".pfm"), rec.depths[k]);
    write_poses_csv(out_dir / "poses.csv", rec.steps);
    write_intrinsics_json(out_dir / "intrinsics.json", rec.intrinsics);
    write_text(out_dir / "trace.csv", trace_csv(rec.raw.trace));

    json summary;
    summary["ablation"] = ablation;
    summary["converged"] = rec.raw.converged;
    summary["steps_run"] = rec.raw.steps_run;
    summary["stop_reason"] = rec.raw.stop_reason;
    summary["warnings"] = rec.raw.warnings;
    summary["final_total"] = rec.raw.trace.empty() ? 0.0 : rec.raw.trace.back().total;
    summary["config"] = config.to_json();
    write_text(out_dir / "summary.json", summary.dump(2) + "\n");
}

void cmd_eval(const ExperimentConfig& config, const fs::path& pred_dir, const fs::path& gt_dir,
              const fs::path& out_dir, const fs::path& pred2_dir) {
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) throw std::runtime_error("cannot create output directory: " + out_dir.string());

    const std::vector<PoseSE3> gt_poses = read_poses_csv(gt_dir / "poses.csv");
    const std::vector<Vec3> gt_positions = accumulate_trajectory(gt_poses);
    const Intrinsics gt_intr = read_intrinsics_json(gt_dir / "intrinsics.json");

    const PredEval ev = evaluate_prediction(config, pred_dir, gt_dir, gt_poses, gt_positions);

    json metrics;
    metrics["depth"] = ev.depth_metrics_json;
    metrics["pose"] = pose_errors_json(ev.pose);
    metrics["intrinsics"] = json{{"gt", {{"fx", gt_intr.fx}, {"fy", gt_intr.fy}, {"cx", gt_intr.cx}, {"cy", gt_intr.cy}}}};
    if (ev.has_intrinsics) {
        const IntrinsicError err = intrinsic_error(ev.intrinsics, gt_intr);
        metrics["intrinsics"]["pred"] =
            json{{"fx", ev.intrinsics.fx}, {"fy", ev.intrinsics.fy}, {"cx", ev.intrinsics.cx}, {"cy", ev.intrinsics.cy}};
        metrics["intrinsics"]["abs_error"] = json{{"fx", err.fx}, {"fy", err.fy}, {"cx", err.cx}, {"cy", err.cy}};
        metrics["intrinsics"]["mean_abs_error"] = err.mean();
    }

    std::vector<std::vector<Vec3>> tracks{gt_positions, ev.positions};
    std::vector<std::string> colors{"#222222", "#1f6fd6"};
    std::vector<std::string> labels{"ground truth", "prediction"};

    if (!pred2_dir.empty()) {
        const PredEval ev2 = evaluate_prediction(config, pred2_dir, gt_dir, gt_poses, gt_positions);
        metrics["pred2"] = json{{"depth", ev2.depth_metrics_json}, {"pose", pose_errors_json(ev2.pose)}};
        if (ev2.has_intrinsics) {
            const IntrinsicError err2 = intrinsic_error(ev2.intrinsics, gt_intr);
            metrics["pred2"]["intrinsics"] = json{{"mean_abs_error", err2.mean()}};
        }
        tracks.push_back(ev2.positions);
        colors.push_back("#d6421f");
        labels.push_back("prediction 2");
    }

    write_text(out_dir / "metrics.json", metrics.dump(2) + "\n");
    write_text(out_dir / "table.txt", metrics_table(ev.depth_mean));
    write_text(out_dir / "trajectory.svg", trajectory_svg(tracks, colors, labels));

    std::ostringstream traj_csv;
    traj_csv << "frame,pred_x,pred_y,pred_z,gt_x,gt_y,gt_z\n";
    for (std::size_t i = 0; i < gt_positions.size(); ++i) {
        traj_csv << i;
        for (int c = 0; c < 3; ++c) traj_csv << "," << format_double(ev.positions[i][c]);
        for (int c = 0; c < 3; ++c) traj_csv << "," << format_double(gt_positions[i][c]);
        traj_csv << "\n";
    }
    write_text(out_dir / "trajectory.csv", traj_csv.str());
}

GradcheckResult cmd_gradcheck(const GradcheckOptions& opts) {
    if (opts.term != "all" && opts.term != "data" && opts.term != "rs" && opts.term != "ax" && opts.term != "es")
        throw std::invalid_argument("gradcheck: unknown term '" + opts.term +
                                    "' (expected all, data, rs, ax or es)");
    const PixelGrid grid{opts.size, opts.size};
    grid.validate();
    const Intrinsics intr{0.82, 1.02, 0.5, 0.5};
    std::mt19937_64 rng(opts.seed * 0x9e3779b97f4a7c15ull + 17);
    std::uniform_real_distribution<double> unit(0.0, 1.0);

    SceneSpec spec;
    spec.kind = SceneKind::slanted_plane;
    spec.seed = opts.seed + 101;
    spec.depth = 4.0 + 2.0 * unit(rng);
    spec.slant = 0.25 + 0.2 * unit(rng);
    spec.texture = TexturePreset::contrast;
    const Scene scene = make_scene(spec, intr, grid);

    const PoseSE3 pose{{0.02 * (unit(rng) - 0.5), 0.05 * (unit(rng) - 0.5), 0.02 * (unit(rng) - 0.5)},
                       {0.15 * (unit(rng) - 0.5), 0.06 * (unit(rng) - 0.5), 0.10 * (unit(rng) - 0.5)}};
    const RenderedPair pair = make_pair(scene, pose, intr, grid);

    // evaluation point: near but off the ground truth, smooth nonzero C
    const int H = grid.height, W = grid.width;
    std::vector<double> depth0 = pair.gt_depth.data();
    for (double& d : depth0) d *= 1.0 + 0.05 * (unit(rng) - 0.5);
    std::vector<double> calib0(static_cast<std::size_t>(H) * W);
    const double calib_phase = 6.28318530717958647 * unit(rng);
    for (int i = 0; i < H; ++i)
        for (int j = 0; j < W; ++j)
            calib0[static_cast<std::size_t>(i) * W + j] = 0.05 * std::sin(0.37 * j + 0.21 * i + calib_phase) + 0.02;
    auto pose0 = pose.as_array();
    for (double& v : pose0) v += 0.01 * (unit(rng) - 0.5);
    const std::array<double, 4> intr0{intr.fx + 0.03, intr.fy - 0.04, intr.cx + 0.01, intr.cy - 0.01};
    // flow stand-in: a warp from a slightly different pose
    PoseSE3 flow_pose = pose;
    flow_pose.translation[0] += 0.02;

    LossWeights w;
    if (opts.term != "all") {
        w.kappa = 1.0;
        w.lambda1 = opts.term == "rs" ? 1.0 : 0.0;
        w.lambda2 = opts.term == "ax" ? 1.0 : 0.0;
        w.lambda3 = opts.term == "es" ? 1.0 : 0.0;
    }
    const bool data_only = opts.term == "data";

    auto eval_loss = [&](const Tensor& depth, const Tensor& pose6, const Tensor& intr4,
                         const Tensor& calib) -> Tensor {
        SupervisionInputs inp;
        inp.target = pair.target;
        inp.views = {synthesize_target(pair.source, depth, pose6, intr4, grid)};
        inp.flow_view = synthesize_target(pair.source, depth, pose_tensor(flow_pose), intr4, grid);
        inp.calibration = calib;
        inp.visibility = pair.gt_visibility;
        if (data_only) return data_fidelity(inp, w);
        LossBreakdown bd = total_loss(inp, depth, nullptr, w);
        if (opts.term == "all") return bd.total;
        if (opts.term == "rs") return bd.residual_smooth;
        if (opts.term == "ax") return bd.auxiliary;
        return bd.edge_smooth;
    };

    const Tensor depth_at = Tensor::of({H, W}, depth0);
    const Tensor pose_at = Tensor::of({6}, std::vector<double>(pose0.begin(), pose0.end()));
    const Tensor intr_at = Tensor::of({4}, std::vector<double>(intr0.begin(), intr0.end()));
    const Tensor calib_at = Tensor::of({H, W}, calib0);

    struct Check {
        const char* name;
        std::function<Tensor(const Tensor&)> fn;
        const Tensor* at;
    };
    const std::vector<Check> checks{
        {"depth", [&](const Tensor& p) { return eval_loss(p, pose_at, intr_at, calib_at); }, &depth_at},
        {"pose", [&](const Tensor& p) { return eval_loss(depth_at, p, intr_at, calib_at); }, &pose_at},
        {"intrinsics", [&](const Tensor& p) { return eval_loss(depth_at, pose_at, p, calib_at); }, &intr_at},
        {"calibration", [&](const Tensor& p) { return eval_loss(depth_at, pose_at, intr_at, p); }, &calib_at},
    };

    GradcheckResult result;
    result.pass = true;
    std::ostringstream out;
    out << "gradient check: term=" << opts.term << " seed=" << opts.seed << " tol=" << opts.tolerance
        << " grid=" << W << "x" << H << "\n";
    for (const Check& c : checks) {
        const FiniteDiffReport rep = finite_diff_check(c.fn, *c.at, 1e-5, opts.tolerance, opts.seed, 32);
        const bool ok = rep.pass && rep.checked > 0;
        result.pass = result.pass && ok;
        char line[256];
        std::snprintf(line, sizeof(line),
                      "  %-12s checked %3d  non-smooth skipped %2d  max rel err %.3e  %s\n", c.name,
                      rep.checked, rep.skipped, rep.max_rel_error, ok ? "PASS" : "FAIL");
        out << line;
    }
    out << (result.pass ? "all checks passed\n" : "FAILURES present\n");
    result.report = out.str();
    return result;
}

}  // namespace dsfm
