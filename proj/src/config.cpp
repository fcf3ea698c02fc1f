#include "diffsfm/config.hpp"

#include <fstream>

namespace dsfm {

using nlohmann::json;

namespace {

// Reject any key the defaults skeleton does not know, naming it fully.
void check_unknown_keys(const json& input, const json& skeleton, const std::string& path) {
    if (!input.is_object()) return;
    if (!skeleton.is_object())
        throw std::invalid_argument("config: '" + path + "' is not a section");
    for (const auto& [key, value] : input.items()) {
        const std::string full = path.empty() ? key : path + "." + key;
        if (!skeleton.contains(key)) throw std::invalid_argument("config: unknown key '" + full + "'");
        if (value.is_object()) check_unknown_keys(value, skeleton.at(key), full);
    }
}

double num(const json& j, const std::string& key) {
    if (!j.is_number()) throw std::invalid_argument("config: '" + key + "' must be a number");
    return j.get<double>();
}

int integer(const json& j, const std::string& key) {
    if (!j.is_number_integer()) throw std::invalid_argument("config: '" + key + "' must be an integer");
    return j.get<int>();
}

bool boolean(const json& j, const std::string& key) {
    if (!j.is_boolean()) throw std::invalid_argument("config: '" + key + "' must be true/false");
    return j.get<bool>();
}

std::string str(const json& j, const std::string& key) {
    if (!j.is_string()) throw std::invalid_argument("config: '" + key + "' must be a string");
    return j.get<std::string>();
}

Vec3 vec3(const json& j, const std::string& key) {
    if (!j.is_array() || j.size() != 3) throw std::invalid_argument("config: '" + key + "' must be [x,y,z]");
    return {num(j[0], key), num(j[1], key), num(j[2], key)};
}

NormBounds bounds2(const json& j, const std::string& key) {
    if (!j.is_array() || j.size() != 2) throw std::invalid_argument("config: '" + key + "' must be [lo,hi]");
    return {num(j[0], key), num(j[1], key)};
}

json intrinsics_json(const Intrinsics& k) {
    return json{{"fx", k.fx}, {"fy", k.fy}, {"cx", k.cx}, {"cy", k.cy}};
}

Intrinsics intrinsics_from(const json& j, const std::string& key) {
    return {num(j.at("fx"), key + ".fx"), num(j.at("fy"), key + ".fy"), num(j.at("cx"), key + ".cx"),
            num(j.at("cy"), key + ".cy")};
}

}  // namespace

std::string scene_kind_name(SceneKind k) {
    switch (k) {
        case SceneKind::fronto_plane: return "fronto_plane";
        case SceneKind::slanted_plane: return "slanted_plane";
        case SceneKind::two_planes: return "two_planes";
    }
    return "?";
}

SceneKind scene_kind_from(const std::string& name) {
    if (name == "fronto_plane") return SceneKind::fronto_plane;
    if (name == "slanted_plane") return SceneKind::slanted_plane;
    if (name == "two_planes") return SceneKind::two_planes;
    throw std::invalid_argument("config: unknown scene kind '" + name + "'");
}

std::string feature_mode_name(FeatureMode m) { return m == FeatureMode::identity ? "identity" : "gradient3"; }

FeatureMode feature_mode_from(const std::string& name) {
    if (name == "identity") return FeatureMode::identity;
    if (name == "gradient3") return FeatureMode::gradient3;
    throw std::invalid_argument("config: unknown feature mode '" + name + "'");
}

std::string texture_preset_name(TexturePreset p) { return p == TexturePreset::precise ? "precise" : "contrast"; }

TexturePreset texture_preset_from(const std::string& name) {
    if (name == "precise") return TexturePreset::precise;
    if (name == "contrast") return TexturePreset::contrast;
    throw std::invalid_argument("config: unknown texture preset '" + name + "'");
}

json ExperimentConfig::to_json() const {
    json j;
    j["image"] = {{"width", image.width}, {"height", image.height}};
    j["scene"] = {{"kind", scene_kind_name(scene.kind)},
                  {"seed", scene.seed},
                  {"depth", scene.depth},
                  {"slant", scene.slant},
                  {"fg_depth", scene.fg_depth},
                  {"texture", texture_preset_name(scene.texture)},
                  {"brightness", scene.brightness}};
    j["trajectory"] = {{"frames", trajectory.frames},
                       {"step", {trajectory.step[0], trajectory.step[1], trajectory.step[2]}},
                       {"rot", {trajectory.rot[0], trajectory.rot[1], trajectory.rot[2]}}};
    j["intrinsics"] = {{"gt", intrinsics_json(intrinsics_gt)}, {"init", intrinsics_json(intrinsics_init)}};
    j["weights"] = {{"alpha", weights.alpha},   {"kappa", weights.kappa}, {"lambda1", weights.lambda1},
                    {"lambda2", weights.lambda2}, {"lambda3", weights.lambda3}, {"mu", weights.mu}};
    j["cost_volume"] = {{"enabled", cost_volume.enabled},
                        {"d_min", cost_volume.d_min},
                        {"d_max", cost_volume.d_max},
                        {"n_planes", cost_volume.n_planes},
                        {"feature_mode", feature_mode_name(cost_volume.feature_mode)},
                        {"past_frames", cost_volume.past_frames},
                        {"tau", cost_volume.tau}};
    j["optimizer"] = {{"lr", optimizer.lr},
                      {"steps", optimizer.steps},
                      {"seed", optimizer.seed},
                      {"beta1", optimizer.beta1},
                      {"beta2", optimizer.beta2},
                      {"epsilon", optimizer.epsilon},
                      {"steps_per_epoch", optimizer.steps_per_epoch},
                      {"grad_norm_stop", optimizer.grad_norm_stop},
                      {"depth_init", optimizer.depth_init},
                      {"pose_init_jitter", optimizer.pose_init_jitter},
                      {"aggregate", optimizer.aggregate}};
    j["eval"] = {{"cap", eval.cap},
                 {"mm_scale", eval.mm_scale},
                 {"rotation_norm", {eval.rotation_norm.lo, eval.rotation_norm.hi}},
                 {"trajectory_norm", {eval.trajectory_norm.lo, eval.trajectory_norm.hi}},
                 {"align_scale", eval.align_scale}};
    return j;
}

ExperimentConfig ExperimentConfig::from_json(const json& input) {
    if (!input.is_object()) throw std::invalid_argument("config: top level must be an object");
    const json skeleton = ExperimentConfig{}.to_json();
    check_unknown_keys(input, skeleton, "");
    json j = skeleton;
    j.merge_patch(input);

    ExperimentConfig c;
    c.image.width = integer(j["image"]["width"], "image.width");
    c.image.height = integer(j["image"]["height"], "image.height");
    c.image.validate();

    const json& s = j["scene"];
    c.scene.kind = scene_kind_from(str(s["kind"], "scene.kind"));
    if (!s["seed"].is_number()) throw std::invalid_argument("config: 'scene.seed' must be a number");
    c.scene.seed = s["seed"].get<std::uint64_t>();
    c.scene.depth = num(s["depth"], "scene.depth");
    c.scene.slant = num(s["slant"], "scene.slant");
    c.scene.fg_depth = num(s["fg_depth"], "scene.fg_depth");
    c.scene.texture = texture_preset_from(str(s["texture"], "scene.texture"));
    c.scene.brightness = num(s["brightness"], "scene.brightness");

    const json& t = j["trajectory"];
    c.trajectory.frames = integer(t["frames"], "trajectory.frames");
    if (c.trajectory.frames < 1) throw std::invalid_argument("config: 'trajectory.frames' must be >= 1");
    c.trajectory.step = vec3(t["step"], "trajectory.step");
    c.trajectory.rot = vec3(t["rot"], "trajectory.rot");

    c.intrinsics_gt = intrinsics_from(j["intrinsics"]["gt"], "intrinsics.gt");
    c.intrinsics_init = intrinsics_from(j["intrinsics"]["init"], "intrinsics.init");
    c.intrinsics_gt.validate();
    c.intrinsics_init.validate();

    const json& w = j["weights"];
    c.weights.alpha = num(w["alpha"], "weights.alpha");
    c.weights.kappa = num(w["kappa"], "weights.kappa");
    c.weights.lambda1 = num(w["lambda1"], "weights.lambda1");
    c.weights.lambda2 = num(w["lambda2"], "weights.lambda2");
    c.weights.lambda3 = num(w["lambda3"], "weights.lambda3");
    c.weights.mu = num(w["mu"], "weights.mu");
    c.weights.validate();

    const json& cv = j["cost_volume"];
    c.cost_volume.enabled = boolean(cv["enabled"], "cost_volume.enabled");
    c.cost_volume.d_min = num(cv["d_min"], "cost_volume.d_min");
    c.cost_volume.d_max = num(cv["d_max"], "cost_volume.d_max");
    c.cost_volume.n_planes = integer(cv["n_planes"], "cost_volume.n_planes");
    c.cost_volume.feature_mode = feature_mode_from(str(cv["feature_mode"], "cost_volume.feature_mode"));
    c.cost_volume.past_frames = integer(cv["past_frames"], "cost_volume.past_frames");
    c.cost_volume.tau = num(cv["tau"], "cost_volume.tau");

    const json& o = j["optimizer"];
    c.optimizer.lr = num(o["lr"], "optimizer.lr");
    c.optimizer.steps = integer(o["steps"], "optimizer.steps");
    if (!o["seed"].is_number()) throw std::invalid_argument("config: 'optimizer.seed' must be a number");
    c.optimizer.seed = o["seed"].get<std::uint64_t>();
    c.optimizer.beta1 = num(o["beta1"], "optimizer.beta1");
    c.optimizer.beta2 = num(o["beta2"], "optimizer.beta2");
    c.optimizer.epsilon = num(o["epsilon"], "optimizer.epsilon");
    c.optimizer.steps_per_epoch = integer(o["steps_per_epoch"], "optimizer.steps_per_epoch");
    c.optimizer.grad_norm_stop = num(o["grad_norm_stop"], "optimizer.grad_norm_stop");
    c.optimizer.depth_init = num(o["depth_init"], "optimizer.depth_init");
    c.optimizer.pose_init_jitter = num(o["pose_init_jitter"], "optimizer.pose_init_jitter");
    c.optimizer.aggregate = str(o["aggregate"], "optimizer.aggregate");
    if (c.optimizer.aggregate != "min" && c.optimizer.aggregate != "mean")
        throw std::invalid_argument("config: 'optimizer.aggregate' must be min or mean");
    if (c.optimizer.steps < 1) throw std::invalid_argument("config: 'optimizer.steps' must be >= 1");
    if (!(c.optimizer.lr > 0.0)) throw std::invalid_argument("config: 'optimizer.lr' must be positive");
    if (c.cost_volume.n_planes < 2) throw std::invalid_argument("config: 'cost_volume.n_planes' must be >= 2");
    if (!(c.cost_volume.tau > 0.0)) throw std::invalid_argument("config: 'cost_volume.tau' must be positive");
    if (!(c.cost_volume.d_min > 0.0 && c.cost_volume.d_min < c.cost_volume.d_max))
        throw std::invalid_argument("config: cost_volume depth range needs 0 < d_min < d_max");

    const json& e = j["eval"];
    c.eval.cap = num(e["cap"], "eval.cap");
    c.eval.mm_scale = num(e["mm_scale"], "eval.mm_scale");
    c.eval.rotation_norm = bounds2(e["rotation_norm"], "eval.rotation_norm");
    c.eval.trajectory_norm = bounds2(e["trajectory_norm"], "eval.trajectory_norm");
    c.eval.align_scale = boolean(e["align_scale"], "eval.align_scale");
    return c;
}

ExperimentConfig ExperimentConfig::load(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot read config: " + path.string());
    json j;
    try {
        f >> j;
    } catch (const json::parse_error& e) {
        throw std::invalid_argument("config: " + path.string() + ": " + e.what());
    }
    return from_json(j);
}

void ExperimentConfig::save(const std::filesystem::path& path) const {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot write config: " + path.string());
    f << to_json().dump(2) << "\n";
}

void ExperimentConfig::set_key(const std::string& dotted_key, const std::string& value) {
    json j = to_json();
    json* cursor = &j;
    std::size_t start = 0;
    while (true) {
        const std::size_t dot = dotted_key.find('.', start);
        const std::string part = dotted_key.substr(start, dot == std::string::npos ? dot : dot - start);
        if (part.empty()) throw std::invalid_argument("config: bad key '" + dotted_key + "'");
        if (!cursor->is_object() || !cursor->contains(part))
            throw std::invalid_argument("config: unknown key '" + dotted_key + "'");
        cursor = &(*cursor)[part];
        if (dot == std::string::npos) break;
        start = dot + 1;
    }
    json parsed = json::parse(value, nullptr, false);
    if (parsed.is_discarded()) parsed = value;  // bare strings pass through
    *cursor = parsed;
    *this = from_json(j);
}

SolveOptions ExperimentConfig::solve_options() const {
    SolveOptions opts;
    opts.steps = optimizer.steps;
    opts.lr = optimizer.lr;
    opts.seed = optimizer.seed;
    opts.steps_per_epoch = optimizer.steps_per_epoch;
    opts.grad_norm_stop = optimizer.grad_norm_stop;
    opts.init_jitter = optimizer.pose_init_jitter;
    opts.adam = {optimizer.beta1, optimizer.beta2, optimizer.epsilon};
    return opts;
}

PhotoAggregate ExperimentConfig::aggregate() const {
    return optimizer.aggregate == "mean" ? PhotoAggregate::mean_over_sources : PhotoAggregate::min_over_sources;
}

std::vector<PoseSE3> ExperimentConfig::trajectory_poses() const {
    const PoseSE3 step{trajectory.rot, trajectory.step};
    std::vector<PoseSE3> abs;
    abs.push_back(PoseSE3::identity());
    for (int k = 1; k < trajectory.frames; ++k) abs.push_back(pose_compose(step, abs.back()));
    return abs;
}

}  // namespace dsfm
