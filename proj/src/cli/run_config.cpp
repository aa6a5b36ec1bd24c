#include "rollvid/run_config.hpp"

#include <cstdio>
#include <regex>

#include "rollvid/serialize.hpp"

#ifndef ROLLVID_VERSION
#define ROLLVID_VERSION "unknown"
#endif

namespace rollvid {

using nlohmann::json;

namespace {

// Overlays `user` onto `defaults`, refusing keys the defaults do not have.
void overlay(json& defaults, const json& user, const std::string& path) {
    if (!user.is_object()) throw contract_error("config: '" + path + "' must be an object");
    for (const auto& [k, v] : user.items()) {
        const auto here = path.empty() ? k : path + "." + k;
        if (!defaults.contains(k)) throw contract_error("config: unknown key '" + here + "'");
        auto& d = defaults[k];
        if (d.is_object() && v.is_object() && here.rfind("stages.", 0) != 0) overlay(d, v, here);
        else if (d.is_object() && v.is_object()) d = v;  // stage sections are checked by the stage parser
        else d = v;
    }
}

void flatten(const json& j, const std::string& path, std::vector<std::string>& out) {
    if (j.is_object() && !j.empty()) {
        for (const auto& [k, v] : j.items()) flatten(v, path.empty() ? k : path + "." + k, out);
    } else {
        out.push_back(path);
    }
}

bool paper_valued(const std::string& p) {
    static const std::vector<std::regex> pats{
        std::regex(R"(stages\.\d\.degradation\.(p_apply|p_encoding|k_min|k_max|t_set))"),
        std::regex(R"(stages\.[23]\.(feature_alpha|data_beta|frame_degrade))"),
        std::regex(R"(stages\.3\.(history|boundary))"),
        std::regex(R"(stages\.[123]\.batch)"),
        std::regex(R"(stages\.\d\.temporal\..*)"),
        std::regex(R"(constants\..*)"),
        std::regex(R"(rollout\.(overlap|global_norm|unified_noise))"),
        std::regex(R"(control_blocks)"),
    };
    for (const auto& r : pats)
        if (std::regex_match(p, r)) return true;
    return false;
}

json rollout_json(const roll::RolloutOptions& o) { return o.to_json(); }

roll::RolloutOptions rollout_from(const json& j) {
    roll::RolloutOptions o;
    o.clip_frames = j.at("clip_frames").get<std::int64_t>();
    o.overlap = j.at("overlap").get<std::int64_t>();
    o.t_start = j.at("t_start").get<int>();
    o.steps = j.at("steps").get<int>();
    o.hist_max = j.at("hist_max").get<int>();
    o.use_history = j.at("use_history").get<bool>();
    o.global_norm = j.at("global_norm").get<bool>();
    o.unified_noise = j.at("unified_noise").get<bool>();
    o.boundary = hist::boundary_mode_from(j.at("boundary").get<std::string>());
    o.num_points = j.at("num_points").get<int>();
    o.seed = j.at("seed").get<std::uint64_t>();
    return o;
}

}  // namespace

json fixed_constants() {
    return {{"percentiles", {5, 95}},
            {"boundary_weights", {hist::kBoundaryWeights[0], hist::kBoundaryWeights[1], hist::kBoundaryWeights[2]}},
            {"feature_lambda_range", {ctrl::kLambdaMin, 1.0}},
            {"fusion_scales", ctrl::kFusionScales},
            {"gen_degrade_max_t", deg::kGenMaxT},
            {"history_mask", "all-ones"}};
}

std::string code_version() { return ROLLVID_VERSION; }

json RunConfig::to_json() const {
    const auto& s = data.scene;
    json st = json::object();
    for (const auto& c : stages) st[std::to_string(c.stage)] = c.to_json();
    return {{"seed", seed},
            {"data",
             {{"train_clips", data.train_clips},
              {"train_seed", data.train_seed},
              {"frames", data.frames},
              {"height", data.height},
              {"width", data.width},
              {"scene",
               {{"min_shapes", s.min_shapes},
                {"max_shapes", s.max_shapes},
                {"max_speed", s.max_speed},
                {"min_size", s.min_size},
                {"max_size", s.max_size}}}}},
            {"autoencoder", {{"epochs", autoencoder.epochs}, {"batch", autoencoder.batch}, {"lr", autoencoder.lr}, {"seed", autoencoder.seed}}},
            {"backbone",
             {{"width", backbone.width},
              {"heads", backbone.heads},
              {"ff", backbone.ff},
              {"blocks", backbone.blocks},
              {"patch", backbone.patch},
              {"hist_max", backbone.hist_max},
              {"clip_frames", backbone.clip_frames}}},
            {"control_blocks", control_blocks},
            {"stages", st},
            {"rollout", rollout_json(rollout)},
            {"eval", {{"videos", eval.videos}, {"windows", eval.windows}, {"video_seed", eval.video_seed}, {"seeds", eval.seeds}}},
            {"constants", fixed_constants()}};
}

RunConfig RunConfig::from_json(const json& user) {
    const RunConfig def;
    json j = def.to_json();
    overlay(j, user, "");
    if (j.at("constants") != fixed_constants()) throw contract_error("config: the constants section cannot be changed");
    RunConfig c;
    try {
        c.seed = j.at("seed").get<std::uint64_t>();
        const auto& d = j.at("data");
        c.data.train_clips = d.at("train_clips").get<int>();
        c.data.train_seed = d.at("train_seed").get<std::uint64_t>();
        c.data.frames = d.at("frames").get<int>();
        c.data.height = d.at("height").get<int>();
        c.data.width = d.at("width").get<int>();
        const auto& s = d.at("scene");
        c.data.scene.min_shapes = s.at("min_shapes").get<int>();
        c.data.scene.max_shapes = s.at("max_shapes").get<int>();
        c.data.scene.max_speed = s.at("max_speed").get<float>();
        c.data.scene.min_size = s.at("min_size").get<float>();
        c.data.scene.max_size = s.at("max_size").get<float>();
        const auto& a = j.at("autoencoder");
        c.autoencoder.epochs = a.at("epochs").get<int>();
        c.autoencoder.batch = a.at("batch").get<int>();
        c.autoencoder.lr = a.at("lr").get<double>();
        c.autoencoder.seed = a.at("seed").get<std::uint64_t>();
        const auto& b = j.at("backbone");
        c.backbone.width = b.at("width").get<int>();
        c.backbone.heads = b.at("heads").get<int>();
        c.backbone.ff = b.at("ff").get<int>();
        c.backbone.blocks = b.at("blocks").get<int>();
        c.backbone.patch = b.at("patch").get<int>();
        c.backbone.hist_max = b.at("hist_max").get<int>();
        c.backbone.clip_frames = b.at("clip_frames").get<int>();
        c.control_blocks = j.at("control_blocks").get<int>();
        for (const auto& [k, v] : j.at("stages").items()) {
            auto sj = v;
            const int idx = std::stoi(k);
            if (idx < 0 || idx > 3 || k != std::to_string(idx)) throw contract_error("config: unknown stage '" + k + "'");
            // a partial stage section starts from that stage's defaults
            auto full = pipe::StageConfig::defaults(idx).to_json();
            for (const auto& [sk, sv] : sj.items()) {
                if (!full.contains(sk)) throw contract_error("config: unknown key 'stages." + k + "." + sk + "'");
                full[sk] = sv;
            }
            if (full.at("stage").get<int>() != idx) throw contract_error("config: stage section " + k + " names another stage");
            c.stages[static_cast<std::size_t>(idx)] = pipe::StageConfig::from_json(full);
        }
        for (const auto& [k, v] : j.at("rollout").items())
            if (!def.to_json().at("rollout").contains(k)) throw contract_error("config: unknown key 'rollout." + k + "'");
        c.rollout = rollout_from(j.at("rollout"));
        const auto& e = j.at("eval");
        c.eval.videos = e.at("videos").get<int>();
        c.eval.windows = e.at("windows").get<int>();
        c.eval.video_seed = e.at("video_seed").get<std::uint64_t>();
        c.eval.seeds = e.at("seeds").get<std::vector<std::uint64_t>>();
    } catch (const json::exception& e) {
        throw contract_error(std::string("config: ") + e.what());
    }
    c.validate();
    return c;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
    json j;
    try {
        j = json::parse(read_file(path));
    } catch (const json::exception& e) {
        throw contract_error("config " + path.string() + ": " + e.what());
    }
    return from_json(j);
}

void RunConfig::validate() const {
    if (data.train_clips < 1 || data.frames < backbone.clip_frames) throw contract_error("config: corpus clips must cover a training window");
    if (data.height != 32 || data.width != 32) throw contract_error("config: the toy models are built for 32x32 frames");
    if (autoencoder.epochs < 0 || autoencoder.batch < 1 || !(autoencoder.lr > 0)) throw contract_error("config: bad autoencoder settings");
    if (control_blocks < 1 || control_blocks > backbone.blocks) throw contract_error("config: control_blocks outside [1, blocks]");
    if (rollout.clip_frames != backbone.clip_frames) throw contract_error("config: rollout clip length differs from the backbone's");
    if (rollout.overlap < 0 || rollout.overlap >= rollout.clip_frames) throw contract_error("config: rollout overlap must be in [0, clip_frames)");
    if (rollout.hist_max > backbone.hist_max) throw contract_error("config: rollout history exceeds the backbone's positions");
    if (rollout.t_start < 1 || rollout.t_start > 49 || rollout.steps < 1) throw contract_error("config: bad sampler settings");
    if (eval.videos < 1 || eval.windows < 2 || eval.seeds.empty()) throw contract_error("config: eval needs videos, >= 2 windows and seeds");
    for (const auto& s : stages) {
        s.validate();
        if (s.history && s.hist_max > backbone.hist_max) throw contract_error("config: stage history exceeds the backbone's positions");
    }
    const auto& sc = data.scene;
    if (sc.min_shapes < 1 || sc.max_shapes < sc.min_shapes || !(sc.max_speed >= 0) || !(sc.min_size > 0) || sc.max_size < sc.min_size)
        throw contract_error("config: bad scene options");
}

std::string RunConfig::hash() const {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(to_json().dump())));
    return buf;
}

json RunConfig::provenance() const {
    std::vector<std::string> leaves;
    flatten(to_json(), "", leaves);
    json p = json::object();
    for (const auto& l : leaves) p[l] = paper_valued(l) ? "paper" : "toy";
    return p;
}

scene::CorpusConfig RunConfig::corpus_config() const {
    scene::CorpusConfig c;
    c.frames = data.frames;
    c.height = data.height;
    c.width = data.width;
    c.options = data.scene;
    return c;
}

}  // namespace rollvid
