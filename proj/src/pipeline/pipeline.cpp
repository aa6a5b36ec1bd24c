#include "rollvid/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "rollvid/ops.hpp"
#include "rollvid/rollout.hpp"
#include "rollvid/serialize.hpp"

namespace rollvid::pipe {

using nlohmann::json;

namespace {

Tensor rows(const Tensor& x, std::int64_t begin, std::int64_t end) {
    const auto per = x.numel() / x.dim(0);
    Shape s = x.shape();
    s[0] = end - begin;
    return ops::slice_rows(x.reshape({x.dim(0), per}), begin, end).reshape(s);
}

bool starts_with(const std::string& s, const char* p) { return s.rfind(p, 0) == 0; }

int severity(deg::Kind k) { return k == deg::Kind::generation ? 2 : k == deg::Kind::encoding ? 1 : 0; }

}  // namespace

StageConfig StageConfig::defaults(int stage) {
    StageConfig c;
    c.stage = stage;
    c.batch = 16;  // 16 devices x 1 clip
    switch (stage) {
        case 0:
            c.iterations = 6000;
            c.lr = 1e-3;
            c.batch = 4;
            c.first_dropout = 0.1;
            break;
        case 1:
            c.iterations = 300;
            c.lr = 1e-4;
            break;
        case 2:
            c.iterations = 100;
            c.lr = 1e-4;
            c.warmup = c.iterations * 2 / 3;
            c.frame_degrade = true;
            c.feature_alpha = ctrl::kFeatureAlpha;
            c.data_beta = ctrl::kDataBeta;
            break;
        case 3:
            c.iterations = 200;
            c.lr = 5e-5;
            c.frame_degrade = true;
            c.feature_alpha = ctrl::kFeatureAlpha;
            c.data_beta = ctrl::kDataBeta;
            c.history = true;
            c.boundary = hist::BoundaryMode::loss;
            break;
        default: throw contract_error("stage must be 0, 1, 2 or 3");
    }
    return c;
}

double StageConfig::degradation_ramp(std::int64_t iter) const {
    if (iter < warmup) return 0.0;
    if (warmup == 0) return 1.0;
    return std::min(1.0, static_cast<double>(iter - warmup + 1) / static_cast<double>(iterations - warmup));
}

void StageConfig::validate() const {
    if (stage < 0 || stage > 3) throw contract_error("stage must be 0, 1, 2 or 3");
    if (iterations < 1 || batch < 1) throw contract_error("stage: iterations and batch must be positive");
    if (warmup < 0 || warmup >= iterations) throw contract_error("stage: warmup must be below the iteration count");
    if (!(lr > 0)) throw contract_error("stage: learning rate must be positive");
    if (feature_alpha < 0 || feature_alpha > 1 || data_beta < 0 || data_beta > 1 || first_dropout < 0 || first_dropout > 1)
        throw contract_error("stage: probabilities must lie in [0, 1]");
    if (hist_max < 0) throw contract_error("stage: hist_max must be non-negative");
    if (force_n_hist && (*force_n_hist < 0 || *force_n_hist > hist_max)) throw contract_error("stage: forced N_H outside [0, hist_max]");
    if (stage == 0 && (frame_degrade || feature_alpha > 0 || data_beta > 0 || history))
        throw contract_error("stage 0 trains the base without controls, history or degradation");
    degradation.validate();
}

bool StageConfig::trainable(const std::string& p) const {
    if (stage == 0) return starts_with(p, "base.");
    if (starts_with(p, "ctrl.")) return true;
    // self-attention of the base blocks opens up with history
    return stage == 3 && starts_with(p, "base.block") && p.find(".attn.") != std::string::npos;
}

json StageConfig::to_json() const {
    json j{{"stage", stage},
           {"iterations", iterations},
           {"lr", lr},
           {"weight_decay", weight_decay},
           {"batch", batch},
           {"warmup", warmup},
           {"frame_degrade", frame_degrade},
           {"feature_alpha", feature_alpha},
           {"data_beta", data_beta},
           {"history", history},
           {"hist_max", hist_max},
           {"force_n_hist", force_n_hist ? json(*force_n_hist) : json(nullptr)},
           {"boundary", hist::boundary_mode_name(boundary)},
           {"first_dropout", first_dropout},
           {"degradation", degradation.to_json()},
           {"temporal", {{"deg", temporal.deg}, {"gt", temporal.gt}, {"cons", temporal.cons}}},
           {"checkpoint_every", checkpoint_every}};
    return j;
}

StageConfig StageConfig::from_json(const json& j) {
    if (!j.is_object()) throw contract_error("stage config must be an object");
    StageConfig c = defaults(j.value("stage", 1));
    for (const auto& [k, v] : j.items()) {
        if (k == "stage") continue;
        else if (k == "iterations") c.iterations = v.get<int>();
        else if (k == "lr") c.lr = v.get<double>();
        else if (k == "weight_decay") c.weight_decay = v.get<double>();
        else if (k == "batch") c.batch = v.get<int>();
        else if (k == "warmup") c.warmup = v.get<int>();
        else if (k == "frame_degrade") c.frame_degrade = v.get<bool>();
        else if (k == "feature_alpha") c.feature_alpha = v.get<double>();
        else if (k == "data_beta") c.data_beta = v.get<double>();
        else if (k == "history") c.history = v.get<bool>();
        else if (k == "hist_max") c.hist_max = v.get<int>();
        else if (k == "force_n_hist") c.force_n_hist = v.is_null() ? std::nullopt : std::optional<int>(v.get<int>());
        else if (k == "boundary") c.boundary = hist::boundary_mode_from(v.get<std::string>());
        else if (k == "first_dropout") c.first_dropout = v.get<double>();
        else if (k == "degradation") c.degradation = deg::DegradationConfig::from_json(v);
        else if (k == "temporal") {
            for (const auto& [tk, tv] : v.items()) {
                if (tk == "deg") c.temporal.deg = tv.get<double>();
                else if (tk == "gt") c.temporal.gt = tv.get<double>();
                else if (tk == "cons") c.temporal.cons = tv.get<double>();
                else throw contract_error("unknown temporal weight '" + tk + "'");
            }
        } else if (k == "checkpoint_every") c.checkpoint_every = v.get<int>();
        else throw contract_error("unknown stage key '" + k + "'");
    }
    c.validate();
    return c;
}

Dataset build_dataset(const std::vector<scene::SceneClip>& corpus, const ae::Autoencoder& ae, std::int64_t clip_frames,
                      std::uint64_t seed) {
    if (corpus.empty()) throw contract_error("build_dataset: empty corpus");
    NoGradGuard ng;
    Dataset d;
    d.clip_frames = clip_frames;
    for (std::size_t i = 0; i < corpus.size(); ++i) {
        const auto& c = corpus[i];
        const auto F = c.rgb.dim(0);
        if (F < clip_frames) throw contract_error("build_dataset: clip shorter than the training window");
        const auto a = F - clip_frames;  // anchor index
        TrainClip t;
        t.first_rgb = rows(c.rgb, a, a + 1);
        t.hist_rgb = rows(c.rgb, 0, a + 1);
        t.z_window = ae.encode(rows(c.rgb, a, F));
        t.depth_norm = rows(roll::global_normalize(c.depth), a, F);
        Rng pts(seed, "points-" + std::to_string(i));
        t.c_dense = ctrl::encode_dense(ae, t.depth_norm);
        t.c_sparse = ctrl::encode_sparse(
            ae, roll::recompute_sparse_per_clip(c.spec, {a, F}, t.depth_norm, scene::kTrackGrid * scene::kTrackGrid, pts));
        d.clips.push_back(std::move(t));
    }
    return d;
}

Sample draw_sample(const Dataset& data, const ae::Autoencoder& ae, const StageConfig& cfg, std::int64_t iter,
                   const deg::GenContext* gen, Rng& rng) {
    NoGradGuard ng;
    Sample s;
    s.clip = static_cast<std::size_t>(rng.below(data.clips.size()));
    const auto& c = data.clips[s.clip];
    s.t = static_cast<int>(rng.range(1, diff::NoiseSchedule::linear().steps - 1));
    s.z0 = c.z_window;
    s.z_gt0 = rows(c.z_window, 0, 1);
    s.eps = Tensor::from(c.z_window.shape(), rng.normal_vector(static_cast<std::size_t>(c.z_window.numel())));
    const double ramp = cfg.degradation_ramp(iter);
    const bool active = ramp > 0;

    if (cfg.stage == 0) {
        if (!rng.bernoulli(cfg.first_dropout)) s.pack.z_first = ae.encode(c.first_rgb);
        return s;
    }

    s.pack.c_dense = c.c_dense;
    s.pack.c_sparse = c.c_sparse;
    if (active && cfg.data_beta > 0) {
        const auto d = ctrl::apply_data_degradation(c.depth_norm, cfg.data_beta * ramp, rng, &s.data_draw);
        if (s.data_draw.applied) s.pack.c_dense = ctrl::encode_dense(ae, d);
    }
    if (active && cfg.feature_alpha > 0) {
        s.pack.dense_scale = ctrl::draw_feature_scale(cfg.feature_alpha * ramp, rng);
        s.feature_degraded = s.pack.dense_scale != 1.0f;
    }

    hist::AssembleOptions o;
    o.hist_max = cfg.history ? cfg.hist_max : 0;
    o.force_n_hist = cfg.history ? cfg.force_n_hist : std::optional<int>(0);
    o.degrade = active && cfg.frame_degrade;
    o.degradation = cfg.degradation;
    o.degradation.p_apply *= ramp;
    auto a = hist::assemble_condition(ae, c.first_rgb, c.hist_rgb, {}, {}, o, gen, rng);
    s.pack.z_first = a.pack.z_first;
    s.pack.z_hist = a.pack.z_hist;
    s.pack.n_hist = a.pack.n_hist;
    s.first_choice = a.first_choice;
    s.hist_choice = a.hist_choice;
    return s;
}

LossTerms compute_loss(const ctrl::ControlledModel& model, const Sample& s, const StageConfig& cfg) {
    static const auto sched = diff::NoiseSchedule::linear();
    const auto F = s.z0.dim(0);
    const auto weights = cfg.boundary == hist::BoundaryMode::loss ? hist::boundary_frame_weights(static_cast<std::size_t>(F))
                                                                  : std::vector<float>{};
    const auto z_t = diff::add_noise(sched, s.z0, s.t, s.eps);
    const auto eps_hat = model.forward(z_t, s.t, s.pack);
    LossTerms L;
    L.total = diff::frame_weighted_mse(eps_hat, s.eps, weights);
    L.eps = L.total.value();
    if (cfg.history && s.pack.n_hist > 0) {
        const auto z_hat0 = rows(diff::predict_x0(sched, z_t, s.t, eps_hat), 0, 1);
        const auto last = rows(s.pack.z_hist, s.pack.n_hist - 1, s.pack.n_hist);
        const auto T = hist::temporal_losses(z_hat0, last, s.pack.z_first, s.z_gt0, cfg.temporal);
        L.cons = T.cons.value();
        L.deg = T.deg.value();
        L.gt = T.gt.value();
        L.temp = T.temp.value();
        L.total = ops::add(L.total, T.temp);
    }
    return L;
}

std::string log_header() { return "stage,iter,loss_eps,L_cons,L_deg,L_gt,L_temp,degradation_kind,feature_degraded,data_degraded"; }

std::string log_row(const StepRecord& r) {
    std::ostringstream o;
    o.precision(9);
    o << r.stage << ',' << r.iter << ',' << r.eps << ',' << r.cons << ',' << r.deg << ',' << r.gt << ',' << r.temp << ','
      << r.degradation << ',' << (r.feature ? 1 : 0) << ',' << (r.data ? 1 : 0);
    return o.str();
}

ctrl::ControlledModel copy_model(const ctrl::ControlledModel& m) { return ctrl::ControlledModel::from_checkpoint(m.to_checkpoint()); }

diff::Backbone copy_backbone(const diff::Backbone& b) {
    ctrl::ControlledModel tmp;
    tmp.base = b;
    return copy_model(tmp).base;
}

ctrl::ControlledModel attach_controls(const ctrl::ControlledModel& base_only, Rng& rng, int control_blocks) {
    auto m = copy_model(base_only);
    m.ctrl = ctrl::half_copy_init(m.base, control_blocks, rng);
    return m;
}

Trainer::Trainer(const Dataset& data, const ae::Autoencoder& ae, ctrl::ControlledModel model, StageConfig cfg, std::uint64_t seed)
    : data_(&data),
      ae_(&ae),
      model_(std::make_unique<ctrl::ControlledModel>(std::move(model))),
      frozen_(std::make_unique<diff::Backbone>(copy_backbone(model_->base))),
      cfg_(std::move(cfg)),
      seed_(seed),
      opt_(AdamW::Options{cfg_.lr, 0.9, 0.999, 1e-8, cfg_.weight_decay}) {
    cfg_.validate();
    if (cfg_.stage >= 1 && !model_->ctrl.ready()) throw contract_error("stage " + std::to_string(cfg_.stage) + " needs control branches");
    if (cfg_.stage == 0 && model_->ctrl.ready()) throw contract_error("stage 0 trains the base alone");
    if (data.clips.empty()) throw contract_error("trainer: empty dataset");
    for (const auto& p : model_->params()) p.tensor->set_requires_grad(cfg_.trainable(p.name));
    for (const auto& p : frozen_->params()) p.tensor->set_requires_grad(false);
    const diff::Backbone* fb = frozen_.get();
    gen_.frozen = [fb](const Tensor& z, int t, const ConditionPack& p) { return fb->forward(z, t, p); };
}

StepRecord Trainer::step() {
    StepRecord r;
    r.stage = cfg_.stage;
    r.iter = iter_;
    const auto params = model_->params();
    zero_grads(params);
    Tensor total;
    int worst = 0;
    for (int b = 0; b < cfg_.batch; ++b) {
        Rng rng(seed_, "stage" + std::to_string(cfg_.stage) + "/iter" + std::to_string(iter_) + "/item" + std::to_string(b));
        const auto s = draw_sample(*data_, *ae_, cfg_, iter_, &gen_, rng);
        const auto L = compute_loss(*model_, s, cfg_);
        total = total.defined() ? ops::add(total, L.total) : L.total;
        const double n = cfg_.batch;
        r.eps += L.eps / n;
        r.cons += L.cons / n;
        r.deg += L.deg / n;
        r.gt += L.gt / n;
        r.temp += L.temp / n;
        for (const auto& ch : {s.first_choice, s.hist_choice})
            if (severity(ch.kind) > worst) {
                worst = severity(ch.kind);
                r.degradation = deg::kind_name(ch.kind);
            }
        r.feature = r.feature || s.feature_degraded;
        r.data = r.data || s.data_draw.applied;
    }
    total = ops::mul(total, 1.0f / static_cast<float>(cfg_.batch));
    r.loss = total.value();
    if (!std::isfinite(r.loss))
        throw numeric_error("non-finite loss at stage " + std::to_string(cfg_.stage) + " iteration " + std::to_string(iter_));
    total.backward();
    opt_.step(params, [this](const std::string& n) { return cfg_.trainable(n); });
    ++iter_;
    return r;
}

CheckpointData Trainer::checkpoint() const {
    auto ck = model_->to_checkpoint();
    append_params(ck, frozen_->params(), "frozen.");
    opt_.save(ck);
    ck.meta["trainer"] = {{"stage_config", cfg_.to_json()}, {"seed", seed_}, {"iter", iter_}};
    return ck;
}

Trainer Trainer::resume(const Dataset& data, const ae::Autoencoder& ae, const CheckpointData& ck) {
    if (!ck.meta.contains("trainer")) throw contract_error("checkpoint has no trainer state");
    const auto& tj = ck.meta.at("trainer");
    Trainer t(data, ae, ctrl::ControlledModel::from_checkpoint(ck), StageConfig::from_json(tj.at("stage_config")),
              tj.at("seed").get<std::uint64_t>());
    assign_params(t.frozen_->params(), ck, "frozen.");
    t.opt_.load(ck);
    t.iter_ = tj.at("iter").get<std::int64_t>();
    return t;
}

StageResult run_stage(Trainer& trainer, const std::filesystem::path& out, const json& provenance,
                      const std::function<void(const StepRecord&)>& progress) {
    std::filesystem::create_directories(out);
    const auto& cfg = trainer.config();
    const auto s = std::to_string(cfg.stage);
    const auto log_path = out / ("train_log_stage" + s + ".csv");
    const auto last = out / ("stage" + s + "_last.ck");
    // a resumed run drops log rows past the checkpoint cursor
    std::vector<std::string> kept;
    if (std::filesystem::exists(log_path)) {
        std::istringstream in(read_file(log_path));
        std::string line;
        std::getline(in, line);
        while (std::getline(in, line)) {
            const auto c1 = line.find(','), c2 = line.find(',', c1 + 1);
            if (std::stoll(line.substr(c1 + 1, c2 - c1 - 1)) < trainer.iter()) kept.push_back(line);
        }
    }
    std::string log = log_header() + "\n";
    for (const auto& l : kept) log += l + "\n";
    StageResult res;
    auto save_last = [&] {
        auto ck = trainer.checkpoint();
        ck.meta["provenance"] = provenance;
        save_checkpoint_file(last, ck);
        write_file_atomic(log_path, log);
    };
    while (trainer.iter() < cfg.iterations) {
        StepRecord r;
        try {
            r = trainer.step();
        } catch (const numeric_error& e) {
            write_file_atomic(log_path, log);
            throw numeric_error(std::string(e.what()) + "; last good checkpoint: " + last.string());
        }
        log += log_row(r) + "\n";
        res.log.push_back(r);
        if (progress) progress(r);
        if (trainer.iter() % cfg.checkpoint_every == 0 || trainer.iter() == cfg.iterations) save_last();
    }
    auto ck = trainer.model().to_checkpoint();
    ck.meta["stage"] = cfg.stage;
    ck.meta["stage_config"] = cfg.to_json();
    ck.meta["provenance"] = provenance;
    save_checkpoint_file(out / ("stage" + s + ".ck"), ck);
    res.model = copy_model(trainer.model());
    return res;
}

}  // namespace rollvid::pipe
