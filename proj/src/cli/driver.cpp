#include "rollvid/driver.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <optional>
#include <sstream>

#include "rollvid/serialize.hpp"

namespace rollvid::driver {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void require(const fs::path& p, const std::string& what) {
    if (!fs::exists(p)) throw missing_prerequisite("missing prerequisite: " + what + " (" + p.string() + ")");
}

json provenance_of(const RunConfig& cfg) {
    return {{"config_hash", cfg.hash()}, {"code_version", code_version()}, {"seed", cfg.seed}};
}

std::vector<scene::SceneClip> load_data(const fs::path& data) {
    require(data / "manifest.json", "training corpus");
    return scene::load_corpus(data);
}

const bench::MetricsReport* find(const std::vector<bench::MetricsReport>& rs, const std::string& label, std::uint64_t seed) {
    for (const auto& r : rs)
        if (r.label == label && r.seed == seed) return &r;
    return nullptr;
}

}  // namespace

void write_run_meta(const fs::path& dir, const std::string& command, const RunConfig& cfg, const json& extra) {
    fs::create_directories(dir);
    json j{{"command", command},
           {"config", cfg.to_json()},
           {"config_hash", cfg.hash()},
           {"seed", cfg.seed},
           {"code_version", code_version()},
           {"provenance", cfg.provenance()},
           {"args", extra}};
    write_file_atomic(dir / ("run_meta_" + command + ".json"), j.dump(2) + "\n");
}

scene::CorpusManifest gen_data(const RunConfig& cfg, int count, std::uint64_t seed, const fs::path& out) {
    if (count < 1) throw contract_error("gen-data: count must be positive");
    auto m = scene::make_corpus(count, seed, out, cfg.corpus_config());
    write_run_meta(out, "gen-data", cfg, {{"count", count}, {"base_seed", seed}});
    return m;
}

ae::Autoencoder train_autoencoder(const RunConfig& cfg, const fs::path& data, const fs::path& run, const Progress& progress) {
    const auto corpus = load_data(data);
    fs::create_directories(run);
    ae::AeTrainOptions o;
    o.epochs = cfg.autoencoder.epochs;
    o.batch = cfg.autoencoder.batch;
    o.lr = cfg.autoencoder.lr;
    o.checkpoint = run / "ae.ck";
    Rng rng(cfg.autoencoder.seed, "ae");
    auto res = ae::train_ae(corpus, o, rng);
    if (progress)
        progress(json{{"event", "ae_done"}, {"initial_loss", res.initial_loss},
                      {"final_loss", res.epoch_losses.empty() ? res.initial_loss : res.epoch_losses.back()}}
                     .dump());
    write_run_meta(run, "train-ae", cfg, {{"data", data.string()}, {"epoch_losses", res.epoch_losses}});
    return std::move(res.ae);
}

ae::Autoencoder load_autoencoder(const fs::path& run) {
    require(run / "ae.ck", "trained autoencoder");
    return ae::Autoencoder::from_checkpoint(load_checkpoint_file(run / "ae.ck"));
}

fs::path stage_path(const fs::path& run, int stage) { return run / ("stage" + std::to_string(stage) + ".ck"); }

ctrl::ControlledModel load_stage(const fs::path& run, int stage) {
    const auto p = stage_path(run, stage);
    require(p, "stage " + std::to_string(stage) + " checkpoint");
    return ctrl::ControlledModel::from_checkpoint(load_checkpoint_file(p));
}

ctrl::ControlledModel train_stage(const RunConfig& cfg, int stage, const fs::path& data, const fs::path& run, bool resume,
                                  const Progress& progress) {
    if (stage < 0 || stage > 3) throw contract_error("train: stage must be in 0..3");
    const auto ae = load_autoencoder(run);
    const auto& sc = cfg.stages[static_cast<std::size_t>(stage)];
    const auto last = run / ("stage" + std::to_string(stage) + "_last.ck");
    if (stage > 0) require(stage_path(run, stage - 1), "stage " + std::to_string(stage - 1) + " checkpoint");
    if (resume) require(last, "stage " + std::to_string(stage) + " resume checkpoint");
    const auto ds = pipe::build_dataset(load_data(data), ae, cfg.backbone.clip_frames, cfg.data.train_seed);
    std::optional<pipe::Trainer> tr;
    if (resume) {
        tr.emplace(pipe::Trainer::resume(ds, ae, load_checkpoint_file(last)));
    } else {
        ctrl::ControlledModel m;
        if (stage == 0) {
            Rng rng(cfg.seed, "init");
            m.base = diff::Backbone::init(cfg.backbone, rng);
        } else if (stage == 1) {
            Rng rng(cfg.seed, "attach");
            m = pipe::attach_controls(load_stage(run, 0), rng, cfg.control_blocks);
        } else {
            m = load_stage(run, stage - 1);
        }
        tr.emplace(ds, ae, std::move(m), sc, cfg.seed);
    }
    auto& trainer = *tr;
    if (resume && trainer.config().to_json() != sc.to_json())
        throw contract_error("train --resume: the checkpoint was written with a different stage config");
    auto res = pipe::run_stage(trainer, run, provenance_of(cfg), [&](const pipe::StepRecord& r) {
        if (progress && (r.iter % 25 == 0 || r.iter + 1 == sc.iterations))
            progress(json{{"event", "step"}, {"stage", r.stage}, {"iter", r.iter}, {"loss", r.loss}, {"eps", r.eps}}.dump());
    });
    write_run_meta(run, "train-stage" + std::to_string(stage), cfg, {{"data", data.string()}, {"resume", resume}});
    return std::move(res.model);
}

scene::SceneClip eval_video(const RunConfig& cfg, std::uint64_t video_seed, int windows) {
    const auto total = roll::frames_for_windows(windows, cfg.rollout.clip_frames, cfg.rollout.overlap);
    return scene::gen_scene(scene::random_scene_spec(video_seed, static_cast<int>(total), cfg.data.height, cfg.data.width, cfg.data.scene));
}

json rollout(const RunConfig& cfg, const fs::path& run, int windows, std::uint64_t video_seed, const fs::path& out) {
    if (windows < 1) throw contract_error("rollout: clips must be positive");
    const auto ae = load_autoencoder(run);
    const auto model = load_stage(run, 3);
    const auto gt = eval_video(cfg, video_seed, windows);
    const auto plan = roll::plan_clips(gt.rgb.dim(0), cfg.rollout.clip_frames, cfg.rollout.overlap);
    const auto per = gt.rgb.numel() / gt.rgb.dim(0);
    std::vector<float> first(gt.rgb.data().begin(), gt.rgb.data().begin() + per);
    auto opts = cfg.rollout;
    opts.seed = cfg.seed;
    auto prov = provenance_of(cfg);
    prov["video_seed"] = video_seed;
    auto manifest = roll::write_rollout(out, model, ae, Tensor::from({1, 3, cfg.data.height, cfg.data.width}, std::move(first)),
                                        {gt.depth, gt.spec}, plan, opts, prov);
    write_run_meta(out, "rollout", cfg, {{"clips", windows}, {"video_seed", video_seed}});
    return manifest;
}

std::vector<bench::MetricsReport> evaluate_stage(const RunConfig& cfg, const fs::path& run, int stage, const fs::path& out) {
    if (stage < 1 || stage > 3) throw contract_error("eval: stage must be in 1..3");
    const auto ae = load_autoencoder(run);
    const auto model = load_stage(run, stage);
    const auto corpus = bench::make_eval_corpus(cfg.eval.videos, cfg.eval.windows, cfg.eval.video_seed, cfg.rollout.clip_frames,
                                                cfg.rollout.overlap, cfg.data.scene);
    auto opts = cfg.rollout;
    if (stage < 3) opts.use_history = false;
    std::vector<bench::MetricsReport> reps;
    for (auto seed : cfg.eval.seeds) {
        opts.seed = seed;
        reps.push_back(bench::evaluate(model, ae, corpus, opts, "stage" + std::to_string(stage), cfg.hash()));
    }
    bench::write_reports(out, reps);
    write_run_meta(out, "eval", cfg, {{"stage", stage}});
    return reps;
}

std::vector<bench::MetricsReport> ablate(const RunConfig& cfg, const fs::path& run, const std::vector<bench::Variant>& suite,
                                         const fs::path& out, const Progress& progress) {
    const auto ae = load_autoencoder(run);
    std::map<int, ctrl::ControlledModel> models;
    for (auto v : suite) {
        const int s = v == bench::Variant::stage1_only ? 1 : v == bench::Variant::stage2_only ? 2 : 3;
        if (!models.count(s)) models.emplace(s, load_stage(run, s));
    }
    auto get = [&](int s) { return models.count(s) ? &models.at(s) : nullptr; };
    const auto corpus = bench::make_eval_corpus(cfg.eval.videos, cfg.eval.windows, cfg.eval.video_seed, cfg.rollout.clip_frames,
                                                cfg.rollout.overlap, cfg.data.scene);
    std::vector<bench::MetricsReport> reps;
    for (auto v : suite) {
        auto part = bench::run_ablation({v}, {get(1), get(2), get(3)}, ae, corpus, cfg.rollout, cfg.eval.seeds, cfg.hash());
        if (progress)
            for (const auto& r : part)
                progress(json{{"event", "ablation"}, {"label", r.label}, {"seed", r.seed}, {"mean_seam", r.mean_seam},
                              {"drift_slope", r.drift_slope}}
                             .dump());
        reps.insert(reps.end(), part.begin(), part.end());
    }
    bench::write_reports(out, reps);
    write_run_meta(out, "ablate", cfg);
    return reps;
}

std::vector<TrendCheck> trend_checks(const std::vector<bench::MetricsReport>& summary) {
    std::vector<std::uint64_t> seeds;
    for (const auto& r : summary)
        if (r.label == "full" && std::find(seeds.begin(), seeds.end(), r.seed) == seeds.end()) seeds.push_back(r.seed);
    auto check = [&](const std::string& name, const std::vector<std::string>& labels, auto pred) {
        TrendCheck c{name};
        for (auto s : seeds) {
            std::vector<const bench::MetricsReport*> rs;
            for (const auto& l : labels) rs.push_back(find(summary, l, s));
            if (std::find(rs.begin(), rs.end(), nullptr) != rs.end()) continue;
            ++c.seeds;
            if (pred(rs)) ++c.wins;
        }
        // at least 4 of every 5 seeds
        c.pass = c.seeds >= 5 && 5 * c.wins >= 4 * c.seeds;
        return c;
    };
    using V = std::vector<const bench::MetricsReport*>;
    return {
        check("seam full < {no_global_norm, no_unified_noise} < no_both", {"full", "no_global_norm", "no_unified_noise", "no_both"},
              [](const V& r) {
                  return r[0]->mean_seam < r[1]->mean_seam && r[0]->mean_seam < r[2]->mean_seam && r[1]->mean_seam < r[3]->mean_seam &&
                         r[2]->mean_seam < r[3]->mean_seam;
              }),
        check("drift slope stage2 > stage1", {"stage1_only", "stage2_only"},
              [](const V& r) { return r[1]->drift_slope > r[0]->drift_slope; }),
        check("seam stage3 < stage2", {"stage2_only", "full"}, [](const V& r) { return r[1]->mean_seam < r[0]->mean_seam; }),
    };
}

std::vector<TrendCheck> report(const fs::path& summary_csv, const fs::path& out) {
    const auto rows = bench::read_summary(summary_csv);
    std::map<std::string, std::array<double, 4>> sums;
    std::map<std::string, int> counts;
    std::vector<std::string> order;
    for (const auto& r : rows) {
        if (!counts.count(r.label)) order.push_back(r.label);
        auto& s = sums[r.label];
        s[0] += r.mean_ssim;
        s[1] += r.mean_psnr;
        s[2] += r.mean_seam;
        s[3] += r.drift_slope;
        ++counts[r.label];
    }
    std::ostringstream csv;
    csv.precision(10);
    csv << "label,seeds,mean_ssim,mean_psnr,mean_seam,drift_slope\n";
    for (const auto& l : order) {
        const double n = counts[l];
        const auto& s = sums[l];
        csv << l << ',' << counts[l] << ',' << s[0] / n << ',' << s[1] / n << ',' << s[2] / n << ',' << s[3] / n << '\n';
    }
    auto checks = trend_checks(rows);
    csv << "\ncheck,wins,seeds,pass\n";
    for (const auto& c : checks) csv << c.name << ',' << c.wins << ',' << c.seeds << ',' << (c.pass ? "yes" : "no") << '\n';
    fs::create_directories(out);
    write_file_atomic(out / "comparison.csv", csv.str());
    return checks;
}

}  // namespace rollvid::driver
