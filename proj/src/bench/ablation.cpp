#include "rollvid/ablation.hpp"

#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "rollvid/metrics.hpp"
#include "rollvid/ops.hpp"
#include "rollvid/serialize.hpp"

namespace rollvid::bench {

namespace {

Tensor frame(const Tensor& video, std::int64_t f) {
    const auto per = video.numel() / video.dim(0);
    Shape s(video.shape().begin() + 1, video.shape().end());
    return ops::slice_rows(video.reshape({video.dim(0), per}), f, f + 1).reshape(s);
}

std::vector<std::string> split(const std::string& line) {
    std::vector<std::string> out;
    std::string cell;
    std::istringstream in(line);
    while (std::getline(in, cell, ',')) out.push_back(cell);
    return out;
}

}  // namespace

const char* variant_name(Variant v) {
    switch (v) {
        case Variant::full: return "full";
        case Variant::no_global_norm: return "no_global_norm";
        case Variant::no_unified_noise: return "no_unified_noise";
        case Variant::no_both: return "no_both";
        case Variant::stage1_only: return "stage1_only";
        case Variant::stage2_only: return "stage2_only";
    }
    return "?";
}

Variant variant_from(const std::string& s) {
    for (auto v : all_variants())
        if (s == variant_name(v)) return v;
    throw contract_error("unknown ablation variant '" + s + "'");
}

std::vector<Variant> all_variants() {
    return {Variant::full, Variant::no_global_norm, Variant::no_unified_noise, Variant::no_both, Variant::stage1_only,
            Variant::stage2_only};
}

std::vector<scene::SceneClip> make_eval_corpus(int videos, int windows, std::uint64_t base_seed, std::int64_t clip_frames,
                                               std::int64_t overlap, const scene::SceneOptions& opts) {
    const auto total = static_cast<int>(roll::frames_for_windows(windows, clip_frames, overlap));
    std::vector<scene::SceneClip> out;
    for (int i = 0; i < videos; ++i)
        out.push_back(scene::gen_scene(scene::random_scene_spec(base_seed + static_cast<std::uint64_t>(i), total, 32, 32, opts)));
    return out;
}

void MetricsReport::validate(std::size_t windows_per_video) const {
    std::map<int, std::size_t> per_video;
    for (const auto& c : clips) {
        ++per_video[c.video];
        if (!std::isfinite(c.ssim) || std::isnan(c.psnr)) throw numeric_error("metrics report '" + label + "': non-finite value");
    }
    for (const auto& [v, n] : per_video)
        if (n != windows_per_video) throw contract_error("metrics report '" + label + "': clip count differs from plan windows");
    for (const auto& s : seams)
        if (!std::isfinite(s.score)) throw numeric_error("metrics report '" + label + "': non-finite seam score");
}

MetricsReport evaluate(const ctrl::ControlledModel& model, const ae::Autoencoder& ae, const std::vector<scene::SceneClip>& corpus,
                       const roll::RolloutOptions& opts, const std::string& label, const std::string& config_hash) {
    if (corpus.empty()) throw contract_error("evaluate: empty corpus");
    MetricsReport rep;
    rep.label = label;
    rep.config_hash = config_hash;
    rep.seed = opts.seed;
    std::vector<std::vector<double>> per_index;
    double seam_sum = 0;
    for (std::size_t v = 0; v < corpus.size(); ++v) {
        const auto& gt = corpus[v];
        const auto T = gt.rgb.dim(0);
        const auto plan = roll::plan_clips(T, opts.clip_frames, opts.overlap);
        std::vector<float> video;
        video.reserve(static_cast<std::size_t>(gt.rgb.numel()));
        auto sink = [&](std::int64_t, const Tensor& f) { video.insert(video.end(), f.data().begin(), f.data().end()); };
        roll::autoregressive_rollout(model, ae, frame(gt.rgb, 0).reshape({1, 3, gt.spec.height, gt.spec.width}),
                                     {gt.depth, gt.spec}, plan, opts, sink);
        const auto vid = Tensor::from(gt.rgb.shape(), std::move(video));
        for (std::size_t w = 0; w < plan.size(); ++w) {
            const auto first = w == 0 ? 1 : plan[w].first + opts.overlap;
            ClipMetrics cm;
            cm.video = static_cast<int>(v);
            cm.clip = static_cast<int>(w);
            int n = 0;
            for (auto f = first; f < plan[w].second; ++f, ++n) {
                const auto a = frame(vid, f), b = frame(gt.rgb, f);
                cm.ssim += ssim(a, b);
                cm.psnr += psnr_capped(a, b);
            }
            cm.ssim /= n;
            cm.psnr /= n;
            rep.clips.push_back(cm);
            if (per_index.size() <= w) per_index.resize(w + 1);
            per_index[w].push_back(cm.ssim);
        }
        const auto seams = seam_discontinuity(vid, plan, opts.overlap);
        for (std::size_t s = 0; s < seams.size(); ++s) {
            rep.seams.push_back({static_cast<int>(v), static_cast<int>(s), seams[s]});
            seam_sum += seams[s];
        }
    }
    for (const auto& xs : per_index) {
        double s = 0;
        for (double x : xs) s += x;
        rep.drift.push_back(s / static_cast<double>(xs.size()));
    }
    rep.drift_slope = fit_slope(rep.drift);
    for (const auto& c : rep.clips) {
        rep.mean_ssim += c.ssim;
        rep.mean_psnr += c.psnr;
    }
    rep.mean_ssim /= static_cast<double>(rep.clips.size());
    rep.mean_psnr /= static_cast<double>(rep.clips.size());
    rep.mean_seam = rep.seams.empty() ? 0.0 : seam_sum / static_cast<double>(rep.seams.size());
    rep.validate(per_index.size());
    return rep;
}

roll::RolloutOptions variant_options(Variant v, const roll::RolloutOptions& base) {
    auto o = base;
    switch (v) {
        case Variant::full: break;
        case Variant::no_global_norm: o.global_norm = false; break;
        case Variant::no_unified_noise: o.unified_noise = false; break;
        case Variant::no_both:
            o.global_norm = false;
            o.unified_noise = false;
            break;
        case Variant::stage1_only:
        case Variant::stage2_only: o.use_history = false; break;
    }
    return o;
}

std::vector<MetricsReport> run_ablation(const std::vector<Variant>& suite, const AblationModels& models, const ae::Autoencoder& ae,
                                        const std::vector<scene::SceneClip>& corpus, const roll::RolloutOptions& base,
                                        const std::vector<std::uint64_t>& seeds, const std::string& config_hash) {
    std::vector<MetricsReport> out;
    for (auto v : suite) {
        const auto* m = v == Variant::stage1_only ? models.stage1 : v == Variant::stage2_only ? models.stage2 : models.stage3;
        if (!m) throw contract_error(std::string("ablation '") + variant_name(v) + "': missing checkpoint");
        for (auto seed : seeds) {
            auto o = variant_options(v, base);
            o.seed = seed;
            out.push_back(evaluate(*m, ae, corpus, o, variant_name(v), config_hash));
        }
    }
    return out;
}

void write_reports(const std::filesystem::path& dir, const std::vector<MetricsReport>& reports) {
    std::filesystem::create_directories(dir);
    std::ostringstream rep, seams, sum;
    rep.precision(10);
    seams.precision(10);
    sum.precision(10);
    rep << "label,seed,video,clip,metric,value,config_hash\n";
    seams << "label,seed,video,seam,score,config_hash\n";
    sum << "label,seed,mean_ssim,mean_psnr,mean_seam,drift_slope,config_hash\n";
    for (const auto& r : reports) {
        for (const auto& c : r.clips) {
            rep << r.label << ',' << r.seed << ',' << c.video << ',' << c.clip << ",ssim," << c.ssim << ',' << r.config_hash << '\n';
            rep << r.label << ',' << r.seed << ',' << c.video << ',' << c.clip << ",psnr," << c.psnr << ',' << r.config_hash << '\n';
        }
        for (const auto& s : r.seams)
            seams << r.label << ',' << r.seed << ',' << s.video << ',' << s.seam << ',' << s.score << ',' << r.config_hash << '\n';
        sum << r.label << ',' << r.seed << ',' << r.mean_ssim << ',' << r.mean_psnr << ',' << r.mean_seam << ',' << r.drift_slope << ','
            << r.config_hash << '\n';
    }
    write_file_atomic(dir / "report.csv", rep.str());
    write_file_atomic(dir / "seams.csv", seams.str());
    write_file_atomic(dir / "ablation_summary.csv", sum.str());
}

std::vector<MetricsReport> read_summary(const std::filesystem::path& csv) {
    std::istringstream in(read_file(csv));
    std::string line;
    std::getline(in, line);
    if (line != "label,seed,mean_ssim,mean_psnr,mean_seam,drift_slope,config_hash") throw io_error("unexpected summary header in " + csv.string());
    std::vector<MetricsReport> out;
    while (std::getline(in, line)) {
        const auto c = split(line);
        if (c.size() != 7) throw io_error("malformed summary row: " + line);
        MetricsReport r;
        r.label = c[0];
        r.seed = std::stoull(c[1]);
        r.mean_ssim = std::stod(c[2]);
        r.mean_psnr = std::stod(c[3]);
        r.mean_seam = std::stod(c[4]);
        r.drift_slope = std::stod(c[5]);
        r.config_hash = c[6];
        out.push_back(r);
    }
    return out;
}

}  // namespace rollvid::bench
