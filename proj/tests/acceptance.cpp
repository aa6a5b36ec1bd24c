// End-to-end acceptance run: trains the full pipeline into a scratch run
// directory and prints one PASS/FAIL line per criterion.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <iostream>
#include <map>
#include <sstream>

#include "rollvid/driver.hpp"
#include "rollvid/gradcheck.hpp"
#include "rollvid/metrics.hpp"
#include "rollvid/ops.hpp"

using namespace rollvid;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

struct Outcome {
    bool pass = false;
    std::string detail;
};

Tensor randn(const Shape& s, std::uint64_t seed, float sd = 1.0f) {
    Rng rng(seed, "accept");
    auto v = rng.normal_vector(static_cast<std::size_t>(shape_numel(s)));
    for (auto& x : v) x *= sd;
    return Tensor::from(s, std::move(v));
}

bool same(const Tensor& a, const Tensor& b) {
    return a.shape() == b.shape() && std::equal(a.data().begin(), a.data().end(), b.data().begin());
}

std::string fmt(double v) {
    std::ostringstream o;
    o.precision(4);
    o << v;
    return o.str();
}

// 1
Outcome zero_init_equivalence() {
    int ok = 0;
    for (std::uint64_t i = 0; i < 20; ++i) {
        Rng rng(i, "init");
        ctrl::ControlledModel m;
        m.base = diff::Backbone::init({}, rng);
        m.base.out_w = randn(m.base.out_w.shape(), i + 1000, 0.1f);  // informative base output
        m.ctrl = ctrl::half_copy_init(m.base, 2, rng);
        ConditionPack p;
        p.z_first = randn({1, 4, 8, 8}, i * 7 + 1);
        p.c_dense = randn({9, 4, 8, 8}, i * 7 + 2);
        p.c_sparse = randn({9, 4, 8, 8}, i * 7 + 3);
        const int nh = static_cast<int>(i % 5);
        if (nh > 0) {
            p.z_hist = randn({nh, 4, 8, 8}, i * 7 + 4);
            p.n_hist = nh;
        }
        const auto z = randn({9, 4, 8, 8}, i * 7 + 5);
        const int t = 1 + static_cast<int>((i * 13) % 49);
        NoGradGuard g;
        if (same(m.forward(z, t, p), m.base.forward(z, t, p))) ++ok;
    }
    return {ok == 20, std::to_string(ok) + "/20 inputs bitwise equal"};
}

// 2
Outcome gradient_suite() {
    diff::BackboneConfig c;
    c.latent_channels = 2;
    c.latent_h = 2;
    c.latent_w = 4;
    c.width = 8;
    c.heads = 2;
    c.ff = 8;
    c.blocks = 1;
    c.clip_frames = 1;
    const auto s = diff::NoiseSchedule::linear();
    double worst = 0;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        Rng rng(seed, "init");
        auto m = diff::Backbone::init(c, rng);
        m.out_w = randn(m.out_w.shape(), seed + 100, 0.3f);
        const auto z0 = randn({1, 2, 2, 4}, seed + 200), eps = randn({1, 2, 2, 4}, seed + 300);
        ConditionPack pack;
        pack.z_first = randn({1, 2, 2, 4}, seed + 400);
        diff::EpsModel model = [&](const Tensor& z, int tt, const ConditionPack& p) { return m.forward(z, tt, p); };
        const int t = 1 + static_cast<int>(seed * 7 % 49);
        m.out_w.set_requires_grad(true);
        worst = std::max(worst, finite_diff_check([&](const Tensor&) { return diff::eps_loss(model, s, pack, z0, t, eps); }, m.out_w, 1e-2));
        m.out_w.set_requires_grad(false);

        auto zh = randn({1, 4, 8, 8}, seed + 500), hl = randn({1, 4, 8, 8}, seed + 600);
        const auto di = randn({1, 4, 8, 8}, seed + 700), gt = randn({1, 4, 8, 8}, seed + 800);
        zh.set_requires_grad(true);
        for (int which = 0; which < 4; ++which) {
            auto f = [&](const Tensor& v) {
                const auto L = hist::temporal_losses(v, hl, di, gt);
                const Tensor parts[] = {L.cons, L.deg, L.gt, L.temp};
                return parts[which];
            };
            worst = std::max(worst, finite_diff_check(f, zh, 1e-2));
        }
    }
    return {worst < 1e-3, "max rel err " + fmt(worst) + " over 20 seeds"};
}

// 3
Outcome exact_loss_oracle() {
    const double zh[2][2] = {{0.5, -1.0}, {2.0, 0.25}};
    const double hl[2][2] = {{1.0, 0.0}, {-0.5, 1.5}};
    const double di[2][2] = {{0.2, 0.4}, {0.6, -0.8}};
    const double gt[2][2] = {{-1.0, 2.0}, {0.0, 3.0}};
    auto blur = [](const double v[2][2], int y, int x) {
        double s = 0;
        for (int dy = -1; dy <= 1; ++dy)
            for (int dx = -1; dx <= 1; ++dx) s += v[std::clamp(y + dy, 0, 1)][std::clamp(x + dx, 0, 1)];
        return s / 9;
    };
    auto t = [](const double v[2][2]) {
        return Tensor::from({1, 1, 2, 2}, {static_cast<float>(v[0][0]), static_cast<float>(v[0][1]), static_cast<float>(v[1][0]),
                                          static_cast<float>(v[1][1])});
    };
    double cons = 0, dg = 0, g = 0;
    for (int y = 0; y < 2; ++y)
        for (int x = 0; x < 2; ++x) {
            cons += std::pow(hl[y][x] - zh[y][x], 2);
            dg += std::pow(blur(di, y, x) - blur(zh, y, x), 2);
            g += std::pow((gt[y][x] - blur(gt, y, x)) - (zh[y][x] - blur(zh, y, x)), 2);
        }
    const double want = 0.2 * dg / 4 + 0.15 * g / 4 + 0.5 * cons / 4;
    const auto L = hist::temporal_losses(t(zh), t(hl), t(di), t(gt));
    const double err = std::max({std::abs(L.temp.value() - want), std::abs(L.cons.value() - cons / 4),
                                 std::abs(L.deg.value() - dg / 4), std::abs(L.gt.value() - g / 4)});
    return {err < 1e-6, "total " + fmt(L.temp.value()) + " vs hand " + fmt(want) + ", max abs err " + fmt(err)};
}

// 4
Outcome degradation_monotonicity(const ae::Autoencoder& ae, const std::vector<scene::SceneClip>& eval) {
    const auto x = ae::stack_frames(eval);
    double prev = bench::psnr_capped(x, deg::encode_degrade(ae, x, 0));
    bool mono = true;
    std::string curve = fmt(prev);
    for (int k = 1; k <= 10; ++k) {
        const double p = bench::psnr_capped(x, deg::encode_degrade(ae, x, k));
        mono = mono && p <= prev + 0.1;
        curve += " " + fmt(p);
        prev = p;
    }
    Rng rng(4, "accept-deg");
    const deg::DegradationConfig c;
    const int n = 100000;
    int applied = 0, enc = 0;
    for (int i = 0; i < n; ++i) {
        const auto d = deg::sample_degradation(c, rng);
        if (d.kind == deg::Kind::none) continue;
        ++applied;
        if (d.kind == deg::Kind::encoding) ++enc;
    }
    const double fa = static_cast<double>(applied) / n, fe = static_cast<double>(enc) / applied;
    const bool freq = std::abs(fa - 0.2) <= 0.01 && std::abs(fe - 0.2) <= 0.01;
    return {mono && freq, "PSNR over K=0..10: " + curve + " dB; apply " + fmt(fa) + ", encoding share " + fmt(fe)};
}

// 5
Outcome normalization_oracle() {
    int agree = 0;
    bool in_range = true;
    for (std::uint64_t i = 0; i < 100; ++i) {
        Rng rng(i, "accept-norm");
        const int n = 5 + static_cast<int>(rng.uniform() * 300);
        const auto d = randn({n, 1, 1, 1}, i + 9000, 1.0f + static_cast<float>(i));
        auto sorted = std::vector<float>(d.data().begin(), d.data().end());
        std::sort(sorted.begin(), sorted.end());
        auto rank = [&](double p) { return sorted[static_cast<std::size_t>(std::clamp<long>(static_cast<long>(std::ceil(p / 100.0 * n)), 1, n) - 1)]; };
        const float lo = rank(5), hi = rank(95);
        const auto out = roll::global_normalize(d);
        bool ok = true;
        for (int j = 0; j < n; ++j) {
            const float want = std::clamp((d.data()[static_cast<std::size_t>(j)] - lo) / (hi - lo), 0.0f, 1.0f);
            const float got = out.data()[static_cast<std::size_t>(j)];
            ok = ok && std::abs(got - want) <= 1e-6f;
            in_range = in_range && got >= 0.0f && got <= 1.0f;
        }
        if (ok) ++agree;
    }
    const auto c = roll::global_normalize(Tensor::full({7, 1, 2, 2}, 3.25f));
    const bool half = std::all_of(c.data().begin(), c.data().end(), [](float v) { return v == 0.5f; });
    return {agree == 100 && in_range && half,
            std::to_string(agree) + "/100 sequences match the sort oracle; range ok " + (in_range ? "yes" : "no") + "; constant -> 0.5 " +
                (half ? "yes" : "no")};
}

// 6
Outcome plan_correctness() {
    using W = std::vector<roll::Window>;
    const bool paper = roll::plan_clips(241, 81, 1) == W{{0, 81}, {80, 161}, {160, 241}} && roll::plan_clips(81, 81, 1) == W{{0, 81}};
    const bool toy = roll::plan_clips(25, 9, 1) == W{{0, 9}, {8, 17}, {16, 25}} && roll::plan_clips(17, 9, 1) == W{{0, 9}, {8, 17}};
    bool rejects = false;
    try {
        roll::plan_clips(20, 9, 1);
    } catch (const contract_error&) {
        rejects = true;
    }
    return {paper && toy && rejects, std::string("81/1 protocol ") + (paper ? "exact" : "wrong") + ", 9/1 toy " + (toy ? "exact" : "wrong") +
                                         ", unreachable total rejected " + (rejects ? "yes" : "no")};
}

// 10
Outcome reduction_property(const RunConfig& cfg, const fs::path& data, const ae::Autoencoder& ae, const ctrl::ControlledModel& m) {
    const auto ds = pipe::build_dataset(scene::load_corpus(data), ae, cfg.backbone.clip_frames, cfg.data.train_seed);
    auto s2 = cfg.stages[2];
    s2.warmup = 0;
    auto s3 = cfg.stages[3];
    s3.force_n_hist = 0;
    s3.boundary = hist::BoundaryMode::off;
    deg::GenContext gen;
    gen.frozen = [&m](const Tensor& z, int t, const ConditionPack& p) { return m.base.forward(z, t, p); };
    double worst = 0;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        Rng rng(seed, "accept-batch");
        const auto s = pipe::draw_sample(ds, ae, s3, 0, &gen, rng);
        worst = std::max(worst, std::abs(pipe::compute_loss(m, s, s3).total.value() - pipe::compute_loss(m, s, s2).total.value()));
    }
    return {worst <= 1e-6, "max |stage3 - stage2| " + fmt(worst) + " over 20 batches"};
}

// 9
Outcome long_rollout(const RunConfig& cfg, const ae::Autoencoder& ae, const ctrl::ControlledModel& m) {
    auto run = [&](int windows, bool& finite) {
        const auto gt = driver::eval_video(cfg, cfg.eval.video_seed + 777, windows);
        const auto plan = roll::plan_clips(gt.rgb.dim(0), cfg.rollout.clip_frames, cfg.rollout.overlap);
        const auto per = gt.rgb.numel() / gt.rgb.dim(0);
        auto first = Tensor::from({1, 3, cfg.data.height, cfg.data.width}, std::vector<float>(gt.rgb.data().begin(), gt.rgb.data().begin() + per));
        finite = true;
        auto sink = [&](std::int64_t, const Tensor& f) {
            for (float v : f.data()) finite = finite && std::isfinite(v);
        };
        return roll::autoregressive_rollout(m, ae, first, {gt.depth, gt.spec}, plan, cfg.rollout, sink);
    };
    bool f40 = false, f10 = false;
    const auto t0 = Clock::now();
    const auto r40 = run(40, f40);
    const double secs = std::chrono::duration<double>(Clock::now() - t0).count();
    const auto r10 = run(10, f10);
    const bool noise = std::all_of(r40.clips.begin(), r40.clips.end(), [&](const auto& c) { return c.noise_hash == r40.clips[0].noise_hash; });
    const bool mem = r40.peak_loop_bytes == r10.peak_loop_bytes;
    const bool ok = r40.clips.size() == 40 && f40 && f10 && noise && mem && secs < 600;
    return {ok, std::to_string(r40.clips.size()) + " clips, " + std::to_string(r40.frames_written) + " frames, finite " + (f40 ? "yes" : "no") +
                    "; peak loop bytes 40w " + std::to_string(r40.peak_loop_bytes) + " vs 10w " + std::to_string(r10.peak_loop_bytes) +
                    "; shared noise " + (noise ? "yes" : "no") + "; " + fmt(secs) + " s"};
}

}  // namespace

int main(int argc, char** argv) {
    fs::path root = argc > 1 ? fs::path(argv[1]) : fs::path(ROLLVID_ACCEPT_DIR);
    const bool reuse = argc > 2 && std::string(argv[2]) == "--reuse";
    if (!reuse) fs::remove_all(root);
    const auto data = root / "data", run = root / "run", abl = root / "ablation";
    const RunConfig cfg;
    auto log = [](const std::string& s) { std::cerr << s << std::endl; };
    std::map<int, Outcome> results;
    const std::map<int, double> limits{{1, 60}, {2, 300}, {4, 300}, {9, 600}};
    auto timed = [&](int id, auto&& fn) {
        const auto t0 = Clock::now();
        Outcome o;
        try {
            o = fn();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(Clock::now() - t0).count();
        if (limits.count(id) && secs >= limits.at(id)) {
            o.pass = false;
            o.detail += " (over the " + fmt(limits.at(id)) + " s budget)";
        }
        o.detail += " [" + fmt(secs) + " s]";
        results[id] = o;
        std::cerr << "criterion " << id << (o.pass ? " PASS" : " FAIL") << std::endl;
    };

    timed(1, zero_init_equivalence);
    timed(2, gradient_suite);
    timed(3, exact_loss_oracle);
    timed(5, normalization_oracle);
    timed(6, plan_correctness);

    const auto t_pipe = Clock::now();
    std::optional<ae::Autoencoder> ae;
    try {
        if (!fs::exists(data / "manifest.json")) driver::gen_data(cfg, cfg.data.train_clips, cfg.data.train_seed, data);
        ae = fs::exists(run / "ae.ck") ? driver::load_autoencoder(run) : driver::train_autoencoder(cfg, data, run, log);
    } catch (const std::exception& e) {
        std::printf("pipeline setup failed: %s\n", e.what());
        return 1;
    }
    const auto eval_corpus = bench::make_eval_corpus(cfg.eval.videos, cfg.eval.windows, cfg.eval.video_seed, cfg.rollout.clip_frames,
                                                     cfg.rollout.overlap, cfg.data.scene);
    timed(4, [&] { return degradation_monotonicity(*ae, eval_corpus); });

    std::vector<bench::MetricsReport> reps;
    bool trained = true;
    try {
        for (int s = 0; s <= 3; ++s)
            if (!fs::exists(driver::stage_path(run, s))) driver::train_stage(cfg, s, data, run, false, log);
        reps = driver::ablate(cfg, run, bench::all_variants(), abl, log);
    } catch (const std::exception& e) {
        std::printf("pipeline failed: %s\n", e.what());
        trained = false;
    }
    const double pipe_secs = std::chrono::duration<double>(Clock::now() - t_pipe).count();

    const auto checks = driver::trend_checks(reps);
    auto trend = [&](int id, std::vector<int> which) {
        timed(id, [&] {
            Outcome o{trained, ""};
            for (int i : which) {
                const auto& c = checks.at(static_cast<std::size_t>(i));
                o.pass = o.pass && c.pass;
                o.detail += c.name + ": " + std::to_string(c.wins) + "/" + std::to_string(c.seeds) + "; ";
            }
            if (id == 7) {
                o.detail += "pipeline " + fmt(pipe_secs / 60) + " min";
                o.pass = o.pass && pipe_secs < 3600;
            }
            return o;
        });
    };
    trend(7, {0});
    trend(8, {1, 2});

    if (trained) {
        const auto s3 = driver::load_stage(run, 3);
        timed(9, [&] { return long_rollout(cfg, *ae, s3); });
        const auto s2 = driver::load_stage(run, 2);
        timed(10, [&] { return reduction_property(cfg, data, *ae, s2); });
    } else {
        timed(9, [] { return Outcome{false, "no trained model"}; });
        timed(10, [] { return Outcome{false, "no trained model"}; });
    }

    int passed = 0;
    for (const auto& [id, o] : results) {
        passed += o.pass;
        std::printf("criterion %d: %s - %s\n", id, o.pass ? "PASS" : "FAIL", o.detail.c_str());
    }
    std::printf("%d/10 criteria pass\n", passed);
    return passed == 10 ? 0 : 1;
}
