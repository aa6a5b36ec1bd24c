#include <algorithm>
#include <cmath>

#include "doctest.h"
#include "fixtures.hpp"
#include "rollvid/ops.hpp"
#include "rollvid/rollout.hpp"
#include "rollvid/serialize.hpp"

using namespace rollvid;
using namespace rollvid::roll;

namespace {

bool same(const Tensor& a, const Tensor& b) {
    return a.shape() == b.shape() && std::equal(a.data().begin(), a.data().end(), b.data().begin());
}

ctrl::ControlledModel small_model(std::uint64_t seed) {
    Rng rng(seed, "model");
    ctrl::ControlledModel m;
    m.base = diff::Backbone::init({}, rng);
    m.ctrl = ctrl::half_copy_init(m.base, 2, rng);
    // give the fusion layers some weight so the controls matter
    for (auto& p : m.ctrl.phi)
        for (auto& v : p.data()) v = static_cast<float>(rng.normal()) * 0.02f;
    return m;
}

struct LongScene {
    scene::SceneClip clip;
    ControlStreams controls;
    Tensor first;
};

LongScene long_scene(std::uint64_t seed, int frames) {
    LongScene s;
    s.clip = scene::gen_scene(scene::random_scene_spec(seed, frames, 32, 32));
    s.controls = {s.clip.depth, s.clip.spec};
    s.first = ops::slice_rows(s.clip.rgb.reshape({frames, 3 * 32 * 32}), 0, 1).reshape({1, 3, 32, 32});
    return s;
}

}  // namespace

TEST_CASE("percentile normalization") {
    std::vector<float> v(20);
    for (int i = 0; i < 20; ++i) v[static_cast<std::size_t>(i)] = static_cast<float>(20 - i);  // unsorted 20..1
    const auto r = percentile_range(v);
    CHECK(r.lo == 1.0f);
    CHECK(r.hi == 19.0f);
    const auto n = global_normalize(Tensor::from({20, 1, 1, 1}, v));
    // input 10 sits at index 10
    CHECK(n.data()[10] == doctest::Approx(9.0 / 18.0));
    CHECK(n.data()[0] == 1.0f);   // 20 clipped to 19
    CHECK(n.data()[19] == 0.0f);  // 1

    const auto c = global_normalize(Tensor::full({3, 1, 4, 4}, 7.0f));
    for (float x : c.data()) CHECK(x == 0.5f);

    // random data: range, and idempotence
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        Rng rng(seed, "norm");
        auto x = Tensor::from({5, 1, 8, 8}, rng.normal_vector(320));
        for (auto& e : x.data()) e = e * 3.0f + 2.0f;
        const auto once = global_normalize(x);
        for (float e : once.data()) CHECK((e >= 0.0f && e <= 1.0f));
        CHECK(same(global_normalize(once), once));
    }
    CHECK_THROWS_AS(global_normalize(Tensor::from({0, 1, 1, 1}, std::vector<float>{})), contract_error);
    CHECK_THROWS_AS(global_normalize(Tensor::from({1, 1, 1, 1}, {NAN})), numeric_error);
}

TEST_CASE("plan_clips") {
    CHECK(plan_clips(17, 9, 1) == std::vector<Window>{{0, 9}, {8, 17}});
    CHECK(plan_clips(9, 9, 1) == std::vector<Window>{{0, 9}});
    CHECK(plan_clips(161, 81, 1) == std::vector<Window>{{0, 81}, {80, 161}});
    const auto p = plan_clips(frames_for_windows(40, 9, 1), 9, 1);
    CHECK(p.size() == 40);
    CHECK(p.back().second == 321);
    for (std::size_t i = 1; i < p.size(); ++i) CHECK(p[i].first == p[i - 1].second - 1);
    CHECK_THROWS_AS(plan_clips(18, 9, 1), contract_error);
    CHECK_THROWS_AS(plan_clips(8, 9, 1), contract_error);
    CHECK_THROWS_AS(plan_clips(17, 9, 9), contract_error);
}

TEST_CASE("per-window sparse recompute") {
    auto s = long_scene(4, 17);
    const auto norm = global_normalize(s.clip.depth);
    const Window w{8, 17};
    Shape ws = norm.shape();
    ws[0] = 9;
    const auto nw = ops::slice_rows(norm.reshape({17, 32 * 32}), 8, 17).reshape(ws);
    Rng a(1, "p"), b(1, "p");
    const auto pm = recompute_sparse_per_clip(s.controls.spec, w, nw, 49, a);
    // wiring: same as rendering fresh tracks against the normalized window
    const auto tracks = scene::seed_tracks(s.controls.spec, 8, 17);
    CHECK(same(pm, scene::render_pointmap(tracks, 9, 32, 32, 49, b, &nw)));
    for (const auto& t : tracks) CHECK(t.points.front().frame == 8);

    // static scene: both windows give the same maps
    auto spec = s.controls.spec;
    for (auto& sh : spec.shapes) sh.vx = sh.vy = 0.0f;
    const auto st = scene::gen_scene(spec);
    const auto sn = global_normalize(st.depth);
    const auto w0 = ops::slice_rows(sn.reshape({17, 1024}), 0, 9).reshape(ws);
    const auto w1 = ops::slice_rows(sn.reshape({17, 1024}), 8, 17).reshape(ws);
    Rng c(2, "p"), d(2, "p");
    CHECK(same(recompute_sparse_per_clip(spec, {0, 9}, w0, 49, c), recompute_sparse_per_clip(spec, {8, 17}, w1, 49, d)));
}

TEST_CASE("rollout wiring and unified noise") {
    const auto& ae = fixtures::trained_ae();
    const auto model = small_model(3);
    auto s = long_scene(7, 25);
    const auto plan = plan_clips(25, 9, 1);
    RolloutOptions o;
    o.seed = 5;
    std::vector<Tensor> out;
    auto sink = [&](std::int64_t i, const Tensor& f) {
        CHECK(i == static_cast<std::int64_t>(out.size()));
        out.push_back(f);
    };
    const auto r = autoregressive_rollout(model, ae, s.first, s.controls, plan, o, sink);
    CHECK(r.clips.size() == plan.size());
    CHECK(out.size() == 25);
    CHECK(r.frames_written == 25);
    CHECK(same(out[0], s.first));
    for (const auto& c : r.clips) CHECK(c.noise_hash == r.clips[0].noise_hash);
    for (std::size_t i = 0; i + 1 < r.clips.size(); ++i) {
        CHECK(r.clips[i + 1].cond_hash == r.clips[i].last_frame_hash);
        CHECK(r.clips[i + 1].cond_hash == tensor_hash(out[static_cast<std::size_t>(plan[i].second - 1)]));
    }
    CHECK(r.clips[0].cond_hash == tensor_hash(s.first));
    CHECK(r.clips[0].n_hist == 1);
    CHECK(r.clips[1].n_hist == 4);
    for (const auto& f : out)
        for (float v : f.data()) CHECK(std::isfinite(v));

    // fresh noise per clip when unified noise is off
    o.unified_noise = false;
    const auto r2 = autoregressive_rollout(model, ae, s.first, s.controls, plan, o, [](std::int64_t, const Tensor&) {});
    CHECK(r2.clips[0].noise_hash != r2.clips[1].noise_hash);

    // deterministic replay
    o.unified_noise = true;
    std::vector<Tensor> again;
    autoregressive_rollout(model, ae, s.first, s.controls, plan, o, [&](std::int64_t, const Tensor& f) { again.push_back(f); });
    for (std::size_t i = 0; i < out.size(); ++i) CHECK(same(out[i], again[i]));

    // no history
    o.use_history = false;
    const auto r3 = autoregressive_rollout(model, ae, s.first, s.controls, plan, o, [](std::int64_t, const Tensor&) {});
    CHECK(r3.clips[1].n_hist == 0);

    // blend mode runs end to end
    o.boundary = hist::BoundaryMode::blend;
    std::vector<Tensor> bl;
    autoregressive_rollout(model, ae, s.first, s.controls, plan, o, [&](std::int64_t, const Tensor& f) { bl.push_back(f); });
    CHECK(bl.size() == 25);

    // non-finite input aborts
    std::vector<float> bv(s.first.data().begin(), s.first.data().end());
    bv[0] = NAN;
    const auto bad = Tensor::from(s.first.shape(), bv);
    CHECK_THROWS_AS(autoregressive_rollout(model, ae, bad, s.controls, plan, o, [](std::int64_t, const Tensor&) {}), numeric_error);
    CHECK_THROWS_AS(autoregressive_rollout(model, ae, s.first, s.controls, plan_clips(33, 9, 1), o, [](std::int64_t, const Tensor&) {}),
                    contract_error);
}

TEST_CASE("rollout memory does not grow with length") {
    const auto& ae = fixtures::trained_ae();
    const auto model = small_model(3);
    RolloutOptions o;
    o.seed = 3;
    auto peak = [&](int windows) {
        const auto total = static_cast<int>(frames_for_windows(windows, 9, 1));
        auto s = long_scene(11, total);
        bool finite = true;
        const auto r = autoregressive_rollout(model, ae, s.first, s.controls, plan_clips(total, 9, 1), o,
                                              [&](std::int64_t, const Tensor& f) { finite = finite && all_finite(f.data()); });
        CHECK(finite);
        CHECK(r.clips.size() == static_cast<std::size_t>(windows));
        for (const auto& c : r.clips) CHECK(c.noise_hash == r.clips[0].noise_hash);
        return r.peak_loop_bytes;
    };
    const auto p10 = peak(10), p40 = peak(40);
    MESSAGE("peak loop bytes: 10 windows " << p10 << ", 40 windows " << p40);
    CHECK(p10 > 0);
    CHECK(p40 == p10);
}

TEST_CASE("write_rollout is reproducible") {
    const auto& ae = fixtures::trained_ae();
    const auto model = small_model(3);
    auto s = long_scene(7, 17);
    const auto dir = fixtures::cache_dir() / "rollout_test";
    std::filesystem::remove_all(dir);
    RolloutOptions o;
    o.seed = 3;
    const auto m1 = write_rollout(dir / "a", model, ae, s.first, s.controls, plan_clips(17, 9, 1), o, {{"config_hash", "x"}});
    const auto m2 = write_rollout(dir / "b", model, ae, s.first, s.controls, plan_clips(17, 9, 1), o, {{"config_hash", "x"}});
    CHECK(read_file(dir / "a" / "manifest.json") == read_file(dir / "b" / "manifest.json"));
    CHECK(m1["frames"] == 17);
    CHECK(std::filesystem::exists(dir / "a" / "frames" / "frame_16.lvt"));
    const auto back = read_tensors(dir / "a" / "frames" / "frame_0.lvt");
    CHECK(same(back.at(0), s.first));
}
