#include <filesystem>

#include "doctest.h"
#include "fixtures.hpp"
#include "rollvid/driver.hpp"
#include "rollvid/serialize.hpp"

using namespace rollvid;
using nlohmann::json;
namespace fs = std::filesystem;

TEST_CASE("run config defaults, round trip and hash") {
    const RunConfig def;
    const auto j = def.to_json();
    const auto back = RunConfig::from_json(j);
    CHECK(back.to_json() == j);
    CHECK(back.hash() == def.hash());
    CHECK(def.hash().size() == 16);
    CHECK(RunConfig::from_json(json::object()).hash() == def.hash());

    auto c = RunConfig::from_json({{"seed", 5}});
    CHECK(c.seed == 5);
    CHECK(c.hash() != def.hash());

    // a partial stage section keeps that stage's other defaults
    c = RunConfig::from_json({{"stages", {{"2", {{"iterations", 40}, {"warmup", 10}}}}}});
    CHECK(c.stages[2].iterations == 40);
    CHECK(c.stages[2].lr == 1e-4);
    CHECK(c.stages[2].frame_degrade);
    CHECK(c.stages[3].iterations == 200);

    // paper values
    CHECK(c.stages[3].temporal.deg == 0.2);
    CHECK(c.stages[3].temporal.gt == 0.15);
    CHECK(c.stages[3].temporal.cons == 0.5);
    CHECK(c.stages[2].feature_alpha == 0.15);
    CHECK(c.stages[2].data_beta == 0.10);
    CHECK(c.stages[2].degradation.p_apply == 0.2);
    CHECK(c.stages[2].degradation.p_encoding == 0.2);
    CHECK(j.at("constants").at("percentiles") == json({5, 95}));
    CHECK(j.at("constants").at("fusion_scales") == 5);
}

TEST_CASE("run config rejects bad documents") {
    CHECK_THROWS_AS(RunConfig::from_json({{"sed", 1}}), contract_error);
    CHECK_THROWS_AS(RunConfig::from_json({{"data", {{"train_clip", 3}}}}), contract_error);
    CHECK_THROWS_AS(RunConfig::from_json({{"stages", {{"1", {{"learning_rate", 1e-3}}}}}}), contract_error);
    CHECK_THROWS_AS(RunConfig::from_json({{"stages", {{"4", json::object()}}}}), contract_error);
    CHECK_THROWS_AS(RunConfig::from_json({{"rollout", {{"overlap", 9}}}}), contract_error);
    CHECK_THROWS_AS(RunConfig::from_json({{"data", {{"frames", "twelve"}}}}), contract_error);
    CHECK_THROWS_AS(RunConfig::from_json({{"eval", {{"seeds", json::array()}}}}), contract_error);
    // constants can be restated but not changed
    CHECK_NOTHROW(RunConfig::from_json({{"constants", fixed_constants()}}));
    auto k = fixed_constants();
    k["percentiles"] = {1, 99};
    CHECK_THROWS_AS(RunConfig::from_json({{"constants", k}}), contract_error);
}

TEST_CASE("provenance labels every leaf") {
    const RunConfig c;
    const auto p = c.provenance();
    CHECK(p.at("stages.2.degradation.p_apply") == "paper");
    CHECK(p.at("stages.3.temporal.deg") == "paper");
    CHECK(p.at("stages.2.feature_alpha") == "paper");
    CHECK(p.at("constants.boundary_weights") == "paper");
    CHECK(p.at("rollout.overlap") == "paper");
    CHECK(p.at("stages.1.iterations") == "toy");
    CHECK(p.at("backbone.hist_max") == "toy");
    CHECK(p.at("data.scene.max_speed") == "toy");
    for (const auto& [k, v] : p.items()) CHECK((v == "paper" || v == "toy"));
}

TEST_CASE("run metadata and missing prerequisites") {
    const auto dir = fixtures::cache_dir() / "cli_unit";
    fs::remove_all(dir);
    RunConfig c;
    c.seed = 3;
    driver::write_run_meta(dir, "probe", c, {{"x", 1}});
    const auto meta = json::parse(read_file(dir / "run_meta_probe.json"));
    CHECK(meta.at("config_hash") == c.hash());
    CHECK(RunConfig::from_json(meta.at("config")).hash() == c.hash());
    CHECK(meta.at("code_version") == code_version());
    CHECK(meta.at("args").at("x") == 1);

    CHECK_THROWS_AS(driver::load_autoencoder(dir), driver::missing_prerequisite);
    CHECK_THROWS_AS(driver::load_stage(dir, 2), driver::missing_prerequisite);
    CHECK_THROWS_AS(driver::train_stage(c, 2, dir / "data", dir, false), driver::missing_prerequisite);
}

namespace {

bench::MetricsReport row(const std::string& label, std::uint64_t seed, double seam, double slope) {
    bench::MetricsReport r;
    r.label = label;
    r.seed = seed;
    r.mean_seam = seam;
    r.drift_slope = slope;
    r.config_hash = "h";
    return r;
}

}  // namespace

TEST_CASE("trend checks count per-seed wins") {
    std::vector<bench::MetricsReport> rs;
    for (std::uint64_t s = 0; s < 5; ++s) {
        const bool flip = s == 4;  // one seed goes the other way
        rs.push_back(row("full", s, flip ? 0.5 : 0.1, 0));
        rs.push_back(row("no_global_norm", s, 0.2, 0));
        rs.push_back(row("no_unified_noise", s, 0.25, 0));
        rs.push_back(row("no_both", s, 0.3, 0));
        rs.push_back(row("stage1_only", s, 0.2, -0.02));
        rs.push_back(row("stage2_only", s, 0.2, s < 3 ? -0.01 : -0.03));
    }
    const auto c = driver::trend_checks(rs);
    REQUIRE(c.size() == 3);
    CHECK(c[0].wins == 4);
    CHECK(c[0].seeds == 5);
    CHECK(c[0].pass);
    CHECK(c[1].wins == 3);
    CHECK_FALSE(c[1].pass);
    CHECK(c[2].wins == 4);  // full below stage2_only except the flipped seed
    CHECK(c[2].pass);

    // fewer than five seeds never passes
    rs.erase(std::remove_if(rs.begin(), rs.end(), [](const auto& r) { return r.seed == 4; }), rs.end());
    CHECK_FALSE(driver::trend_checks(rs)[0].pass);
}

TEST_CASE("ablation reports are reproducible and round trip through csv") {
    const auto& ae = fixtures::trained_ae();
    Rng rng(3, "init");
    ctrl::ControlledModel base;
    base.base = diff::Backbone::init({}, rng);
    auto m = pipe::attach_controls(base, rng);
    const auto corpus = bench::make_eval_corpus(1, 3, 4242, 9, 1);
    roll::RolloutOptions o;
    o.steps = 2;
    const std::vector<bench::Variant> suite{bench::Variant::full, bench::Variant::no_both, bench::Variant::stage2_only};
    const bench::AblationModels models{nullptr, &m, &m};
    const auto a = bench::run_ablation(suite, models, ae, corpus, o, {0, 1}, "cfg");
    const auto b = bench::run_ablation(suite, models, ae, corpus, o, {0, 1}, "cfg");
    REQUIRE(a.size() == 6);
    const auto d1 = fixtures::cache_dir() / "abl1", d2 = fixtures::cache_dir() / "abl2";
    bench::write_reports(d1, a);
    bench::write_reports(d2, b);
    for (const char* f : {"report.csv", "seams.csv", "ablation_summary.csv"}) CHECK(read_file(d1 / f) == read_file(d2 / f));
    for (const auto& r : a) {
        CHECK(r.clips.size() == 3);
        CHECK(r.seams.size() == 2);
        CHECK(r.drift.size() == 3);
    }
    // the full variant shares one noise draw per seed; no_both does not, so they differ
    CHECK(a[0].mean_seam != a[2].mean_seam);

    const auto back = bench::read_summary(d1 / "ablation_summary.csv");
    REQUIRE(back.size() == a.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(back[i].label == a[i].label);
        CHECK(back[i].mean_seam == doctest::Approx(a[i].mean_seam).epsilon(1e-8));
    }
    CHECK_THROWS_AS(bench::run_ablation({bench::Variant::stage1_only}, models, ae, corpus, o, {0}, "cfg"), contract_error);
    CHECK_THROWS_AS(bench::variant_from("half"), contract_error);
}
