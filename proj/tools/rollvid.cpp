// rollvid: data generation, training, rollout and evaluation from one entry point.
#include <iostream>
#include <optional>

#include "CLI11.hpp"
#include "rollvid/driver.hpp"
#include "rollvid/serialize.hpp"

using namespace rollvid;
namespace fs = std::filesystem;

namespace {

void progress(const std::string& line) { std::cerr << line << std::endl; }

struct Common {
    std::string config;
    std::string out;
    std::optional<std::uint64_t> seed;

    void add(CLI::App* app, bool out_required = true) {
        app->add_option("--config", config, "run config (JSON)")->check(CLI::ExistingFile);
        auto* o = app->add_option("--out", out, "output directory");
        if (out_required) o->required();
        app->add_option("--seed", seed, "seed override");
    }
    RunConfig load() const {
        auto c = config.empty() ? RunConfig{} : RunConfig::load(config);
        if (seed) c.seed = *seed;
        c.validate();
        return c;
    }
};

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"rollvid: controllable long video generation at toy scale"};
    app.require_subcommand(1);

    Common gd_c, ae_c, tr_c, ro_c, ev_c, ab_c, rp_c;
    int count = 50;
    std::string data, run, summary;
    int stage = 1, eval_stage = 3, clips = 40;
    bool resume = false;
    std::optional<std::uint64_t> video_seed;
    std::vector<std::string> variants;

    auto* gd = app.add_subcommand("gen-data", "write a synthetic clip corpus");
    gd_c.add(gd);
    gd->add_option("--count", count, "number of clips")->check(CLI::PositiveNumber);

    auto* tae = app.add_subcommand("train-ae", "train the frame autoencoder into a run directory");
    ae_c.add(tae);
    tae->add_option("--data", data, "corpus directory")->required();

    auto* tr = app.add_subcommand("train", "train one stage (0 pretrains the base)");
    tr_c.add(tr);
    tr->add_option("--stage", stage, "stage 0..3")->required()->check(CLI::Range(0, 3));
    tr->add_option("--data", data, "corpus directory")->required();
    tr->add_flag("--resume", resume, "continue from stage{k}_last.ck");

    auto* ro = app.add_subcommand("rollout", "autoregressive rollout of a held-out video");
    ro_c.add(ro);
    ro->add_option("--run", run, "run directory with ae.ck and stage3.ck")->required();
    ro->add_option("--clips", clips, "number of windows")->check(CLI::PositiveNumber);
    ro->add_option("--video-seed", video_seed, "held-out scene seed");

    auto* ev = app.add_subcommand("eval", "metrics of one stage over the eval corpus and seeds");
    ev_c.add(ev);
    ev->add_option("--run", run, "run directory")->required();
    ev->add_option("--stage", eval_stage, "stage 1..3")->check(CLI::Range(1, 3));

    auto* ab = app.add_subcommand("ablate", "ablation suite over the eval corpus and seeds");
    ab_c.add(ab);
    ab->add_option("--run", run, "run directory")->required();
    ab->add_option("--variants", variants, "subset of variants");

    auto* rp = app.add_subcommand("report", "aggregate an ablation summary and check trends");
    rp_c.add(rp);
    rp->add_option("--summary", summary, "ablation_summary.csv")->required()->check(CLI::ExistingFile);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (*gd) {
            const auto cfg = gd_c.load();
            const auto m = driver::gen_data(cfg, count, gd_c.seed.value_or(cfg.seed), gd_c.out);
            progress(nlohmann::json{{"event", "gen-data"}, {"clips", m.count}, {"out", gd_c.out}}.dump());
        } else if (*tae) {
            driver::train_autoencoder(ae_c.load(), data, ae_c.out, progress);
        } else if (*tr) {
            driver::train_stage(tr_c.load(), stage, data, tr_c.out, resume, progress);
        } else if (*ro) {
            const auto cfg = ro_c.load();
            const auto m = driver::rollout(cfg, run, clips, video_seed.value_or(cfg.eval.video_seed), ro_c.out);
            progress(nlohmann::json{{"event", "rollout"}, {"frames", m.at("frames")}, {"out", ro_c.out}}.dump());
        } else if (*ev) {
            for (const auto& r : driver::evaluate_stage(ev_c.load(), run, eval_stage, ev_c.out))
                progress(nlohmann::json{{"event", "eval"}, {"seed", r.seed}, {"mean_ssim", r.mean_ssim}, {"mean_seam", r.mean_seam},
                                        {"drift_slope", r.drift_slope}}
                             .dump());
        } else if (*ab) {
            std::vector<bench::Variant> suite;
            for (const auto& v : variants) suite.push_back(bench::variant_from(v));
            if (suite.empty()) suite = bench::all_variants();
            driver::ablate(ab_c.load(), run, suite, ab_c.out, progress);
        } else if (*rp) {
            const auto cfg = rp_c.load();
            bool ok = true;
            for (const auto& c : driver::report(summary, rp_c.out)) {
                std::cout << (c.pass ? "PASS " : "FAIL ") << c.name << " (" << c.wins << "/" << c.seeds << ")\n";
                ok = ok && c.pass;
            }
            driver::write_run_meta(rp_c.out, "report", cfg, {{"summary", summary}, {"all_pass", ok}});
        }
    } catch (const numeric_error& e) {
        std::cerr << "numeric failure: " << e.what() << "\n";
        return 3;
    } catch (const contract_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const io_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const nlohmann::json::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const fs::filesystem_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
