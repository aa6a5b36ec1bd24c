#pragma once

#include <filesystem>
#include <functional>
#include <string>

#include "rollvid/run_config.hpp"

// Lifecycle steps shared by the command line tool and the acceptance run.
// A run directory holds ae.ck, stage{k}.ck, training logs and metadata.
namespace rollvid::driver {

// Raised when an earlier stage's artifact is absent.
struct missing_prerequisite : contract_error {
    using contract_error::contract_error;
};

using Progress = std::function<void(const std::string&)>;

// run_meta_<command>.json: config, hash, seeds, code version, provenance.
void write_run_meta(const std::filesystem::path& dir, const std::string& command, const RunConfig& cfg,
                    const nlohmann::json& extra = nlohmann::json::object());

scene::CorpusManifest gen_data(const RunConfig& cfg, int count, std::uint64_t seed, const std::filesystem::path& out);

ae::Autoencoder train_autoencoder(const RunConfig& cfg, const std::filesystem::path& data, const std::filesystem::path& run,
                                  const Progress& progress = {});

ae::Autoencoder load_autoencoder(const std::filesystem::path& run);
ctrl::ControlledModel load_stage(const std::filesystem::path& run, int stage);
std::filesystem::path stage_path(const std::filesystem::path& run, int stage);

// Trains stage k from stage k-1 (stage 0 from scratch); resume picks up
// stage{k}_last.ck.
ctrl::ControlledModel train_stage(const RunConfig& cfg, int stage, const std::filesystem::path& data,
                                  const std::filesystem::path& run, bool resume, const Progress& progress = {});

// Held-out long video covering `windows` rollout windows.
scene::SceneClip eval_video(const RunConfig& cfg, std::uint64_t video_seed, int windows);

nlohmann::json rollout(const RunConfig& cfg, const std::filesystem::path& run, int windows, std::uint64_t video_seed,
                       const std::filesystem::path& out);

std::vector<bench::MetricsReport> evaluate_stage(const RunConfig& cfg, const std::filesystem::path& run, int stage,
                                                 const std::filesystem::path& out);

std::vector<bench::MetricsReport> ablate(const RunConfig& cfg, const std::filesystem::path& run,
                                         const std::vector<bench::Variant>& suite, const std::filesystem::path& out,
                                         const Progress& progress = {});

// Trend checks over an ablation summary.
struct TrendCheck {
    std::string name;
    int wins = 0, seeds = 0;
    bool pass = false;
};
std::vector<TrendCheck> trend_checks(const std::vector<bench::MetricsReport>& summary);
// comparison.csv plus a per-label mean table.
std::vector<TrendCheck> report(const std::filesystem::path& summary_csv, const std::filesystem::path& out);

}  // namespace rollvid::driver
