#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "rollvid/rollout.hpp"

namespace rollvid::bench {

enum class Variant { full, no_global_norm, no_unified_noise, no_both, stage1_only, stage2_only };
const char* variant_name(Variant v);
Variant variant_from(const std::string& s);
std::vector<Variant> all_variants();

// Held-out long videos whose length is an exact number of rollout windows.
std::vector<scene::SceneClip> make_eval_corpus(int videos, int windows, std::uint64_t base_seed, std::int64_t clip_frames,
                                               std::int64_t overlap, const scene::SceneOptions& opts = {});

struct ClipMetrics {
    int video = 0;
    int clip = 0;
    double ssim = 0, psnr = 0;  // means over the frames the clip contributes
};

struct SeamScore {
    int video = 0;
    int seam = 0;
    double score = 0;
};

struct MetricsReport {
    std::string label;
    std::string config_hash;
    std::uint64_t seed = 0;
    std::vector<ClipMetrics> clips;
    std::vector<SeamScore> seams;
    std::vector<double> drift;  // mean SSIM per clip index across videos
    double drift_slope = 0;
    double mean_ssim = 0, mean_psnr = 0, mean_seam = 0;

    void validate(std::size_t windows_per_video) const;
};

// Rolls out every video from its ground-truth first frame and scores it.
MetricsReport evaluate(const ctrl::ControlledModel& model, const ae::Autoencoder& ae, const std::vector<scene::SceneClip>& corpus,
                       const roll::RolloutOptions& opts, const std::string& label, const std::string& config_hash);

struct AblationModels {
    const ctrl::ControlledModel* stage1 = nullptr;
    const ctrl::ControlledModel* stage2 = nullptr;
    const ctrl::ControlledModel* stage3 = nullptr;
};

// Rollout options of one variant on top of `base` (the full configuration).
roll::RolloutOptions variant_options(Variant v, const roll::RolloutOptions& base);

// One report per (variant, seed), same corpus throughout.
std::vector<MetricsReport> run_ablation(const std::vector<Variant>& suite, const AblationModels& models, const ae::Autoencoder& ae,
                                        const std::vector<scene::SceneClip>& corpus, const roll::RolloutOptions& base,
                                        const std::vector<std::uint64_t>& seeds, const std::string& config_hash);

// report.csv, seams.csv and ablation_summary.csv.
void write_reports(const std::filesystem::path& dir, const std::vector<MetricsReport>& reports);
std::vector<MetricsReport> read_summary(const std::filesystem::path& csv);

}  // namespace rollvid::bench
