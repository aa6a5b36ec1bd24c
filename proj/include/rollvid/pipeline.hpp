#pragma once

#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "rollvid/control.hpp"
#include "rollvid/degrade.hpp"
#include "rollvid/history.hpp"

namespace rollvid::pipe {

// Stage 0 pretrains the base denoiser (no pretrained video model exists at
// this scale); stages 1-3 follow the control / degradation / history schedule.
struct StageConfig {
    int stage = 1;
    int iterations = 300;
    double lr = 1e-4;
    double weight_decay = 0.01;
    int batch = 2;
    int warmup = 0;                 // leading iterations with every degradation off
    bool frame_degrade = false;     // degradation operator on first frame and history
    double feature_alpha = 0.0;
    double data_beta = 0.0;
    bool history = false;
    int hist_max = 4;
    std::optional<int> force_n_hist;
    hist::BoundaryMode boundary = hist::BoundaryMode::off;
    double first_dropout = 0.0;     // stage 0: share of samples with no first frame
    deg::DegradationConfig degradation{};
    hist::TemporalWeights temporal{};
    int checkpoint_every = 50;

    static StageConfig defaults(int stage);
    void validate() const;
    bool trainable(const std::string& param) const;
    bool degradation_active(std::int64_t iter) const { return iter >= warmup; }
    // Multiplier on every degradation probability: 0 in warmup, then a linear
    // ramp reaching 1 at the last iteration (1 throughout without warmup).
    double degradation_ramp(std::int64_t iter) const;
    nlohmann::json to_json() const;
    static StageConfig from_json(const nlohmann::json& j);  // unknown keys rejected
};

// One corpus clip prepared for training: the last clip_frames frames are the
// target window, the frame at its start is the anchor and the frames up to
// and including it are history candidates.
struct TrainClip {
    Tensor first_rgb;   // [1 x 3 x H x W]
    Tensor hist_rgb;    // [n x 3 x H x W], oldest first, ends at the anchor
    Tensor z_window;    // [F x C x h x w] clean latents
    Tensor depth_norm;  // [F x 1 x H x W], normalized over the whole clip
    Tensor c_dense, c_sparse;
};

struct Dataset {
    std::vector<TrainClip> clips;
    std::int64_t clip_frames = 9;
};

Dataset build_dataset(const std::vector<scene::SceneClip>& corpus, const ae::Autoencoder& ae, std::int64_t clip_frames,
                      std::uint64_t seed);

// Everything random about one training example.
struct Sample {
    std::size_t clip = 0;
    int t = 1;
    Tensor eps;
    Tensor z0;     // clean window latents
    Tensor z_gt0;  // clean anchor latent
    ConditionPack pack;
    deg::DegradationChoice first_choice, hist_choice;
    ctrl::DataDegradeDraw data_draw;
    bool feature_degraded = false;
};

Sample draw_sample(const Dataset& data, const ae::Autoencoder& ae, const StageConfig& cfg, std::int64_t iter,
                   const deg::GenContext* gen, Rng& rng);

struct LossTerms {
    Tensor total;
    double eps = 0, cons = 0, deg = 0, gt = 0, temp = 0;
};

// Noise-prediction loss (boundary-weighted in loss mode) plus, with history
// enabled and N_H > 0, the temporal losses on the anchor frame.
LossTerms compute_loss(const ctrl::ControlledModel& model, const Sample& s, const StageConfig& cfg);

struct StepRecord {
    int stage = 0;
    std::int64_t iter = 0;
    double loss = 0, eps = 0, cons = 0, deg = 0, gt = 0, temp = 0;
    std::string degradation = "none";  // worst frame-level choice in the batch
    bool feature = false, data = false;
};
std::string log_header();
std::string log_row(const StepRecord& r);

class Trainer {
public:
    // `model` must already hold control branches for stages >= 1.
    Trainer(const Dataset& data, const ae::Autoencoder& ae, ctrl::ControlledModel model, StageConfig cfg, std::uint64_t seed);

    StepRecord step();
    std::int64_t iter() const { return iter_; }
    const StageConfig& config() const { return cfg_; }
    const ctrl::ControlledModel& model() const { return *model_; }
    // Base weights the generation-path degradation runs with.
    const diff::Backbone& frozen_base() const { return *frozen_; }

    // Parameters, optimizer moments, cursor and seed.
    CheckpointData checkpoint() const;
    static Trainer resume(const Dataset& data, const ae::Autoencoder& ae, const CheckpointData& ck);

private:
    const Dataset* data_;
    const ae::Autoencoder* ae_;
    std::unique_ptr<ctrl::ControlledModel> model_;
    std::unique_ptr<diff::Backbone> frozen_;
    StageConfig cfg_;
    std::uint64_t seed_;
    std::int64_t iter_ = 0;
    AdamW opt_;
    deg::GenContext gen_;
};

// Deep copy through the checkpoint format.
ctrl::ControlledModel copy_model(const ctrl::ControlledModel& m);
diff::Backbone copy_backbone(const diff::Backbone& b);

// Stage 1 entry: base from stage 0 plus half-copied branches.
ctrl::ControlledModel attach_controls(const ctrl::ControlledModel& base_only, Rng& rng, int control_blocks = 2);

struct StageResult {
    ctrl::ControlledModel model;
    std::vector<StepRecord> log;
};

// Runs the remaining iterations, appending to <out>/train_log.csv and
// refreshing <out>/stage{s}_last.ck; the finished model is saved as
// <out>/stage{s}.ck. A non-finite loss throws numeric_error, leaving the last
// good checkpoint in place.
StageResult run_stage(Trainer& trainer, const std::filesystem::path& out, const nlohmann::json& provenance,
                      const std::function<void(const StepRecord&)>& progress = {});

}  // namespace rollvid::pipe
