#pragma once

#include <filesystem>
#include <optional>
#include <vector>

#include "rollvid/params.hpp"
#include "rollvid/scenegen.hpp"

namespace rollvid::ae {

struct AeConfig {
    int channels = 3;
    int height = 32;
    int width = 32;
    int latent_channels = 4;  // latent is latent_channels x H/4 x W/4
    int hidden1 = 32;
    int hidden2 = 64;
};

// Per-frame encoder/decoder. Two stride-2 patch maps down, mirrored up.
class Autoencoder {
public:
    Autoencoder() = default;
    static Autoencoder init(const AeConfig& cfg, Rng& rng);

    bool ready() const { return enc_w1.defined(); }
    const AeConfig& config() const { return cfg_; }
    Shape latent_shape(std::int64_t frames) const;

    // frames [F x 3 x H x W] -> [F x C_z x H/4 x W/4]; differentiable.
    Tensor encode(const Tensor& frames) const;
    // Output clamped to [0, 1].
    Tensor decode(const Tensor& z) const;
    Tensor decode_raw(const Tensor& z) const;
    // (D o E)^K applied under no-grad.
    Tensor roundtrip(const Tensor& frames, int k) const;

    std::vector<NamedParam> params();
    CheckpointData to_checkpoint() const;
    static Autoencoder from_checkpoint(const CheckpointData& ck);
    Autoencoder clone() const;

    float latent_scale = 1.0f;

    Tensor enc_w1, enc_b1, enc_w2, enc_b2, enc_w3, enc_b3;
    Tensor dec_w1, dec_b1, dec_w2, dec_b2, dec_w3, dec_b3, dec_w4, dec_b4;

private:
    AeConfig cfg_{};
    void require_ready() const;
};

struct AeTrainOptions {
    int epochs = 20;
    int batch = 2;
    double lr = 2e-3;
    AeConfig arch{};
    std::optional<std::filesystem::path> checkpoint;
};

struct AeTrainResult {
    Autoencoder ae;
    double initial_loss = 0.0;          // train-split MSE of the initialized params
    std::vector<double> epoch_losses;   // train-split MSE after each epoch
};

// Frames from every clip form the train split. Throws numeric_error on a
// non-finite loss.
AeTrainResult train_ae(const std::vector<scene::SceneClip>& corpus, const AeTrainOptions& opts, Rng& rng);

// Flattens clips into a single [N x 3 x H x W] frame tensor.
Tensor stack_frames(const std::vector<scene::SceneClip>& clips);

}  // namespace rollvid::ae
