#pragma once

#include <functional>
#include <vector>

#include "rollvid/condition.hpp"
#include "rollvid/params.hpp"

namespace rollvid::diff {

// t = 0 is the clean level (alpha_bar = 1); betas are defined for t = 1 .. steps-1.
struct NoiseSchedule {
    int steps = 0;
    std::vector<double> beta;       // beta[0] = 0
    std::vector<double> alpha_bar;  // alpha_bar[0] = 1, strictly decreasing

    static NoiseSchedule linear(int steps = 50, double beta_first = 1e-3, double beta_last = 0.2);
    double ab(int t) const;
};

// sqrt(ab) z0 + sqrt(1 - ab) eps
Tensor add_noise_ab(const Tensor& z0, double alpha_bar, const Tensor& eps);
Tensor add_noise(const NoiseSchedule& s, const Tensor& z0, int t, const Tensor& eps);

// Predicts eps for the clip latents z_t [F x C x h x w].
using EpsModel = std::function<Tensor(const Tensor& z_t, int t, const ConditionPack& pack)>;

// Mean over frames of w_f * mean_sq(eps_f - eps_hat_f); empty weights = all ones.
Tensor eps_loss(const EpsModel& model, const NoiseSchedule& s, const ConditionPack& pack, const Tensor& z0, int t,
                const Tensor& eps, const std::vector<float>& frame_weights = {});
Tensor frame_weighted_mse(const Tensor& pred, const Tensor& target, const std::vector<float>& frame_weights);

// Deterministic DDIM from level t_start to clean using `steps` model calls
// (fewer if t_start < steps). t_start = 0 returns z_start. Runs without tape.
Tensor denoise(const EpsModel& model, const NoiseSchedule& s, const Tensor& z_start, int t_start, int steps,
               const ConditionPack& pack);
std::vector<int> ddim_timesteps(int t_start, int steps);

// Clean-latent estimate from a noisy latent and an eps prediction.
Tensor predict_x0(const NoiseSchedule& s, const Tensor& z_t, int t, const Tensor& eps_hat);

struct BackboneConfig {
    int latent_channels = 4;
    int latent_h = 8, latent_w = 8;
    int patch = 2;
    int width = 64;
    int heads = 4;
    int ff = 128;
    int blocks = 4;
    int hist_max = 4;  // frame positions reserved for history
    int clip_frames = 9;

    int tokens_per_frame() const { return (latent_h / patch) * (latent_w / patch); }
    int token_features() const { return (2 * latent_channels + 2) * patch * patch; }
};

struct Block {
    Tensor ln1_g, ln1_b, wq, bq, wk, bk, wv, bv, wo, bo;
    Tensor ln2_g, ln2_b, w1, b1, w2, b2;
    Tensor tp_w, tp_b;  // time projection
    int heads = 4;

    static Block init(Rng& rng, int width, int ff, int heads, int temb_dim);
    Tensor forward(const Tensor& h, const Tensor& temb) const;
    std::vector<NamedParam> params(const std::string& prefix);
};

// Activations between embedding and head. Rows are tokens, history frames first.
struct TokenState {
    Tensor hidden;      // [(N_H + F) * P x width]
    Tensor temb;        // [1 x width]
    std::int64_t hist_tokens = 0;
    std::int64_t clip_frames = 0;
};

class Backbone {
public:
    Backbone() = default;
    static Backbone init(const BackboneConfig& cfg, Rng& rng);

    const BackboneConfig& config() const { return cfg_; }
    bool ready() const { return in_w.defined(); }

    TokenState embed(const Tensor& z_t, int t, const ConditionPack& pack) const;
    Tensor run_block(int l, const Tensor& h, const Tensor& temb) const { return blocks[static_cast<std::size_t>(l)].forward(h, temb); }
    Tensor head(const TokenState& st) const;
    // Base-only eps prediction.
    Tensor forward(const Tensor& z_t, int t, const ConditionPack& pack) const;

    std::vector<NamedParam> params();

    Tensor in_w, in_b, patch_pos;
    Tensor t1_w, t1_b, t2_w, t2_b;
    std::vector<Block> blocks;
    Tensor out_g, out_b, out_w, out_bias;

private:
    BackboneConfig cfg_{};
};

// Fixed sinusoidal embedding of a scalar position.
std::vector<float> sinusoid(double pos, int dim);

}  // namespace rollvid::diff
