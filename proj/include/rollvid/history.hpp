#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "rollvid/degrade.hpp"

namespace rollvid::hist {

// lp = 3x3 box blur per channel, hp = z - lp rounded once; lp + hp recovers z
// to within half an ulp of hp (exactly when z - lp is representable).
struct FreqSplit {
    Tensor lp, hp;
};
FreqSplit freq_split(const Tensor& z);

struct TemporalWeights {
    double deg = 0.2;
    double gt = 0.15;
    double cons = 0.5;
};

// Squared distances are means over elements.
struct TemporalLosses {
    Tensor cons, deg, gt, temp;
};
TemporalLosses temporal_losses(const Tensor& z_hat0, const Tensor& z_hist_last, const Tensor& z_first_degraded,
                               const Tensor& z_gt0, const TemporalWeights& w = {});

inline constexpr std::array<float, 3> kBoundaryWeights{0.05f, 0.325f, 0.757f};

// Multiplier per frame: the three leading frames get kBoundaryWeights, the rest 1.
std::vector<float> boundary_frame_weights(std::size_t frames);
std::vector<float> boundary_weights(const std::vector<float>& per_frame_losses);

// "loss" weights the per-frame eps loss; "blend" pulls the leading sampled
// frames toward the anchor latent instead.
enum class BoundaryMode { off, loss, blend };
BoundaryMode boundary_mode_from(const std::string& s);
const char* boundary_mode_name(BoundaryMode m);
// z_f <- w_f z_f + (1 - w_f) anchor for the leading frames.
Tensor blend_boundary(const Tensor& z, const Tensor& anchor);

struct AssembleOptions {
    int hist_max = 4;
    bool degrade = false;
    deg::DegradationConfig degradation{};
    std::optional<int> force_n_hist;  // otherwise uniform over [0, min(hist_max, available)]
};

struct Assembled {
    ConditionPack pack;
    deg::DegradationChoice first_choice, hist_choice;
    Tensor z_first_clean;  // encoding of the undegraded first frame
};

// first_frame [1 x 3 x H x W]; history_frames [n x 3 x H x W] (oldest first,
// may be undefined); control latents may be undefined.
Assembled assemble_condition(const ae::Autoencoder& ae, const Tensor& first_frame, const Tensor& history_frames,
                             const Tensor& c_dense, const Tensor& c_sparse, const AssembleOptions& opts,
                             const deg::GenContext* gen, Rng& rng);

}  // namespace rollvid::hist
