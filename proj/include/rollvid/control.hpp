#pragma once

#include <optional>
#include <vector>

#include "rollvid/autoencoder.hpp"
#include "rollvid/diffusion.hpp"

namespace rollvid::ctrl {

// One control modality: patch embedding of its latent plus copies of the
// first M base blocks at half width.
struct Branch {
    Tensor embed_w, embed_b;  // [C*p*p x W/2]
    std::vector<diff::Block> blocks;

    std::vector<NamedParam> params(const std::string& prefix);
};

struct ControlBranches {
    Branch dense, sparse;
    std::vector<Tensor> phi;         // [W/2 x W], bias-free, zero at init
    std::vector<int> dense_channels;  // even base channels
    std::vector<int> sparse_channels; // odd base channels
    Tensor dense_select, sparse_select;  // fixed [W x W/2] column pickers

    int depth() const { return static_cast<int>(phi.size()); }
    bool ready() const { return !phi.empty(); }
    std::vector<NamedParam> params();
};

// Even/odd index sets of 0..n-1.
std::vector<int> even_indices(int n);
std::vector<int> odd_indices(int n);

// Copies of base blocks 0..m-1: every width- and ff-indexed dimension keeps
// the even (dense) or odd (sparse) half. Time projections keep all input rows.
ControlBranches half_copy_init(const diff::Backbone& base, int m, Rng& rng);

// Slice of a base block restricted to the given width and ff channel sets.
diff::Block slice_block(const diff::Block& b, const std::vector<int>& width_idx, const std::vector<int>& ff_idx);

// base + (lambda * dense + sparse) phi. Either feature tensor may be undefined.
Tensor fuse(const Tensor& base_out, const Tensor& dense, const Tensor& sparse, const Tensor& phi, float lambda);

struct BranchTokens {
    Tensor dense, sparse;  // undefined when that control is absent
};

struct FuseStep {
    Tensor hidden;
    BranchTokens next;
};

// One controlled block: base block l over all tokens, branch blocks over their
// clip tokens, fused onto the clip rows.
FuseStep fuse_block(const diff::Backbone& base, const ControlBranches& ctrl, int l, const Tensor& hidden,
                    std::int64_t hist_tokens, const BranchTokens& branch, const Tensor& temb, float lambda);

class ControlledModel {
public:
    diff::Backbone base;
    ControlBranches ctrl;

    // Branch entry tokens for the controls in `pack`.
    BranchTokens branch_inputs(const diff::TokenState& st, const ConditionPack& pack) const;
    Tensor forward(const Tensor& z_t, int t, const ConditionPack& pack) const;
    diff::EpsModel eps_model() const;

    std::vector<NamedParam> params();
    CheckpointData to_checkpoint() const;
    static ControlledModel from_checkpoint(const CheckpointData& ck);
};

// Feature-level degradation: with probability alpha draw lambda ~ U[0.05, 1].
inline constexpr double kFeatureAlpha = 0.15;
inline constexpr double kLambdaMin = 0.05;
float draw_feature_scale(double alpha, Rng& rng);
std::pair<Tensor, float> feature_degrade(const Tensor& features, double alpha, Rng& rng);

// Data-level degradation of dense control maps [B x C x H x W].
inline constexpr int kFusionScales = 5;
inline constexpr double kDataBeta = 0.10;

struct ScaleFusionDraw {
    int excluded = -1;            // index into factors 1, 1/2, ..., 1/2^n
    std::vector<int> kept;
    std::vector<double> weights;  // one per kept scale, summing to 1
};

// Weighted sum of down-then-up resampled copies; factor 2^-j for each j.
Tensor scale_blend(const Tensor& d, const std::vector<int>& levels, const std::vector<double>& weights);
Tensor random_scale_fusion(const Tensor& d, int n, Rng& rng, ScaleFusionDraw* draw = nullptr);
Tensor adaptive_blur(const Tensor& d, Rng& rng, int* kernel = nullptr);

struct DataDegradeDraw {
    bool applied = false, fused = false, blurred = false;
};
Tensor apply_data_degradation(const Tensor& d, double beta, Rng& rng, DataDegradeDraw* draw = nullptr);

// Control latents: depth [F x 1 x H x W] is tiled to three channels and both
// streams go through the frame encoder.
Tensor encode_dense(const ae::Autoencoder& ae, const Tensor& depth);
Tensor encode_sparse(const ae::Autoencoder& ae, const Tensor& pointmap);

}  // namespace rollvid::ctrl
