#pragma once

#include <vector>

#include "rollvid/tensor.hpp"

namespace rollvid {

// Everything one denoising call conditions on. Latents are [n x C x h x w].
struct ConditionPack {
    Tensor z_first;    // [1 x C x h x w] first-frame latent; undefined when dropped
    Tensor z_hist;     // [N_H x C x h x w]; undefined iff n_hist == 0
    Tensor c_dense;    // [F x C x h x w] encoded depth; undefined = no control
    Tensor c_sparse;   // [F x C x h x w] encoded pointmaps
    int n_hist = 0;
    float dense_scale = 1.0f;  // feature-level degradation factor on the dense path

    bool has_first() const { return z_first.defined(); }
    bool has_controls() const { return c_dense.defined() || c_sparse.defined(); }

    // One entry per latent frame position (history first, then clip frames):
    // 1 over history, 0 elsewhere.
    std::vector<float> history_mask(std::int64_t clip_frames) const;
    void validate(std::int64_t clip_frames, const Shape& frame_shape) const;
};

}  // namespace rollvid
