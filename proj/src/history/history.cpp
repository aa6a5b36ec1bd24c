#include "rollvid/history.hpp"

#include <cmath>

#include "rollvid/ops.hpp"

namespace rollvid::hist {

using namespace rollvid::ops;

FreqSplit freq_split(const Tensor& z) {
    if (z.rank() < 2) throw contract_error("freq_split: needs spatial dims");
    auto lp = box_blur(z, 3);
    auto hp = sub(z, lp);
    return {lp, hp};
}

TemporalLosses temporal_losses(const Tensor& z_hat0, const Tensor& z_hist_last, const Tensor& z_first_degraded,
                               const Tensor& z_gt0, const TemporalWeights& w) {
    const auto& s = z_hat0.shape();
    if (z_hist_last.shape() != s || z_first_degraded.shape() != s || z_gt0.shape() != s)
        throw contract_error("temporal_losses: all four latents must share a shape");
    TemporalLosses out;
    const auto pred = freq_split(z_hat0);
    out.cons = mse(z_hist_last, z_hat0);
    out.deg = mse(freq_split(z_first_degraded).lp, pred.lp);
    out.gt = mse(freq_split(z_gt0).hp, pred.hp);
    out.temp = add(add(mul(out.deg, static_cast<float>(w.deg)), mul(out.gt, static_cast<float>(w.gt))),
                   mul(out.cons, static_cast<float>(w.cons)));
    return out;
}

std::vector<float> boundary_frame_weights(std::size_t frames) {
    std::vector<float> w(frames, 1.0f);
    for (std::size_t i = 0; i < std::min(frames, kBoundaryWeights.size()); ++i) w[i] = kBoundaryWeights[i];
    return w;
}

std::vector<float> boundary_weights(const std::vector<float>& per_frame_losses) {
    auto w = boundary_frame_weights(per_frame_losses.size());
    for (std::size_t i = 0; i < w.size(); ++i) w[i] *= per_frame_losses[i];
    return w;
}

BoundaryMode boundary_mode_from(const std::string& s) {
    if (s == "off") return BoundaryMode::off;
    if (s == "loss") return BoundaryMode::loss;
    if (s == "blend") return BoundaryMode::blend;
    throw contract_error("unknown boundary mode '" + s + "'");
}

const char* boundary_mode_name(BoundaryMode m) {
    switch (m) {
        case BoundaryMode::off: return "off";
        case BoundaryMode::loss: return "loss";
        case BoundaryMode::blend: return "blend";
    }
    return "?";
}

Tensor blend_boundary(const Tensor& z, const Tensor& anchor) {
    const auto F = z.dim(0);
    const auto fsz = z.numel() / F;
    if (anchor.numel() != fsz) throw contract_error("blend_boundary: anchor must be one frame");
    std::vector<float> out(z.data().begin(), z.data().end());
    const auto w = boundary_frame_weights(static_cast<std::size_t>(F));
    for (std::int64_t f = 0; f < std::min<std::int64_t>(F, 3); ++f)
        for (std::int64_t i = 0; i < fsz; ++i) {
            auto& v = out[static_cast<std::size_t>(f * fsz + i)];
            v = w[static_cast<std::size_t>(f)] * v + (1.0f - w[static_cast<std::size_t>(f)]) * anchor.data()[static_cast<std::size_t>(i)];
        }
    return Tensor::from(z.shape(), std::move(out));
}

Assembled assemble_condition(const ae::Autoencoder& ae, const Tensor& first_frame, const Tensor& history_frames,
                             const Tensor& c_dense, const Tensor& c_sparse, const AssembleOptions& opts,
                             const deg::GenContext* gen, Rng& rng) {
    if (!ae.ready()) throw contract_error("assemble_condition: autoencoder missing");
    NoGradGuard ng;
    Assembled a;
    const int available = history_frames.defined() ? static_cast<int>(history_frames.dim(0)) : 0;
    const int cap = std::min(opts.hist_max, available);
    int n_hist = 0;
    if (opts.force_n_hist) {
        n_hist = *opts.force_n_hist;
        if (n_hist < 0 || n_hist > cap) throw contract_error("assemble_condition: forced history count exceeds what is available");
    } else {
        n_hist = static_cast<int>(rng.range(0, cap));
    }
    if (first_frame.defined()) {
        a.z_first_clean = ae.encode(first_frame);
        Tensor frame = first_frame;
        if (opts.degrade) {
            a.first_choice = deg::sample_degradation(opts.degradation, rng);
            frame = deg::apply_degradation(ae, first_frame, a.first_choice, gen, rng);
        }
        a.pack.z_first = a.first_choice.kind == deg::Kind::none ? a.z_first_clean : ae.encode(frame);
    }
    if (n_hist > 0) {
        auto frames = slice_rows(history_frames.reshape({available, history_frames.numel() / available}), available - n_hist, available);
        Shape hs = history_frames.shape();
        hs[0] = n_hist;
        Tensor h = frames.reshape(hs);
        if (opts.degrade) {
            a.hist_choice = deg::sample_degradation(opts.degradation, rng);
            h = deg::apply_degradation(ae, h, a.hist_choice, gen, rng);
        }
        a.pack.z_hist = ae.encode(h);
        a.pack.n_hist = n_hist;
    }
    a.pack.c_dense = c_dense;
    a.pack.c_sparse = c_sparse;
    return a;
}

}  // namespace rollvid::hist
