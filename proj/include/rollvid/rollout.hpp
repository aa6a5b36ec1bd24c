#pragma once

#include <filesystem>
#include <functional>
#include <vector>

#include "json.hpp"
#include "rollvid/control.hpp"
#include "rollvid/history.hpp"
#include "rollvid/metrics.hpp"
#include "rollvid/scenegen.hpp"

namespace rollvid::roll {

using bench::Window;

// Nearest-rank percentile range of a value set.
struct NormRange {
    float lo = 0.0f, hi = 0.0f;  // p5, p95
};
NormRange percentile_range(std::span<const float> values, double p_lo = 5.0, double p_hi = 95.0);
// Clip to [lo, hi], then map to [0, 1]; lo == hi gives 0.5 everywhere.
Tensor apply_normalize(const Tensor& x, NormRange r);
// Both steps over all values of the input.
Tensor global_normalize(const Tensor& depth);

// Windows of clip_frames stepping by clip_frames - overlap; the last one ends
// at total_frames.
std::vector<Window> plan_clips(std::int64_t total_frames, std::int64_t clip_frames, std::int64_t overlap);
// Smallest reachable total with the given number of windows.
std::int64_t frames_for_windows(std::int64_t windows, std::int64_t clip_frames, std::int64_t overlap);

// Tracks seeded fresh at the window start; colours read the given
// normalized depth of the window ([F x 1 x H x W]).
Tensor recompute_sparse_per_clip(const scene::SceneSpec& spec, Window w, const Tensor& normalized_depth_window,
                                 int num_points, Rng& rng);

struct RolloutOptions {
    std::int64_t clip_frames = 9;
    std::int64_t overlap = 1;
    int t_start = 49;
    int steps = 10;
    int hist_max = 4;
    bool use_history = true;
    bool global_norm = true;     // else every window is normalized on its own
    bool unified_noise = true;   // else each clip draws fresh noise
    hist::BoundaryMode boundary = hist::BoundaryMode::loss;  // blend applies at sampling
    int num_points = scene::kTrackGrid * scene::kTrackGrid;
    std::uint64_t seed = 0;

    nlohmann::json to_json() const;
};

// Dense stream [T x 1 x H x W] (raw depth) and the scene to re-track per window.
struct ControlStreams {
    Tensor depth;
    scene::SceneSpec spec;
};

using FrameSink = std::function<void(std::int64_t index, const Tensor& frame)>;

struct ClipRecord {
    Window window;
    std::uint64_t noise_hash = 0;
    std::uint64_t cond_hash = 0;       // pixels of the frame encoded as z_I
    std::uint64_t last_frame_hash = 0; // pixels of the clip's final output frame
    int n_hist = 0;
};

struct RolloutResult {
    std::vector<ClipRecord> clips;
    std::int64_t frames_written = 0;
    std::int64_t peak_loop_bytes = 0;  // tensor storage above the pre-loop baseline
};

std::uint64_t tensor_hash(const Tensor& t);

// first_frame [1 x 3 x H x W]. Frames reach the sink in order, each exactly once.
RolloutResult autoregressive_rollout(const ctrl::ControlledModel& model, const ae::Autoencoder& ae, const Tensor& first_frame,
                                     const ControlStreams& controls, const std::vector<Window>& plan,
                                     const RolloutOptions& opts, const FrameSink& sink);

// Writes frame_{i}.lvt under dir/frames and returns the manifest JSON
// (also written to dir/manifest.json).
nlohmann::json write_rollout(const std::filesystem::path& dir, const ctrl::ControlledModel& model, const ae::Autoencoder& ae,
                             const Tensor& first_frame, const ControlStreams& controls, const std::vector<Window>& plan,
                             const RolloutOptions& opts, const nlohmann::json& provenance);

}  // namespace rollvid::roll
