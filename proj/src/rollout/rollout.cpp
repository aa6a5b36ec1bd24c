#include "rollvid/rollout.hpp"

#include <algorithm>
#include <cmath>
#include <deque>

#include "rollvid/ops.hpp"
#include "rollvid/serialize.hpp"

namespace rollvid::roll {

NormRange percentile_range(std::span<const float> values, double p_lo, double p_hi) {
    if (values.empty()) throw contract_error("global_normalize: empty input");
    if (!all_finite(values)) throw numeric_error("global_normalize: non-finite depth");
    std::vector<float> v(values.begin(), values.end());
    const auto n = static_cast<double>(v.size());
    auto at_rank = [&](double p) {
        // nearest rank, 1-based
        auto r = static_cast<std::size_t>(std::ceil(p / 100.0 * n));
        r = std::clamp<std::size_t>(r, 1, v.size());
        std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(r - 1), v.end());
        return v[r - 1];
    };
    NormRange out;
    out.lo = at_rank(p_lo);
    out.hi = at_rank(p_hi);
    return out;
}

Tensor apply_normalize(const Tensor& x, NormRange r) {
    std::vector<float> out(static_cast<std::size_t>(x.numel()));
    const auto d = x.data();
    if (r.hi == r.lo) {
        std::fill(out.begin(), out.end(), 0.5f);
    } else {
        const float span = r.hi - r.lo;
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = (std::clamp(d[i], r.lo, r.hi) - r.lo) / span;
    }
    return Tensor::from(x.shape(), std::move(out));
}

Tensor global_normalize(const Tensor& depth) {
    if (!depth.defined() || depth.numel() == 0) throw contract_error("global_normalize: empty input");
    return apply_normalize(depth, percentile_range(depth.data()));
}

std::vector<Window> plan_clips(std::int64_t total, std::int64_t clip, std::int64_t overlap) {
    if (overlap < 0 || clip <= overlap) throw contract_error("plan_clips: need clip_frames > overlap >= 0");
    if (total < clip || (total - clip) % (clip - overlap) != 0)
        throw contract_error("plan_clips: total " + std::to_string(total) + " is not reachable with clip " +
                             std::to_string(clip) + " and overlap " + std::to_string(overlap));
    std::vector<Window> w;
    for (std::int64_t s = 0; s + clip <= total; s += clip - overlap) w.push_back({s, s + clip});
    return w;
}

std::int64_t frames_for_windows(std::int64_t windows, std::int64_t clip, std::int64_t overlap) {
    if (windows < 1) throw contract_error("frames_for_windows: need at least one window");
    return clip + (windows - 1) * (clip - overlap);
}

Tensor recompute_sparse_per_clip(const scene::SceneSpec& spec, Window w, const Tensor& norm_depth, int num_points, Rng& rng) {
    const auto F = static_cast<int>(w.second - w.first);
    const auto tracks = scene::seed_tracks(spec, static_cast<int>(w.first), static_cast<int>(w.second));
    return scene::render_pointmap(tracks, F, spec.height, spec.width, num_points, rng, &norm_depth);
}

nlohmann::json RolloutOptions::to_json() const {
    return {{"clip_frames", clip_frames}, {"overlap", overlap},       {"t_start", t_start},
            {"steps", steps},             {"hist_max", hist_max},     {"use_history", use_history},
            {"global_norm", global_norm}, {"unified_noise", unified_noise},
            {"boundary", hist::boundary_mode_name(boundary)},         {"num_points", num_points},
            {"seed", seed}};
}

std::uint64_t tensor_hash(const Tensor& t) {
    std::string bytes;
    for (auto d : t.shape()) bytes.append(reinterpret_cast<const char*>(&d), sizeof d);
    bytes.append(reinterpret_cast<const char*>(t.data().data()), t.data().size_bytes());
    return fnv1a64(bytes);
}

namespace {

Tensor frames_slice(const Tensor& x, std::int64_t begin, std::int64_t end) {
    const auto per = x.numel() / x.dim(0);
    Shape s = x.shape();
    s[0] = end - begin;
    return ops::slice_rows(x.reshape({x.dim(0), per}), begin, end).reshape(s);
}

Tensor stack(const std::vector<Tensor>& frames) {
    std::vector<Tensor> rows;
    for (const auto& f : frames) rows.push_back(f.reshape({1, f.numel()}));
    Shape s = frames.front().shape();
    s[0] = static_cast<std::int64_t>(frames.size());
    return ops::concat_rows(rows).reshape(s);
}

}  // namespace

RolloutResult autoregressive_rollout(const ctrl::ControlledModel& model, const ae::Autoencoder& ae, const Tensor& first_frame,
                                     const ControlStreams& controls, const std::vector<Window>& plan,
                                     const RolloutOptions& opts, const FrameSink& sink) {
    if (plan.empty()) throw contract_error("rollout: empty plan");
    if (!ae.ready() || !model.base.ready()) throw contract_error("rollout: model or autoencoder missing");
    const auto C = opts.clip_frames, O = opts.overlap;
    for (std::size_t i = 0; i < plan.size(); ++i) {
        if (plan[i].second - plan[i].first != C) throw contract_error("rollout: window length differs from clip_frames");
        if (i && plan[i].first != plan[i - 1].second - O) throw contract_error("rollout: windows must overlap by `overlap`");
    }
    if (plan.front().first != 0 || controls.depth.dim(0) < plan.back().second)
        throw contract_error("rollout: control stream shorter than the plan");
    if (first_frame.shape() != Shape{1, 3, controls.spec.height, controls.spec.width})
        throw contract_error("rollout: first frame must be [1 x 3 x H x W]");

    NoGradGuard ng;
    const auto sched = diff::NoiseSchedule::linear();
    const auto eps_model = model.eps_model();
    const NormRange global = percentile_range(controls.depth.data());
    const Shape lat = ae.latent_shape(C);
    auto draw_noise = [&](const std::string& label) {
        Rng r(opts.seed, label);
        return Tensor::from(lat, r.normal_vector(static_cast<std::size_t>(shape_numel(lat))));
    };

    RolloutResult res;
    const auto baseline = memory_stats().live_bytes;
    reset_peak_memory();
    {
        const Tensor shared = opts.unified_noise ? draw_noise("noise") : Tensor{};
        std::deque<std::pair<std::int64_t, Tensor>> recent;  // output frames still needed
        const auto keep = static_cast<std::size_t>(std::max<std::int64_t>(opts.hist_max, O));
        auto emit = [&](std::int64_t idx, const Tensor& f) {
            sink(idx, f);
            ++res.frames_written;
            recent.emplace_back(idx, f);
            while (recent.size() > keep) recent.pop_front();
        };
        emit(0, first_frame);

        for (std::size_t i = 0; i < plan.size(); ++i) {
            const auto [start, end] = plan[i];
            ClipRecord rec;
            rec.window = plan[i];

            const auto depth_w = frames_slice(controls.depth, start, end);
            const auto norm_w = opts.global_norm ? apply_normalize(depth_w, global) : global_normalize(depth_w);
            Rng pts(opts.seed, "points-" + std::to_string(i));
            ConditionPack pack;
            pack.c_dense = ctrl::encode_dense(ae, norm_w);
            pack.c_sparse = ctrl::encode_sparse(ae, recompute_sparse_per_clip(controls.spec, plan[i], norm_w, opts.num_points, pts));

            Tensor cond;
            for (const auto& [idx, f] : recent)
                if (idx == start) cond = f;
            if (!cond.defined()) throw contract_error("rollout: conditioning frame no longer held");
            rec.cond_hash = tensor_hash(cond);
            pack.z_first = ae.encode(cond);
            if (opts.use_history && opts.hist_max > 0) {
                std::vector<Tensor> h;
                for (const auto& [idx, f] : recent)
                    if (idx <= start) h.push_back(f);
                if (h.size() > static_cast<std::size_t>(opts.hist_max)) h.erase(h.begin(), h.end() - opts.hist_max);
                pack.z_hist = ae.encode(stack(h));
                pack.n_hist = static_cast<int>(h.size());
            }
            rec.n_hist = pack.n_hist;

            const Tensor noise = opts.unified_noise ? shared : draw_noise("noise-" + std::to_string(i));
            rec.noise_hash = tensor_hash(noise);
            auto z = diff::denoise(eps_model, sched, noise, opts.t_start, opts.steps, pack);
            if (opts.boundary == hist::BoundaryMode::blend) z = hist::blend_boundary(z, pack.z_first);
            if (!all_finite(z.data())) throw numeric_error("rollout: non-finite latent in clip " + std::to_string(i));
            const auto frames = ae.decode(z);
            if (!all_finite(frames.data())) throw numeric_error("rollout: non-finite frame in clip " + std::to_string(i));

            const std::int64_t first_new = i == 0 ? 1 : O;
            for (std::int64_t f = first_new; f < C; ++f) emit(start + f, frames_slice(frames, f, f + 1));
            rec.last_frame_hash = tensor_hash(recent.back().second);
            res.clips.push_back(rec);
        }
    }
    res.peak_loop_bytes = memory_stats().peak_bytes - baseline;
    return res;
}

nlohmann::json write_rollout(const std::filesystem::path& dir, const ctrl::ControlledModel& model, const ae::Autoencoder& ae,
                             const Tensor& first_frame, const ControlStreams& controls, const std::vector<Window>& plan,
                             const RolloutOptions& opts, const nlohmann::json& provenance) {
    std::filesystem::create_directories(dir / "frames");
    std::uint64_t digest = 0xcbf29ce484222325ull;
    auto sink = [&](std::int64_t idx, const Tensor& f) {
        write_tensors(dir / "frames" / ("frame_" + std::to_string(idx) + ".lvt"), {f});
        const auto h = tensor_hash(f);
        digest = fnv1a64(std::string_view(reinterpret_cast<const char*>(&h), sizeof h), digest);
    };
    const auto res = autoregressive_rollout(model, ae, first_frame, controls, plan, opts, sink);
    nlohmann::json windows = nlohmann::json::array(), clips = nlohmann::json::array();
    for (const auto& w : plan) windows.push_back({w.first, w.second});
    for (const auto& c : res.clips)
        clips.push_back({{"window", {c.window.first, c.window.second}}, {"noise_hash", c.noise_hash},
                         {"cond_hash", c.cond_hash}, {"n_hist", c.n_hist}});
    nlohmann::json m{{"format_version", 1},
                     {"options", opts.to_json()},
                     {"plan", windows},
                     {"frames", res.frames_written},
                     {"frame_digest", digest},
                     {"clips", clips},
                     {"provenance", provenance}};
    write_file_atomic(dir / "manifest.json", m.dump(2));
    return m;
}

}  // namespace rollvid::roll
