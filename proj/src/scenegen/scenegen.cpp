#include "rollvid/scenegen.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "rollvid/serialize.hpp"

namespace rollvid::scene {

using nlohmann::json;

std::array<float, 3> depth_color(float d) { return {d, 1.0f - d, 0.5f}; }

float depth_shade(float d) { return 1.0f - 0.5f * d; }

namespace {

bool covers(const ShapeSpec& s, int frame, float px, float py) {
    const float cx = s.x0 + s.vx * static_cast<float>(frame);
    const float cy = s.y0 + s.vy * static_cast<float>(frame);
    const float dx = px - cx, dy = py - cy;
    if (s.kind == ShapeKind::circle) return dx * dx + dy * dy <= s.size * s.size;
    return std::abs(dx) <= s.size && std::abs(dy) <= s.size;
}

bool on_screen(const ShapeSpec& s, int frame, int H, int W) {
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x)
            if (covers(s, frame, x + 0.5f, y + 0.5f)) return true;
    return false;
}

const char* kind_name(ShapeKind k) { return k == ShapeKind::circle ? "circle" : "rect"; }

}  // namespace

int front_shape(const SceneSpec& spec, int frame, float px, float py) {
    int best = -1;
    for (int i = 0; i < static_cast<int>(spec.shapes.size()); ++i) {
        const auto& s = spec.shapes[static_cast<std::size_t>(i)];
        if (covers(s, frame, px, py) && (best < 0 || s.depth_layer < spec.shapes[static_cast<std::size_t>(best)].depth_layer))
            best = i;
    }
    return best;
}

void validate_spec(const SceneSpec& spec) {
    if (spec.num_frames <= 0 || spec.height <= 0 || spec.width <= 0)
        throw contract_error("scene spec: frame count and size must be positive");
    for (std::size_t i = 0; i < spec.shapes.size(); ++i) {
        const float d = spec.shapes[i].depth_layer;
        if (!(d > 0.0f && d <= 1.0f)) throw contract_error("scene spec: depth_layer must lie in (0, 1]");
        if (!(spec.shapes[i].size > 0.0f)) throw contract_error("scene spec: shape size must be positive");
        for (std::size_t j = 0; j < i; ++j)
            if (spec.shapes[j].depth_layer == d) throw contract_error("scene spec: two shapes share a depth layer");
    }
    for (std::size_t i = 0; i < spec.shapes.size(); ++i) {
        bool seen = false;
        for (int f = 0; f < spec.num_frames && !seen; ++f) seen = on_screen(spec.shapes[i], f, spec.height, spec.width);
        if (!seen) throw contract_error("scene spec: shape " + std::to_string(i) + " is off-screen for the entire clip");
    }
    for (int f = 0; f < spec.num_frames; ++f) {
        const bool any = std::any_of(spec.shapes.begin(), spec.shapes.end(),
                                     [&](const ShapeSpec& s) { return on_screen(s, f, spec.height, spec.width); });
        if (!any) throw contract_error("scene spec: no shape visible in frame " + std::to_string(f));
    }
}

SceneSpec random_scene_spec(std::uint64_t seed, int num_frames, int height, int width, const SceneOptions& opts) {
    Rng rng(seed, "scene");
    SceneSpec spec;
    spec.seed = seed;
    spec.num_frames = num_frames;
    spec.height = height;
    spec.width = width;
    spec.background = {static_cast<float>(rng.uniform(0.2, 0.6)), static_cast<float>(rng.uniform(0.2, 0.6)),
                       static_cast<float>(rng.uniform(0.2, 0.6))};

    // Long clips get extra shapes that enter the frame part-way through.
    const int base = static_cast<int>(rng.range(opts.min_shapes, opts.max_shapes));
    const int entering = num_frames > 24 ? num_frames / 24 : 0;
    const int n = base + entering;

    std::vector<float> layers(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i)
        layers[static_cast<std::size_t>(i)] = 0.1f + 0.8f * (static_cast<float>(i) + static_cast<float>(rng.uniform(0.1, 0.9))) / n;
    for (int i = n - 1; i > 0; --i) std::swap(layers[static_cast<std::size_t>(i)], layers[rng.below(static_cast<std::uint64_t>(i) + 1)]);

    for (int i = 0; i < n; ++i) {
        ShapeSpec s;
        s.kind = rng.bernoulli(0.5) ? ShapeKind::circle : ShapeKind::rect;
        s.depth_layer = layers[static_cast<std::size_t>(i)];
        s.size = static_cast<float>(rng.uniform(opts.min_size, opts.max_size));
        for (auto& c : s.color) c = static_cast<float>(rng.uniform(0.25, 1.0));
        // shape 0 is slow so something stays in view
        const float speed = i == 0 ? 0.1f * opts.max_speed : opts.max_speed;
        s.vx = static_cast<float>(rng.uniform(-speed, speed));
        s.vy = static_cast<float>(rng.uniform(-speed, speed));
        const float ex = static_cast<float>(rng.uniform(4.0, width - 4.0));
        const float ey = static_cast<float>(rng.uniform(4.0, height - 4.0));
        const float enter_frame = i >= base ? static_cast<float>(rng.uniform(0.0, num_frames - 1.0)) : 0.0f;
        s.x0 = ex - s.vx * enter_frame;
        s.y0 = ey - s.vy * enter_frame;
        spec.shapes.push_back(s);
    }

    // Shapes that never show up are dropped; keep the anchor in view.
    std::erase_if(spec.shapes, [&](const ShapeSpec& s) {
        for (int f = 0; f < num_frames; ++f)
            if (on_screen(s, f, height, width)) return false;
        return true;
    });
    auto visible_every_frame = [&] {
        for (int f = 0; f < num_frames; ++f)
            if (std::none_of(spec.shapes.begin(), spec.shapes.end(), [&](const ShapeSpec& s) { return on_screen(s, f, height, width); }))
                return false;
        return true;
    };
    if (!visible_every_frame()) {
        spec.shapes.front().vx = 0.0f;
        spec.shapes.front().vy = 0.0f;
    }
    validate_spec(spec);
    return spec;
}

SceneClip gen_scene(const SceneSpec& spec) {
    validate_spec(spec);
    const int F = spec.num_frames, H = spec.height, W = spec.width;
    std::vector<float> rgb(static_cast<std::size_t>(F) * 3 * H * W);
    std::vector<float> depth(static_cast<std::size_t>(F) * H * W);
    for (int f = 0; f < F; ++f)
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) {
                const int s = front_shape(spec, f, x + 0.5f, y + 0.5f);
                float d = kBackgroundDepth;
                std::array<float, 3> c{};
                if (s >= 0) {
                    const auto& shape = spec.shapes[static_cast<std::size_t>(s)];
                    d = shape.depth_layer;
                    c = shape.color;
                } else {
                    const float ramp = 0.7f + 0.3f * (static_cast<float>(y) + 0.5f) / static_cast<float>(H);
                    for (int ch = 0; ch < 3; ++ch) c[ch] = spec.background[ch] * ramp;
                }
                const float shade = depth_shade(d);
                depth[(static_cast<std::size_t>(f) * H + y) * W + x] = d;
                for (int ch = 0; ch < 3; ++ch)
                    rgb[((static_cast<std::size_t>(f) * 3 + ch) * H + y) * W + x] = std::clamp(c[ch] * shade, 0.0f, 1.0f);
            }
    SceneClip clip;
    clip.rgb = Tensor::from({F, 3, H, W}, std::move(rgb));
    clip.depth = Tensor::from({F, 1, H, W}, std::move(depth));
    clip.tracks = seed_tracks(spec, 0, F);
    clip.spec = spec;
    return clip;
}

std::vector<Track> seed_tracks(const SceneSpec& spec, int start, int end) {
    if (start < 0 || end <= start) throw contract_error("seed_tracks: empty or negative window");
    const int H = spec.height, W = spec.width;
    std::vector<Track> tracks;
    tracks.reserve(kTrackGrid * kTrackGrid);
    for (int gy = 0; gy < kTrackGrid; ++gy)
        for (int gx = 0; gx < kTrackGrid; ++gx) {
            const float sx = (static_cast<float>(gx) + 0.5f) * static_cast<float>(W) / kTrackGrid;
            const float sy = (static_cast<float>(gy) + 0.5f) * static_cast<float>(H) / kTrackGrid;
            Track t;
            t.owner = front_shape(spec, start, sx, sy);
            for (int f = start; f < end; ++f) {
                TrackPoint p{f, sx, sy, kBackgroundDepth, false};
                if (t.owner >= 0) {
                    const auto& s = spec.shapes[static_cast<std::size_t>(t.owner)];
                    p.x = sx + s.vx * static_cast<float>(f - start);
                    p.y = sy + s.vy * static_cast<float>(f - start);
                    p.depth = s.depth_layer;
                }
                const bool inside = p.x >= 0.0f && p.x < static_cast<float>(W) && p.y >= 0.0f && p.y < static_cast<float>(H);
                p.visible = inside && front_shape(spec, f, p.x, p.y) == t.owner;
                t.points.push_back(p);
            }
            tracks.push_back(std::move(t));
        }
    return tracks;
}

Tensor render_pointmap(const std::vector<Track>& tracks, int num_frames, int height, int width, int num_points, Rng& rng,
                       const Tensor* color_depth) {
    if (num_points <= 0) throw contract_error("render_pointmap: num_points must be positive");
    if (num_points > static_cast<int>(tracks.size()))
        throw contract_error("render_pointmap: requested more points than available tracks");
    if (color_depth && color_depth->shape() != Shape{num_frames, 1, height, width})
        throw contract_error("render_pointmap: colour depth map has the wrong shape");

    std::vector<std::size_t> order(tracks.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    if (num_points < static_cast<int>(tracks.size()))
        for (int i = 0; i < num_points; ++i)
            std::swap(order[static_cast<std::size_t>(i)],
                      order[static_cast<std::size_t>(i) + rng.below(order.size() - static_cast<std::size_t>(i))]);

    std::vector<float> out(static_cast<std::size_t>(num_frames) * 3 * height * width, 0.0f);
    for (int k = 0; k < num_points; ++k) {
        const Track& t = tracks[order[static_cast<std::size_t>(k)]];
        if (static_cast<int>(t.points.size()) != num_frames) throw contract_error("render_pointmap: track length mismatch");
        for (int f = 0; f < num_frames; ++f) {
            const TrackPoint& p = t.points[static_cast<std::size_t>(f)];
            if (!p.visible) continue;
            const int x = static_cast<int>(std::floor(p.x));
            const int y = static_cast<int>(std::floor(p.y));
            const float d = color_depth ? color_depth->data()[(static_cast<std::size_t>(f) * height + y) * width + x] : p.depth;
            const auto c = depth_color(d);
            for (int ch = 0; ch < 3; ++ch) out[((static_cast<std::size_t>(f) * 3 + ch) * height + y) * width + x] = c[ch];
        }
    }
    return Tensor::from({num_frames, 3, height, width}, std::move(out));
}

json spec_to_json(const SceneSpec& spec) {
    json shapes = json::array();
    for (const auto& s : spec.shapes)
        shapes.push_back({{"kind", kind_name(s.kind)},
                          {"depth_layer", s.depth_layer},
                          {"x0", s.x0},
                          {"y0", s.y0},
                          {"vx", s.vx},
                          {"vy", s.vy},
                          {"size", s.size},
                          {"color", s.color}});
    return {{"seed", spec.seed},
            {"num_frames", spec.num_frames},
            {"height", spec.height},
            {"width", spec.width},
            {"background", spec.background},
            {"shapes", shapes}};
}

SceneSpec spec_from_json(const json& j) {
    SceneSpec spec;
    spec.seed = j.at("seed").get<std::uint64_t>();
    spec.num_frames = j.at("num_frames").get<int>();
    spec.height = j.at("height").get<int>();
    spec.width = j.at("width").get<int>();
    spec.background = j.at("background").get<std::array<float, 3>>();
    for (const auto& s : j.at("shapes")) {
        ShapeSpec shape;
        shape.kind = s.at("kind").get<std::string>() == "rect" ? ShapeKind::rect : ShapeKind::circle;
        shape.depth_layer = s.at("depth_layer").get<float>();
        shape.x0 = s.at("x0").get<float>();
        shape.y0 = s.at("y0").get<float>();
        shape.vx = s.at("vx").get<float>();
        shape.vy = s.at("vy").get<float>();
        shape.size = s.at("size").get<float>();
        shape.color = s.at("color").get<std::array<float, 3>>();
        spec.shapes.push_back(shape);
    }
    return spec;
}

json tracks_to_json(const std::vector<Track>& tracks) {
    json out = json::array();
    for (const auto& t : tracks) {
        json pts = json::array();
        for (const auto& p : t.points) pts.push_back({p.frame, p.x, p.y, p.depth, p.visible});
        out.push_back({{"owner", t.owner}, {"points", pts}});
    }
    return out;
}

namespace {

std::vector<Track> tracks_from_json(const json& j) {
    std::vector<Track> tracks;
    for (const auto& t : j) {
        Track tr;
        tr.owner = t.at("owner").get<int>();
        for (const auto& p : t.at("points"))
            tr.points.push_back({p.at(0).get<int>(), p.at(1).get<float>(), p.at(2).get<float>(), p.at(3).get<float>(),
                                 p.at(4).get<bool>()});
        tracks.push_back(std::move(tr));
    }
    return tracks;
}

}  // namespace

json CorpusManifest::to_json() const {
    json entries = json::array();
    for (const auto& c : clips)
        entries.push_back({{"index", c.index}, {"seed", c.seed}, {"clip_file", c.clip_file}, {"tracks_file", c.tracks_file}});
    return {{"format_version", format_version}, {"count", count},   {"frames", frames},
            {"height", height},                 {"width", width},   {"points", points},
            {"base_seed", base_seed},           {"clips", entries}};
}

std::vector<SceneClip> generate_clips(int count, std::uint64_t base_seed, const CorpusConfig& cfg) {
    if (count < 0) throw contract_error("generate_clips: negative count");
    std::vector<SceneClip> clips;
    clips.reserve(static_cast<std::size_t>(count));
    for (int i = 0; i < count; ++i)
        clips.push_back(gen_scene(random_scene_spec(base_seed + static_cast<std::uint64_t>(i), cfg.frames, cfg.height, cfg.width, cfg.options)));
    return clips;
}

CorpusManifest make_corpus(int count, std::uint64_t base_seed, const std::filesystem::path& out_dir, const CorpusConfig& cfg) {
    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    if (ec) throw io_error("cannot create " + out_dir.string() + ": " + ec.message());

    CorpusManifest manifest;
    manifest.count = count;
    manifest.frames = cfg.frames;
    manifest.height = cfg.height;
    manifest.width = cfg.width;
    manifest.points = cfg.points;
    manifest.base_seed = base_seed;
    json specs = json::array();
    const auto clips = generate_clips(count, base_seed, cfg);
    for (int i = 0; i < count; ++i) {
        const SceneClip& clip = clips[static_cast<std::size_t>(i)];
        Rng point_rng(clip.spec.seed, "points");
        const Tensor pointmap = render_pointmap(clip.tracks, cfg.frames, cfg.height, cfg.width, cfg.points, point_rng);
        CorpusEntry e{i, clip.spec.seed, "clip_" + std::to_string(i) + ".lvt", "clip_" + std::to_string(i) + ".tracks.json"};
        write_tensors(out_dir / e.clip_file, {clip.rgb, clip.depth, pointmap});
        write_file_atomic(out_dir / e.tracks_file, tracks_to_json(clip.tracks).dump());
        manifest.clips.push_back(e);
        specs.push_back(spec_to_json(clip.spec));
    }
    json j = manifest.to_json();
    j["specs"] = specs;
    write_file_atomic(out_dir / "manifest.json", j.dump(2));
    return manifest;
}

std::vector<SceneClip> load_corpus(const std::filesystem::path& dir) {
    const json j = json::parse(read_file(dir / "manifest.json"));
    if (j.at("format_version").get<int>() != kCorpusFormatVersion) throw io_error("corpus format version mismatch");
    std::vector<SceneClip> clips;
    const auto& entries = j.at("clips");
    const auto& specs = j.at("specs");
    for (std::size_t i = 0; i < entries.size(); ++i) {
        auto tensors = read_tensors(dir / entries[i].at("clip_file").get<std::string>());
        if (tensors.size() != 3) throw io_error("clip file must hold rgb, depth and pointmap records");
        SceneClip clip;
        clip.rgb = tensors[0];
        clip.depth = tensors[1];
        clip.spec = spec_from_json(specs[i]);
        clip.tracks = tracks_from_json(json::parse(read_file(dir / entries[i].at("tracks_file").get<std::string>())));
        clips.push_back(std::move(clip));
    }
    return clips;
}

}  // namespace rollvid::scene
