#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "rollvid/rng.hpp"
#include "rollvid/tensor.hpp"

namespace rollvid::scene {

enum class ShapeKind { circle, rect };

struct ShapeSpec {
    ShapeKind kind = ShapeKind::circle;
    float depth_layer = 0.5f;  // in (0, 1]; smaller is nearer
    float x0 = 0.0f, y0 = 0.0f;  // centre at frame 0, pixels
    float vx = 0.0f, vy = 0.0f;  // pixels per frame
    float size = 4.0f;  // radius (circle) or half-extent (rect)
    std::array<float, 3> color{1.0f, 1.0f, 1.0f};
};

struct SceneSpec {
    std::uint64_t seed = 0;
    int num_frames = 12;
    int height = 32;
    int width = 32;
    std::array<float, 3> background{0.3f, 0.35f, 0.45f};
    std::vector<ShapeSpec> shapes;
};

struct SceneOptions {
    int min_shapes = 2;
    int max_shapes = 4;
    float max_speed = 0.8f;
    float min_size = 3.0f;
    float max_size = 8.0f;
};

struct TrackPoint {
    int frame;
    float x, y;
    float depth;
    bool visible;
};

struct Track {
    int owner;  // shape index, or -1 for the static background
    std::vector<TrackPoint> points;  // one per frame of the seeded window
};

struct SceneClip {
    Tensor rgb;    // [F x 3 x H x W] in [0, 1]
    Tensor depth;  // [F x 1 x H x W] in [0, 1], background 1.0
    std::vector<Track> tracks;
    SceneSpec spec;
};

inline constexpr float kBackgroundDepth = 1.0f;
inline constexpr int kTrackGrid = 7;  // 7 x 7 = 49 seeded points

// Depth colormap for sparse point maps.
std::array<float, 3> depth_color(float d);
// Brightness attenuation applied to surfaces at depth d.
float depth_shade(float d);

SceneSpec random_scene_spec(std::uint64_t seed, int num_frames, int height, int width, const SceneOptions& opts = {});
void validate_spec(const SceneSpec& spec);

SceneClip gen_scene(const SceneSpec& spec);

// Shape index of the front-most surface covering pixel centre (px, py) at frame f; -1 for background.
int front_shape(const SceneSpec& spec, int frame, float px, float py);

// Seeds a kTrackGrid x kTrackGrid grid at `start` and follows each point's
// owning surface through [start, end).
std::vector<Track> seed_tracks(const SceneSpec& spec, int start, int end);

// Sparse control frames: each selected point paints c(depth) at its pixel in
// frames where it is visible. With `color_depth` ([F x 1 x H x W], indexed
// relative to the track window) the colormap reads that map at the point's
// pixel instead of the track depth.
Tensor render_pointmap(const std::vector<Track>& tracks, int num_frames, int height, int width, int num_points, Rng& rng,
                       const Tensor* color_depth = nullptr);

struct CorpusEntry {
    int index;
    std::uint64_t seed;
    std::string clip_file;
    std::string tracks_file;
};

struct CorpusManifest {
    int format_version = 1;
    int count = 0;
    int frames = 0, height = 0, width = 0, points = 0;
    std::uint64_t base_seed = 0;
    std::vector<CorpusEntry> clips;
    nlohmann::json to_json() const;
};

struct CorpusConfig {
    int frames = 12;
    int height = 32;
    int width = 32;
    int points = kTrackGrid * kTrackGrid;
    SceneOptions options{};
};

inline constexpr int kCorpusFormatVersion = 1;

// Clip i uses seed base_seed + i.
std::vector<SceneClip> generate_clips(int count, std::uint64_t base_seed, const CorpusConfig& cfg);
CorpusManifest make_corpus(int count, std::uint64_t base_seed, const std::filesystem::path& out_dir,
                           const CorpusConfig& cfg = {});
std::vector<SceneClip> load_corpus(const std::filesystem::path& dir);

nlohmann::json spec_to_json(const SceneSpec& spec);
SceneSpec spec_from_json(const nlohmann::json& j);
nlohmann::json tracks_to_json(const std::vector<Track>& tracks);

}  // namespace rollvid::scene
