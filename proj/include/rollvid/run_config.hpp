#pragma once

#include <array>
#include <string>
#include <vector>

#include "json.hpp"
#include "rollvid/ablation.hpp"
#include "rollvid/autoencoder.hpp"
#include "rollvid/pipeline.hpp"

namespace rollvid {

// Every tunable of a run in one JSON document. Unknown keys are rejected and
// the constants section may be restated but not changed.
struct RunConfig {
    std::uint64_t seed = 0;

    struct Data {
        int train_clips = 50;
        std::uint64_t train_seed = 1000;
        int frames = 12;
        int height = 32;
        int width = 32;
        scene::SceneOptions scene{};
    } data;

    struct Ae {
        int epochs = 20;
        int batch = 2;
        double lr = 2e-3;
        std::uint64_t seed = 11;
    } autoencoder;

    diff::BackboneConfig backbone{};
    int control_blocks = 2;
    std::array<pipe::StageConfig, 4> stages{pipe::StageConfig::defaults(0), pipe::StageConfig::defaults(1),
                                            pipe::StageConfig::defaults(2), pipe::StageConfig::defaults(3)};

    roll::RolloutOptions rollout{};

    struct Eval {
        int videos = 4;
        int windows = 8;
        std::uint64_t video_seed = 90000;
        std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
    } eval;

    nlohmann::json to_json() const;
    static RunConfig from_json(const nlohmann::json& j);
    static RunConfig load(const std::filesystem::path& path);
    void validate() const;
    // Hex digest of the canonical JSON.
    std::string hash() const;
    // Leaf path -> "paper" or "toy".
    nlohmann::json provenance() const;
    scene::CorpusConfig corpus_config() const;
};

// Values fixed by the method; restating them in a config is allowed.
nlohmann::json fixed_constants();

std::string code_version();

}  // namespace rollvid
