#pragma once

#include <filesystem>

#include "rollvid/autoencoder.hpp"
#include "rollvid/scenegen.hpp"

namespace fixtures {

inline std::filesystem::path cache_dir() {
    std::filesystem::path p = ROLLVID_FIXTURE_DIR;
    std::filesystem::create_directories(p);
    return p;
}

// Autoencoder trained with the default options on 60 clips; cached on disk so
// the test binaries share one training run.
inline const rollvid::ae::Autoencoder& trained_ae() {
    static const rollvid::ae::Autoencoder ae = [] {
        const auto path = cache_dir() / "ae_seed11.ck";
        if (std::filesystem::exists(path)) return rollvid::ae::Autoencoder::from_checkpoint(rollvid::load_checkpoint_file(path));
        const auto clips = rollvid::scene::generate_clips(60, 500, {});
        rollvid::Rng rng(11, "ae");
        rollvid::ae::AeTrainOptions o;
        o.checkpoint = path;
        return rollvid::ae::train_ae(clips, o, rng).ae;
    }();
    return ae;
}

inline std::vector<rollvid::scene::SceneClip> heldout_clips(int n = 5) {
    return rollvid::scene::generate_clips(n, 90000, {});
}

}  // namespace fixtures
