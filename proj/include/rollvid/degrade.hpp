#pragma once

#include <string>
#include <vector>

#include "json.hpp"
#include "rollvid/autoencoder.hpp"
#include "rollvid/diffusion.hpp"

namespace rollvid::deg {

inline constexpr int kGenMaxT = 15;  // generation path needs t below this

struct DegradationConfig {
    double p_apply = 0.2;
    double p_encoding = 0.2;  // share of applied draws that take the encoding path
    int k_min = 0, k_max = 10;
    std::vector<int> t_set{1, 5, 8, 10, 12};
    double severity_ratio = 0.7;  // w(K) ~ r^K, w(t) ~ r^rank

    void validate() const;
    std::vector<double> k_probs() const;  // index i <-> K = k_min + i
    std::vector<double> t_probs() const;  // aligned with t_set
    nlohmann::json to_json() const;  // includes the published probabilities
    static DegradationConfig from_json(const nlohmann::json& j);
};

enum class Kind { none, encoding, generation };
const char* kind_name(Kind k);

struct DegradationChoice {
    Kind kind = Kind::none;
    int k = 0;  // encoding path
    int t = 0;  // generation path
    std::string str() const;
};

DegradationChoice sample_degradation(const DegradationConfig& cfg, Rng& rng);

// (D o E)^K
Tensor encode_degrade(const ae::Autoencoder& ae, const Tensor& frames, int k);

// D(denoise(add_noise(E(I), t, eps))) with a frozen, unconditional denoiser.
Tensor gen_degrade(const ae::Autoencoder& ae, const Tensor& frames, int t, const diff::EpsModel& frozen,
                   const diff::NoiseSchedule& s, Rng& rng);

// Frozen denoiser for the generation path; may be empty when only the
// encoding path can be drawn.
struct GenContext {
    diff::EpsModel frozen;
    diff::NoiseSchedule schedule = diff::NoiseSchedule::linear();
};

// Applies one drawn choice to frames [n x 3 x H x W].
Tensor apply_degradation(const ae::Autoencoder& ae, const Tensor& frames, const DegradationChoice& choice,
                         const GenContext* gen, Rng& rng);

}  // namespace rollvid::deg
