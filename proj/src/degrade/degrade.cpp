#include "rollvid/degrade.hpp"

#include <cmath>

namespace rollvid::deg {

namespace {

std::vector<double> geometric(std::size_t n, double r) {
    std::vector<double> w(n);
    double total = 0;
    for (std::size_t i = 0; i < n; ++i) total += (w[i] = std::pow(r, static_cast<double>(i)));
    for (auto& x : w) x /= total;
    return w;
}

}  // namespace

void DegradationConfig::validate() const {
    auto prob = [](double p, const char* what) {
        if (!(p >= 0 && p <= 1)) throw contract_error(std::string("degradation: ") + what + " outside [0, 1]");
    };
    prob(p_apply, "p_apply");
    prob(p_encoding, "p_encoding");
    if (k_min < 0 || k_max < k_min) throw contract_error("degradation: bad K range");
    if (t_set.empty()) throw contract_error("degradation: empty t_set");
    for (std::size_t i = 0; i < t_set.size(); ++i) {
        if (t_set[i] < 1 || t_set[i] >= kGenMaxT) throw contract_error("degradation: t values must lie in [1, 15)");
        if (i > 0 && t_set[i] <= t_set[i - 1]) throw contract_error("degradation: t_set must be increasing");
    }
    if (!(severity_ratio > 0 && severity_ratio < 1)) throw contract_error("degradation: severity ratio must lie in (0, 1)");
}

std::vector<double> DegradationConfig::k_probs() const {
    return geometric(static_cast<std::size_t>(k_max - k_min + 1), severity_ratio);
}

std::vector<double> DegradationConfig::t_probs() const { return geometric(t_set.size(), severity_ratio); }

nlohmann::json DegradationConfig::to_json() const {
    return {{"p_apply", p_apply}, {"p_encoding", p_encoding}, {"k_min", k_min}, {"k_max", k_max},
            {"t_set", t_set},     {"severity_ratio", severity_ratio},
            {"k_probs", k_probs()}, {"t_probs", t_probs()}};
}

DegradationConfig DegradationConfig::from_json(const nlohmann::json& j) {
    DegradationConfig c;
    for (const auto& [key, v] : j.items()) {
        if (key == "p_apply") c.p_apply = v;
        else if (key == "p_encoding") c.p_encoding = v;
        else if (key == "k_min") c.k_min = v;
        else if (key == "k_max") c.k_max = v;
        else if (key == "t_set") c.t_set = v.get<std::vector<int>>();
        else if (key == "severity_ratio") c.severity_ratio = v;
        else if (key == "k_probs" || key == "t_probs") continue;  // derived, echoed for readers
        else throw contract_error("degradation: unknown key '" + key + "'");
    }
    c.validate();
    return c;
}

const char* kind_name(Kind k) {
    switch (k) {
        case Kind::none: return "none";
        case Kind::encoding: return "encoding";
        case Kind::generation: return "generation";
    }
    return "?";
}

std::string DegradationChoice::str() const {
    switch (kind) {
        case Kind::encoding: return "encoding:K=" + std::to_string(k);
        case Kind::generation: return "generation:t=" + std::to_string(t);
        default: return "none";
    }
}

DegradationChoice sample_degradation(const DegradationConfig& cfg, Rng& rng) {
    cfg.validate();
    DegradationChoice c;
    if (!rng.bernoulli(cfg.p_apply)) return c;
    if (rng.bernoulli(cfg.p_encoding)) {
        c.kind = Kind::encoding;
        c.k = cfg.k_min + static_cast<int>(rng.categorical(cfg.k_probs()));
    } else {
        c.kind = Kind::generation;
        c.t = cfg.t_set[rng.categorical(cfg.t_probs())];
    }
    return c;
}

Tensor encode_degrade(const ae::Autoencoder& ae, const Tensor& frames, int k) {
    if (k < 0) throw contract_error("encode_degrade: K must be >= 0");
    return ae.roundtrip(frames, k);
}

Tensor gen_degrade(const ae::Autoencoder& ae, const Tensor& frames, int t, const diff::EpsModel& frozen,
                   const diff::NoiseSchedule& s, Rng& rng) {
    if (t < 0 || t >= kGenMaxT) throw contract_error("gen_degrade: t must lie in [0, 15)");
    if (!frozen) throw contract_error("gen_degrade: no frozen denoiser");
    NoGradGuard ng;
    const auto z = ae.encode(frames);
    const auto eps = Tensor::from(z.shape(), rng.normal_vector(static_cast<std::size_t>(z.numel())));
    const auto z0 = diff::denoise(frozen, s, diff::add_noise(s, z, t, eps), t, std::max(t, 1), ConditionPack{});
    return ae.decode(z0);
}

Tensor apply_degradation(const ae::Autoencoder& ae, const Tensor& frames, const DegradationChoice& choice,
                         const GenContext* gen, Rng& rng) {
    switch (choice.kind) {
        case Kind::none: return frames;
        case Kind::encoding: return encode_degrade(ae, frames, choice.k);
        case Kind::generation:
            if (!gen) throw contract_error("generation degradation drawn without a frozen denoiser");
            return gen_degrade(ae, frames, choice.t, gen->frozen, gen->schedule, rng);
    }
    return frames;
}

}  // namespace rollvid::deg
