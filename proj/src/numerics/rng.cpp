#include "rollvid/rng.hpp"

#include <cmath>
#include <numbers>
#include <numeric>
#include <string>

#include "rollvid/tensor.hpp"

namespace rollvid {

std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t basis) {
    std::uint64_t h = basis;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

std::array<std::uint32_t, 4> philox4x32(std::array<std::uint32_t, 4> ctr, std::array<std::uint32_t, 2> key) {
    constexpr std::uint32_t m0 = 0xD2511F53u, m1 = 0xCD9E8D57u;
    constexpr std::uint32_t w0 = 0x9E3779B9u, w1 = 0xBB67AE85u;
    for (int round = 0; round < 10; ++round) {
        const std::uint64_t p0 = static_cast<std::uint64_t>(m0) * ctr[0];
        const std::uint64_t p1 = static_cast<std::uint64_t>(m1) * ctr[2];
        ctr = {static_cast<std::uint32_t>(p1 >> 32) ^ ctr[1] ^ key[0], static_cast<std::uint32_t>(p1),
               static_cast<std::uint32_t>(p0 >> 32) ^ ctr[3] ^ key[1], static_cast<std::uint32_t>(p0)};
        key[0] += w0;
        key[1] += w1;
    }
    return ctr;
}

Rng::Rng(std::uint64_t seed, std::string_view stream) : seed_(seed), stream_(stream) {
    std::string material = std::to_string(seed);
    material += '/';
    material += stream;
    const std::uint64_t k = fnv1a64(material);
    key_ = {static_cast<std::uint32_t>(k), static_cast<std::uint32_t>(k >> 32)};
}

void Rng::refill() {
    block_ = philox4x32({static_cast<std::uint32_t>(counter_), static_cast<std::uint32_t>(counter_ >> 32), 0u, 0u}, key_);
    ++counter_;
    lane_ = 0;
}

std::uint32_t Rng::next_u32() {
    if (lane_ >= 4) refill();
    return block_[lane_++];
}

std::uint64_t Rng::next_u64() {
    const std::uint64_t hi = next_u32();
    return (hi << 32) | next_u32();
}

double Rng::uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

std::uint64_t Rng::below(std::uint64_t n) {
    if (n == 0) throw contract_error("Rng::below(0)");
    // rejection keeps the draw unbiased
    const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
    std::uint64_t v;
    do v = next_u64();
    while (v >= limit);
    return v % n;
}

std::int64_t Rng::range(std::int64_t lo, std::int64_t hi_inclusive) {
    if (hi_inclusive < lo) throw contract_error("Rng::range: empty range");
    return lo + static_cast<std::int64_t>(below(static_cast<std::uint64_t>(hi_inclusive - lo) + 1));
}

double Rng::normal() {
    // Box-Muller, one output per pair so the stream position is draw-count exact.
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::vector<float> Rng::normal_vector(std::size_t n) {
    std::vector<float> v(n);
    for (auto& x : v) x = static_cast<float>(normal());
    return v;
}

std::size_t Rng::categorical(const std::vector<double>& weights) {
    const double total = std::accumulate(weights.begin(), weights.end(), 0.0);
    if (weights.empty() || !(total > 0.0)) throw contract_error("Rng::categorical: weights must have positive mass");
    double u = uniform() * total;
    for (std::size_t i = 0; i < weights.size(); ++i) {
        if (u < weights[i]) return i;
        u -= weights[i];
    }
    return weights.size() - 1;
}

Rng::State Rng::state() const { return {seed_, stream_, counter_, lane_}; }

Rng Rng::restore(const State& s) {
    Rng r(s.seed, s.stream);
    if (s.lane < 4) {
        // regenerate the partially consumed block
        r.counter_ = s.counter - 1;
        r.refill();
        r.lane_ = s.lane;
    } else {
        r.counter_ = s.counter;
    }
    return r;
}

}  // namespace rollvid
