#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace rollvid {

// Philox-4x32-10 counter-based generator. The key is derived from
// (seed, stream label), so each labeled purpose draws an independent stream
// and the whole state is just the 64-bit counter.
class Rng {
public:
    Rng() : Rng(0, "default") {}
    Rng(std::uint64_t seed, std::string_view stream);

    std::uint32_t next_u32();
    std::uint64_t next_u64();
    // Uniform in [0, 1).
    double uniform();
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    // Uniform integer in [0, n).
    std::uint64_t below(std::uint64_t n);
    std::int64_t range(std::int64_t lo, std::int64_t hi_inclusive);
    bool bernoulli(double p) { return uniform() < p; }
    double normal();
    std::vector<float> normal_vector(std::size_t n);
    // Index drawn proportionally to non-negative weights.
    std::size_t categorical(const std::vector<double>& weights);

    std::uint64_t seed() const { return seed_; }
    std::uint64_t counter() const { return counter_; }
    std::string_view stream() const { return stream_; }

    struct State {
        std::uint64_t seed;
        std::string stream;
        std::uint64_t counter;
        std::uint32_t lane;
    };
    State state() const;
    static Rng restore(const State& s);

private:
    void refill();

    std::uint64_t seed_;
    std::string stream_;
    std::array<std::uint32_t, 2> key_{};
    std::uint64_t counter_ = 0;
    std::array<std::uint32_t, 4> block_{};
    std::uint32_t lane_ = 4;
};

std::array<std::uint32_t, 4> philox4x32(std::array<std::uint32_t, 4> ctr, std::array<std::uint32_t, 2> key);

// FNV-1a 64-bit digest; used for stream keys and config hashes.
std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t basis = 0xcbf29ce484222325ull);

}  // namespace rollvid
