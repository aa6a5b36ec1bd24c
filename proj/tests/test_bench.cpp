#include <cmath>

#include "doctest.h"
#include "rollvid/metrics.hpp"
#include "rollvid/rng.hpp"

using namespace rollvid;
using namespace rollvid::bench;

namespace {

Tensor random_frame(std::uint64_t seed, std::int64_t h = 16, std::int64_t w = 16) {
    Rng rng(seed, "frame");
    std::vector<float> v(static_cast<std::size_t>(3 * h * w));
    for (auto& x : v) x = static_cast<float>(rng.uniform());
    return Tensor::from({3, h, w}, std::move(v));
}

}  // namespace

TEST_CASE("psnr") {
    const auto a = random_frame(1);
    CHECK(std::isinf(psnr(a, a)));
    CHECK(psnr_capped(a, a) == kPsnrCap);
    // uniform error of 0.1 gives MSE 0.01
    auto b = Tensor::full({4, 4}, 0.2f), c = Tensor::full({4, 4}, 0.3f);
    CHECK(psnr(b, c) == doctest::Approx(20.0).epsilon(1e-5));
    CHECK_THROWS_AS(psnr(b, a), contract_error);

    // larger independent noise, lower PSNR
    Rng rng(3, "noise");
    double last = 1e9;
    for (double sd : {0.01, 0.03, 0.1, 0.3}) {
        auto n = a.detach();
        for (auto& v : n.data()) v += static_cast<float>(sd * rng.normal());
        const double p = psnr(a, n);
        CHECK(p < last);
        last = p;
    }
}

TEST_CASE("ssim") {
    const auto a = random_frame(2), b = random_frame(3);
    CHECK(ssim(a, a) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(std::abs(ssim(a, b) - ssim(b, a)) <= 1e-7);

    // two-level image against its complement: covariance is negative
    auto x = Tensor::zeros({3, 16, 16});
    auto d = x.data();
    for (int c = 0; c < 3; ++c)
        for (int i = 0; i < 256; ++i) d[static_cast<std::size_t>(c * 256 + i)] = ((i / 16 + i % 16) % 2) ? 1.0f : 0.0f;
    auto y = x.detach();
    for (auto& v : y.data()) v = 1.0f - v;
    // closed form per window: means m, 1-m; var s2 each; cov -s2
    const double s = ssim(x, y);
    CHECK(s < 0.0);
    double want = 0.0;
    int count = 0;
    for (int y0 = 0; y0 + 7 <= 16; ++y0)
        for (int x0 = 0; x0 + 7 <= 16; ++x0) {
            const double ones = ((y0 + x0) % 2) ? 25 : 24;
            const double m = ones / 49.0, var = m - m * m;
            const double c1 = 1e-4, c2 = 9e-4;
            want += ((2 * m * (1 - m) + c1) * (-2 * var + c2)) / ((m * m + (1 - m) * (1 - m) + c1) * (2 * var + c2));
            ++count;
        }
    CHECK(s == doctest::Approx(want / count).epsilon(1e-9));
    CHECK_THROWS_AS(ssim(x, Tensor::zeros({3, 8, 8})), contract_error);
}

TEST_CASE("seam_discontinuity") {
    auto still = Tensor::full({17, 3, 4, 4}, 0.4f);
    const std::vector<Window> two{{0, 9}, {8, 17}};
    CHECK(seam_discontinuity(still, {{0, 17}}, 1).empty());
    const auto zero = seam_discontinuity(still, two, 1);
    REQUIRE(zero.size() == 1);
    CHECK(zero[0] == 0.0);

    // steady per-frame ramp of 0.01 plus a +0.5 jump at the seam (frame 9)
    auto v = Tensor::zeros({17, 3, 4, 4});
    auto d = v.data();
    for (int f = 0; f < 17; ++f)
        for (int i = 0; i < 48; ++i) d[static_cast<std::size_t>(f * 48 + i)] = 0.01f * f + (f >= 9 ? 0.5f : 0.0f);
    const auto s = seam_discontinuity(v, two, 1);
    REQUIRE(s.size() == 1);
    CHECK(s[0] == doctest::Approx(0.5).epsilon(1e-5));
    CHECK_THROWS_AS(seam_discontinuity(v, {{0, 9}}, 1), contract_error);
}

TEST_CASE("fit_slope") {
    CHECK(fit_slope({1, 3, 5, 7}) == doctest::Approx(2.0));
    CHECK(fit_slope({4}) == 0.0);
}
