#include <cmath>
#include <sstream>

#include "doctest.h"
#include "rollvid/gradcheck.hpp"
#include "rollvid/ops.hpp"
#include "rollvid/rng.hpp"
#include "rollvid/serialize.hpp"

using namespace rollvid;
namespace o = rollvid::ops;

namespace {

Tensor random_tensor(Rng& rng, const Shape& s, bool grad = false, double lo = -1.0, double hi = 1.0) {
    std::vector<float> v(static_cast<std::size_t>(shape_numel(s)));
    for (auto& x : v) x = static_cast<float>(rng.uniform(lo, hi));
    return Tensor::from(s, std::move(v), grad);
}

std::vector<float> vec(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

// Direct replicate-padded box filter used as an independent oracle.
std::vector<float> blur_oracle(const std::vector<float>& m, int H, int W, int k) {
    std::vector<float> out(m.size());
    const int r = k / 2;
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            double s = 0;
            for (int yy = y - r; yy <= y + r; ++yy)
                for (int xx = x - r; xx <= x + r; ++xx) {
                    const int cy = yy < 0 ? 0 : (yy >= H ? H - 1 : yy);
                    const int cx = xx < 0 ? 0 : (xx >= W ? W - 1 : xx);
                    s += m[cy * W + cx];
                }
            out[y * W + x] = static_cast<float>(s / (k * k));
        }
    return out;
}

}  // namespace

TEST_CASE("elementwise examples") {
    auto a = Tensor::from({2}, {1, 2});
    auto b = Tensor::from({2}, {3, 4});
    CHECK(vec(o::add(a, b)) == std::vector<float>{4, 6});

    Rng rng(1, "test");
    auto x = random_tensor(rng, {3, 4});
    CHECK(vec(o::mul(x, 1.0f)) == vec(x));

    auto z = Tensor::from({2}, {1, 0});
    CHECK_THROWS_AS(o::div(a, z), contract_error);
    CHECK_THROWS_AS(o::add(Tensor::zeros({2, 3}), Tensor::zeros({2})), contract_error);

    // trailing broadcast
    auto m = Tensor::from({2, 2}, {1, 2, 3, 4});
    CHECK(vec(o::add(m, Tensor::from({2}, {10, 20}))) == std::vector<float>{11, 22, 13, 24});
}

TEST_CASE("matmul examples") {
    Rng rng(2, "test");
    auto A = random_tensor(rng, {3, 3});
    auto I = Tensor::from({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
    CHECK(vec(o::matmul(I, A)) == vec(A));

    auto p = o::matmul(Tensor::from({2, 2}, {1, 2, 3, 4}), Tensor::from({2, 1}, {5, 6}));
    CHECK(p.shape() == Shape{2, 1});
    CHECK(vec(p) == std::vector<float>{17, 39});

    CHECK_THROWS_AS(o::matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3})), contract_error);

    auto a = random_tensor(rng, {4, 5}, true);
    auto b = random_tensor(rng, {5, 3}, true);
    CHECK(finite_diff_check([&](const Tensor& v) { return o::sum(o::matmul(v, b)); }, a, 1e-3) < 1e-4);
    CHECK(finite_diff_check([&](const Tensor& v) { return o::sum(o::matmul(a, v)); }, b, 1e-3) < 1e-4);
}

TEST_CASE("box_blur examples") {
    Rng rng(3, "test");
    auto c = Tensor::full({6, 7}, 0.3f);
    CHECK(vec(o::box_blur(c, 5)) == vec(c));

    auto x = random_tensor(rng, {5, 6});
    CHECK(vec(o::box_blur(x, 1)) == vec(x));

    std::vector<float> impulse(25, 0.0f);
    impulse[12] = 9.0f;
    auto out = vec(o::box_blur(Tensor::from({5, 5}, impulse), 3));
    for (int y = 0; y < 5; ++y)
        for (int xx = 0; xx < 5; ++xx) {
            const bool inner = y >= 1 && y <= 3 && xx >= 1 && xx <= 3;
            CHECK(out[y * 5 + xx] == doctest::Approx(inner ? 1.0 : 0.0));
        }

    CHECK_THROWS_AS(o::box_blur(x, 2), contract_error);
    CHECK_THROWS_AS(o::box_blur(x, 0), contract_error);
    CHECK_THROWS_AS(o::box_blur(x, -3), contract_error);
}

TEST_CASE("box_blur matches direct oracle and preserves envelope") {
    for (int seed = 0; seed < 20; ++seed) {
        Rng rng(seed, "blur");
        const int H = 3 + static_cast<int>(rng.below(6)), W = 3 + static_cast<int>(rng.below(6));
        const int k = 1 + 2 * static_cast<int>(rng.below(3));
        auto m = random_tensor(rng, {H, W});
        auto got = vec(o::box_blur(m, k));
        auto want = blur_oracle(vec(m), H, W, k);
        const auto [mn, mx] = std::minmax_element(m.data().begin(), m.data().end());
        for (std::size_t i = 0; i < got.size(); ++i) {
            CHECK(got[i] == doctest::Approx(want[i]).epsilon(1e-6));
            CHECK(got[i] >= *mn);
            CHECK(got[i] <= *mx);
        }
    }
}

TEST_CASE("resample examples") {
    Rng rng(4, "test");
    auto x = random_tensor(rng, {4, 4});
    CHECK(vec(o::resample(x, 1.0)) == vec(x));
    CHECK(vec(o::resample(Tensor::from({2, 2}, {1, 1, 3, 3}), 0.5)) == std::vector<float>{2});
    auto up = o::resample(Tensor::from({1, 1}, {2}), 2.0);
    CHECK(up.shape() == Shape{2, 2});
    CHECK(vec(up) == std::vector<float>{2, 2, 2, 2});
    CHECK_THROWS_AS(o::resample(Tensor::zeros({3, 4}), 0.5), contract_error);
    CHECK_THROWS_AS(o::resample(x, 3.0), contract_error);

    auto c = Tensor::full({2, 8, 8}, 0.7f);
    for (double f : {0.5, 0.25, 0.125}) CHECK(vec(o::resample(o::resample(c, f), 1.0 / f)) == vec(c));
}

TEST_CASE("finite_diff_check examples") {
    auto x = Tensor::from({2}, {1, 2}, true);
    auto f = [](const Tensor& v) { return o::sum(o::mul(v, v)); };
    f(x).backward();
    CHECK(vec(Tensor::from({2}, std::vector<float>(x.grad().begin(), x.grad().end()))) == std::vector<float>{2, 4});
    x.zero_grad();
    CHECK(finite_diff_check(f, x, 1e-3) < 1e-6);

    // two-token attention block: LN -> qkv -> attention -> out projection
    Rng rng(5, "attn");
    auto tok = random_tensor(rng, {2, 8}, true);
    auto g = Tensor::full({8}, 1.0f), bta = Tensor::zeros({8});
    auto wq = random_tensor(rng, {8, 8}), wk = random_tensor(rng, {8, 8}), wv = random_tensor(rng, {8, 8});
    auto wo = random_tensor(rng, {8, 8});
    auto block = [&](const Tensor& t) {
        auto h = o::layer_norm(t, g, bta);
        auto a = o::attention(o::matmul(h, wq), o::matmul(h, wk), o::matmul(h, wv), 2);
        return o::sum(o::add(t, o::matmul(a, wo)));
    };
    CHECK(finite_diff_check(block, tok, 1e-3) < 1e-3);

    auto bad = [](const Tensor& v) { return o::mul(o::sum(v), std::numeric_limits<float>::infinity()); };
    CHECK_THROWS_AS(finite_diff_check(bad, x, 1e-3), numeric_error);
    CHECK_THROWS_AS(finite_diff_check(f, x, 1.0), contract_error);
}

TEST_CASE("tape gradients agree with central differences across seeds") {
    for (int seed = 0; seed < 20; ++seed) {
        CAPTURE(seed);
        Rng rng(seed, "gradprop");
        auto a = random_tensor(rng, {3, 4}, true);
        auto b = random_tensor(rng, {4}, false, 0.5, 1.5);
        auto w = random_tensor(rng, {4, 6}, false);
        auto bias = random_tensor(rng, {6}, false);
        auto gam = random_tensor(rng, {4}, false, 0.5, 1.5), bet = random_tensor(rng, {4});
        auto pos = random_tensor(rng, {3, 4}, true, 0.5, 1.5);
        const double eps = 1e-2;

        CHECK(finite_diff_check([&](const Tensor& v) { return o::mean(o::sub(o::mul(v, b), o::div(v, b))); }, a, eps) < 1e-3);
        CHECK(finite_diff_check([&](const Tensor& v) { return o::sum(o::div(b, v)); }, pos, eps) < 1e-3);
        CHECK(finite_diff_check([&](const Tensor& v) { return o::sum(o::pow(v, 1.7f)); }, pos, eps) < 1e-3);
        CHECK(finite_diff_check([&](const Tensor& v) { return o::sum(o::pow(b, o::mul(v, 0.5f))); }, a, eps) < 1e-3);
        CHECK(finite_diff_check([&](const Tensor& v) { return o::sum(o::gelu(o::linear(v, w, bias))); }, a, eps) < 1e-3);
        CHECK(finite_diff_check([&](const Tensor& v) { return o::sum(o::silu(o::matmul(v, w))); }, a, eps) < 1e-3);
        CHECK(finite_diff_check([&](const Tensor& v) { return o::sum(o::mul(o::layer_norm(v, gam, bet), o::layer_norm(v, gam, bet))); }, a, eps) < 1e-3);
        CHECK(finite_diff_check([&](const Tensor& v) { return o::mse(o::box_blur(v, 3), o::transpose(o::transpose(v))); }, a, eps) < 1e-3);
        CHECK(finite_diff_check([&](const Tensor& v) {
                  auto r = o::concat_rows({o::slice_rows(v, 1, 3), o::slice_rows(v, 0, 1)});
                  return o::weighted_sum(o::mean_sq_per_row(r), {0.05f, 0.325f, 0.757f});
              }, a, eps) < 1e-3);
        auto img = random_tensor(rng, {2, 3, 4, 4}, true);
        auto wp = random_tensor(rng, {12, 5});
        CHECK(finite_diff_check([&](const Tensor& v) {
                  auto t = o::gelu(o::matmul(o::patchify(v, 2), wp));
                  auto back = o::unpatchify(o::patchify(o::resample(o::resample(v, 0.5), 2.0), 2), {2, 3, 4, 4}, 2);
                  return o::add(o::sum(o::mul(t, t)), o::sum(o::mul(back, v)));
              }, img, eps) < 1e-3);
        auto q = random_tensor(rng, {5, 8}, true);
        auto k = random_tensor(rng, {5, 8}), vv = random_tensor(rng, {5, 8});
        CHECK(finite_diff_check([&](const Tensor& v) { return o::sum(o::mul(o::attention(v, k, vv, 2), vv)); }, q, eps) < 1e-3);
        CHECK(finite_diff_check([&](const Tensor& v) { return o::sum(o::mul(o::attention(q, v, vv, 2), vv)); }, k, eps) < 1e-3);
        CHECK(finite_diff_check([&](const Tensor& v) { return o::sum(o::mul(o::attention(q, k, v, 4), k)); }, vv, eps) < 1e-3);
    }
}

TEST_CASE("ops are deterministic and no-grad mode records nothing") {
    Rng r1(9, "det"), r2(9, "det");
    auto a = random_tensor(r1, {4, 4}, true);
    auto b = random_tensor(r2, {4, 4}, true);
    CHECK(vec(o::gelu(o::matmul(a, a))) == vec(o::gelu(o::matmul(b, b))));
    NoGradGuard guard;
    CHECK_FALSE(o::matmul(a, a).requires_grad());
}

TEST_CASE("rng streams") {
    Rng a(42, "noise"), b(42, "noise"), c(42, "data");
    bool all_same = true, differs = false;
    for (int i = 0; i < 100; ++i) {
        const auto x = a.next_u32();
        all_same &= x == b.next_u32();
        differs |= x != c.next_u32();
    }
    CHECK(all_same);
    CHECK(differs);

    Rng s(7, "restore");
    for (int i = 0; i < 5; ++i) s.next_u32();
    Rng t = Rng::restore(s.state());
    for (int i = 0; i < 10; ++i) CHECK(s.next_u32() == t.next_u32());

    // moments of the normal sampler
    Rng n(3, "normal");
    double m = 0, v = 0;
    const int N = 200000;
    for (int i = 0; i < N; ++i) {
        const double x = n.normal();
        m += x;
        v += x * x;
    }
    CHECK(std::abs(m / N) < 0.01);
    CHECK(std::abs(v / N - 1.0) < 0.02);
}

TEST_CASE("tensor record serialization") {
    Rng rng(11, "ser");
    auto t = random_tensor(rng, {2, 3, 4});
    std::stringstream ss(std::ios::in | std::ios::out | std::ios::binary);
    write_tensor(ss, t);
    CHECK(ss.str().size() == tensor_record_bytes(t.shape()));
    CHECK(ss.str().substr(0, 4) == "LVT1");
    auto back = read_tensor(ss);
    CHECK(back.shape() == t.shape());
    CHECK(vec(back) == vec(t));

    std::string bytes = ss.str();
    bytes[0] = 'X';
    std::istringstream bad(bytes);
    CHECK_THROWS_AS(read_tensor(bad), io_error);
    std::istringstream trunc(ss.str().substr(0, 20));
    CHECK_THROWS_AS(read_tensor(trunc), io_error);
}
