#pragma once

// Double-precision re-implementation of the backbone forward pass and the
// eps loss, written independently of the tape ops. Used as the oracle for
// finite differences, where float32 rounding in the model under test would
// swamp small gradients.

#include <cmath>
#include <functional>
#include <vector>

#include "rollvid/diffusion.hpp"

namespace refm {

struct Mat {
    int r = 0, c = 0;
    std::vector<double> v;
    Mat() = default;
    Mat(int rows, int cols) : r(rows), c(cols), v(static_cast<std::size_t>(rows * cols), 0.0) {}
    double& operator()(int i, int j) { return v[static_cast<std::size_t>(i * c + j)]; }
    double operator()(int i, int j) const { return v[static_cast<std::size_t>(i * c + j)]; }
};

// One parameter element may carry an extra double offset while the
// reference reads weights; this is how finite differences perturb it.
struct Perturb {
    const rollvid::TensorImpl* target = nullptr;
    std::size_t index = 0;
    double delta = 0.0;
};
inline Perturb& perturb() {
    static Perturb p;
    return p;
}

inline Mat from(const rollvid::Tensor& t, int rows, int cols) {
    Mat m(rows, cols);
    for (int i = 0; i < rows * cols; ++i) m.v[static_cast<std::size_t>(i)] = t.data()[static_cast<std::size_t>(i)];
    if (perturb().target == t.impl()) m.v[perturb().index] += perturb().delta;
    return m;
}
inline Mat from2(const rollvid::Tensor& t) { return from(t, static_cast<int>(t.dim(0)), static_cast<int>(t.dim(1))); }
inline Mat from1(const rollvid::Tensor& t) { return from(t, 1, static_cast<int>(t.numel())); }

inline Mat affine(const Mat& x, const Mat& w, const Mat& b) {
    Mat o(x.r, w.c);
    for (int i = 0; i < x.r; ++i)
        for (int j = 0; j < w.c; ++j) {
            double s = b.v.empty() ? 0.0 : b.v[static_cast<std::size_t>(j)];
            for (int k = 0; k < x.c; ++k) s += x(i, k) * w(k, j);
            o(i, j) = s;
        }
    return o;
}

inline Mat layer_norm(const Mat& x, const Mat& g, const Mat& b) {
    Mat o(x.r, x.c);
    for (int i = 0; i < x.r; ++i) {
        double mu = 0, var = 0;
        for (int j = 0; j < x.c; ++j) mu += x(i, j);
        mu /= x.c;
        for (int j = 0; j < x.c; ++j) var += (x(i, j) - mu) * (x(i, j) - mu);
        var /= x.c;
        const double inv = 1.0 / std::sqrt(var + 1e-5);
        for (int j = 0; j < x.c; ++j) o(i, j) = (x(i, j) - mu) * inv * g.v[static_cast<std::size_t>(j)] + b.v[static_cast<std::size_t>(j)];
    }
    return o;
}

inline double gelu(double x) { return 0.5 * x * (1.0 + std::tanh(std::sqrt(2.0 / M_PI) * (x + 0.044715 * x * x * x))); }
inline double silu(double x) { return x / (1.0 + std::exp(-x)); }

inline Mat attention(const Mat& q, const Mat& k, const Mat& v, int heads) {
    const int n = q.r, d = q.c, dh = d / heads;
    Mat o(n, d);
    for (int h = 0; h < heads; ++h)
        for (int i = 0; i < n; ++i) {
            std::vector<double> s(static_cast<std::size_t>(n));
            double mx = -1e300;
            for (int j = 0; j < n; ++j) {
                double dot = 0;
                for (int e = 0; e < dh; ++e) dot += q(i, h * dh + e) * k(j, h * dh + e);
                s[static_cast<std::size_t>(j)] = dot / std::sqrt(static_cast<double>(dh));
                mx = std::max(mx, s[static_cast<std::size_t>(j)]);
            }
            double z = 0;
            for (auto& x : s) z += (x = std::exp(x - mx));
            for (int e = 0; e < dh; ++e) {
                double acc = 0;
                for (int j = 0; j < n; ++j) acc += s[static_cast<std::size_t>(j)] / z * v(j, h * dh + e);
                o(i, h * dh + e) = acc;
            }
        }
    return o;
}

inline Mat add(Mat a, const Mat& b) {
    for (int i = 0; i < a.r; ++i)
        for (int j = 0; j < a.c; ++j) a(i, j) += b(b.r == 1 ? 0 : i, j);
    return a;
}

inline Mat block(const rollvid::diff::Block& b, const Mat& h, const Mat& temb) {
    auto x = add(h, affine(temb, from2(b.tp_w), from1(b.tp_b)));
    const auto a = layer_norm(x, from1(b.ln1_g), from1(b.ln1_b));
    const auto att = attention(affine(a, from2(b.wq), from1(b.bq)), affine(a, from2(b.wk), from1(b.bk)),
                               affine(a, from2(b.wv), from1(b.bv)), b.heads);
    x = add(x, affine(att, from2(b.wo), from1(b.bo)));
    auto f = affine(layer_norm(x, from1(b.ln2_g), from1(b.ln2_b)), from2(b.w1), from1(b.b1));
    for (auto& e : f.v) e = gelu(e);
    return add(x, affine(f, from2(b.w2), from1(b.b2)));
}

// Base forward for clip latents without history; returns eps prediction
// flattened in [F x C x h x w] order.
inline std::vector<double> forward(const rollvid::diff::Backbone& m, const std::vector<double>& z_t, int frames, int t,
                                   const rollvid::ConditionPack& pack) {
    const auto& c = m.config();
    const int C = c.latent_channels, H = c.latent_h, W = c.latent_w, p = c.patch, ch = 2 * C + 2;
    const int py = H / p, px = W / p, P = py * px, D = c.width;
    Mat feats(frames * P, ch * p * p);
    for (int f = 0; f < frames; ++f)
        for (int a = 0; a < py; ++a)
            for (int b = 0; b < px; ++b)
                for (int k = 0; k < ch; ++k)
                    for (int dy = 0; dy < p; ++dy)
                        for (int dx = 0; dx < p; ++dx) {
                            const int y = a * p + dy, x = b * p + dx;
                            double v = 0;
                            if (k < C) v = z_t[static_cast<std::size_t>(((f * C + k) * H + y) * W + x)];
                            else if (k < 2 * C) v = (f == 0 && pack.has_first()) ? pack.z_first.data()[static_cast<std::size_t>(((k - C) * H + y) * W + x)] : 0.0;
                            else if (k == 2 * C + 1) v = (f == 0 && pack.has_first()) ? 1.0 : 0.0;
                            feats(f * P + a * px + b, (k * p + dy) * p + dx) = v;
                        }
    auto h = affine(feats, from2(m.in_w), from1(m.in_b));
    const auto pp = from2(m.patch_pos);
    for (int f = 0; f < frames; ++f) {
        const auto s = rollvid::diff::sinusoid(c.hist_max - 1 + f, D);
        for (int q = 0; q < P; ++q)
            for (int j = 0; j < D; ++j) h(f * P + q, j) += pp(q, j) + s[static_cast<std::size_t>(j)];
    }
    Mat ts(1, D);
    const auto tv = rollvid::diff::sinusoid(t, D);
    for (int j = 0; j < D; ++j) ts(0, j) = tv[static_cast<std::size_t>(j)];
    auto t1 = affine(ts, from2(m.t1_w), from1(m.t1_b));
    for (auto& e : t1.v) e = silu(e);
    const auto temb = affine(t1, from2(m.t2_w), from1(m.t2_b));
    for (const auto& b : m.blocks) h = block(b, h, temb);
    const auto out = affine(layer_norm(h, from1(m.out_g), from1(m.out_b)), from2(m.out_w), from1(m.out_bias));
    std::vector<double> eps(static_cast<std::size_t>(frames * C * H * W));
    for (int f = 0; f < frames; ++f)
        for (int a = 0; a < py; ++a)
            for (int b = 0; b < px; ++b)
                for (int k = 0; k < C; ++k)
                    for (int dy = 0; dy < p; ++dy)
                        for (int dx = 0; dx < p; ++dx)
                            eps[static_cast<std::size_t>(((f * C + k) * H + a * p + dy) * W + b * p + dx)] =
                                out(f * P + a * px + b, (k * p + dy) * p + dx);
    return eps;
}

// Fourth-order central differences of the double-precision function f with
// respect to the elements of parameter x.
inline std::vector<double> fd_gradient(const std::function<double()>& f, const rollvid::Tensor& x, double h) {
    std::vector<double> g(static_cast<std::size_t>(x.numel()));
    auto at = [&](std::size_t i, double d) {
        perturb() = {x.impl(), i, d};
        const double v = f();
        perturb() = {};
        return v;
    };
    for (std::size_t i = 0; i < g.size(); ++i) g[i] = (8.0 * (at(i, h) - at(i, -h)) - (at(i, 2 * h) - at(i, -2 * h))) / (12.0 * h);
    return g;
}

inline double rel_err(const std::vector<float>& tape, const std::vector<double>& fd) {
    double scale = 0, worst = 0;
    for (std::size_t i = 0; i < fd.size(); ++i) {
        scale = std::max({scale, std::abs(static_cast<double>(tape[i])), std::abs(fd[i])});
        worst = std::max(worst, std::abs(tape[i] - fd[i]));
    }
    return scale > 0 ? worst / scale : worst;
}

}  // namespace refm
