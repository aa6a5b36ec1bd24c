#include "rollvid/diffusion.hpp"

#include <cmath>

#include "rollvid/ops.hpp"

namespace rollvid {

std::vector<float> ConditionPack::history_mask(std::int64_t clip_frames) const {
    std::vector<float> m(static_cast<std::size_t>(n_hist + clip_frames), 0.0f);
    std::fill_n(m.begin(), n_hist, 1.0f);
    return m;
}

void ConditionPack::validate(std::int64_t clip_frames, const Shape& frame_shape) const {
    auto check = [&](const Tensor& t, std::int64_t n, const char* what) {
        if (!t.defined()) return;
        Shape want{n};
        want.insert(want.end(), frame_shape.begin(), frame_shape.end());
        if (t.shape() != want)
            throw contract_error(std::string("condition ") + what + ": expected " + shape_str(want) + ", got " +
                                 shape_str(t.shape()));
    };
    if (n_hist < 0) throw contract_error("condition: negative history count");
    if ((n_hist > 0) != z_hist.defined()) throw contract_error("condition: history latents present iff n_hist > 0");
    check(z_first, 1, "z_first");
    check(z_hist, n_hist, "z_hist");
    check(c_dense, clip_frames, "c_dense");
    check(c_sparse, clip_frames, "c_sparse");
}

}  // namespace rollvid

namespace rollvid::diff {

using namespace rollvid::ops;

NoiseSchedule NoiseSchedule::linear(int steps, double beta_first, double beta_last) {
    if (steps < 2) throw contract_error("schedule needs at least 2 levels");
    if (!(0 < beta_first && beta_first <= beta_last && beta_last < 1)) throw contract_error("schedule: betas must lie in (0, 1)");
    NoiseSchedule s;
    s.steps = steps;
    s.beta.assign(static_cast<std::size_t>(steps), 0.0);
    s.alpha_bar.assign(static_cast<std::size_t>(steps), 1.0);
    for (int t = 1; t < steps; ++t) {
        const double f = steps > 2 ? static_cast<double>(t - 1) / (steps - 2) : 0.0;
        s.beta[static_cast<std::size_t>(t)] = beta_first + f * (beta_last - beta_first);
        s.alpha_bar[static_cast<std::size_t>(t)] = s.alpha_bar[static_cast<std::size_t>(t - 1)] * (1.0 - s.beta[static_cast<std::size_t>(t)]);
    }
    return s;
}

double NoiseSchedule::ab(int t) const {
    if (t < 0 || t >= steps) throw contract_error("timestep " + std::to_string(t) + " outside [0, " + std::to_string(steps) + ")");
    return alpha_bar[static_cast<std::size_t>(t)];
}

Tensor add_noise_ab(const Tensor& z0, double alpha_bar, const Tensor& eps) {
    if (z0.shape() != eps.shape()) throw contract_error("add_noise: eps shape differs from z0");
    if (alpha_bar < 0 || alpha_bar > 1) throw contract_error("add_noise: alpha_bar outside [0, 1]");
    const double a = std::sqrt(alpha_bar), b = std::sqrt(1.0 - alpha_bar);
    auto x = z0.data(), e = eps.data();
    std::vector<float> out(x.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<float>(a * x[i] + b * e[i]);
    return Tensor::from(z0.shape(), std::move(out));
}

Tensor add_noise(const NoiseSchedule& s, const Tensor& z0, int t, const Tensor& eps) { return add_noise_ab(z0, s.ab(t), eps); }

Tensor frame_weighted_mse(const Tensor& pred, const Tensor& target, const std::vector<float>& frame_weights) {
    if (pred.shape() != target.shape())
        throw contract_error("eps_loss: prediction shape " + shape_str(pred.shape()) + " vs " + shape_str(target.shape()));
    const auto F = pred.dim(0);
    std::vector<float> w(static_cast<std::size_t>(F), 1.0f / static_cast<float>(F));
    if (!frame_weights.empty()) {
        if (static_cast<std::int64_t>(frame_weights.size()) != F) throw contract_error("eps_loss: one weight per frame required");
        for (std::size_t f = 0; f < w.size(); ++f) w[f] = frame_weights[f] / static_cast<float>(F);
    }
    auto loss = weighted_row_mse(pred, target, w);
    if (!std::isfinite(loss.item())) throw numeric_error("eps_loss is not finite");
    return loss;
}

Tensor eps_loss(const EpsModel& model, const NoiseSchedule& s, const ConditionPack& pack, const Tensor& z0, int t,
                const Tensor& eps, const std::vector<float>& frame_weights) {
    const auto z_t = add_noise(s, z0, t, eps);
    return frame_weighted_mse(model(z_t, t, pack), eps, frame_weights);
}

std::vector<int> ddim_timesteps(int t_start, int steps) {
    if (steps < 1) throw contract_error("denoise: steps must be >= 1");
    std::vector<int> ts;
    if (t_start <= 0) return ts;
    const int n = std::min(steps, t_start);
    for (int i = 0; i < n; ++i) ts.push_back(static_cast<int>(std::lround(static_cast<double>(t_start) * (n - i) / n)));
    return ts;
}

Tensor predict_x0(const NoiseSchedule& s, const Tensor& z_t, int t, const Tensor& eps_hat) {
    const double ab = s.ab(t);
    const double a = 1.0 / std::sqrt(ab), b = std::sqrt(1.0 - ab);
    return mul(sub(z_t, mul(eps_hat, static_cast<float>(b))), static_cast<float>(a));
}

Tensor denoise(const EpsModel& model, const NoiseSchedule& s, const Tensor& z_start, int t_start, int steps,
               const ConditionPack& pack) {
    const auto ts = ddim_timesteps(t_start, steps);
    s.ab(t_start);
    NoGradGuard ng;
    Tensor z = z_start;
    for (std::size_t i = 0; i < ts.size(); ++i) {
        const int t = ts[i];
        const double ab = s.ab(t);
        const double ab_next = i + 1 < ts.size() ? s.ab(ts[i + 1]) : 1.0;
        const auto e = model(z, t, pack);
        if (e.shape() != z.shape()) throw contract_error("denoise: model output shape differs from latent");
        std::span<const float> zd = z.data(), ed = e.data();
        std::vector<float> out(zd.size());
        const double sa = std::sqrt(ab), sb = std::sqrt(1.0 - ab), na = std::sqrt(ab_next), nb = std::sqrt(1.0 - ab_next);
        for (std::size_t k = 0; k < out.size(); ++k) {
            const double x0 = (zd[k] - sb * ed[k]) / sa;
            out[k] = static_cast<float>(na * x0 + nb * ed[k]);
        }
        if (!all_finite(out)) throw numeric_error("denoise: non-finite latent at t=" + std::to_string(t));
        z = Tensor::from(z.shape(), std::move(out));
    }
    return z;
}

std::vector<float> sinusoid(double pos, int dim) {
    std::vector<float> v(static_cast<std::size_t>(dim));
    const int half = dim / 2;
    for (int k = 0; k < half; ++k) {
        const double freq = std::exp(-std::log(1000.0) * k / half);
        v[static_cast<std::size_t>(k)] = static_cast<float>(std::sin(pos * freq));
        v[static_cast<std::size_t>(k + half)] = static_cast<float>(std::cos(pos * freq));
    }
    return v;
}

namespace {

Tensor small_normal(Rng& rng, const Shape& shape, double sd) {
    auto v = rng.normal_vector(static_cast<std::size_t>(shape_numel(shape)));
    for (auto& x : v) x = static_cast<float>(x * sd);
    return Tensor::from(shape, std::move(v), true);
}

}  // namespace

Block Block::init(Rng& rng, int width, int ff, int heads, int temb_dim) {
    Block b;
    b.heads = heads;
    b.ln1_g = ones_param({width});
    b.ln1_b = zeros_param({width});
    b.wq = xavier(rng, width, width);
    b.bq = zeros_param({width});
    b.wk = xavier(rng, width, width);
    b.bk = zeros_param({width});
    b.wv = xavier(rng, width, width);
    b.bv = zeros_param({width});
    b.wo = xavier(rng, width, width);
    b.bo = zeros_param({width});
    b.ln2_g = ones_param({width});
    b.ln2_b = zeros_param({width});
    b.w1 = xavier(rng, width, ff);
    b.b1 = zeros_param({ff});
    b.w2 = xavier(rng, ff, width);
    b.b2 = zeros_param({width});
    b.tp_w = xavier(rng, temb_dim, width, 0.5f);
    b.tp_b = zeros_param({width});
    return b;
}

Tensor Block::forward(const Tensor& h, const Tensor& temb) const {
    const auto width = wq.dim(1);
    auto x = add(h, linear(temb, tp_w, tp_b).reshape({width}));
    const auto a = layer_norm(x, ln1_g, ln1_b);
    const auto att = attention(linear(a, wq, bq), linear(a, wk, bk), linear(a, wv, bv), heads);
    x = add(x, linear(att, wo, bo));
    const auto f = layer_norm(x, ln2_g, ln2_b);
    return add(x, linear(gelu(linear(f, w1, b1)), w2, b2));
}

std::vector<NamedParam> Block::params(const std::string& p) {
    return {{p + "ln1.g", &ln1_g}, {p + "ln1.b", &ln1_b}, {p + "attn.q.w", &wq}, {p + "attn.q.b", &bq},
            {p + "attn.k.w", &wk}, {p + "attn.k.b", &bk}, {p + "attn.v.w", &wv}, {p + "attn.v.b", &bv},
            {p + "attn.o.w", &wo}, {p + "attn.o.b", &bo}, {p + "ln2.g", &ln2_g}, {p + "ln2.b", &ln2_b},
            {p + "ff1.w", &w1},    {p + "ff1.b", &b1},    {p + "ff2.w", &w2},    {p + "ff2.b", &b2},
            {p + "tproj.w", &tp_w}, {p + "tproj.b", &tp_b}};
}

Backbone Backbone::init(const BackboneConfig& cfg, Rng& rng) {
    if (cfg.latent_h % cfg.patch || cfg.latent_w % cfg.patch) throw contract_error("backbone: latent not divisible by patch");
    Backbone m;
    m.cfg_ = cfg;
    const int W = cfg.width;
    m.in_w = xavier(rng, cfg.token_features(), W);
    m.in_b = zeros_param({W});
    m.patch_pos = small_normal(rng, {cfg.tokens_per_frame(), W}, 0.02);
    m.t1_w = xavier(rng, W, W);
    m.t1_b = zeros_param({W});
    m.t2_w = xavier(rng, W, W);
    m.t2_b = zeros_param({W});
    for (int l = 0; l < cfg.blocks; ++l) m.blocks.push_back(Block::init(rng, W, cfg.ff, cfg.heads, W));
    m.out_g = ones_param({W});
    m.out_b = zeros_param({W});
    m.out_w = zeros_param({W, cfg.latent_channels * cfg.patch * cfg.patch});
    m.out_bias = zeros_param({cfg.latent_channels * cfg.patch * cfg.patch});
    return m;
}

TokenState Backbone::embed(const Tensor& z_t, int t, const ConditionPack& pack) const {
    if (!ready()) throw contract_error("backbone parameters missing");
    const auto& c = cfg_;
    const Shape frame{c.latent_channels, c.latent_h, c.latent_w};
    if (z_t.rank() != 4 || Shape(z_t.shape().begin() + 1, z_t.shape().end()) != frame)
        throw contract_error("backbone: latent shape " + shape_str(z_t.shape()));
    const auto F = z_t.dim(0);
    pack.validate(F, frame);
    if (pack.n_hist > c.hist_max) throw contract_error("backbone: more history frames than positions");
    const auto N = pack.n_hist + F;
    const int C = c.latent_channels, ch = 2 * C + 2;
    const auto plane = static_cast<std::size_t>(c.latent_h * c.latent_w);
    const std::size_t fsz = static_cast<std::size_t>(C) * plane;

    std::vector<float> img(static_cast<std::size_t>(N * ch) * plane, 0.0f);
    auto slot = [&](std::int64_t frame_i, int channel) { return img.begin() + static_cast<std::ptrdiff_t>((frame_i * ch + channel) * plane); };
    for (int j = 0; j < pack.n_hist; ++j) {
        std::copy_n(pack.z_hist.data().begin() + j * fsz, fsz, slot(j, C));
        std::fill_n(slot(j, 2 * C), plane, 1.0f);
    }
    for (std::int64_t f = 0; f < F; ++f) std::copy_n(z_t.data().begin() + f * fsz, fsz, slot(pack.n_hist + f, 0));
    if (pack.has_first()) {
        std::copy_n(pack.z_first.data().begin(), fsz, slot(pack.n_hist, C));
        std::fill_n(slot(pack.n_hist, 2 * C + 1), plane, 1.0f);
    }
    const auto feats = patchify(Tensor::from({N, ch, c.latent_h, c.latent_w}, std::move(img)), c.patch);

    const int P = c.tokens_per_frame(), W = c.width;
    std::vector<float> fpos(static_cast<std::size_t>(N * P * W));
    for (std::int64_t i = 0; i < N; ++i) {
        const double pos = i < pack.n_hist ? c.hist_max - pack.n_hist + i : c.hist_max - 1 + (i - pack.n_hist);
        const auto s = sinusoid(pos, W);
        for (int p = 0; p < P; ++p) std::copy(s.begin(), s.end(), fpos.begin() + (i * P + p) * W);
    }
    std::vector<Tensor> reps(static_cast<std::size_t>(N), patch_pos);
    auto h = add(add(linear(feats, in_w, in_b), concat_rows(reps)), Tensor::from({N * P, W}, std::move(fpos)));

    const auto ts = sinusoid(static_cast<double>(t), W);
    auto temb = linear(silu(linear(Tensor::from({1, W}, ts), t1_w, t1_b)), t2_w, t2_b);
    return {h, temb, pack.n_hist * P, F};
}

Tensor Backbone::head(const TokenState& st) const {
    const auto& c = cfg_;
    const auto clip = slice_rows(st.hidden, st.hist_tokens, st.hidden.dim(0));
    const auto out = linear(layer_norm(clip, out_g, out_b), out_w, out_bias);
    return unpatchify(out, {st.clip_frames, c.latent_channels, c.latent_h, c.latent_w}, c.patch);
}

Tensor Backbone::forward(const Tensor& z_t, int t, const ConditionPack& pack) const {
    auto st = embed(z_t, t, pack);
    for (int l = 0; l < cfg_.blocks; ++l) st.hidden = run_block(l, st.hidden, st.temb);
    return head(st);
}

std::vector<NamedParam> Backbone::params() {
    std::vector<NamedParam> ps{{"base.embed.w", &in_w}, {"base.embed.b", &in_b}, {"base.patch_pos", &patch_pos},
                               {"base.time1.w", &t1_w},  {"base.time1.b", &t1_b}, {"base.time2.w", &t2_w},
                               {"base.time2.b", &t2_b}};
    for (std::size_t l = 0; l < blocks.size(); ++l) {
        auto bp = blocks[l].params("base.block" + std::to_string(l) + ".");
        ps.insert(ps.end(), bp.begin(), bp.end());
    }
    ps.push_back({"base.head.ln.g", &out_g});
    ps.push_back({"base.head.ln.b", &out_b});
    ps.push_back({"base.head.w", &out_w});
    ps.push_back({"base.head.b", &out_bias});
    return ps;
}

}  // namespace rollvid::diff
