#include "rollvid/autoencoder.hpp"

#include <cmath>
#include <numeric>

#include "rollvid/ops.hpp"
#include "rollvid/serialize.hpp"

namespace rollvid::ae {

using namespace rollvid::ops;

Autoencoder Autoencoder::init(const AeConfig& cfg, Rng& rng) {
    if (cfg.height % 4 != 0 || cfg.width % 4 != 0) throw contract_error("autoencoder: H and W must be divisible by 4");
    Autoencoder a;
    a.cfg_ = cfg;
    const int c4 = cfg.channels * 4, h1 = cfg.hidden1, h2 = cfg.hidden2, cz = cfg.latent_channels;
    a.enc_w1 = xavier(rng, c4, h1);
    a.enc_b1 = zeros_param({h1});
    a.enc_w2 = xavier(rng, h1 * 4, h2);
    a.enc_b2 = zeros_param({h2});
    a.enc_w3 = xavier(rng, h2 * 9, cz);
    a.enc_b3 = zeros_param({cz});
    a.dec_w1 = xavier(rng, cz * 9, h2);
    a.dec_b1 = zeros_param({h2});
    a.dec_w2 = xavier(rng, h2, h1 * 4);
    a.dec_b2 = zeros_param({h1 * 4});
    a.dec_w3 = xavier(rng, h1 * 9, h1);
    a.dec_b3 = zeros_param({h1});
    a.dec_w4 = xavier(rng, h1, c4);
    a.dec_b4 = Tensor::full({c4}, 0.5f);
    a.dec_b4.set_requires_grad(true);
    return a;
}

void Autoencoder::require_ready() const {
    if (!ready()) throw contract_error("autoencoder parameters missing (train or load first)");
}

Shape Autoencoder::latent_shape(std::int64_t frames) const {
    return {frames, cfg_.latent_channels, cfg_.height / 4, cfg_.width / 4};
}

Tensor Autoencoder::encode(const Tensor& frames) const {
    require_ready();
    const Shape want{frames.rank() == 4 ? frames.dim(0) : -1, cfg_.channels, cfg_.height, cfg_.width};
    if (frames.shape() != want) throw contract_error("encode: expected [F x 3 x H x W], got " + shape_str(frames.shape()));
    const auto F = frames.dim(0);
    const int h1 = cfg_.hidden1;
    auto t = gelu(linear(patchify(frames, 2), enc_w1, enc_b1));
    auto img = unpatchify(t, {F, h1, cfg_.height / 2, cfg_.width / 2}, 1);
    t = gelu(linear(patchify(img, 2), enc_w2, enc_b2));
    img = unpatchify(t, {F, cfg_.hidden2, cfg_.height / 4, cfg_.width / 4}, 1);
    t = linear(unfold(img, 3), enc_w3, enc_b3);
    return mul(unpatchify(t, latent_shape(F), 1), latent_scale);
}

Tensor Autoencoder::decode_raw(const Tensor& z) const {
    require_ready();
    if (z.rank() != 4 || z.shape() != latent_shape(z.dim(0)))
        throw contract_error("decode: expected latent " + shape_str(latent_shape(-1)) + ", got " + shape_str(z.shape()));
    const auto F = z.dim(0);
    const int h1 = cfg_.hidden1;
    auto t = gelu(linear(unfold(mul(z, 1.0f / latent_scale), 3), dec_w1, dec_b1));
    t = gelu(linear(t, dec_w2, dec_b2));
    auto img = unpatchify(t, {F, h1, cfg_.height / 2, cfg_.width / 2}, 2);
    t = gelu(linear(unfold(img, 3), dec_w3, dec_b3));
    t = linear(t, dec_w4, dec_b4);
    return unpatchify(t, {F, cfg_.channels, cfg_.height, cfg_.width}, 2);
}

Tensor Autoencoder::decode(const Tensor& z) const { return clamp(decode_raw(z), 0.0f, 1.0f); }

Tensor Autoencoder::roundtrip(const Tensor& frames, int k) const {
    if (k < 0) throw contract_error("roundtrip count must be >= 0");
    NoGradGuard ng;
    Tensor x = frames;
    for (int i = 0; i < k; ++i) x = decode(encode(x));
    return x;
}

std::vector<NamedParam> Autoencoder::params() {
    return {{"enc.w1", &enc_w1}, {"enc.b1", &enc_b1}, {"enc.w2", &enc_w2}, {"enc.b2", &enc_b2},
            {"enc.w3", &enc_w3}, {"enc.b3", &enc_b3}, {"dec.w1", &dec_w1}, {"dec.b1", &dec_b1},
            {"dec.w2", &dec_w2}, {"dec.b2", &dec_b2}, {"dec.w3", &dec_w3}, {"dec.b3", &dec_b3},
            {"dec.w4", &dec_w4}, {"dec.b4", &dec_b4}};
}

CheckpointData Autoencoder::to_checkpoint() const {
    require_ready();
    CheckpointData ck;
    ck.meta["kind"] = "autoencoder";
    ck.meta["latent_scale"] = latent_scale;
    ck.meta["arch"] = {{"channels", cfg_.channels},           {"height", cfg_.height},
                       {"width", cfg_.width},                 {"latent_channels", cfg_.latent_channels},
                       {"hidden1", cfg_.hidden1},             {"hidden2", cfg_.hidden2}};
    append_params(ck, const_cast<Autoencoder*>(this)->params(), "ae.");
    return ck;
}

Autoencoder Autoencoder::from_checkpoint(const CheckpointData& ck) {
    if (!ck.meta.contains("arch") || !ck.meta.contains("latent_scale"))
        throw io_error("checkpoint carries no autoencoder");
    const auto& j = ck.meta.at("arch");
    AeConfig cfg;
    cfg.channels = j.at("channels");
    cfg.height = j.at("height");
    cfg.width = j.at("width");
    cfg.latent_channels = j.at("latent_channels");
    cfg.hidden1 = j.at("hidden1");
    cfg.hidden2 = j.at("hidden2");
    Rng dummy(0, "ae-load");
    auto a = init(cfg, dummy);
    assign_params(a.params(), ck, "ae.");
    a.latent_scale = ck.meta.at("latent_scale").get<float>();
    return a;
}

Autoencoder Autoencoder::clone() const { return from_checkpoint(to_checkpoint()); }

Tensor stack_frames(const std::vector<scene::SceneClip>& clips) {
    if (clips.empty()) throw contract_error("stack_frames: no clips");
    std::vector<Tensor> parts;
    for (const auto& c : clips) parts.push_back(c.rgb);
    NoGradGuard ng;
    return concat_rows(parts).detach();
}

namespace {

Tensor gather_frames(const Tensor& all, const std::vector<std::size_t>& idx) {
    Shape s = all.shape();
    const std::size_t per = static_cast<std::size_t>(all.numel() / s[0]);
    s[0] = static_cast<std::int64_t>(idx.size());
    std::vector<float> out(idx.size() * per);
    auto d = all.data();
    for (std::size_t i = 0; i < idx.size(); ++i) std::copy_n(d.begin() + idx[i] * per, per, out.begin() + i * per);
    return Tensor::from(s, std::move(out));
}

double dataset_loss(const Autoencoder& a, const Tensor& frames) {
    NoGradGuard ng;
    const auto n = static_cast<std::size_t>(frames.dim(0));
    double total = 0.0;
    const std::size_t chunk = 64;
    for (std::size_t b = 0; b < n; b += chunk) {
        const auto e = std::min(n, b + chunk);
        auto part = slice_rows(frames, static_cast<std::int64_t>(b), static_cast<std::int64_t>(e));
        total += mse(a.decode_raw(a.encode(part)), part).item() * static_cast<double>(e - b);
    }
    return total / static_cast<double>(n);
}

}  // namespace

AeTrainResult train_ae(const std::vector<scene::SceneClip>& corpus, const AeTrainOptions& opts, Rng& rng) {
    if (corpus.empty()) throw contract_error("train_ae: corpus is empty");
    if (opts.epochs < 0 || opts.batch <= 0) throw contract_error("train_ae: bad epochs/batch");
    const auto frames = stack_frames(corpus);
    AeTrainResult res;
    Rng init_rng(rng.seed(), "ae-init");
    res.ae = Autoencoder::init(opts.arch, init_rng);
    auto& a = res.ae;
    res.initial_loss = dataset_loss(a, frames);

    const auto params = a.params();
    AdamW opt({opts.lr, 0.9, 0.999, 1e-8, 0.0});
    const std::size_t n = static_cast<std::size_t>(frames.dim(0));
    std::vector<std::size_t> order(n);
    for (int ep = 0; ep < opts.epochs; ++ep) {
        std::iota(order.begin(), order.end(), 0);
        for (std::size_t i = n - 1; i > 0; --i) std::swap(order[i], order[rng.below(i + 1)]);
        // cosine decay to 10% over the run
        const double frac = opts.epochs > 1 ? static_cast<double>(ep) / (opts.epochs - 1) : 0.0;
        opt.set_lr(opts.lr * (0.55 + 0.45 * std::cos(M_PI * frac)));
        for (std::size_t b = 0; b < n; b += static_cast<std::size_t>(opts.batch)) {
            const std::vector<std::size_t> idx(order.begin() + b, order.begin() + std::min(n, b + opts.batch));
            const auto x = gather_frames(frames, idx);
            zero_grads(params);
            const auto loss = mse(a.decode_raw(a.encode(x)), x);
            if (!std::isfinite(loss.item()))
                throw numeric_error("train_ae diverged: loss " + std::to_string(loss.item()) + " at epoch " +
                                    std::to_string(ep) + ", batch " + std::to_string(b / opts.batch));
            loss.backward();
            opt.step(params, [](const std::string&) { return true; });
        }
        res.epoch_losses.push_back(dataset_loss(a, frames));
        if (!std::isfinite(res.epoch_losses.back()))
            throw numeric_error("train_ae diverged after epoch " + std::to_string(ep));
    }

    if (opts.epochs > 0) {
        // unit-variance latents for the diffusion model
        NoGradGuard ng;
        const auto z = a.encode(frames);
        double s2 = 0.0, s1 = 0.0;
        for (float v : z.data()) {
            s1 += v;
            s2 += static_cast<double>(v) * v;
        }
        const double m = s1 / z.numel();
        const double sd = std::sqrt(std::max(1e-12, s2 / z.numel() - m * m));
        a.latent_scale = static_cast<float>(1.0 / sd);
    }
    if (opts.checkpoint) save_checkpoint_file(*opts.checkpoint, a.to_checkpoint());
    return res;
}

}  // namespace rollvid::ae
