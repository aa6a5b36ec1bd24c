#include "rollvid/control.hpp"

#include <algorithm>
#include <numeric>

#include "rollvid/ops.hpp"

namespace rollvid::ctrl {

using namespace rollvid::ops;

namespace {

Tensor gather(const Tensor& t, const std::vector<int>& rows, const std::vector<int>& cols) {
    // rows empty = all rows (1-D tensors use cols only)
    if (t.rank() == 1) {
        std::vector<float> v;
        for (int c : cols) v.push_back(t.data()[static_cast<std::size_t>(c)]);
        return Tensor::from({static_cast<std::int64_t>(cols.size())}, std::move(v), true);
    }
    const auto nc = t.dim(1);
    std::vector<int> r = rows;
    if (r.empty()) {
        r.resize(static_cast<std::size_t>(t.dim(0)));
        std::iota(r.begin(), r.end(), 0);
    }
    std::vector<float> v;
    v.reserve(r.size() * cols.size());
    for (int i : r)
        for (int c : cols) v.push_back(t.data()[static_cast<std::size_t>(i * nc + c)]);
    return Tensor::from({static_cast<std::int64_t>(r.size()), static_cast<std::int64_t>(cols.size())}, std::move(v), true);
}

Tensor selector(int width, const std::vector<int>& idx) {
    std::vector<float> v(static_cast<std::size_t>(width) * idx.size(), 0.0f);
    for (std::size_t j = 0; j < idx.size(); ++j) v[static_cast<std::size_t>(idx[j]) * idx.size() + j] = 1.0f;
    return Tensor::from({width, static_cast<std::int64_t>(idx.size())}, std::move(v));
}

nlohmann::json config_json(const diff::BackboneConfig& c) {
    return {{"latent_channels", c.latent_channels}, {"latent_h", c.latent_h}, {"latent_w", c.latent_w},
            {"patch", c.patch},   {"width", c.width},   {"heads", c.heads},
            {"ff", c.ff},         {"blocks", c.blocks}, {"hist_max", c.hist_max},
            {"clip_frames", c.clip_frames}};
}

diff::BackboneConfig config_from(const nlohmann::json& j) {
    diff::BackboneConfig c;
    c.latent_channels = j.at("latent_channels");
    c.latent_h = j.at("latent_h");
    c.latent_w = j.at("latent_w");
    c.patch = j.at("patch");
    c.width = j.at("width");
    c.heads = j.at("heads");
    c.ff = j.at("ff");
    c.blocks = j.at("blocks");
    c.hist_max = j.at("hist_max");
    c.clip_frames = j.at("clip_frames");
    return c;
}

}  // namespace

std::vector<int> even_indices(int n) {
    std::vector<int> v;
    for (int i = 0; i < n; i += 2) v.push_back(i);
    return v;
}

std::vector<int> odd_indices(int n) {
    std::vector<int> v;
    for (int i = 1; i < n; i += 2) v.push_back(i);
    return v;
}

std::vector<NamedParam> Branch::params(const std::string& p) {
    std::vector<NamedParam> ps{{p + "embed.w", &embed_w}, {p + "embed.b", &embed_b}};
    for (std::size_t l = 0; l < blocks.size(); ++l) {
        auto bp = blocks[l].params(p + "block" + std::to_string(l) + ".");
        ps.insert(ps.end(), bp.begin(), bp.end());
    }
    return ps;
}

std::vector<NamedParam> ControlBranches::params() {
    auto ps = dense.params("ctrl.dense.");
    auto sp = sparse.params("ctrl.sparse.");
    ps.insert(ps.end(), sp.begin(), sp.end());
    for (std::size_t l = 0; l < phi.size(); ++l) ps.push_back({"ctrl.phi" + std::to_string(l) + ".w", &phi[l]});
    return ps;
}

diff::Block slice_block(const diff::Block& b, const std::vector<int>& w, const std::vector<int>& f) {
    diff::Block o;
    o.heads = b.heads;
    o.ln1_g = gather(b.ln1_g, {}, w);
    o.ln1_b = gather(b.ln1_b, {}, w);
    o.wq = gather(b.wq, w, w);
    o.bq = gather(b.bq, {}, w);
    o.wk = gather(b.wk, w, w);
    o.bk = gather(b.bk, {}, w);
    o.wv = gather(b.wv, w, w);
    o.bv = gather(b.bv, {}, w);
    o.wo = gather(b.wo, w, w);
    o.bo = gather(b.bo, {}, w);
    o.ln2_g = gather(b.ln2_g, {}, w);
    o.ln2_b = gather(b.ln2_b, {}, w);
    o.w1 = gather(b.w1, w, f);
    o.b1 = gather(b.b1, {}, f);
    o.w2 = gather(b.w2, f, w);
    o.b2 = gather(b.b2, {}, w);
    o.tp_w = gather(b.tp_w, {}, w);
    o.tp_b = gather(b.tp_b, {}, w);
    return o;
}

ControlBranches half_copy_init(const diff::Backbone& base, int m, Rng& rng) {
    const auto& c = base.config();
    if (!base.ready()) throw contract_error("half_copy_init: base parameters missing");
    if (c.width % 2 || c.ff % 2) throw contract_error("half_copy_init: base width must be even");
    if (m < 1 || m > c.blocks) throw contract_error("half_copy_init: controlled block count outside [1, blocks]");
    const int half = c.width / 2;
    if (half % c.heads) throw contract_error("half_copy_init: half width not divisible by heads");
    ControlBranches cb;
    cb.dense_channels = even_indices(c.width);
    cb.sparse_channels = odd_indices(c.width);
    cb.dense_select = selector(c.width, cb.dense_channels);
    cb.sparse_select = selector(c.width, cb.sparse_channels);
    const auto ff_even = even_indices(c.ff), ff_odd = odd_indices(c.ff);
    const int feat = c.latent_channels * c.patch * c.patch;
    for (auto* br : {&cb.dense, &cb.sparse}) {
        br->embed_w = xavier(rng, feat, half);
        br->embed_b = zeros_param({half});
    }
    for (int l = 0; l < m; ++l) {
        const auto& b = base.blocks[static_cast<std::size_t>(l)];
        cb.dense.blocks.push_back(slice_block(b, cb.dense_channels, ff_even));
        cb.sparse.blocks.push_back(slice_block(b, cb.sparse_channels, ff_odd));
        cb.phi.push_back(zeros_param({half, c.width}));
    }
    return cb;
}

Tensor fuse(const Tensor& base_out, const Tensor& dense, const Tensor& sparse, const Tensor& phi, float lambda) {
    Tensor mix;
    if (dense.defined()) mix = lambda == 1.0f ? dense : mul(dense, lambda);
    if (sparse.defined()) mix = mix.defined() ? add(mix, sparse) : sparse;
    if (!mix.defined()) return base_out;
    if (mix.dim(0) != base_out.dim(0) || phi.dim(0) != mix.dim(1) || phi.dim(1) != base_out.dim(1))
        throw contract_error("fuse: shapes " + shape_str(base_out.shape()) + ", " + shape_str(mix.shape()) + ", " +
                             shape_str(phi.shape()));
    return add(base_out, matmul(mix, phi));
}

FuseStep fuse_block(const diff::Backbone& base, const ControlBranches& ctrl, int l, const Tensor& hidden,
                    std::int64_t hist_tokens, const BranchTokens& branch, const Tensor& temb, float lambda) {
    if (l < 0 || l >= ctrl.depth()) throw contract_error("fuse_block: block index outside the controlled range");
    const auto li = static_cast<std::size_t>(l);
    FuseStep out;
    auto h = base.run_block(l, hidden, temb);
    if (branch.dense.defined()) out.next.dense = ctrl.dense.blocks[li].forward(branch.dense, temb);
    if (branch.sparse.defined()) out.next.sparse = ctrl.sparse.blocks[li].forward(branch.sparse, temb);
    if (!out.next.dense.defined() && !out.next.sparse.defined()) {
        out.hidden = h;
        return out;
    }
    const auto clip = fuse(slice_rows(h, hist_tokens, h.dim(0)), out.next.dense, out.next.sparse, ctrl.phi[li], lambda);
    out.hidden = hist_tokens > 0 ? concat_rows({slice_rows(h, 0, hist_tokens), clip}) : clip;
    return out;
}

BranchTokens ControlledModel::branch_inputs(const diff::TokenState& st, const ConditionPack& pack) const {
    BranchTokens bt;
    if (!ctrl.ready() || !pack.has_controls()) return bt;
    const auto& c = base.config();
    const auto clip0 = slice_rows(st.hidden, st.hist_tokens, st.hidden.dim(0));
    auto entry = [&](const Branch& br, const Tensor& sel, const Tensor& latent) {
        return add(linear(patchify(latent, c.patch), br.embed_w, br.embed_b), matmul(clip0, sel));
    };
    if (pack.c_dense.defined()) bt.dense = entry(ctrl.dense, ctrl.dense_select, pack.c_dense);
    if (pack.c_sparse.defined()) bt.sparse = entry(ctrl.sparse, ctrl.sparse_select, pack.c_sparse);
    return bt;
}

Tensor ControlledModel::forward(const Tensor& z_t, int t, const ConditionPack& pack) const {
    auto st = base.embed(z_t, t, pack);
    auto bt = branch_inputs(st, pack);
    for (int l = 0; l < base.config().blocks; ++l) {
        if (l < ctrl.depth() && (bt.dense.defined() || bt.sparse.defined())) {
            auto step = fuse_block(base, ctrl, l, st.hidden, st.hist_tokens, bt, st.temb, pack.dense_scale);
            st.hidden = step.hidden;
            bt = step.next;
        } else {
            st.hidden = base.run_block(l, st.hidden, st.temb);
        }
    }
    return base.head(st);
}

diff::EpsModel ControlledModel::eps_model() const {
    return [this](const Tensor& z, int t, const ConditionPack& p) { return forward(z, t, p); };
}

std::vector<NamedParam> ControlledModel::params() {
    auto ps = base.params();
    if (ctrl.ready()) {
        auto cp = ctrl.params();
        ps.insert(ps.end(), cp.begin(), cp.end());
    }
    return ps;
}

CheckpointData ControlledModel::to_checkpoint() const {
    CheckpointData ck;
    ck.meta = {{"kind", "diffusion"}, {"backbone", config_json(base.config())}, {"control_blocks", ctrl.depth()}};
    append_params(ck, const_cast<ControlledModel*>(this)->params());
    return ck;
}

ControlledModel ControlledModel::from_checkpoint(const CheckpointData& ck) {
    if (!ck.meta.contains("backbone")) throw contract_error("checkpoint has no diffusion model");
    ControlledModel m;
    Rng rng(0, "ckpt-shape");
    m.base = diff::Backbone::init(config_from(ck.meta.at("backbone")), rng);
    const int depth = ck.meta.value("control_blocks", 0);
    if (depth > 0) m.ctrl = half_copy_init(m.base, depth, rng);
    assign_params(m.params(), ck);
    return m;
}

float draw_feature_scale(double alpha, Rng& rng) {
    if (alpha < 0 || alpha > 1) throw contract_error("feature_degrade: alpha outside [0, 1]");
    if (!rng.bernoulli(alpha)) return 1.0f;
    return static_cast<float>(rng.uniform(kLambdaMin, 1.0));
}

std::pair<Tensor, float> feature_degrade(const Tensor& features, double alpha, Rng& rng) {
    const float lambda = draw_feature_scale(alpha, rng);
    return {lambda == 1.0f ? features : mul(features, lambda), lambda};
}

Tensor scale_blend(const Tensor& d, const std::vector<int>& levels, const std::vector<double>& weights) {
    if (levels.size() != weights.size() || levels.empty()) throw contract_error("scale_blend: one weight per scale");
    NoGradGuard ng;
    std::vector<double> acc(static_cast<std::size_t>(d.numel()), 0.0);
    for (std::size_t i = 0; i < levels.size(); ++i) {
        const int f = 1 << levels[i];
        const auto r = f == 1 ? d : upsample(downsample(d, f), f);
        for (std::size_t k = 0; k < acc.size(); ++k) acc[k] += weights[i] * r.data()[k];
    }
    std::vector<float> out(acc.begin(), acc.end());
    return Tensor::from(d.shape(), std::move(out));
}

Tensor random_scale_fusion(const Tensor& d, int n, Rng& rng, ScaleFusionDraw* draw) {
    if (n < 1) throw contract_error("random_scale_fusion: n must be >= 1");
    if (d.rank() < 2) throw contract_error("random_scale_fusion: needs a map");
    const auto H = d.dim(d.rank() - 2), W = d.dim(d.rank() - 1);
    if (H % (1 << n) || W % (1 << n)) throw contract_error("random_scale_fusion: map size not divisible by 2^n");
    ScaleFusionDraw dr;
    dr.excluded = static_cast<int>(rng.below(static_cast<std::uint64_t>(n + 1)));
    double total = 0.0;
    for (int j = 0; j <= n; ++j) {
        if (j == dr.excluded) continue;
        dr.kept.push_back(j);
        dr.weights.push_back(rng.uniform());
        total += dr.weights.back();
    }
    if (total <= 0.0) std::fill(dr.weights.begin(), dr.weights.end(), 1.0);
    total = std::accumulate(dr.weights.begin(), dr.weights.end(), 0.0);
    for (auto& w : dr.weights) w /= total;
    auto out = scale_blend(d, dr.kept, dr.weights);
    if (draw) *draw = std::move(dr);
    return out;
}

Tensor adaptive_blur(const Tensor& d, Rng& rng, int* kernel) {
    static constexpr int kSizes[] = {3, 5, 7};
    const int k = kSizes[rng.below(3)];
    if (kernel) *kernel = k;
    NoGradGuard ng;
    return box_blur(d, k);
}

Tensor apply_data_degradation(const Tensor& d, double beta, Rng& rng, DataDegradeDraw* draw) {
    if (beta < 0 || beta > 1) throw contract_error("apply_data_degradation: beta outside [0, 1]");
    DataDegradeDraw dr;
    Tensor out = d;
    if (rng.bernoulli(beta)) {
        dr.applied = true;
        dr.fused = rng.bernoulli(0.5);
        dr.blurred = rng.bernoulli(0.5);
        if (!dr.fused && !dr.blurred) (rng.bernoulli(0.5) ? dr.fused : dr.blurred) = true;
        if (dr.fused) out = random_scale_fusion(out, kFusionScales, rng);
        if (dr.blurred) out = adaptive_blur(out, rng);
    }
    if (draw) *draw = dr;
    return out;
}

Tensor encode_dense(const ae::Autoencoder& ae, const Tensor& depth) {
    if (depth.rank() != 4 || depth.dim(1) != 1) throw contract_error("encode_dense: depth must be [F x 1 x H x W]");
    const auto F = depth.dim(0), plane = depth.dim(2) * depth.dim(3);
    std::vector<float> rgb(static_cast<std::size_t>(F * 3 * plane));
    for (std::int64_t f = 0; f < F; ++f)
        for (int c = 0; c < 3; ++c)
            std::copy_n(depth.data().begin() + f * plane, plane, rgb.begin() + (f * 3 + c) * plane);
    NoGradGuard ng;
    return ae.encode(Tensor::from({F, 3, depth.dim(2), depth.dim(3)}, std::move(rgb)));
}

Tensor encode_sparse(const ae::Autoencoder& ae, const Tensor& pointmap) {
    NoGradGuard ng;
    return ae.encode(pointmap);
}

}  // namespace rollvid::ctrl
