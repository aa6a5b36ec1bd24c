#include "rollvid/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numeric>

namespace rollvid::ops {

namespace {

using RowMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

bool is_suffix(const Shape& small, const Shape& big) {
    if (small.size() > big.size()) return false;
    return std::equal(small.rbegin(), small.rend(), big.rbegin());
}

void accumulate(TensorImpl& node, std::size_t i, float v) { node.grad_buffer()[i] += v; }

void require_rank(const Tensor& t, int rank, const char* what) {
    if (t.rank() != rank)
        throw contract_error(std::string(what) + ": expected rank " + std::to_string(rank) + ", got " +
                             shape_str(t.shape()));
}

void require_finite(const std::vector<float>& v, const char* what) {
    if (!all_finite(v)) throw numeric_error(std::string(what) + " produced a non-finite value");
}

Tensor keep_exact(Tensor t, double v) {
    t.impl()->exact = v;
    return t;
}

double apply_double(Binary op, double x, double y) {
    switch (op) {
        case Binary::add: return x + y;
        case Binary::sub: return x - y;
        case Binary::mul: return x * y;
        case Binary::div: return x / y;
        case Binary::pow: return std::pow(x, y);
    }
    return 0.0;
}

}  // namespace

Tensor elementwise(Binary op, const Tensor& a, const Tensor& b) {
    const Shape& sa = a.shape();
    const Shape& sb = b.shape();
    Shape out_shape;
    if (is_suffix(sb, sa))
        out_shape = sa;
    else if (is_suffix(sa, sb))
        out_shape = sb;
    else
        throw contract_error("elementwise: shapes " + shape_str(sa) + " and " + shape_str(sb) +
                             " are not trailing-broadcast compatible");

    const auto n = static_cast<std::size_t>(shape_numel(out_shape));
    const auto na = static_cast<std::size_t>(a.numel());
    const auto nb = static_cast<std::size_t>(b.numel());
    auto ad = a.data();
    auto bd = b.data();
    if (op == Binary::div && std::any_of(bd.begin(), bd.end(), [](float v) { return v == 0.0f; }))
        throw contract_error("elementwise div: divisor contains zero");

    std::vector<float> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        const float x = ad[i % na];
        const float y = bd[i % nb];
        switch (op) {
            case Binary::add: out[i] = x + y; break;
            case Binary::sub: out[i] = x - y; break;
            case Binary::mul: out[i] = x * y; break;
            case Binary::div: out[i] = x / y; break;
            case Binary::pow: out[i] = std::pow(x, y); break;
        }
    }
    if (op == Binary::div || op == Binary::pow) require_finite(out, "elementwise");
    const bool scalar = n == 1;
    const double exact = scalar ? apply_double(op, a.value(), b.value()) : 0.0;

    auto res = make_result(out_shape, std::move(out), {a, b}, [op, na, nb](TensorImpl& self) {
        TensorImpl& ia = *self.inputs[0];
        TensorImpl& ib = *self.inputs[1];
        const auto& g = self.grad;
        for (std::size_t i = 0; i < g.size(); ++i) {
            const std::size_t ja = i % na;
            const std::size_t jb = i % nb;
            const float x = ia.data[ja];
            const float y = ib.data[jb];
            float da = 0.0f;
            float db = 0.0f;
            switch (op) {
                case Binary::add: da = g[i]; db = g[i]; break;
                case Binary::sub: da = g[i]; db = -g[i]; break;
                case Binary::mul: da = g[i] * y; db = g[i] * x; break;
                case Binary::div: da = g[i] / y; db = -g[i] * x / (y * y); break;
                case Binary::pow:
                    da = g[i] * y * std::pow(x, y - 1.0f);
                    db = x > 0.0f ? g[i] * self.data[i] * std::log(x) : 0.0f;
                    break;
            }
            if (ia.requires_grad) accumulate(ia, ja, da);
            if (ib.requires_grad) accumulate(ib, jb, db);
        }
    });
    return scalar ? keep_exact(res, exact) : res;
}

Tensor elementwise(Binary op, const Tensor& a, float b) {
    if (op == Binary::div) {
        if (b == 0.0f) throw contract_error("elementwise div: divisor is zero");
        return elementwise(Binary::mul, a, 1.0f / b);
    }
    auto ad = a.data();
    std::vector<float> out(ad.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        switch (op) {
            case Binary::add: out[i] = ad[i] + b; break;
            case Binary::sub: out[i] = ad[i] - b; break;
            case Binary::mul: out[i] = ad[i] * b; break;
            case Binary::pow: out[i] = std::pow(ad[i], b); break;
            case Binary::div: break;
        }
    }
    if (op == Binary::pow) require_finite(out, "elementwise pow");
    const bool scalar = out.size() == 1;
    const double exact = scalar ? apply_double(op, a.value(), b) : 0.0;
    auto res = make_result(a.shape(), std::move(out), {a}, [op, b](TensorImpl& self) {
        TensorImpl& ia = *self.inputs[0];
        auto& ga = ia.grad_buffer();
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
            switch (op) {
                case Binary::add:
                case Binary::sub: ga[i] += self.grad[i]; break;
                case Binary::mul: ga[i] += self.grad[i] * b; break;
                case Binary::pow: ga[i] += self.grad[i] * b * std::pow(ia.data[i], b - 1.0f); break;
                case Binary::div: break;
            }
        }
    });
    return scalar ? keep_exact(res, exact) : res;
}

Tensor sum(const Tensor& a) {
    auto d = a.data();
    const double s = std::accumulate(d.begin(), d.end(), 0.0);
    return keep_exact(make_result({}, {static_cast<float>(s)}, {a}, [](TensorImpl& self) {
        auto& g = self.inputs[0]->grad_buffer();
        for (auto& v : g) v += self.grad[0];
    }), s);
}

Tensor mean(const Tensor& a) {
    if (a.numel() == 0) throw contract_error("mean of empty tensor");
    auto d = a.data();
    const double s = std::accumulate(d.begin(), d.end(), 0.0) / static_cast<double>(d.size());
    return keep_exact(make_result({}, {static_cast<float>(s)}, {a}, [](TensorImpl& self) {
        auto& g = self.inputs[0]->grad_buffer();
        const float scale = self.grad[0] / static_cast<float>(g.size());
        for (auto& v : g) v += scale;
    }), s);
}

Tensor mse(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape())
        throw contract_error("mse: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    if (a.numel() == 0) throw contract_error("mse of empty tensors");
    auto ad = a.data();
    auto bd = b.data();
    double s = 0.0;
    for (std::size_t i = 0; i < ad.size(); ++i) {
        const double d = static_cast<double>(ad[i]) - bd[i];
        s += d * d;
    }
    s /= static_cast<double>(ad.size());
    return keep_exact(make_result({}, {static_cast<float>(s)}, {a, b}, [](TensorImpl& self) {
        TensorImpl& ia = *self.inputs[0];
        TensorImpl& ib = *self.inputs[1];
        const float scale = 2.0f * self.grad[0] / static_cast<float>(ia.data.size());
        for (std::size_t i = 0; i < ia.data.size(); ++i) {
            const float d = scale * (ia.data[i] - ib.data[i]);
            if (ia.requires_grad) accumulate(ia, i, d);
            if (ib.requires_grad) accumulate(ib, i, -d);
        }
    }), s);
}

Tensor mean_sq_per_row(const Tensor& a) {
    if (a.rank() < 1 || a.dim(0) == 0) throw contract_error("mean_sq_per_row: empty leading dimension");
    const auto rows = static_cast<std::size_t>(a.dim(0));
    const std::size_t cols = static_cast<std::size_t>(a.numel()) / rows;
    auto d = a.data();
    std::vector<float> out(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        double s = 0.0;
        for (std::size_t c = 0; c < cols; ++c) s += static_cast<double>(d[r * cols + c]) * d[r * cols + c];
        out[r] = static_cast<float>(s / static_cast<double>(cols));
    }
    return make_result({static_cast<std::int64_t>(rows)}, std::move(out), {a}, [cols](TensorImpl& self) {
        TensorImpl& ia = *self.inputs[0];
        auto& g = ia.grad_buffer();
        for (std::size_t r = 0; r < self.grad.size(); ++r) {
            const float scale = 2.0f * self.grad[r] / static_cast<float>(cols);
            for (std::size_t c = 0; c < cols; ++c) g[r * cols + c] += scale * ia.data[r * cols + c];
        }
    });
}

Tensor weighted_sum(const Tensor& a, const std::vector<float>& weights) {
    if (static_cast<std::int64_t>(weights.size()) != a.numel())
        throw contract_error("weighted_sum: weight count does not match tensor size");
    auto d = a.data();
    double s = 0.0;
    for (std::size_t i = 0; i < weights.size(); ++i) s += static_cast<double>(d[i]) * weights[i];
    return keep_exact(make_result({}, {static_cast<float>(s)}, {a}, [weights](TensorImpl& self) {
        auto& g = self.inputs[0]->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[0] * weights[i];
    }), s);
}

Tensor weighted_row_mse(const Tensor& a, const Tensor& b, const std::vector<float>& row_weights) {
    if (a.shape() != b.shape())
        throw contract_error("weighted_row_mse: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    if (a.rank() < 1 || a.dim(0) == 0) throw contract_error("weighted_row_mse: empty leading dimension");
    const auto rows = static_cast<std::size_t>(a.dim(0));
    if (row_weights.size() != rows) throw contract_error("weighted_row_mse: one weight per row required");
    const std::size_t cols = static_cast<std::size_t>(a.numel()) / rows;
    auto ad = a.data();
    auto bd = b.data();
    double s = 0.0;
    for (std::size_t r = 0; r < rows; ++r) {
        double row = 0.0;
        for (std::size_t c = 0; c < cols; ++c) {
            const double d = static_cast<double>(ad[r * cols + c]) - bd[r * cols + c];
            row += d * d;
        }
        s += row_weights[r] * row / static_cast<double>(cols);
    }
    return keep_exact(make_result({}, {static_cast<float>(s)}, {a, b}, [row_weights, cols](TensorImpl& self) {
        TensorImpl& ia = *self.inputs[0];
        TensorImpl& ib = *self.inputs[1];
        for (std::size_t r = 0; r < row_weights.size(); ++r) {
            const float scale = 2.0f * self.grad[0] * row_weights[r] / static_cast<float>(cols);
            for (std::size_t c = 0; c < cols; ++c) {
                const std::size_t i = r * cols + c;
                const float d = scale * (ia.data[i] - ib.data[i]);
                if (ia.requires_grad) accumulate(ia, i, d);
                if (ib.requires_grad) accumulate(ib, i, -d);
            }
        }
    }), s);
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    require_rank(a, 2, "matmul");
    require_rank(b, 2, "matmul");
    const auto m = a.dim(0), k = a.dim(1), n = b.dim(1);
    if (b.dim(0) != k)
        throw contract_error("matmul: inner dimensions differ " + shape_str(a.shape()) + " * " + shape_str(b.shape()));
    std::vector<float> out(static_cast<std::size_t>(m * n));
    MapMat(out.data(), m, n).noalias() = ConstMapMat(a.data().data(), m, k) * ConstMapMat(b.data().data(), k, n);
    return make_result({m, n}, std::move(out), {a, b}, [m, k, n](TensorImpl& self) {
        TensorImpl& ia = *self.inputs[0];
        TensorImpl& ib = *self.inputs[1];
        ConstMapMat g(self.grad.data(), m, n);
        if (ia.requires_grad)
            MapMat(ia.grad_buffer().data(), m, k).noalias() += g * ConstMapMat(ib.data.data(), k, n).transpose();
        if (ib.requires_grad)
            MapMat(ib.grad_buffer().data(), k, n).noalias() += ConstMapMat(ia.data.data(), m, k).transpose() * g;
    });
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias) {
    require_rank(x, 2, "linear");
    require_rank(w, 2, "linear");
    const auto m = x.dim(0), k = x.dim(1), n = w.dim(1);
    if (w.dim(0) != k)
        throw contract_error("linear: input width " + std::to_string(k) + " vs weight " + shape_str(w.shape()));
    const bool has_bias = bias.defined();
    if (has_bias && (bias.rank() != 1 || bias.dim(0) != n)) throw contract_error("linear: bias shape mismatch");
    std::vector<float> out(static_cast<std::size_t>(m * n));
    MapMat y(out.data(), m, n);
    y.noalias() = ConstMapMat(x.data().data(), m, k) * ConstMapMat(w.data().data(), k, n);
    if (has_bias) y.rowwise() += Eigen::Map<const Eigen::RowVectorXf>(bias.data().data(), n);
    std::vector<Tensor> inputs{x, w};
    if (has_bias) inputs.push_back(bias);
    return make_result({m, n}, std::move(out), std::move(inputs), [m, k, n](TensorImpl& self) {
        TensorImpl& ix = *self.inputs[0];
        TensorImpl& iw = *self.inputs[1];
        ConstMapMat g(self.grad.data(), m, n);
        if (ix.requires_grad)
            MapMat(ix.grad_buffer().data(), m, k).noalias() += g * ConstMapMat(iw.data.data(), k, n).transpose();
        if (iw.requires_grad)
            MapMat(iw.grad_buffer().data(), k, n).noalias() += ConstMapMat(ix.data.data(), m, k).transpose() * g;
        if (self.inputs.size() > 2 && self.inputs[2]->requires_grad)
            Eigen::Map<Eigen::RowVectorXf>(self.inputs[2]->grad_buffer().data(), n) += g.colwise().sum();
    });
}

Tensor transpose(const Tensor& a) {
    require_rank(a, 2, "transpose");
    const auto m = a.dim(0), n = a.dim(1);
    std::vector<float> out(static_cast<std::size_t>(m * n));
    MapMat(out.data(), n, m) = ConstMapMat(a.data().data(), m, n).transpose();
    return make_result({n, m}, std::move(out), {a}, [m, n](TensorImpl& self) {
        MapMat(self.inputs[0]->grad_buffer().data(), m, n) += ConstMapMat(self.grad.data(), n, m).transpose();
    });
}

Tensor gelu(const Tensor& a) {
    constexpr float c = 0.7978845608028654f;  // sqrt(2/pi)
    auto d = a.data();
    std::vector<float> out(d.size());
    for (std::size_t i = 0; i < d.size(); ++i) {
        const float x = d[i];
        out[i] = 0.5f * x * (1.0f + std::tanh(c * (x + 0.044715f * x * x * x)));
    }
    return make_result(a.shape(), std::move(out), {a}, [](TensorImpl& self) {
        TensorImpl& in = *self.inputs[0];
        auto& g = in.grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) {
            const float x = in.data[i];
            const float u = c * (x + 0.044715f * x * x * x);
            const float th = std::tanh(u);
            const float du = c * (1.0f + 3.0f * 0.044715f * x * x);
            g[i] += self.grad[i] * (0.5f * (1.0f + th) + 0.5f * x * (1.0f - th * th) * du);
        }
    });
}

Tensor silu(const Tensor& a) {
    auto d = a.data();
    std::vector<float> out(d.size());
    for (std::size_t i = 0; i < d.size(); ++i) out[i] = d[i] / (1.0f + std::exp(-d[i]));
    return make_result(a.shape(), std::move(out), {a}, [](TensorImpl& self) {
        TensorImpl& in = *self.inputs[0];
        auto& g = in.grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) {
            const float s = 1.0f / (1.0f + std::exp(-in.data[i]));
            g[i] += self.grad[i] * s * (1.0f + in.data[i] * (1.0f - s));
        }
    });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, float eps) {
    require_rank(x, 2, "layer_norm");
    const auto rows = x.dim(0), d = x.dim(1);
    if (gamma.numel() != d || beta.numel() != d) throw contract_error("layer_norm: affine size mismatch");
    auto xd = x.data();
    auto gd = gamma.data();
    auto bd = beta.data();
    std::vector<float> out(xd.size());
    std::vector<float> stats(static_cast<std::size_t>(rows * 2));  // mean, inv_std
    for (std::int64_t r = 0; r < rows; ++r) {
        const float* row = xd.data() + r * d;
        double mu = 0.0;
        for (std::int64_t j = 0; j < d; ++j) mu += row[j];
        mu /= static_cast<double>(d);
        double var = 0.0;
        for (std::int64_t j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
        var /= static_cast<double>(d);
        const double inv = 1.0 / std::sqrt(var + eps);
        stats[static_cast<std::size_t>(2 * r)] = static_cast<float>(mu);
        stats[static_cast<std::size_t>(2 * r + 1)] = static_cast<float>(inv);
        for (std::int64_t j = 0; j < d; ++j)
            out[static_cast<std::size_t>(r * d + j)] = static_cast<float>((row[j] - mu) * inv) * gd[j] + bd[j];
    }
    return make_result(x.shape(), std::move(out), {x, gamma, beta}, [rows, d, stats](TensorImpl& self) {
        TensorImpl& ix = *self.inputs[0];
        TensorImpl& ig = *self.inputs[1];
        TensorImpl& ib = *self.inputs[2];
        std::vector<float> xhat(static_cast<std::size_t>(d));
        std::vector<float> dxhat(static_cast<std::size_t>(d));
        for (std::int64_t r = 0; r < rows; ++r) {
            const float mu = stats[static_cast<std::size_t>(2 * r)];
            const float inv = stats[static_cast<std::size_t>(2 * r + 1)];
            const float* g = self.grad.data() + r * d;
            double mean_dx = 0.0, mean_dx_xhat = 0.0;
            for (std::int64_t j = 0; j < d; ++j) {
                xhat[j] = (ix.data[static_cast<std::size_t>(r * d + j)] - mu) * inv;
                dxhat[j] = g[j] * ig.data[j];
                mean_dx += dxhat[j];
                mean_dx_xhat += static_cast<double>(dxhat[j]) * xhat[j];
                if (ig.requires_grad) ig.grad_buffer()[j] += g[j] * xhat[j];
                if (ib.requires_grad) ib.grad_buffer()[j] += g[j];
            }
            if (!ix.requires_grad) continue;
            mean_dx /= static_cast<double>(d);
            mean_dx_xhat /= static_cast<double>(d);
            auto& gx = ix.grad_buffer();
            for (std::int64_t j = 0; j < d; ++j)
                gx[static_cast<std::size_t>(r * d + j)] +=
                    inv * static_cast<float>(dxhat[j] - mean_dx - xhat[j] * mean_dx_xhat);
        }
    });
}

Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, int heads) {
    require_rank(q, 2, "attention");
    if (k.shape() != q.shape() || v.shape() != q.shape()) throw contract_error("attention: q/k/v shape mismatch");
    const auto n = q.dim(0), d = q.dim(1);
    if (heads <= 0 || d % heads != 0) throw contract_error("attention: width not divisible by head count");
    const auto dh = d / heads;
    const float scale = 1.0f / std::sqrt(static_cast<float>(dh));

    ConstMapMat Q(q.data().data(), n, d), K(k.data().data(), n, d), V(v.data().data(), n, d);
    std::vector<float> out(static_cast<std::size_t>(n * d));
    MapMat O(out.data(), n, d);
    auto probs = std::make_shared<std::vector<float>>(static_cast<std::size_t>(heads * n * n));
    for (int h = 0; h < heads; ++h) {
        MapMat P(probs->data() + static_cast<std::size_t>(h) * n * n, n, n);
        P.noalias() = (Q.middleCols(h * dh, dh) * K.middleCols(h * dh, dh).transpose()) * scale;
        // plain loops: Eigen's packet exp/sum depend on buffer alignment
        for (std::int64_t r = 0; r < n; ++r) {
            float* row = &P(r, 0);
            float mx = row[0];
            for (std::int64_t c = 1; c < n; ++c) mx = std::max(mx, row[c]);
            float z = 0.0f;
            for (std::int64_t c = 0; c < n; ++c) z += (row[c] = std::exp(row[c] - mx));
            for (std::int64_t c = 0; c < n; ++c) row[c] /= z;
        }
        O.middleCols(h * dh, dh).noalias() = P * V.middleCols(h * dh, dh);
    }
    return make_result(q.shape(), std::move(out), {q, k, v}, [n, d, dh, heads, scale, probs](TensorImpl& self) {
        TensorImpl& iq = *self.inputs[0];
        TensorImpl& ik = *self.inputs[1];
        TensorImpl& iv = *self.inputs[2];
        ConstMapMat Qm(iq.data.data(), n, d), Km(ik.data.data(), n, d), Vm(iv.data.data(), n, d);
        ConstMapMat G(self.grad.data(), n, d);
        RowMat dP(n, n);
        for (int h = 0; h < heads; ++h) {
            ConstMapMat P(probs->data() + static_cast<std::size_t>(h) * n * n, n, n);
            auto gh = G.middleCols(h * dh, dh);
            if (iv.requires_grad)
                MapMat(iv.grad_buffer().data(), n, d).middleCols(h * dh, dh).noalias() += P.transpose() * gh;
            dP.noalias() = gh * Vm.middleCols(h * dh, dh).transpose();
            // softmax backward, row-wise
            Eigen::VectorXf rowdot(n);
            for (std::int64_t r = 0; r < n; ++r) {
                float acc = 0.0f;
                for (std::int64_t c = 0; c < n; ++c) acc += dP(r, c) * P(r, c);
                rowdot[r] = acc;
            }
            dP = (P.array() * (dP.array().colwise() - rowdot.array())).matrix() * scale;
            if (iq.requires_grad)
                MapMat(iq.grad_buffer().data(), n, d).middleCols(h * dh, dh).noalias() += dP * Km.middleCols(h * dh, dh);
            if (ik.requires_grad)
                MapMat(ik.grad_buffer().data(), n, d).middleCols(h * dh, dh).noalias() +=
                    dP.transpose() * Qm.middleCols(h * dh, dh);
        }
    });
}

Tensor slice_rows(const Tensor& a, std::int64_t begin, std::int64_t end) {
    if (a.rank() < 1) throw contract_error("slice_rows on scalar");
    if (begin < 0 || end < begin || end > a.dim(0)) throw contract_error("slice_rows: range out of bounds");
    const std::int64_t row = a.dim(0) == 0 ? 0 : a.numel() / a.dim(0);
    Shape s = a.shape();
    s[0] = end - begin;
    auto d = a.data();
    std::vector<float> out(d.begin() + begin * row, d.begin() + end * row);
    return make_result(s, std::move(out), {a}, [begin, row](TensorImpl& self) {
        auto& g = self.inputs[0]->grad_buffer();
        for (std::size_t i = 0; i < self.grad.size(); ++i) g[static_cast<std::size_t>(begin * row) + i] += self.grad[i];
    });
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw contract_error("concat_rows of nothing");
    Shape s = parts.front().shape();
    if (s.empty()) throw contract_error("concat_rows on scalars");
    const Shape tail(s.begin() + 1, s.end());
    std::int64_t rows = 0;
    for (const auto& p : parts) {
        const Shape pt(p.shape().begin() + 1, p.shape().end());
        if (pt != tail) throw contract_error("concat_rows: trailing shape mismatch");
        rows += p.dim(0);
    }
    s[0] = rows;
    std::vector<float> out;
    out.reserve(static_cast<std::size_t>(shape_numel(s)));
    for (const auto& p : parts) out.insert(out.end(), p.data().begin(), p.data().end());
    return make_result(s, std::move(out), parts, [](TensorImpl& self) {
        std::size_t offset = 0;
        for (auto& in : self.inputs) {
            const std::size_t n = in->data.size();
            if (in->requires_grad) {
                auto& g = in->grad_buffer();
                for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[offset + i];
            }
            offset += n;
        }
    });
}

namespace {

// src index for every element of the patch-token layout.
std::vector<std::int64_t> patch_index(const Shape& image_shape, int p) {
    if (image_shape.size() != 4) throw contract_error("patchify: expected [B x C x H x W], got " + shape_str(image_shape));
    const auto B = image_shape[0], C = image_shape[1], H = image_shape[2], W = image_shape[3];
    if (p <= 0 || H % p != 0 || W % p != 0) throw contract_error("patchify: spatial size not divisible by patch");
    const auto ph = H / p, pw = W / p;
    std::vector<std::int64_t> idx(static_cast<std::size_t>(B * C * H * W));
    std::size_t o = 0;
    for (std::int64_t b = 0; b < B; ++b)
        for (std::int64_t py = 0; py < ph; ++py)
            for (std::int64_t px = 0; px < pw; ++px)
                for (std::int64_t c = 0; c < C; ++c)
                    for (int dy = 0; dy < p; ++dy)
                        for (int dx = 0; dx < p; ++dx)
                            idx[o++] = ((b * C + c) * H + py * p + dy) * W + px * p + dx;
    return idx;
}

}  // namespace

Tensor patchify(const Tensor& x, int p) {
    auto idx = patch_index(x.shape(), p);
    const auto B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    auto d = x.data();
    std::vector<float> out(idx.size());
    for (std::size_t i = 0; i < idx.size(); ++i) out[i] = d[static_cast<std::size_t>(idx[i])];
    return make_result({B * (H / p) * (W / p), C * p * p}, std::move(out), {x},
                       [idx = std::move(idx)](TensorImpl& self) {
                           auto& g = self.inputs[0]->grad_buffer();
                           for (std::size_t i = 0; i < idx.size(); ++i) g[static_cast<std::size_t>(idx[i])] += self.grad[i];
                       });
}

Tensor unpatchify(const Tensor& tokens, const Shape& out_shape, int p) {
    auto idx = patch_index(out_shape, p);
    if (static_cast<std::int64_t>(idx.size()) != tokens.numel()) throw contract_error("unpatchify: size mismatch");
    auto d = tokens.data();
    std::vector<float> out(idx.size());
    for (std::size_t i = 0; i < idx.size(); ++i) out[static_cast<std::size_t>(idx[i])] = d[i];
    return make_result(out_shape, std::move(out), {tokens}, [idx = std::move(idx)](TensorImpl& self) {
        auto& g = self.inputs[0]->grad_buffer();
        for (std::size_t i = 0; i < idx.size(); ++i) g[i] += self.grad[static_cast<std::size_t>(idx[i])];
    });
}

Tensor unfold(const Tensor& x, int k) {
    if (x.rank() != 4) throw contract_error("unfold: expected [B x C x H x W], got " + shape_str(x.shape()));
    if (k < 1 || k % 2 == 0) throw contract_error("unfold: kernel must be odd and positive");
    const auto B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const int r = k / 2;
    std::vector<std::int64_t> idx(static_cast<std::size_t>(B * H * W * C * k * k));
    std::size_t o = 0;
    for (std::int64_t b = 0; b < B; ++b)
        for (std::int64_t y = 0; y < H; ++y)
            for (std::int64_t xx = 0; xx < W; ++xx)
                for (std::int64_t c = 0; c < C; ++c)
                    for (int dy = -r; dy <= r; ++dy)
                        for (int dx = -r; dx <= r; ++dx) {
                            const auto sy = std::clamp<std::int64_t>(y + dy, 0, H - 1);
                            const auto sx = std::clamp<std::int64_t>(xx + dx, 0, W - 1);
                            idx[o++] = ((b * C + c) * H + sy) * W + sx;
                        }
    auto d = x.data();
    std::vector<float> out(idx.size());
    for (std::size_t i = 0; i < idx.size(); ++i) out[i] = d[static_cast<std::size_t>(idx[i])];
    return make_result({B * H * W, C * k * k}, std::move(out), {x}, [idx = std::move(idx)](TensorImpl& self) {
        auto& g = self.inputs[0]->grad_buffer();
        for (std::size_t i = 0; i < idx.size(); ++i) g[static_cast<std::size_t>(idx[i])] += self.grad[i];
    });
}

namespace {

struct Planes {
    std::int64_t count, h, w;
};

Planes planes_of(const Tensor& t, const char* what) {
    if (t.rank() < 2) throw contract_error(std::string(what) + ": need at least 2 dims");
    const auto h = t.dim(-2), w = t.dim(-1);
    return {h * w == 0 ? 0 : t.numel() / (h * w), h, w};
}

}  // namespace

Tensor box_blur(const Tensor& map, int k) {
    if (k < 1 || k % 2 == 0) throw contract_error("box_blur: kernel must be odd and positive, got " + std::to_string(k));
    const auto [count, H, W] = planes_of(map, "box_blur");
    const int r = k / 2;
    const double norm = 1.0 / (static_cast<double>(k) * k);
    auto clampi = [](std::int64_t v, std::int64_t hi) { return std::clamp<std::int64_t>(v, 0, hi - 1); };
    auto d = map.data();
    std::vector<float> out(d.size());
    for (std::int64_t c = 0; c < count; ++c) {
        const float* src = d.data() + c * H * W;
        for (std::int64_t y = 0; y < H; ++y)
            for (std::int64_t x = 0; x < W; ++x) {
                double s = 0.0;
                for (int dy = -r; dy <= r; ++dy)
                    for (int dx = -r; dx <= r; ++dx) s += src[clampi(y + dy, H) * W + clampi(x + dx, W)];
                out[static_cast<std::size_t>(c * H * W + y * W + x)] = static_cast<float>(s * norm);
            }
    }
    return make_result(map.shape(), std::move(out), {map}, [count, H, W, r, norm, clampi](TensorImpl& self) {
        auto& g = self.inputs[0]->grad_buffer();
        const float fn = static_cast<float>(norm);
        for (std::int64_t c = 0; c < count; ++c)
            for (std::int64_t y = 0; y < H; ++y)
                for (std::int64_t x = 0; x < W; ++x) {
                    const float go = self.grad[static_cast<std::size_t>(c * H * W + y * W + x)] * fn;
                    for (int dy = -r; dy <= r; ++dy)
                        for (int dx = -r; dx <= r; ++dx)
                            g[static_cast<std::size_t>(c * H * W + clampi(y + dy, H) * W + clampi(x + dx, W))] += go;
                }
    });
}

Tensor downsample(const Tensor& map, int f) {
    const auto [count, H, W] = planes_of(map, "downsample");
    if (f < 1 || H % f != 0 || W % f != 0)
        throw contract_error("downsample: " + shape_str(map.shape()) + " not divisible by " + std::to_string(f));
    const auto h = H / f, w = W / f;
    Shape s = map.shape();
    s[s.size() - 2] = h;
    s[s.size() - 1] = w;
    auto d = map.data();
    std::vector<float> out(static_cast<std::size_t>(count * h * w));
    const double norm = 1.0 / (static_cast<double>(f) * f);
    for (std::int64_t c = 0; c < count; ++c)
        for (std::int64_t y = 0; y < h; ++y)
            for (std::int64_t x = 0; x < w; ++x) {
                double acc = 0.0;
                for (int dy = 0; dy < f; ++dy)
                    for (int dx = 0; dx < f; ++dx) acc += d[static_cast<std::size_t>(c * H * W + (y * f + dy) * W + x * f + dx)];
                out[static_cast<std::size_t>(c * h * w + y * w + x)] = static_cast<float>(acc * norm);
            }
    return make_result(s, std::move(out), {map}, [count, H, W, h, w, f, norm](TensorImpl& self) {
        auto& g = self.inputs[0]->grad_buffer();
        for (std::int64_t c = 0; c < count; ++c)
            for (std::int64_t y = 0; y < H; ++y)
                for (std::int64_t x = 0; x < W; ++x)
                    g[static_cast<std::size_t>(c * H * W + y * W + x)] +=
                        self.grad[static_cast<std::size_t>(c * h * w + (y / f) * w + x / f)] * static_cast<float>(norm);
    });
}

Tensor upsample(const Tensor& map, int f) {
    const auto [count, h, w] = planes_of(map, "upsample");
    if (f < 1) throw contract_error("upsample: factor must be positive");
    const auto H = h * f, W = w * f;
    Shape s = map.shape();
    s[s.size() - 2] = H;
    s[s.size() - 1] = W;
    auto d = map.data();
    std::vector<float> out(static_cast<std::size_t>(count * H * W));
    for (std::int64_t c = 0; c < count; ++c)
        for (std::int64_t y = 0; y < H; ++y)
            for (std::int64_t x = 0; x < W; ++x)
                out[static_cast<std::size_t>(c * H * W + y * W + x)] = d[static_cast<std::size_t>(c * h * w + (y / f) * w + x / f)];
    return make_result(s, std::move(out), {map}, [count, H, W, h, w, f](TensorImpl& self) {
        auto& g = self.inputs[0]->grad_buffer();
        for (std::int64_t c = 0; c < count; ++c)
            for (std::int64_t y = 0; y < H; ++y)
                for (std::int64_t x = 0; x < W; ++x)
                    g[static_cast<std::size_t>(c * h * w + (y / f) * w + x / f)] +=
                        self.grad[static_cast<std::size_t>(c * H * W + y * W + x)];
    });
}

Tensor resample(const Tensor& map, double factor) {
    if (!(factor > 0.0)) throw contract_error("resample: factor must be positive");
    const double l = std::log2(factor);
    if (std::abs(l - std::round(l)) > 1e-12) throw contract_error("resample: factor must be a power of two");
    const int e = static_cast<int>(std::lround(l));
    if (e == 0) return map.reshape(map.shape());
    return e > 0 ? upsample(map, 1 << e) : downsample(map, 1 << -e);
}

Tensor clamp(const Tensor& a, float lo, float hi) {
    auto d = a.data();
    std::vector<float> out(d.size());
    for (std::size_t i = 0; i < d.size(); ++i) out[i] = std::clamp(d[i], lo, hi);
    return make_result(a.shape(), std::move(out), {a}, [lo, hi](TensorImpl& self) {
        TensorImpl& in = *self.inputs[0];
        auto& g = in.grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i)
            if (in.data[i] > lo && in.data[i] < hi) g[i] += self.grad[i];
    });
}

}  // namespace rollvid::ops
