#pragma once

#include <vector>

#include "rollvid/tensor.hpp"

namespace rollvid::ops {

// Elementwise arithmetic with trailing-dimension broadcasting: the operand of
// lower rank must equal a suffix of the other's shape.
enum class Binary { add, sub, mul, div, pow };

Tensor elementwise(Binary op, const Tensor& a, const Tensor& b);
Tensor elementwise(Binary op, const Tensor& a, float b);

inline Tensor add(const Tensor& a, const Tensor& b) { return elementwise(Binary::add, a, b); }
inline Tensor sub(const Tensor& a, const Tensor& b) { return elementwise(Binary::sub, a, b); }
inline Tensor mul(const Tensor& a, const Tensor& b) { return elementwise(Binary::mul, a, b); }
inline Tensor div(const Tensor& a, const Tensor& b) { return elementwise(Binary::div, a, b); }
inline Tensor pow(const Tensor& a, const Tensor& b) { return elementwise(Binary::pow, a, b); }
inline Tensor add(const Tensor& a, float b) { return elementwise(Binary::add, a, b); }
inline Tensor mul(const Tensor& a, float b) { return elementwise(Binary::mul, a, b); }
inline Tensor pow(const Tensor& a, float b) { return elementwise(Binary::pow, a, b); }

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
// Mean of squared difference; reduction accumulated in double.
Tensor mse(const Tensor& a, const Tensor& b);
// Per-leading-index mean of squares: [F x ...] -> [F].
Tensor mean_sq_per_row(const Tensor& a);
// Sum of a[i] * w[i] for a constant weight vector.
Tensor weighted_sum(const Tensor& a, const std::vector<float>& weights);
// Sum over rows r of w[r] * mean_sq(a[r] - b[r]).
Tensor weighted_row_mse(const Tensor& a, const Tensor& b, const std::vector<float>& row_weights);

Tensor matmul(const Tensor& a, const Tensor& b);
// x[N x in] * w[in x out] + bias[out]; bias may be undefined.
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias = {});
Tensor transpose(const Tensor& a);

Tensor gelu(const Tensor& a);
Tensor silu(const Tensor& a);
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, float eps = 1e-5f);
// Multi-head scaled dot-product attention over rows of q, k, v [N x d].
Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, int heads);

Tensor slice_rows(const Tensor& a, std::int64_t begin, std::int64_t end);
Tensor concat_rows(const std::vector<Tensor>& parts);

// [B x C x H x W] -> [B*(H/p)*(W/p) x C*p*p], row order (b, py, px), column order (c, dy, dx).
Tensor patchify(const Tensor& x, int p);
Tensor unpatchify(const Tensor& tokens, const Shape& out_shape, int p);
// k x k neighbourhoods with replicate padding: [B*H*W x C*k*k], row order (b, y, x).
Tensor unfold(const Tensor& x, int k);

// Box filter over the last two dims with replicate padding; k odd, k >= 1.
Tensor box_blur(const Tensor& map, int k);
// Scales the last two dims by a power of two: factor < 1 averages factor^-1
// sized blocks, factor > 1 replicates nearest neighbours, 1 is identity.
Tensor resample(const Tensor& map, double factor);
Tensor downsample(const Tensor& map, int factor);
Tensor upsample(const Tensor& map, int factor);

Tensor clamp(const Tensor& a, float lo, float hi);

}  // namespace rollvid::ops
