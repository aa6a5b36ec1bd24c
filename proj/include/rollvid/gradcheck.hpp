#pragma once

#include <functional>

#include "rollvid/tensor.hpp"

namespace rollvid {

// Relative error max_i |g_tape - g_fd| / max_i max(|g_tape|, |g_fd|), where
// g_fd is a least-squares central-difference derivative (odd cubic fitted to
// 16 symmetric sample pairs out to 2*eps, eps rounded to a power of two). f must be pure; x is perturbed in place and restored.
double finite_diff_check(const std::function<Tensor(const Tensor&)>& f, Tensor& x, double eps);

}  // namespace rollvid
