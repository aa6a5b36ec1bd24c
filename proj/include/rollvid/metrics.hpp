#pragma once

#include <utility>
#include <vector>

#include "rollvid/tensor.hpp"

namespace rollvid::bench {

inline constexpr double kPsnrCap = 99.0;

// 10 log10(1 / MSE) on unit range; identical inputs give +inf.
double psnr(const Tensor& a, const Tensor& b);
double psnr_capped(const Tensor& a, const Tensor& b);

// SSIM of two [3 x H x W] (or [C x H x W]) frames on the channel-mean
// luminance, 7x7 uniform windows fully inside the frame.
double ssim(const Tensor& a, const Tensor& b);

using Window = std::pair<std::int64_t, std::int64_t>;

// Per seam s (start of every window after the first, plus the overlap):
// mean |frame_s - frame_{s-1}| minus the median adjacent-frame difference
// inside the windows.
std::vector<double> seam_discontinuity(const Tensor& video, const std::vector<Window>& windows, std::int64_t overlap);

// Least-squares slope of ys against 0, 1, 2, ...
double fit_slope(const std::vector<double>& ys);

}  // namespace rollvid::bench
