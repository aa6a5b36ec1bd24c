#include "rollvid/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace rollvid::bench {

namespace {

void same_shape(const Tensor& a, const Tensor& b, const char* what) {
    if (a.shape() != b.shape())
        throw contract_error(std::string(what) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

}  // namespace

double psnr(const Tensor& a, const Tensor& b) {
    same_shape(a, b, "psnr");
    if (a.numel() == 0) throw contract_error("psnr: empty input");
    auto x = a.data(), y = b.data();
    double s = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double d = static_cast<double>(x[i]) - y[i];
        s += d * d;
    }
    const double mse = s / static_cast<double>(x.size());
    if (mse == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(1.0 / mse);
}

double psnr_capped(const Tensor& a, const Tensor& b) { return std::min(kPsnrCap, psnr(a, b)); }

double ssim(const Tensor& a, const Tensor& b) {
    same_shape(a, b, "ssim");
    if (a.rank() != 3) throw contract_error("ssim: expected [C x H x W], got " + shape_str(a.shape()));
    const auto C = a.dim(0), H = a.dim(1), W = a.dim(2);
    constexpr int win = 7;
    if (H < win || W < win) throw contract_error("ssim: frame smaller than the 7x7 window");
    std::vector<double> la(static_cast<std::size_t>(H * W), 0.0), lb(la.size(), 0.0);
    auto x = a.data(), y = b.data();
    for (std::int64_t c = 0; c < C; ++c)
        for (std::int64_t i = 0; i < H * W; ++i) {
            la[static_cast<std::size_t>(i)] += x[static_cast<std::size_t>(c * H * W + i)] / static_cast<double>(C);
            lb[static_cast<std::size_t>(i)] += y[static_cast<std::size_t>(c * H * W + i)] / static_cast<double>(C);
        }
    constexpr double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03, n = win * win;
    double total = 0.0;
    int count = 0;
    for (std::int64_t y0 = 0; y0 + win <= H; ++y0)
        for (std::int64_t x0 = 0; x0 + win <= W; ++x0) {
            double sa = 0, sb = 0, saa = 0, sbb = 0, sab = 0;
            for (int dy = 0; dy < win; ++dy)
                for (int dx = 0; dx < win; ++dx) {
                    const auto k = static_cast<std::size_t>((y0 + dy) * W + x0 + dx);
                    sa += la[k];
                    sb += lb[k];
                    saa += la[k] * la[k];
                    sbb += lb[k] * lb[k];
                    sab += la[k] * lb[k];
                }
            const double ma = sa / n, mb = sb / n;
            const double va = saa / n - ma * ma, vb = sbb / n - mb * mb, cov = sab / n - ma * mb;
            total += ((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            ++count;
        }
    return total / count;
}

std::vector<double> seam_discontinuity(const Tensor& video, const std::vector<Window>& windows, std::int64_t overlap) {
    if (video.rank() < 2) throw contract_error("seam_discontinuity: expected [F x ...] video");
    const auto F = video.dim(0);
    if (windows.empty() || windows.back().second != F)
        throw contract_error("seam_discontinuity: windows do not match the video length");
    const auto per = static_cast<std::size_t>(video.numel() / F);
    auto d = video.data();
    auto step_diff = [&](std::int64_t f) {
        double s = 0.0;
        const float* p = d.data() + f * per;
        const float* q = p - per;
        for (std::size_t i = 0; i < per; ++i) s += std::abs(static_cast<double>(p[i]) - q[i]);
        return s / static_cast<double>(per);
    };
    std::vector<std::int64_t> seams;
    for (std::size_t w = 1; w < windows.size(); ++w) seams.push_back(windows[w].first + overlap);
    std::vector<double> inside;
    for (std::int64_t f = 1; f < F; ++f)
        if (std::find(seams.begin(), seams.end(), f) == seams.end()) inside.push_back(step_diff(f));
    double median = 0.0;
    if (!inside.empty()) {
        std::sort(inside.begin(), inside.end());
        const auto m = inside.size();
        median = m % 2 ? inside[m / 2] : 0.5 * (inside[m / 2 - 1] + inside[m / 2]);
    }
    std::vector<double> out;
    for (auto s : seams) {
        if (s <= 0 || s >= F) throw contract_error("seam_discontinuity: seam outside the video");
        out.push_back(step_diff(s) - median);
    }
    return out;
}

double fit_slope(const std::vector<double>& ys) {
    const auto n = static_cast<double>(ys.size());
    if (ys.size() < 2) return 0.0;
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (std::size_t i = 0; i < ys.size(); ++i) {
        const double x = static_cast<double>(i);
        sx += x;
        sy += ys[i];
        sxx += x * x;
        sxy += x * ys[i];
    }
    return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

}  // namespace rollvid::bench
