#include "rollvid/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace rollvid {

double finite_diff_check(const std::function<Tensor(const Tensor&)>& f, Tensor& x, double eps) {
    if (!(eps >= 1e-4 && eps <= 1e-2)) throw contract_error("finite_diff_check: eps must lie in [1e-4, 1e-2]");
    // A power-of-two step keeps x +- h exactly representable for moderate |x|.
    const double h = std::exp2(std::round(std::log2(eps)));

    const bool had_grad = x.requires_grad();
    x.set_requires_grad(true);
    x.zero_grad();
    Tensor y = f(x);
    if (y.numel() != 1 || !std::isfinite(y.value())) throw numeric_error("finite_diff_check: f returned a non-finite value");
    y.backward();
    std::vector<float> tape(x.grad().begin(), x.grad().end());
    if (tape.empty()) tape.assign(static_cast<std::size_t>(x.numel()), 0.0f);
    x.zero_grad();
    x.set_requires_grad(had_grad);

    std::vector<double> numeric(tape.size());
    {
        NoGradGuard no_grad;
        auto xd = x.data();
        for (std::size_t i = 0; i < xd.size(); ++i) {
            const float orig = xd[i];
            auto eval_at = [&](double offset) {
                xd[i] = static_cast<float>(orig + offset);
                const double v = f(x).value();
                if (!std::isfinite(v)) throw numeric_error("finite_diff_check: f returned a non-finite value");
                return v;
            };
            // fourth-order central difference
            numeric[i] = (8.0 * (eval_at(h) - eval_at(-h)) - (eval_at(2 * h) - eval_at(-2 * h))) / (12.0 * h);
            xd[i] = orig;
        }
    }

    double scale = 0.0, worst = 0.0;
    for (std::size_t i = 0; i < tape.size(); ++i) {
        scale = std::max({scale, std::abs(static_cast<double>(tape[i])), std::abs(numeric[i])});
        worst = std::max(worst, std::abs(tape[i] - numeric[i]));
    }
    return scale > 0.0 ? worst / scale : worst;
}

}  // namespace rollvid
