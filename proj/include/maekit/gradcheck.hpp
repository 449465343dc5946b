#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <vector>

#include "maekit/errors.hpp"
#include "maekit/tensor.hpp"

namespace maekit {

struct GradCheckOptions {
    double step = 1e-5;
};

/// Compare analytic gradients of a scalar function against central differences.
///
/// `f` is re-evaluated with each input element perturbed in place, so it must
/// read its inputs through the handles in `inputs` (or through tensors that share
/// their nodes). Returns max |g_a - g_fd| / max(1, |g_a|, |g_fd|) over all elements.
inline double grad_check(const std::function<Tensor<double>()>& f, std::vector<Tensor<double>> inputs,
                         GradCheckOptions opts = {}) {
    for (auto& in : inputs) {
        in.set_requires_grad(true);
        in.zero_grad();
    }
    const Tensor<double> out = f();
    if (out.numel() != 1) {
        throw ContractError("grad_check: function must return a scalar, got shape " + to_string(out.shape()));
    }
    out.backward();

    double worst = 0.0;
    for (auto& in : inputs) {
        std::vector<double> analytic(in.numel(), 0.0);
        if (in.has_grad()) std::copy(in.grad().begin(), in.grad().end(), analytic.begin());
        auto values = in.mutable_data();
        for (std::size_t i = 0; i < values.size(); ++i) {
            const double original = values[i];
            double plus = 0.0, minus = 0.0;
            {
                NoGradGuard guard;
                values[i] = original + opts.step;
                plus = f().item();
                values[i] = original - opts.step;
                minus = f().item();
            }
            values[i] = original;
            const double numeric = (plus - minus) / (2.0 * opts.step);
            const double denom = std::max({1.0, std::abs(analytic[i]), std::abs(numeric)});
            const double err = std::abs(analytic[i] - numeric) / denom;
            if (!std::isfinite(err)) return std::numeric_limits<double>::infinity();
            worst = std::max(worst, err);
        }
    }
    return worst;
}

}  // namespace maekit
