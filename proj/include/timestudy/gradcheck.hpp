// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <functional>

#include "timestudy/tensor.hpp"

namespace ts {

// Max relative error between analytic gradients and central differences:
// |analytic - numeric| / max(|analytic|, |numeric|, 1e-8).
// f must be deterministic and scalar-valued. 32-bit tensors are noisy under
// differencing; run the check with T = double for tight tolerances.
template <typename T, typename F>
double finite_difference_check(F&& f, Tensor<T> x, double epsilon) {
    if (epsilon <= 0) throw std::invalid_argument("finite_difference_check: epsilon must be positive");

    x.set_requires_grad(true);
    x.zero_grad();
    Tensor<T> y = f(x);
    if (y.numel() != 1)
        throw std::invalid_argument("finite_difference_check: f must return a scalar");
    backward(y);
    std::vector<T> analytic = x.grad();

    double max_err = 0.0;
    {
        NoGradGuard ng;
        for (std::size_t i = 0; i < x.numel(); ++i) {
            T saved = x.data()[i];
            x.data()[i] = saved + static_cast<T>(epsilon);
            double up = static_cast<double>(f(x).item());
            x.data()[i] = saved - static_cast<T>(epsilon);
            double down = static_cast<double>(f(x).item());
            x.data()[i] = saved;
            double numeric = (up - down) / (2.0 * epsilon);
            double a = static_cast<double>(analytic[i]);
            double denom = std::max({std::fabs(a), std::fabs(numeric), 1e-8});
            max_err = std::max(max_err, std::fabs(a - numeric) / denom);
        }
    }
    return max_err;
}

}  // namespace ts
