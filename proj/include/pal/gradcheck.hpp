#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "pal/tensor.hpp"

namespace pal {

// Central-difference check of d f / d x against the engine's backward pass.
// Returns max over elements of |analytic - cd| / max(|analytic|, |cd|, 1e-12).
// Meant to run in 64-bit mode; f must be a pure scalar-valued function of x.
template <typename T, typename F>
double grad_check(F&& f, Tensor<T>& x, double eps = 1e-5) {
    x.set_requires_grad(true);
    x.zero_grad();
    Tensor<T> loss = f(x);
    backward(loss);
    std::vector<T> analytic = x.grad();

    double max_err = 0.0;
    auto& data = x.data();
    for (size_t i = 0; i < data.size(); ++i) {
        const T orig = data[i];
        data[i] = orig + static_cast<T>(eps);
        const double fp = static_cast<double>(f(x).item());
        data[i] = orig - static_cast<T>(eps);
        const double fm = static_cast<double>(f(x).item());
        data[i] = orig;
        const double cd = (fp - fm) / (2.0 * eps);
        const double a = static_cast<double>(analytic[i]);
        const double denom = std::max({std::fabs(a), std::fabs(cd), 1e-12});
        max_err = std::max(max_err, std::fabs(a - cd) / denom);
    }
    return max_err;
}

}  // namespace pal
