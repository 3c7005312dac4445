#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "pal/error.hpp"
#include "pal/tensor.hpp"

namespace pal {

template <typename T>
struct AdamState {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    int64_t step = 0;
    std::vector<std::vector<T>> m;  // first moments, parallel to the param list
    std::vector<std::vector<T>> v;  // second moments
};

template <typename T>
AdamState<T> adam_init(const std::vector<Tensor<T>>& params, double lr, double beta1 = 0.9,
                       double beta2 = 0.999, double eps = 1e-8) {
    AdamState<T> state;
    state.lr = lr;
    state.beta1 = beta1;
    state.beta2 = beta2;
    state.eps = eps;
    state.m.reserve(params.size());
    state.v.reserve(params.size());
    for (const auto& p : params) {
        state.m.emplace_back(p.numel(), T(0));
        state.v.emplace_back(p.numel(), T(0));
    }
    return state;
}

// Bias-corrected Adam update from each parameter's accumulated grad.
// Parameters with requires_grad=false are left untouched, moments included.
template <typename T>
void adam_step(std::vector<Tensor<T>>& params, AdamState<T>& state) {
    if (params.size() != state.m.size()) {
        throw ShapeError("adam_step: state tracks " + std::to_string(state.m.size()) +
                         " params, got " + std::to_string(params.size()));
    }
    ++state.step;
    const T b1 = static_cast<T>(state.beta1);
    const T b2 = static_cast<T>(state.beta2);
    const T corr1 = static_cast<T>(1.0 / (1.0 - std::pow(state.beta1, static_cast<double>(state.step))));
    const T corr2 = static_cast<T>(1.0 / (1.0 - std::pow(state.beta2, static_cast<double>(state.step))));
    const T lr = static_cast<T>(state.lr);
    const T eps = static_cast<T>(state.eps);
    for (size_t i = 0; i < params.size(); ++i) {
        auto& p = params[i];
        if (!p.requires_grad()) continue;
        if (static_cast<int64_t>(state.m[i].size()) != p.numel()) {
            throw ShapeError("adam_step: moment size " + std::to_string(state.m[i].size()) +
                             " does not match param shape " + shape_str(p.shape()));
        }
        auto& data = p.data();
        auto& grad = p.grad();
        T* __restrict m = state.m[i].data();
        T* __restrict v = state.v[i].data();
        for (size_t j = 0; j < data.size(); ++j) {
            const T g = grad[j];
            m[j] = b1 * m[j] + (T(1) - b1) * g;
            v[j] = b2 * v[j] + (T(1) - b2) * g * g;
            data[j] -= lr * (m[j] * corr1) / (std::sqrt(v[j] * corr2) + eps);
        }
    }
}

}  // namespace pal
