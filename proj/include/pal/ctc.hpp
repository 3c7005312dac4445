#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <vector>

#include "pal/error.hpp"
#include "pal/tensor.hpp"

// Connectionist temporal classification: log-space forward-backward loss with
// an analytic gradient, a path-enumeration oracle, and a greedy decoder.
// Blank is index 0 throughout.

namespace pal {

constexpr int kBlank = 0;

inline int64_t required_min_length(const std::vector<int>& y) {
    int64_t n = static_cast<int64_t>(y.size());
    for (size_t i = 1; i < y.size(); ++i) {
        if (y[i] == y[i - 1]) ++n;
    }
    return n;
}

namespace detail {

template <typename T>
T log_add(T a, T b) {
    if (std::isinf(a) && a < 0) return b;
    if (std::isinf(b) && b < 0) return a;
    T hi = a > b ? a : b;
    T lo = a > b ? b : a;
    return hi + std::log1p(std::exp(lo - hi));
}

template <typename T>
void validate_ctc_inputs(const Tensor<T>& log_probs, const std::vector<int>& y) {
    if (log_probs.rank() != 2) {
        throw ShapeError("ctc: log_probs must be [T x V], got " + shape_str(log_probs.shape()));
    }
    const int64_t v = log_probs.dim(1);
    for (int tok : y) {
        if (tok <= kBlank || tok >= v) {
            throw InputError("ctc: label " + std::to_string(tok) + " outside [1, " +
                             std::to_string(v) + ")");
        }
    }
    const int64_t t = log_probs.dim(0);
    const int64_t need = required_min_length(y);
    if (t < need) {
        throw InfeasibleTargetError("ctc: " + std::to_string(t) + " frames cannot align " +
                                    std::to_string(y.size()) + " labels (need " +
                                    std::to_string(need) + ")");
    }
}

}  // namespace detail

// Alpha/beta lattice over the blank-interleaved extended label sequence.
// Both tables include the frame-t emission term, so the per-frame identity
// logsumexp_s(alpha[t,s] + beta[t,s] - log_probs[t, l'(s)]) == log P holds.
template <typename T>
struct CtcLattice {
    std::vector<int> lprime;  // length S = 2|y|+1
    int64_t t_len = 0;
    int64_t s_len = 0;
    std::vector<T> alpha;  // T x S, log domain
    std::vector<T> beta;   // T x S, log domain

    T a(int64_t t, int64_t s) const { return alpha[t * s_len + s]; }
    T b(int64_t t, int64_t s) const { return beta[t * s_len + s]; }
};

template <typename T>
CtcLattice<T> forward_backward(const Tensor<T>& log_probs, const std::vector<int>& y) {
    detail::validate_ctc_inputs(log_probs, y);
    constexpr T kNegInf = -std::numeric_limits<T>::infinity();
    const int64_t t_len = log_probs.dim(0);
    const int64_t v = log_probs.dim(1);
    const auto& lp = log_probs.data();

    CtcLattice<T> lat;
    lat.t_len = t_len;
    lat.s_len = 2 * static_cast<int64_t>(y.size()) + 1;
    lat.lprime.assign(lat.s_len, kBlank);
    for (size_t i = 0; i < y.size(); ++i) lat.lprime[2 * i + 1] = y[i];
    const int64_t s_len = lat.s_len;
    const auto& lpr = lat.lprime;

    // A state can skip its grandparent only across distinct non-blank labels.
    auto can_skip = [&](int64_t s) {
        return lpr[s] != kBlank && s >= 2 && lpr[s] != lpr[s - 2];
    };

    lat.alpha.assign(t_len * s_len, kNegInf);
    lat.alpha[0] = lp[kBlank];
    if (s_len > 1) lat.alpha[1] = lp[lpr[1]];
    for (int64_t t = 1; t < t_len; ++t) {
        const T* prev = lat.alpha.data() + (t - 1) * s_len;
        T* cur = lat.alpha.data() + t * s_len;
        for (int64_t s = 0; s < s_len; ++s) {
            T acc = prev[s];
            if (s >= 1) acc = detail::log_add(acc, prev[s - 1]);
            if (can_skip(s)) acc = detail::log_add(acc, prev[s - 2]);
            cur[s] = acc + lp[t * v + lpr[s]];
        }
    }

    lat.beta.assign(t_len * s_len, kNegInf);
    {
        T* last = lat.beta.data() + (t_len - 1) * s_len;
        last[s_len - 1] = lp[(t_len - 1) * v + lpr[s_len - 1]];
        if (s_len > 1) last[s_len - 2] = lp[(t_len - 1) * v + lpr[s_len - 2]];
    }
    for (int64_t t = t_len - 2; t >= 0; --t) {
        const T* next = lat.beta.data() + (t + 1) * s_len;
        T* cur = lat.beta.data() + t * s_len;
        for (int64_t s = 0; s < s_len; ++s) {
            T acc = next[s];
            if (s + 1 < s_len) acc = detail::log_add(acc, next[s + 1]);
            if (s + 2 < s_len && can_skip(s + 2)) acc = detail::log_add(acc, next[s + 2]);
            cur[s] = acc + lp[t * v + lpr[s]];
        }
    }
    return lat;
}

// Scalar loss -log P_CTC(y | log_probs) with the analytic gradient installed,
// so backward() flows into the encoder that produced log_probs.
template <typename T>
Tensor<T> ctc_loss(const Tensor<T>& log_probs, const std::vector<int>& y) {
    auto lat = forward_backward(log_probs, y);
    const int64_t t_len = lat.t_len, s_len = lat.s_len;
    const int64_t v = log_probs.dim(1);

    T log_p = lat.a(t_len - 1, s_len - 1);
    if (s_len > 1) log_p = detail::log_add(log_p, lat.a(t_len - 1, s_len - 2));
    if (std::isnan(log_p) || log_p > T(1e-6)) {
        throw NumericError("ctc: log-probability " + std::to_string(static_cast<double>(log_p)) +
                           " out of range");
    }

    // grad[t,k] = -sum_{s: l'(s)=k} exp(alpha[t,s] + beta[t,s] - lp[t,k] - logP).
    // Each term is a path-posterior in [0,1]; accumulation in probability space
    // is safe.
    auto grad = std::make_shared<std::vector<T>>(t_len * v, T(0));
    const auto& lp = log_probs.data();
    for (int64_t t = 0; t < t_len; ++t) {
        for (int64_t s = 0; s < s_len; ++s) {
            const T num = lat.a(t, s) + lat.b(t, s);
            if (std::isinf(num)) continue;
            const int k = lat.lprime[s];
            (*grad)[t * v + k] -= std::exp(num - lp[t * v + k] - log_p);
        }
    }

    auto out = make_op_node<T>({1}, {log_probs},
                               [px = log_probs.node_ptr(), grad](TensorNode<T>& n) {
        if (!px->requires_grad) return;
        px->ensure_grad();
        const T g = n.grad[0];
        for (size_t i = 0; i < grad->size(); ++i) px->grad[i] += g * (*grad)[i];
    });
    out.data()[0] = -log_p;
    return out;
}

// Enumerates every frame-labelling and sums the probability of those that
// collapse to y. Exponential; guarded for test-sized instances only.
template <typename T>
double ctc_brute_force(const Tensor<T>& log_probs, const std::vector<int>& y) {
    detail::validate_ctc_inputs(log_probs, y);
    const int64_t t_len = log_probs.dim(0);
    const int64_t v = log_probs.dim(1);
    double paths = 1;
    for (int64_t t = 0; t < t_len; ++t) {
        paths *= static_cast<double>(v);
        if (paths > 1e7) {
            throw OracleScopeError("ctc_brute_force: V^T exceeds 1e7");
        }
    }
    const auto& lp = log_probs.data();

    std::vector<int> path(t_len, 0);
    double total = -std::numeric_limits<double>::infinity();
    while (true) {
        // Collapse: drop repeats, then blanks.
        std::vector<int> collapsed;
        int prev = -1;
        for (int64_t t = 0; t < t_len; ++t) {
            if (path[t] != prev && path[t] != kBlank) collapsed.push_back(path[t]);
            prev = path[t];
        }
        if (collapsed == y) {
            double lp_path = 0;
            for (int64_t t = 0; t < t_len; ++t) lp_path += static_cast<double>(lp[t * v + path[t]]);
            total = detail::log_add(total, lp_path);
        }
        int64_t pos = t_len - 1;
        while (pos >= 0 && path[pos] == v - 1) path[pos--] = 0;
        if (pos < 0) break;
        ++path[pos];
    }
    return -total;
}

// Per-frame argmax, collapse adjacent repeats, drop blanks.
// Ties resolve to the lowest index.
template <typename T>
std::vector<int> greedy_decode(const Tensor<T>& log_probs) {
    if (log_probs.rank() != 2) {
        throw ShapeError("greedy_decode: log_probs must be [T x V], got " +
                         shape_str(log_probs.shape()));
    }
    const int64_t t_len = log_probs.dim(0);
    const int64_t v = log_probs.dim(1);
    const auto& lp = log_probs.data();
    std::vector<int> out;
    int prev = -1;
    for (int64_t t = 0; t < t_len; ++t) {
        const T* row = lp.data() + t * v;
        int best = 0;
        for (int64_t k = 1; k < v; ++k) {
            if (row[k] > row[best]) best = static_cast<int>(k);
        }
        if (best != prev && best != kBlank) out.push_back(best);
        prev = best;
    }
    return out;
}

}  // namespace pal
