#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "pal/kernels.hpp"
#include "pal/rng.hpp"
#include "pal/tensor.hpp"

namespace pal {

namespace detail {

template <typename T>
void check_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    }
}

// Rows/cols view of a rank-1 or rank-2 tensor (rank 1 counts as a single row).
template <typename T>
std::pair<int64_t, int64_t> as_rows(const Tensor<T>& x, const char* op) {
    if (x.rank() == 1) return {1, x.dim(0)};
    if (x.rank() == 2) return {x.dim(0), x.dim(1)};
    throw ShapeError(std::string(op) + ": expected rank 1 or 2, got shape " + shape_str(x.shape()));
}

}  // namespace detail

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    detail::check_same_shape(a, b, "add");
    auto out = make_op_node<T>(a.shape(), {a, b}, [pa = a.node_ptr(), pb = b.node_ptr()](TensorNode<T>& n) {
        if (pa->requires_grad) {
            pa->ensure_grad();
            for (size_t i = 0; i < n.grad.size(); ++i) pa->grad[i] += n.grad[i];
        }
        if (pb->requires_grad) {
            pb->ensure_grad();
            for (size_t i = 0; i < n.grad.size(); ++i) pb->grad[i] += n.grad[i];
        }
    });
    const auto& da = a.data();
    const auto& db = b.data();
    auto& ds = out.data();
    for (size_t i = 0; i < ds.size(); ++i) ds[i] = da[i] + db[i];
    return out;
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    detail::check_same_shape(a, b, "sub");
    auto out = make_op_node<T>(a.shape(), {a, b}, [pa = a.node_ptr(), pb = b.node_ptr()](TensorNode<T>& n) {
        if (pa->requires_grad) {
            pa->ensure_grad();
            for (size_t i = 0; i < n.grad.size(); ++i) pa->grad[i] += n.grad[i];
        }
        if (pb->requires_grad) {
            pb->ensure_grad();
            for (size_t i = 0; i < n.grad.size(); ++i) pb->grad[i] -= n.grad[i];
        }
    });
    const auto& da = a.data();
    const auto& db = b.data();
    auto& ds = out.data();
    for (size_t i = 0; i < ds.size(); ++i) ds[i] = da[i] - db[i];
    return out;
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    detail::check_same_shape(a, b, "mul");
    auto out = make_op_node<T>(a.shape(), {a, b}, [pa = a.node_ptr(), pb = b.node_ptr()](TensorNode<T>& n) {
        if (pa->requires_grad) {
            pa->ensure_grad();
            for (size_t i = 0; i < n.grad.size(); ++i) pa->grad[i] += n.grad[i] * pb->data[i];
        }
        if (pb->requires_grad) {
            pb->ensure_grad();
            for (size_t i = 0; i < n.grad.size(); ++i) pb->grad[i] += n.grad[i] * pa->data[i];
        }
    });
    const auto& da = a.data();
    const auto& db = b.data();
    auto& ds = out.data();
    for (size_t i = 0; i < ds.size(); ++i) ds[i] = da[i] * db[i];
    return out;
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T c) {
    auto out = make_op_node<T>(a.shape(), {a}, [pa = a.node_ptr(), c](TensorNode<T>& n) {
        if (!pa->requires_grad) return;
        pa->ensure_grad();
        for (size_t i = 0; i < n.grad.size(); ++i) pa->grad[i] += c * n.grad[i];
    });
    const auto& da = a.data();
    auto& ds = out.data();
    for (size_t i = 0; i < ds.size(); ++i) ds[i] = c * da[i];
    return out;
}

// Row-broadcast bias: x is R x N, bias is N.
template <typename T>
Tensor<T> add_bias(const Tensor<T>& x, const Tensor<T>& bias) {
    auto [rows, cols] = detail::as_rows(x, "add_bias");
    if (bias.rank() != 1 || bias.dim(0) != cols) {
        throw ShapeError("add_bias: bias shape " + shape_str(bias.shape()) + " does not match " +
                         shape_str(x.shape()));
    }
    auto out = make_op_node<T>(x.shape(), {x, bias},
                               [px = x.node_ptr(), pb = bias.node_ptr(), rows = rows, cols = cols](TensorNode<T>& n) {
        if (px->requires_grad) {
            px->ensure_grad();
            for (size_t i = 0; i < n.grad.size(); ++i) px->grad[i] += n.grad[i];
        }
        if (pb->requires_grad) {
            pb->ensure_grad();
            for (int64_t r = 0; r < rows; ++r) {
                const T* g = n.grad.data() + r * cols;
                for (int64_t j = 0; j < cols; ++j) pb->grad[j] += g[j];
            }
        }
    });
    const auto& dx = x.data();
    const auto& db = bias.data();
    auto& ds = out.data();
    for (int64_t r = 0; r < rows; ++r) {
        for (int64_t j = 0; j < cols; ++j) ds[r * cols + j] = dx[r * cols + j] + db[j];
    }
    return out;
}

// C = A[MxK] * B[KxN]. Backward: dA = dC * B^T, dB = A^T * dC.
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
        throw ShapeError("matmul: incompatible shapes " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
    }
    const int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    auto out = make_op_node<T>({m, n}, {a, b},
                               [pa = a.node_ptr(), pb = b.node_ptr(), m, k, n](TensorNode<T>& node) {
        if (pa->requires_grad) {
            pa->ensure_grad();
            kernels::gemm_nt(node.grad.data(), pb->data.data(), pa->grad.data(), m, n, k, true);
        }
        if (pb->requires_grad) {
            pb->ensure_grad();
            kernels::gemm_tn(pa->data.data(), node.grad.data(), pb->grad.data(), m, k, n, true);
        }
    });
    kernels::gemm_nn(a.data().data(), b.data().data(), out.data().data(), m, k, n, false);
    return out;
}

// C = A[MxK] * B[NxK]^T. Backward: dA = dC * B, dB = dC^T * A.
template <typename T>
Tensor<T> matmul_nt(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(1)) {
        throw ShapeError("matmul_nt: incompatible shapes " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
    }
    const int64_t m = a.dim(0), k = a.dim(1), n = b.dim(0);
    auto out = make_op_node<T>({m, n}, {a, b},
                               [pa = a.node_ptr(), pb = b.node_ptr(), m, k, n](TensorNode<T>& node) {
        if (pa->requires_grad) {
            pa->ensure_grad();
            kernels::gemm_nn(node.grad.data(), pb->data.data(), pa->grad.data(), m, n, k, true);
        }
        if (pb->requires_grad) {
            pb->ensure_grad();
            kernels::gemm_tn(node.grad.data(), pa->data.data(), pb->grad.data(), m, n, k, true);
        }
    });
    kernels::gemm_nt(a.data().data(), b.data().data(), out.data().data(), m, k, n, false);
    return out;
}

namespace detail {

// Shared softmax/log_softmax forward with max-subtraction. Throws on NaN rows.
template <typename T>
void softmax_rows(const T* x, T* y, int64_t rows, int64_t cols, bool log_mode) {
    for (int64_t r = 0; r < rows; ++r) {
        const T* xr = x + r * cols;
        T* yr = y + r * cols;
        T m = xr[0];
        for (int64_t j = 1; j < cols; ++j) {
            if (xr[j] > m) m = xr[j];
        }
        T sum = 0;
        for (int64_t j = 0; j < cols; ++j) {
            yr[j] = std::exp(xr[j] - m);
            sum += yr[j];
        }
        if (std::isnan(sum)) throw NumericError("softmax: NaN in input row " + std::to_string(r));
        if (log_mode) {
            const T logsum = std::log(sum);
            for (int64_t j = 0; j < cols; ++j) yr[j] = xr[j] - m - logsum;
        } else {
            const T inv = T(1) / sum;
            for (int64_t j = 0; j < cols; ++j) yr[j] *= inv;
        }
    }
}

}  // namespace detail

// Softmax over the last axis. dx = y .* (dy - rowsum(dy .* y)).
template <typename T>
Tensor<T> softmax(const Tensor<T>& x) {
    auto [rows, cols] = detail::as_rows(x, "softmax");
    auto out = make_op_node<T>(x.shape(), {x},
                               [px = x.node_ptr(), rows = rows, cols = cols](TensorNode<T>& n) {
        if (!px->requires_grad) return;
        px->ensure_grad();
        for (int64_t r = 0; r < rows; ++r) {
            const T* y = n.data.data() + r * cols;
            const T* dy = n.grad.data() + r * cols;
            T* dx = px->grad.data() + r * cols;
            T dot = 0;
            for (int64_t j = 0; j < cols; ++j) dot += dy[j] * y[j];
            for (int64_t j = 0; j < cols; ++j) dx[j] += y[j] * (dy[j] - dot);
        }
    });
    detail::softmax_rows(x.data().data(), out.data().data(), rows, cols, false);
    return out;
}

// Log-softmax over the last axis. dx = dy - exp(y) * rowsum(dy).
template <typename T>
Tensor<T> log_softmax(const Tensor<T>& x) {
    auto [rows, cols] = detail::as_rows(x, "log_softmax");
    auto out = make_op_node<T>(x.shape(), {x},
                               [px = x.node_ptr(), rows = rows, cols = cols](TensorNode<T>& n) {
        if (!px->requires_grad) return;
        px->ensure_grad();
        for (int64_t r = 0; r < rows; ++r) {
            const T* y = n.data.data() + r * cols;
            const T* dy = n.grad.data() + r * cols;
            T* dx = px->grad.data() + r * cols;
            T sum = 0;
            for (int64_t j = 0; j < cols; ++j) sum += dy[j];
            for (int64_t j = 0; j < cols; ++j) dx[j] += dy[j] - std::exp(y[j]) * sum;
        }
    });
    detail::softmax_rows(x.data().data(), out.data().data(), rows, cols, true);
    return out;
}

inline int64_t conv1d_out_len(int64_t t, int64_t k, int64_t stride, int64_t padding) {
    return (t + 2 * padding - k) / stride + 1;
}

// x: T x Din, w: k x Din x Dout, bias: Dout. Output T' x Dout with
// T' = floor((T + 2*padding - k)/stride) + 1. Out-of-range taps read zero.
template <typename T>
Tensor<T> conv1d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias, int64_t stride,
                 int64_t padding) {
    if (x.rank() != 2 || w.rank() != 3) {
        throw ShapeError("conv1d: expected x rank 2 and w rank 3, got " + shape_str(x.shape()) +
                         " and " + shape_str(w.shape()));
    }
    const int64_t t_in = x.dim(0), d_in = x.dim(1);
    const int64_t k = w.dim(0), d_out = w.dim(2);
    if (k < 1 || stride < 1 || padding < 0) throw ConfigError("conv1d: need k >= 1, stride >= 1, padding >= 0");
    if (w.dim(1) != d_in) {
        throw ShapeError("conv1d: weight shape " + shape_str(w.shape()) + " does not match input " +
                         shape_str(x.shape()));
    }
    if (bias.rank() != 1 || bias.dim(0) != d_out) {
        throw ShapeError("conv1d: bias shape " + shape_str(bias.shape()) + " does not match d_out " +
                         std::to_string(d_out));
    }
    const int64_t t_out = conv1d_out_len(t_in, k, stride, padding);
    if (t_out <= 0) {
        throw InputError("conv1d: input of length " + std::to_string(t_in) +
                         " too short for kernel " + std::to_string(k) + " stride " +
                         std::to_string(stride) + " padding " + std::to_string(padding));
    }

    auto out = make_op_node<T>({t_out, d_out}, {x, w, bias},
                               [px = x.node_ptr(), pw = w.node_ptr(), pb = bias.node_ptr(), t_in,
                                d_in, k, d_out, t_out, stride, padding](TensorNode<T>& n) {
        const T* dc = n.grad.data();
        if (pb->requires_grad) {
            pb->ensure_grad();
            for (int64_t t = 0; t < t_out; ++t) {
                const T* g = dc + t * d_out;
                for (int64_t o = 0; o < d_out; ++o) pb->grad[o] += g[o];
            }
        }
        const bool need_x = px->requires_grad;
        const bool need_w = pw->requires_grad;
        if (need_x) px->ensure_grad();
        if (need_w) pw->ensure_grad();
        if (!need_x && !need_w) return;
        for (int64_t t = 0; t < t_out; ++t) {
            const T* g = dc + t * d_out;
            for (int64_t dt = 0; dt < k; ++dt) {
                const int64_t row = t * stride - padding + dt;
                if (row < 0 || row >= t_in) continue;
                const T* wrow = pw->data.data() + dt * d_in * d_out;
                if (need_x) {
                    T* dx = px->grad.data() + row * d_in;
                    for (int64_t i = 0; i < d_in; ++i) {
                        const T* wr = wrow + i * d_out;
                        T acc = 0;
                        for (int64_t o = 0; o < d_out; ++o) acc += g[o] * wr[o];
                        dx[i] += acc;
                    }
                }
                if (need_w) {
                    const T* xr = px->data.data() + row * d_in;
                    T* dw = pw->grad.data() + dt * d_in * d_out;
                    for (int64_t i = 0; i < d_in; ++i) {
                        const T xv = xr[i];
                        T* dwr = dw + i * d_out;
                        for (int64_t o = 0; o < d_out; ++o) dwr[o] += xv * g[o];
                    }
                }
            }
        }
    });

    auto& y = out.data();
    const auto& xd = x.data();
    const auto& wd = w.data();
    const auto& bd = bias.data();
    for (int64_t t = 0; t < t_out; ++t) {
        T* yr = y.data() + t * d_out;
        for (int64_t o = 0; o < d_out; ++o) yr[o] = bd[o];
        for (int64_t dt = 0; dt < k; ++dt) {
            const int64_t row = t * stride - padding + dt;
            if (row < 0 || row >= t_in) continue;
            const T* xr = xd.data() + row * d_in;
            const T* wrow = wd.data() + dt * d_in * d_out;
            for (int64_t i = 0; i < d_in; ++i) {
                const T xv = xr[i];
                const T* wr = wrow + i * d_out;
                for (int64_t o = 0; o < d_out; ++o) yr[o] += xv * wr[o];
            }
        }
    }
    return out;
}

// Root-mean-square normalization over the last axis, scaled by gain.
template <typename T>
Tensor<T> rmsnorm(const Tensor<T>& x, const Tensor<T>& gain, T eps = T(1e-6)) {
    auto [rows, cols] = detail::as_rows(x, "rmsnorm");
    if (gain.rank() != 1 || gain.dim(0) != cols) {
        throw ShapeError("rmsnorm: gain shape " + shape_str(gain.shape()) + " does not match " +
                         shape_str(x.shape()));
    }
    auto inv_r = std::make_shared<std::vector<T>>(rows);
    auto out = make_op_node<T>(x.shape(), {x, gain},
                               [px = x.node_ptr(), pg = gain.node_ptr(), inv_r, rows = rows,
                                cols = cols](TensorNode<T>& n) {
        for (int64_t r = 0; r < rows; ++r) {
            const T* xr = px->data.data() + r * cols;
            const T* dy = n.grad.data() + r * cols;
            const T inv = (*inv_r)[r];
            if (pg->requires_grad) {
                pg->ensure_grad();
                for (int64_t j = 0; j < cols; ++j) pg->grad[j] += dy[j] * xr[j] * inv;
            }
            if (px->requires_grad) {
                px->ensure_grad();
                T* dx = px->grad.data() + r * cols;
                const T* g = pg->data.data();
                T dot = 0;
                for (int64_t j = 0; j < cols; ++j) dot += dy[j] * g[j] * xr[j];
                const T coef = dot * inv * inv * inv / static_cast<T>(cols);
                for (int64_t j = 0; j < cols; ++j) dx[j] += dy[j] * g[j] * inv - xr[j] * coef;
            }
        }
    });
    const auto& xd = x.data();
    const auto& gd = gain.data();
    auto& y = out.data();
    for (int64_t r = 0; r < rows; ++r) {
        const T* xr = xd.data() + r * cols;
        T* yr = y.data() + r * cols;
        T ms = 0;
        for (int64_t j = 0; j < cols; ++j) ms += xr[j] * xr[j];
        ms /= static_cast<T>(cols);
        const T inv = T(1) / std::sqrt(ms + eps);
        (*inv_r)[r] = inv;
        for (int64_t j = 0; j < cols; ++j) yr[j] = xr[j] * gd[j] * inv;
    }
    return out;
}

// Inverted dropout. Eval mode (or rate 0) returns the input tensor itself.
template <typename T>
Tensor<T> dropout(const Tensor<T>& x, double rate, bool train, Rng& rng) {
    if (rate < 0.0 || rate >= 1.0) {
        throw ConfigError("dropout: rate must be in [0, 1), got " + std::to_string(rate));
    }
    if (!train || rate == 0.0) return x;
    const T keep_scale = T(1.0 / (1.0 - rate));
    auto mask = std::make_shared<std::vector<uint8_t>>(x.numel());
    for (auto& m : *mask) m = rng.next_double() >= rate ? 1 : 0;
    auto out = make_op_node<T>(x.shape(), {x}, [px = x.node_ptr(), mask, keep_scale](TensorNode<T>& n) {
        if (!px->requires_grad) return;
        px->ensure_grad();
        for (size_t i = 0; i < n.grad.size(); ++i) {
            if ((*mask)[i]) px->grad[i] += n.grad[i] * keep_scale;
        }
    });
    const auto& xd = x.data();
    auto& y = out.data();
    for (size_t i = 0; i < y.size(); ++i) y[i] = (*mask)[i] ? xd[i] * keep_scale : T(0);
    return out;
}

template <typename T>
Tensor<T> silu(const Tensor<T>& x) {
    auto out = make_op_node<T>(x.shape(), {x}, [px = x.node_ptr()](TensorNode<T>& n) {
        if (!px->requires_grad) return;
        px->ensure_grad();
        for (size_t i = 0; i < n.grad.size(); ++i) {
            const T v = px->data[i];
            const T s = T(1) / (T(1) + std::exp(-v));
            px->grad[i] += n.grad[i] * s * (T(1) + v * (T(1) - s));
        }
    });
    const auto& xd = x.data();
    auto& y = out.data();
    for (size_t i = 0; i < y.size(); ++i) y[i] = xd[i] / (T(1) + std::exp(-xd[i]));
    return out;
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
    auto out = make_op_node<T>({1}, {x}, [px = x.node_ptr()](TensorNode<T>& n) {
        if (!px->requires_grad) return;
        px->ensure_grad();
        const T g = n.grad[0];
        for (auto& v : px->grad) v += g;
    });
    T acc = 0;
    for (T v : x.data()) acc += v;
    out.data()[0] = acc;
    return out;
}

// Mean negative log-likelihood of per-row targets in a log-probability matrix.
template <typename T>
Tensor<T> nll_mean(const Tensor<T>& log_probs, const std::vector<int>& targets) {
    auto [rows, cols] = detail::as_rows(log_probs, "nll_mean");
    if (static_cast<int64_t>(targets.size()) != rows) {
        throw ShapeError("nll_mean: " + std::to_string(targets.size()) + " targets for " +
                         std::to_string(rows) + " rows");
    }
    for (int t : targets) {
        if (t < 0 || t >= cols) {
            throw InputError("nll_mean: target " + std::to_string(t) + " out of range [0, " +
                             std::to_string(cols) + ")");
        }
    }
    auto tgt = std::make_shared<std::vector<int>>(targets);
    auto out = make_op_node<T>({1}, {log_probs},
                               [px = log_probs.node_ptr(), tgt, rows = rows, cols = cols](TensorNode<T>& n) {
        if (!px->requires_grad) return;
        px->ensure_grad();
        const T g = n.grad[0] / static_cast<T>(rows);
        for (int64_t r = 0; r < rows; ++r) px->grad[r * cols + (*tgt)[r]] -= g;
    });
    T acc = 0;
    for (int64_t r = 0; r < rows; ++r) acc -= log_probs.data()[r * cols + targets[r]];
    out.data()[0] = acc / static_cast<T>(rows);
    return out;
}

template <typename T>
Tensor<T> slice_cols(const Tensor<T>& x, int64_t start, int64_t len) {
    auto [rows, cols] = detail::as_rows(x, "slice_cols");
    if (start < 0 || len < 1 || start + len > cols) {
        throw ShapeError("slice_cols: [" + std::to_string(start) + ", " + std::to_string(start + len) +
                         ") out of range for " + shape_str(x.shape()));
    }
    auto out = make_op_node<T>({rows, len}, {x},
                               [px = x.node_ptr(), start, len, cols = cols, rows = rows](TensorNode<T>& n) {
        if (!px->requires_grad) return;
        px->ensure_grad();
        for (int64_t r = 0; r < rows; ++r) {
            const T* g = n.grad.data() + r * len;
            T* dx = px->grad.data() + r * cols + start;
            for (int64_t j = 0; j < len; ++j) dx[j] += g[j];
        }
    });
    const auto& xd = x.data();
    auto& y = out.data();
    for (int64_t r = 0; r < rows; ++r) {
        const T* xr = xd.data() + r * cols + start;
        T* yr = y.data() + r * len;
        for (int64_t j = 0; j < len; ++j) yr[j] = xr[j];
    }
    return out;
}

template <typename T>
Tensor<T> concat_cols(const std::vector<Tensor<T>>& parts) {
    if (parts.empty()) throw ShapeError("concat_cols: no inputs");
    const int64_t rows = parts[0].dim(0);
    int64_t total = 0;
    for (const auto& p : parts) {
        if (p.rank() != 2 || p.dim(0) != rows) {
            throw ShapeError("concat_cols: row mismatch, " + shape_str(parts[0].shape()) + " vs " +
                             shape_str(p.shape()));
        }
        total += p.dim(1);
    }
    std::vector<int64_t> offsets;
    std::vector<NodePtr<T>> nodes;
    int64_t off = 0;
    for (const auto& p : parts) {
        offsets.push_back(off);
        nodes.push_back(p.node_ptr());
        off += p.dim(1);
    }
    auto out = make_op_node<T>({rows, total}, parts,
                               [nodes, offsets, rows, total](TensorNode<T>& n) {
        for (size_t pi = 0; pi < nodes.size(); ++pi) {
            auto& p = nodes[pi];
            if (!p->requires_grad) continue;
            p->ensure_grad();
            const int64_t cols = p->shape[1];
            for (int64_t r = 0; r < rows; ++r) {
                const T* g = n.grad.data() + r * total + offsets[pi];
                T* dst = p->grad.data() + r * cols;
                for (int64_t j = 0; j < cols; ++j) dst[j] += g[j];
            }
        }
    });
    auto& y = out.data();
    for (size_t pi = 0; pi < parts.size(); ++pi) {
        const auto& src = parts[pi].data();
        const int64_t cols = parts[pi].dim(1);
        for (int64_t r = 0; r < rows; ++r) {
            const T* s = src.data() + r * cols;
            T* dst = y.data() + r * total + offsets[pi];
            for (int64_t j = 0; j < cols; ++j) dst[j] = s[j];
        }
    }
    return out;
}

// Row gather from an embedding table [V x D].
template <typename T>
Tensor<T> embedding(const Tensor<T>& table, const std::vector<int>& ids) {
    if (table.rank() != 2) throw ShapeError("embedding: table must be rank 2");
    const int64_t v = table.dim(0), d = table.dim(1);
    for (int id : ids) {
        if (id < 0 || id >= v) {
            throw InputError("embedding: id " + std::to_string(id) + " out of range [0, " +
                             std::to_string(v) + ")");
        }
    }
    const int64_t rows = static_cast<int64_t>(ids.size());
    auto idv = std::make_shared<std::vector<int>>(ids);
    auto out = make_op_node<T>({rows, d}, {table}, [pt = table.node_ptr(), idv, rows, d](TensorNode<T>& n) {
        if (!pt->requires_grad) return;
        pt->ensure_grad();
        for (int64_t r = 0; r < rows; ++r) {
            const T* g = n.grad.data() + r * d;
            T* dst = pt->grad.data() + static_cast<int64_t>((*idv)[r]) * d;
            for (int64_t j = 0; j < d; ++j) dst[j] += g[j];
        }
    });
    auto& y = out.data();
    for (int64_t r = 0; r < rows; ++r) {
        const T* src = table.data().data() + static_cast<int64_t>(ids[r]) * d;
        T* dst = y.data() + r * d;
        for (int64_t j = 0; j < d; ++j) dst[j] = src[j];
    }
    return out;
}

// Sets score[q][k] = -inf for k > q. Grads pass through unmasked entries only.
template <typename T>
Tensor<T> causal_mask(const Tensor<T>& scores) {
    if (scores.rank() != 2 || scores.dim(0) != scores.dim(1)) {
        throw ShapeError("causal_mask: expected square matrix, got " + shape_str(scores.shape()));
    }
    const int64_t t = scores.dim(0);
    auto out = make_op_node<T>(scores.shape(), {scores}, [px = scores.node_ptr(), t](TensorNode<T>& n) {
        if (!px->requires_grad) return;
        px->ensure_grad();
        for (int64_t q = 0; q < t; ++q) {
            const T* g = n.grad.data() + q * t;
            T* dx = px->grad.data() + q * t;
            for (int64_t k = 0; k <= q; ++k) dx[k] += g[k];
        }
    });
    const auto& xd = scores.data();
    auto& y = out.data();
    const T neg_inf = -std::numeric_limits<T>::infinity();
    for (int64_t q = 0; q < t; ++q) {
        for (int64_t k = 0; k < t; ++k) y[q * t + k] = k <= q ? xd[q * t + k] : neg_inf;
    }
    return out;
}

}  // namespace pal
