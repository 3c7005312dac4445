#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "pal/error.hpp"
#include "pal/ops.hpp"
#include "pal/rng.hpp"
#include "pal/tensor.hpp"

// Pre-norm transformer stack: RMSNorm, rotary positions, SiLU-gated FFN,
// biases on Q/K/V only. The same stack runs causally for language modeling
// and unmasked as an ASR encoder; the mask mode is a call-site argument, not
// a parameter, so switching modes touches no weights. Embedding and output
// projections live outside the stack.

namespace pal {

enum class MaskMode { causal, full };

struct BlockConfig {
    int64_t d_model = 0;
    int64_t n_head = 0;
    int64_t d_ff = 0;
    int64_t n_layer = 0;
    double dropout = 0.0;
    double rope_base = 10000.0;

    int64_t d_head() const { return d_model / n_head; }

    void validate() const {
        if (d_model < 1 || n_head < 1 || d_ff < 1) {
            throw ConfigError("block config: dims must be positive");
        }
        if (d_model % n_head != 0) {
            throw ConfigError("block config: d_model " + std::to_string(d_model) +
                              " not divisible by n_head " + std::to_string(n_head));
        }
        if (d_head() % 2 != 0) {
            throw ConfigError("block config: head dim " + std::to_string(d_head()) +
                              " must be even for rotary positions");
        }
        if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("block config: dropout outside [0,1)");
        if (n_layer < 1) throw ConfigError("block config: n_layer must be >= 1");
    }
};

// Pairwise 2-D rotations: within each head, columns (2i, 2i+1) rotate by
// pos * base^(-2i/d_head). Linear, so the backward pass is the inverse
// rotation applied to the output gradient.
template <typename T>
Tensor<T> rope_apply(const Tensor<T>& x, int64_t n_head, int64_t d_head, double base,
                     const std::vector<int64_t>& positions) {
    if (d_head % 2 != 0) throw ConfigError("rope: head dim must be even");
    if (x.rank() != 2 || x.dim(1) != n_head * d_head) {
        throw ShapeError("rope: expected [T x " + std::to_string(n_head * d_head) + "], got " +
                         shape_str(x.shape()));
    }
    const int64_t t_len = x.dim(0);
    if (static_cast<int64_t>(positions.size()) != t_len) {
        throw ShapeError("rope: positions length " + std::to_string(positions.size()) +
                         " != T " + std::to_string(t_len));
    }
    const int64_t pairs = d_head / 2;

    // cos/sin per (t, pair); shared across heads and with the backward pass.
    auto trig = std::make_shared<std::vector<T>>(t_len * pairs * 2);
    for (int64_t t = 0; t < t_len; ++t) {
        for (int64_t i = 0; i < pairs; ++i) {
            const double theta = static_cast<double>(positions[t]) *
                                 std::pow(base, -2.0 * static_cast<double>(i) / static_cast<double>(d_head));
            (*trig)[(t * pairs + i) * 2] = static_cast<T>(std::cos(theta));
            (*trig)[(t * pairs + i) * 2 + 1] = static_cast<T>(std::sin(theta));
        }
    }

    const int64_t cols = n_head * d_head;
    auto out = make_op_node<T>({t_len, cols}, {x},
                               [px = x.node_ptr(), trig, n_head, pairs, t_len](TensorNode<T>& n) {
        if (!px->requires_grad) return;
        px->ensure_grad();
        const int64_t cols = n_head * pairs * 2;
        for (int64_t t = 0; t < t_len; ++t) {
            for (int64_t h = 0; h < n_head; ++h) {
                for (int64_t i = 0; i < pairs; ++i) {
                    const T c = (*trig)[(t * pairs + i) * 2];
                    const T s = (*trig)[(t * pairs + i) * 2 + 1];
                    const int64_t idx = t * cols + h * pairs * 2 + 2 * i;
                    const T ga = n.grad[idx], gb = n.grad[idx + 1];
                    px->grad[idx] += ga * c + gb * s;
                    px->grad[idx + 1] += -ga * s + gb * c;
                }
            }
        }
    });
    const auto& xd = x.data();
    auto& y = out.data();
    for (int64_t t = 0; t < t_len; ++t) {
        for (int64_t h = 0; h < n_head; ++h) {
            for (int64_t i = 0; i < pairs; ++i) {
                const T c = (*trig)[(t * pairs + i) * 2];
                const T s = (*trig)[(t * pairs + i) * 2 + 1];
                const int64_t idx = t * cols + h * d_head + 2 * i;
                const T a = xd[idx], b = xd[idx + 1];
                y[idx] = a * c - b * s;
                y[idx + 1] = a * s + b * c;
            }
        }
    }
    return out;
}

template <typename T>
Tensor<T> rope_apply(const Tensor<T>& x, int64_t n_head, int64_t d_head, double base) {
    std::vector<int64_t> positions(x.dim(0));
    for (size_t i = 0; i < positions.size(); ++i) positions[i] = static_cast<int64_t>(i);
    return rope_apply(x, n_head, d_head, base, positions);
}

template <typename T>
struct BlockParams {
    Tensor<T> attn_norm_gain;
    Tensor<T> wq, bq, wk, bk, wv, bv;  // projections with bias
    Tensor<T> wo;                      // output projection, no bias
    Tensor<T> ffn_norm_gain;
    Tensor<T> w_gate, w_up, w_down;    // gated FFN, no biases
};

template <typename T>
struct TransformerStack {
    BlockConfig cfg;
    std::vector<BlockParams<T>> blocks;
    Tensor<T> final_norm_gain;
};

template <typename T>
struct NamedTensor {
    std::string name;
    Tensor<T> tensor;
};

template <typename T>
TransformerStack<T> make_stack(const BlockConfig& cfg, Rng& rng) {
    cfg.validate();
    TransformerStack<T> st;
    st.cfg = cfg;
    const int64_t d = cfg.d_model, f = cfg.d_ff;
    auto weight = [&rng](std::vector<int64_t> shape) {
        auto t = Tensor<T>::zeros(std::move(shape), true);
        for (auto& v : t.data()) v = static_cast<T>(rng.next_trunc_normal(0.02));
        return t;
    };
    for (int64_t l = 0; l < cfg.n_layer; ++l) {
        BlockParams<T> b;
        b.attn_norm_gain = Tensor<T>::full({d}, T(1), true);
        b.wq = weight({d, d});
        b.bq = Tensor<T>::zeros({d}, true);
        b.wk = weight({d, d});
        b.bk = Tensor<T>::zeros({d}, true);
        b.wv = weight({d, d});
        b.bv = Tensor<T>::zeros({d}, true);
        b.wo = weight({d, d});
        b.ffn_norm_gain = Tensor<T>::full({d}, T(1), true);
        b.w_gate = weight({d, f});
        b.w_up = weight({d, f});
        b.w_down = weight({f, d});
        st.blocks.push_back(std::move(b));
    }
    st.final_norm_gain = Tensor<T>::full({d}, T(1), true);
    return st;
}

template <typename T>
std::vector<NamedTensor<T>> named_params(TransformerStack<T>& st, const std::string& prefix = "stack.") {
    std::vector<NamedTensor<T>> out;
    for (size_t l = 0; l < st.blocks.size(); ++l) {
        auto& b = st.blocks[l];
        const std::string p = prefix + "layer" + std::to_string(l) + ".";
        out.push_back({p + "attn_norm.gain", b.attn_norm_gain});
        out.push_back({p + "attn.wq", b.wq});
        out.push_back({p + "attn.bq", b.bq});
        out.push_back({p + "attn.wk", b.wk});
        out.push_back({p + "attn.bk", b.bk});
        out.push_back({p + "attn.wv", b.wv});
        out.push_back({p + "attn.bv", b.bv});
        out.push_back({p + "attn.wo", b.wo});
        out.push_back({p + "ffn_norm.gain", b.ffn_norm_gain});
        out.push_back({p + "ffn.gate", b.w_gate});
        out.push_back({p + "ffn.up", b.w_up});
        out.push_back({p + "ffn.down", b.w_down});
    }
    out.push_back({prefix + "final_norm.gain", st.final_norm_gain});
    return out;
}

// Scaled dot-product attention with rotary positions. Mask mode is purely a
// forward-time choice.
template <typename T>
Tensor<T> attention(const Tensor<T>& xn, const BlockParams<T>& p, const BlockConfig& cfg,
                    MaskMode mask) {
    const int64_t dh = cfg.d_head();
    auto q = rope_apply(add_bias(matmul(xn, p.wq), p.bq), cfg.n_head, dh, cfg.rope_base);
    auto k = rope_apply(add_bias(matmul(xn, p.wk), p.bk), cfg.n_head, dh, cfg.rope_base);
    auto v = add_bias(matmul(xn, p.wv), p.bv);

    const T inv_sqrt = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh)));
    std::vector<Tensor<T>> heads;
    heads.reserve(cfg.n_head);
    for (int64_t h = 0; h < cfg.n_head; ++h) {
        auto qh = slice_cols(q, h * dh, dh);
        auto kh = slice_cols(k, h * dh, dh);
        auto vh = slice_cols(v, h * dh, dh);
        auto scores = scale(matmul_nt(qh, kh), inv_sqrt);
        if (mask == MaskMode::causal) scores = causal_mask(scores);
        heads.push_back(matmul(softmax(scores), vh));
    }
    return matmul(concat_cols(heads), p.wo);
}

template <typename T>
Tensor<T> block_forward(const Tensor<T>& x, const BlockParams<T>& p, const BlockConfig& cfg,
                        MaskMode mask, bool train, Rng& rng) {
    auto attn_out = attention(rmsnorm(x, p.attn_norm_gain), p, cfg, mask);
    auto y = add(x, dropout(attn_out, cfg.dropout, train, rng));

    auto yn = rmsnorm(y, p.ffn_norm_gain);
    auto ffn_out = matmul(mul(silu(matmul(yn, p.w_gate)), matmul(yn, p.w_up)), p.w_down);
    return add(y, dropout(ffn_out, cfg.dropout, train, rng));
}

template <typename T>
Tensor<T> stack_forward(const Tensor<T>& x, const TransformerStack<T>& st, MaskMode mask,
                        bool train, Rng& rng) {
    Tensor<T> h = x;
    for (const auto& b : st.blocks) h = block_forward(h, b, st.cfg, mask, train, rng);
    return rmsnorm(h, st.final_norm_gain);
}

}  // namespace pal
