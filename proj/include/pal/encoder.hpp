#pragma once

#include <algorithm>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "pal/checkpoint.hpp"
#include "pal/error.hpp"
#include "pal/features.hpp"
#include "pal/lm.hpp"
#include "pal/ops.hpp"
#include "pal/rng.hpp"
#include "pal/tensor.hpp"
#include "pal/transformer.hpp"

// Speech-encoder assembly. Three forms share one container:
//   conv         conv frontend -> adapter -> stack -> CTC head
//   lfr_stack    pretrained encoder (own head removed) -> adapter -> stack -> CTC head
//   lfr_baseline the stand-alone pretrained encoder architecture by itself
// The stack slot can be filled randomly, by transplanting language-model
// layers from a checkpoint, or left empty (frontend-only baseline). The
// transplant target always runs with a full attention mask.

namespace pal {

// Splices the m frames centered on every rate-th frame (edges replicated)
// into one row: T x D -> ceil(T/rate) x m*D.
template <typename T>
Tensor<T> frame_stack(const Tensor<T>& x, int64_t m, int64_t rate) {
    if (x.rank() != 2) throw ShapeError("frame_stack: expected rank 2, got " + shape_str(x.shape()));
    if (m < 1 || m % 2 == 0) throw ConfigError("frame_stack: m must be odd and positive");
    if (rate < 1) throw ConfigError("frame_stack: rate must be >= 1");
    const int64_t t_in = x.dim(0), d = x.dim(1);
    if (t_in < 1) throw InputError("frame_stack: empty input");
    const int64_t t_out = (t_in + rate - 1) / rate;
    const int64_t half = m / 2;

    auto src_row = [t_in, rate, half](int64_t i, int64_t j) {
        const int64_t r = i * rate + j - half;
        return std::min(std::max(r, int64_t(0)), t_in - 1);
    };
    auto out = make_op_node<T>({t_out, m * d}, {x},
                               [px = x.node_ptr(), src_row, t_out, m, d](TensorNode<T>& n) {
                                   if (!px->requires_grad) return;
                                   px->ensure_grad();
                                   for (int64_t i = 0; i < t_out; ++i) {
                                       for (int64_t j = 0; j < m; ++j) {
                                           const T* g = n.grad.data() + (i * m + j) * d;
                                           T* dst = px->grad.data() + src_row(i, j) * d;
                                           for (int64_t c = 0; c < d; ++c) dst[c] += g[c];
                                       }
                                   }
                               });
    auto& y = out.data();
    const auto& xin = x.data();
    for (int64_t i = 0; i < t_out; ++i) {
        for (int64_t j = 0; j < m; ++j) {
            const T* src = xin.data() + src_row(i, j) * d;
            T* dst = y.data() + (i * m + j) * d;
            for (int64_t c = 0; c < d; ++c) dst[c] = src[c];
        }
    }
    return out;
}

template <typename T>
struct Linear {
    Tensor<T> weight;  // d_in x d_out
    Tensor<T> bias;    // d_out
};

template <typename T>
Linear<T> make_linear(int64_t d_in, int64_t d_out, Rng& rng) {
    Linear<T> lin;
    lin.weight = Tensor<T>::zeros({d_in, d_out}, true);
    for (auto& v : lin.weight.data()) v = static_cast<T>(rng.next_trunc_normal(0.02));
    lin.bias = Tensor<T>::zeros({d_out}, true);
    return lin;
}

template <typename T>
Tensor<T> linear_forward(const Linear<T>& lin, const Tensor<T>& x) {
    return add_bias(matmul(x, lin.weight), lin.bias);
}

// Two strided convolutions, each halving the frame count: T -> ceil(T/4).
template <typename T>
struct ConvFrontend {
    Tensor<T> w1, b1;  // 3 x d_in x channels
    Tensor<T> w2, b2;  // 3 x channels x channels
};

template <typename T>
ConvFrontend<T> make_conv_frontend(int64_t d_in, int64_t channels, Rng& rng) {
    if (d_in < 1 || channels < 1) throw ConfigError("conv frontend: dims must be positive");
    ConvFrontend<T> fe;
    auto weight = [&rng](std::vector<int64_t> shape) {
        auto t = Tensor<T>::zeros(std::move(shape), true);
        for (auto& v : t.data()) v = static_cast<T>(rng.next_trunc_normal(0.02));
        return t;
    };
    fe.w1 = weight({3, d_in, channels});
    fe.b1 = Tensor<T>::zeros({channels}, true);
    fe.w2 = weight({3, channels, channels});
    fe.b2 = Tensor<T>::zeros({channels}, true);
    return fe;
}

template <typename T>
Tensor<T> conv_frontend_forward(const ConvFrontend<T>& fe, const Tensor<T>& x) {
    auto h = silu(conv1d(x, fe.w1, fe.b1, 2, 1));
    return silu(conv1d(h, fe.w2, fe.b2, 2, 1));
}

// Frame-stacking acoustic encoder: rate-6 downsampling over 7-frame splices,
// a width adapter, a full-mask stack, and a CTC head. Trained standalone,
// then reused headless inside lfr_stack assemblies.
template <typename T>
struct PretrainedAsrEncoder {
    int64_t d_feat = 80;
    int64_t v = 21;
    int64_t m = 7;
    int64_t rate = 6;
    Linear<T> in_proj;  // m*d_feat -> d_model
    TransformerStack<T> stack;
    Linear<T> ctc_head;  // d_model -> v
    std::string corpus_fingerprint;
};

template <typename T>
PretrainedAsrEncoder<T> make_asr_encoder(int64_t d_feat, const BlockConfig& cfg, int64_t v,
                                         int64_t m, int64_t rate, Rng& rng) {
    if (d_feat < 1) throw ConfigError("asr encoder: d_feat must be positive");
    if (v < 2) throw ConfigError("asr encoder: need at least blank plus one symbol");
    PretrainedAsrEncoder<T> enc;
    enc.d_feat = d_feat;
    enc.v = v;
    enc.m = m;
    enc.rate = rate;
    enc.in_proj = make_linear<T>(m * d_feat, cfg.d_model, rng);
    enc.stack = make_stack<T>(cfg, rng);
    enc.ctc_head = make_linear<T>(cfg.d_model, v, rng);
    return enc;
}

// Representation before the CTC head; this is what lfr_stack builds on.
template <typename T>
Tensor<T> asr_features(const PretrainedAsrEncoder<T>& enc, const Tensor<T>& x, bool train,
                       Rng& rng) {
    auto h = linear_forward(enc.in_proj, frame_stack(x, enc.m, enc.rate));
    return stack_forward(h, enc.stack, MaskMode::full, train, rng);
}

template <typename T>
std::vector<NamedTensor<T>> named_params(PretrainedAsrEncoder<T>& enc,
                                         const std::string& prefix = "asr.") {
    std::vector<NamedTensor<T>> out;
    out.push_back({prefix + "in_proj.weight", enc.in_proj.weight});
    out.push_back({prefix + "in_proj.bias", enc.in_proj.bias});
    auto stack = named_params(enc.stack, prefix + "stack.");
    out.insert(out.end(), stack.begin(), stack.end());
    out.push_back({prefix + "ctc.weight", enc.ctc_head.weight});
    out.push_back({prefix + "ctc.bias", enc.ctc_head.bias});
    return out;
}

template <typename T>
Checkpoint asr_to_checkpoint(PretrainedAsrEncoder<T>& enc) {
    Checkpoint ckpt;
    ckpt.meta["kind"] = "asr_encoder";
    ckpt.meta["block"] = block_to_json(enc.stack.cfg);
    ckpt.meta["d_feat"] = enc.d_feat;
    ckpt.meta["v"] = enc.v;
    ckpt.meta["m"] = enc.m;
    ckpt.meta["rate"] = enc.rate;
    ckpt.meta["corpus_fingerprint"] = enc.corpus_fingerprint;
    for (auto& np : named_params(enc)) ckpt.add(np.name, to_record(np.tensor));
    return ckpt;
}

template <typename T>
PretrainedAsrEncoder<T> asr_from_checkpoint(const Checkpoint& ckpt) {
    if (!ckpt.meta.contains("kind") || ckpt.meta["kind"] != "asr_encoder") {
        throw CheckpointError("checkpoint: not a pretrained encoder checkpoint");
    }
    Rng dummy(0);
    auto enc = make_asr_encoder<T>(ckpt.meta.at("d_feat").get<int64_t>(),
                                   block_from_json(ckpt.meta.at("block")),
                                   ckpt.meta.at("v").get<int64_t>(), ckpt.meta.at("m").get<int64_t>(),
                                   ckpt.meta.at("rate").get<int64_t>(), dummy);
    enc.corpus_fingerprint = ckpt.meta.value("corpus_fingerprint", "");
    std::string missing;
    for (auto& np : named_params(enc)) {
        const TensorRecord* rec = ckpt.find(np.name);
        if (!rec) {
            missing += missing.empty() ? np.name : ", " + np.name;
            continue;
        }
        install_record(*rec, np.tensor, np.name);
    }
    if (!missing.empty()) throw CheckpointError("checkpoint: missing tensors: " + missing);
    return enc;
}

// Rebuilds the stack described by the checkpoint's block metadata and installs
// the stored stack weights verbatim. Embedding and output-projection tensors
// in the checkpoint are ignored; every stack tensor must be present.
template <typename T>
TransformerStack<T> transplant(const Checkpoint& ckpt) {
    if (!ckpt.meta.contains("block")) {
        throw CheckpointError("transplant: checkpoint carries no block config");
    }
    Rng dummy(0);
    TransformerStack<T> st = make_stack<T>(block_from_json(ckpt.meta.at("block")), dummy);
    std::string missing;
    for (auto& np : named_params(st)) {
        const TensorRecord* rec = ckpt.find(np.name);
        if (!rec) {
            missing += missing.empty() ? np.name : ", " + np.name;
            continue;
        }
        install_record(*rec, np.tensor, np.name);
    }
    if (!missing.empty()) throw CheckpointError("transplant: missing stack tensors: " + missing);
    return st;
}

struct EncoderSpec {
    std::string form = "conv";           // conv | lfr_stack | lfr_baseline
    std::string stack_init = "random";  // none | random | transplant
    BlockConfig stack_cfg;              // fixes adapter/head width even with stack_init=none
    BlockConfig asr_cfg;                // lfr_baseline only; lfr_stack takes it from the checkpoint
    double dropout = 0.1;               // applied to every stack in the assembly
    int64_t d_feat = 80;
    int64_t v = 21;  // CTC classes including blank 0
    int64_t conv_channels = 256;
    int64_t stack_m = 7;
    int64_t stack_rate = 6;
    uint64_t seed = 1;
};

template <typename T>
struct AssembledEncoder {
    std::string form;
    std::string stack_init;
    std::string freeze_desc = "none";
    int64_t d_feat = 80;
    int64_t v = 21;
    std::optional<ConvFrontend<T>> conv;
    std::optional<PretrainedAsrEncoder<T>> asr;
    std::optional<Linear<T>> adapter;
    std::optional<TransformerStack<T>> stack;
    std::optional<Linear<T>> ctc_head;
};

template <typename T>
std::vector<NamedTensor<T>> named_params(AssembledEncoder<T>& enc) {
    std::vector<NamedTensor<T>> out;
    if (enc.conv) {
        out.push_back({"conv.layer1.weight", enc.conv->w1});
        out.push_back({"conv.layer1.bias", enc.conv->b1});
        out.push_back({"conv.layer2.weight", enc.conv->w2});
        out.push_back({"conv.layer2.bias", enc.conv->b2});
    }
    if (enc.asr) {
        auto asr = named_params(*enc.asr);
        out.insert(out.end(), asr.begin(), asr.end());
    }
    if (enc.adapter) {
        out.push_back({"adapter.weight", enc.adapter->weight});
        out.push_back({"adapter.bias", enc.adapter->bias});
    }
    if (enc.stack) {
        auto stack = named_params(*enc.stack);
        out.insert(out.end(), stack.begin(), stack.end());
    }
    if (enc.ctc_head) {
        out.push_back({"ctc.weight", enc.ctc_head->weight});
        out.push_back({"ctc.bias", enc.ctc_head->bias});
    }
    return out;
}

// Fixed child streams per component keep initialization independent of how
// many values sibling components consume.
template <typename T>
AssembledEncoder<T> build_encoder(const EncoderSpec& spec, const Checkpoint* lm_ckpt = nullptr,
                                  const Checkpoint* asr_ckpt = nullptr) {
    if (spec.form != "conv" && spec.form != "lfr_stack" && spec.form != "lfr_baseline") {
        throw ConfigError("build_encoder: unknown form " + spec.form);
    }
    if (spec.stack_init != "none" && spec.stack_init != "random" &&
        spec.stack_init != "transplant") {
        throw ConfigError("build_encoder: unknown stack_init " + spec.stack_init);
    }
    Rng root(spec.seed);
    AssembledEncoder<T> enc;
    enc.form = spec.form;
    enc.stack_init = spec.stack_init;
    enc.d_feat = spec.d_feat;
    enc.v = spec.v;

    if (spec.form == "lfr_baseline") {
        BlockConfig cfg = spec.asr_cfg;
        cfg.dropout = spec.dropout;
        Rng r = root.split(14);
        enc.asr = make_asr_encoder<T>(spec.d_feat, cfg, spec.v, spec.stack_m, spec.stack_rate, r);
        enc.stack_init = "none";  // no transplant slot in this form
        return enc;
    }

    if (spec.form == "conv") {
        Rng r = root.split(10);
        enc.conv = make_conv_frontend<T>(spec.d_feat, spec.conv_channels, r);
    } else {
        if (!asr_ckpt) {
            throw ConfigError("build_encoder: lfr_stack form needs a pretrained encoder checkpoint");
        }
        enc.asr = asr_from_checkpoint<T>(*asr_ckpt);
        if (enc.asr->d_feat != spec.d_feat) {
            throw ConfigError("build_encoder: pretrained encoder expects d_feat " +
                              std::to_string(enc.asr->d_feat) + ", corpus has " +
                              std::to_string(spec.d_feat));
        }
        enc.asr->stack.cfg.dropout = spec.dropout;
    }

    int64_t d_model = spec.stack_cfg.d_model;
    if (spec.stack_init == "random") {
        BlockConfig cfg = spec.stack_cfg;
        cfg.dropout = spec.dropout;
        Rng r = root.split(12);
        enc.stack = make_stack<T>(cfg, r);
    } else if (spec.stack_init == "transplant") {
        if (!lm_ckpt) {
            throw ConfigError("build_encoder: transplant init needs a language-model checkpoint");
        }
        enc.stack = transplant<T>(*lm_ckpt);
        enc.stack->cfg.dropout = spec.dropout;
        d_model = enc.stack->cfg.d_model;
    }
    if (d_model < 1) throw ConfigError("build_encoder: stack_cfg.d_model must be positive");

    const int64_t adapter_in = spec.form == "conv" ? spec.conv_channels : enc.asr->stack.cfg.d_model;
    Rng ra = root.split(11);
    enc.adapter = make_linear<T>(adapter_in, d_model, ra);
    Rng rh = root.split(13);
    enc.ctc_head = make_linear<T>(d_model, spec.v, rh);
    return enc;
}

// Full pipeline ending in per-frame log-probabilities over the CTC classes.
template <typename T>
Tensor<T> encoder_forward(const AssembledEncoder<T>& enc, const Tensor<T>& x, bool train,
                          Rng& rng) {
    if (x.rank() != 2) {
        throw ShapeError("encoder_forward: expected rank-2 features, got " + shape_str(x.shape()));
    }
    if (x.dim(0) < 1) throw InputError("encoder_forward: input too short, no frames");
    if (x.dim(1) != enc.d_feat) {
        throw ShapeError("encoder_forward: features have dim " + std::to_string(x.dim(1)) +
                         ", encoder expects " + std::to_string(enc.d_feat));
    }
    if (enc.form == "lfr_baseline") {
        auto h = asr_features(*enc.asr, x, train, rng);
        return log_softmax(linear_forward(enc.asr->ctc_head, h));
    }
    Tensor<T> h = enc.form == "conv" ? conv_frontend_forward(*enc.conv, x)
                                    : asr_features(*enc.asr, x, train, rng);
    h = linear_forward(*enc.adapter, h);
    if (enc.stack) h = stack_forward(h, *enc.stack, MaskMode::full, train, rng);
    return log_softmax(linear_forward(*enc.ctc_head, h));
}

template <typename T>
Tensor<T> features_to_tensor(const FeatureSequence& fs) {
    std::vector<T> data(fs.frames.begin(), fs.frames.end());
    return Tensor<T>::from_data({fs.t, fs.d}, std::move(data));
}

template <typename T>
Tensor<T> encoder_forward(const AssembledEncoder<T>& enc, const FeatureSequence& fs, bool train,
                          Rng& rng) {
    return encoder_forward(enc, features_to_tensor<T>(fs), train, rng);
}

// Output length for a given input length, per frontend arithmetic.
template <typename T>
int64_t encoder_out_len(const AssembledEncoder<T>& enc, int64_t t_in) {
    if (t_in < 1) return 0;
    if (enc.form == "conv") {
        const int64_t t1 = conv1d_out_len(t_in, 3, 2, 1);
        return conv1d_out_len(t1, 3, 2, 1);
    }
    return (t_in + enc.asr->rate - 1) / enc.asr->rate;
}

namespace detail {

template <typename T>
void set_grad_by_prefix(AssembledEncoder<T>& enc, const std::string& prefix, bool value) {
    for (auto& np : named_params(enc)) {
        if (np.name.rfind(prefix, 0) == 0) np.tensor.set_requires_grad(value);
    }
}

}  // namespace detail

// Policies: "none" (everything trainable), "freeze_stack" (transplant slot
// only; frontend, adapter and head keep training), "freeze_asr_encoder",
// "custom:<name>,<name>,..." (freeze exactly the listed tensors). Policies
// other than "none" compose across calls; "+" joins them in one string.
template <typename T>
void apply_freeze(AssembledEncoder<T>& enc, const std::string& policy) {
    std::vector<std::string> parts;
    size_t pos = 0;
    while (pos <= policy.size()) {
        const size_t next = policy.find('+', pos);
        parts.push_back(policy.substr(pos, next == std::string::npos ? next : next - pos));
        if (next == std::string::npos) break;
        pos = next + 1;
    }
    for (const std::string& part : parts) {
        if (part == "none") {
            for (auto& np : named_params(enc)) np.tensor.set_requires_grad(true);
        } else if (part == "freeze_stack") {
            if (!enc.stack) throw ConfigError("apply_freeze: encoder has no stack to freeze");
            detail::set_grad_by_prefix(enc, "stack.", false);
        } else if (part == "freeze_asr_encoder") {
            if (!enc.asr) throw ConfigError("apply_freeze: encoder has no pretrained encoder");
            detail::set_grad_by_prefix(enc, "asr.", false);
        } else if (part.rfind("custom:", 0) == 0) {
            auto named = named_params(enc);
            size_t p = 7;
            while (p <= part.size()) {
                const size_t comma = part.find(',', p);
                const std::string name =
                    part.substr(p, comma == std::string::npos ? comma : comma - p);
                bool found = false;
                for (auto& np : named) {
                    if (np.name == name) {
                        np.tensor.set_requires_grad(false);
                        found = true;
                        break;
                    }
                }
                if (!found) throw ConfigError("apply_freeze: unknown parameter " + name);
                if (comma == std::string::npos) break;
                p = comma + 1;
            }
        } else {
            throw ConfigError("apply_freeze: unknown policy " + part);
        }
        if (part == "none" || enc.freeze_desc == "none") {
            enc.freeze_desc = part;
        } else {
            enc.freeze_desc += "+" + part;
        }
    }
}

template <typename T>
int64_t total_param_count(AssembledEncoder<T>& enc) {
    int64_t n = 0;
    for (auto& np : named_params(enc)) n += np.tensor.numel();
    return n;
}

template <typename T>
int64_t trainable_param_count(AssembledEncoder<T>& enc) {
    int64_t n = 0;
    for (auto& np : named_params(enc)) {
        if (np.tensor.requires_grad()) n += np.tensor.numel();
    }
    return n;
}

template <typename T>
Checkpoint encoder_to_checkpoint(AssembledEncoder<T>& enc) {
    Checkpoint ckpt;
    ckpt.meta["kind"] = "encoder";
    ckpt.meta["form"] = enc.form;
    ckpt.meta["stack_init"] = enc.stack_init;
    ckpt.meta["freeze"] = enc.freeze_desc;
    ckpt.meta["d_feat"] = enc.d_feat;
    ckpt.meta["v"] = enc.v;
    if (enc.conv) ckpt.meta["conv_channels"] = enc.conv->b1.dim(0);
    if (enc.asr) {
        ckpt.meta["asr_block"] = block_to_json(enc.asr->stack.cfg);
        ckpt.meta["asr_m"] = enc.asr->m;
        ckpt.meta["asr_rate"] = enc.asr->rate;
        ckpt.meta["asr_v"] = enc.asr->v;
        ckpt.meta["corpus_fingerprint"] = enc.asr->corpus_fingerprint;
    }
    if (enc.stack) ckpt.meta["block"] = block_to_json(enc.stack->cfg);
    if (enc.adapter) ckpt.meta["d_model"] = enc.adapter->weight.dim(1);
    for (auto& np : named_params(enc)) ckpt.add(np.name, to_record(np.tensor));
    return ckpt;
}

template <typename T>
AssembledEncoder<T> encoder_from_checkpoint(const Checkpoint& ckpt) {
    if (!ckpt.meta.contains("kind") || ckpt.meta["kind"] != "encoder") {
        throw CheckpointError("checkpoint: not an encoder checkpoint");
    }
    AssembledEncoder<T> enc;
    enc.form = ckpt.meta.at("form").get<std::string>();
    enc.stack_init = ckpt.meta.at("stack_init").get<std::string>();
    enc.d_feat = ckpt.meta.at("d_feat").get<int64_t>();
    enc.v = ckpt.meta.at("v").get<int64_t>();
    Rng dummy(0);
    if (ckpt.meta.contains("conv_channels")) {
        enc.conv = make_conv_frontend<T>(enc.d_feat, ckpt.meta.at("conv_channels").get<int64_t>(),
                                         dummy);
    }
    if (ckpt.meta.contains("asr_block")) {
        enc.asr = make_asr_encoder<T>(enc.d_feat, block_from_json(ckpt.meta.at("asr_block")),
                                      ckpt.meta.at("asr_v").get<int64_t>(),
                                      ckpt.meta.at("asr_m").get<int64_t>(),
                                      ckpt.meta.at("asr_rate").get<int64_t>(), dummy);
        enc.asr->corpus_fingerprint = ckpt.meta.value("corpus_fingerprint", "");
    }
    if (ckpt.meta.contains("block")) {
        enc.stack = make_stack<T>(block_from_json(ckpt.meta.at("block")), dummy);
    }
    if (ckpt.meta.contains("d_model")) {
        const int64_t d_model = ckpt.meta.at("d_model").get<int64_t>();
        const int64_t adapter_in =
            enc.form == "conv" ? ckpt.meta.at("conv_channels").get<int64_t>()
                              : enc.asr->stack.cfg.d_model;
        enc.adapter = make_linear<T>(adapter_in, d_model, dummy);
        enc.ctc_head = make_linear<T>(d_model, enc.v, dummy);
    }
    std::string missing;
    for (auto& np : named_params(enc)) {
        const TensorRecord* rec = ckpt.find(np.name);
        if (!rec) {
            missing += missing.empty() ? np.name : ", " + np.name;
            continue;
        }
        install_record(*rec, np.tensor, np.name);
    }
    if (!missing.empty()) throw CheckpointError("checkpoint: missing tensors: " + missing);
    apply_freeze(enc, ckpt.meta.value("freeze", "none"));
    return enc;
}

}  // namespace pal
