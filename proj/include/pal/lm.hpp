#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "pal/checkpoint.hpp"
#include "pal/error.hpp"
#include "pal/ops.hpp"
#include "pal/optim.hpp"
#include "pal/rng.hpp"
#include "pal/tensor.hpp"
#include "pal/transformer.hpp"

// Decoder-only language model over the 20 non-blank task symbols. Token j
// (1-based symbol id) maps to embedding row / logit class j-1. The embedding
// and output projection live here, not in the stack, so the stack alone is
// what a transplant extracts.

namespace pal {

template <typename T>
struct LmModel {
    int64_t v_text = 20;
    Tensor<T> embed;    // [v_text x d_model]
    TransformerStack<T> stack;
    Tensor<T> out_proj;  // [d_model x v_text]
};

template <typename T>
LmModel<T> make_lm(const BlockConfig& cfg, int64_t v_text, Rng& rng) {
    if (v_text < 2) throw ConfigError("lm: v_text must be >= 2");
    LmModel<T> lm;
    lm.v_text = v_text;
    lm.embed = Tensor<T>::zeros({v_text, cfg.d_model}, true);
    for (auto& v : lm.embed.data()) v = static_cast<T>(rng.next_trunc_normal(0.02));
    lm.stack = make_stack<T>(cfg, rng);
    lm.out_proj = Tensor<T>::zeros({cfg.d_model, v_text}, true);
    for (auto& v : lm.out_proj.data()) v = static_cast<T>(rng.next_trunc_normal(0.02));
    return lm;
}

template <typename T>
std::vector<NamedTensor<T>> named_params(LmModel<T>& lm) {
    std::vector<NamedTensor<T>> out;
    out.push_back({"embed.weight", lm.embed});
    auto stack = named_params(lm.stack);
    out.insert(out.end(), stack.begin(), stack.end());
    out.push_back({"output.weight", lm.out_proj});
    return out;
}

inline std::vector<int> to_embedding_ids(const std::vector<int>& tokens, int64_t v_text) {
    std::vector<int> ids(tokens.size());
    for (size_t i = 0; i < tokens.size(); ++i) {
        if (tokens[i] < 1 || tokens[i] > v_text) {
            throw InputError("lm: token " + std::to_string(tokens[i]) + " outside [1, " +
                             std::to_string(v_text) + "]");
        }
        ids[i] = tokens[i] - 1;
    }
    return ids;
}

template <typename T>
Tensor<T> lm_forward(const LmModel<T>& lm, const std::vector<int>& tokens, bool train, Rng& rng) {
    auto ids = to_embedding_ids(tokens, lm.v_text);
    auto h = embedding(lm.embed, ids);
    h = stack_forward(h, lm.stack, MaskMode::causal, train, rng);
    return matmul(h, lm.out_proj);
}

// exp(mean next-token NLL). Long inputs are scored in non-overlapping windows
// of `context` inputs, so every token after the first is predicted once.
template <typename T>
double perplexity(const LmModel<T>& lm, const std::vector<int>& tokens, int64_t context = 64) {
    if (tokens.size() < 2) throw InputError("perplexity: need at least 2 tokens");
    Rng rng(0);  // eval mode never consumes randomness
    double nll_sum = 0.0;
    int64_t count = 0;
    const int64_t n = static_cast<int64_t>(tokens.size());
    for (int64_t start = 0; start + 1 < n; start += context) {
        const int64_t len = std::min(context, n - 1 - start);
        std::vector<int> input(tokens.begin() + start, tokens.begin() + start + len);
        std::vector<int> target(tokens.begin() + start + 1, tokens.begin() + start + 1 + len);
        auto logits = lm_forward(lm, input, false, rng);
        auto ids = to_embedding_ids(target, lm.v_text);
        auto loss = nll_mean(log_softmax(logits), ids);
        nll_sum += static_cast<double>(loss.item()) * static_cast<double>(len);
        count += len;
    }
    return std::exp(nll_sum / static_cast<double>(count));
}

struct LmTrainConfig {
    BlockConfig block;
    int64_t v_text = 20;
    int64_t total_tokens = 2000000;
    int64_t batch = 32;
    int64_t context = 64;
    double lr = 3e-4;
    int64_t warmup_steps = 200;
    uint64_t seed = 1;
    int64_t eval_every = 200;  // steps between held-out perplexity probes
};

template <typename T>
struct LmTrainResult {
    LmModel<T> model;
    std::vector<double> loss_curve;  // per-step mean training loss
    std::vector<double> eval_ppl;    // held-out perplexity probes, in step order
};

template <typename T>
LmTrainResult<T> train_lm(const std::vector<int>& train_tokens, const std::vector<int>& held_out,
                          const LmTrainConfig& cfg) {
    if (train_tokens.size() < static_cast<size_t>(cfg.context + 1)) {
        throw InputError("train_lm: corpus shorter than one context window");
    }
    Rng root(cfg.seed);
    Rng init_rng = root.split(0);
    LmTrainResult<T> res;
    res.model = make_lm<T>(cfg.block, cfg.v_text, init_rng);

    auto named = named_params(res.model);
    std::vector<Tensor<T>> params;
    for (auto& np : named) params.push_back(np.tensor);
    auto state = adam_init(params, static_cast<T>(cfg.lr));

    const int64_t steps = std::max<int64_t>(1, cfg.total_tokens / (cfg.batch * cfg.context));
    const int64_t max_start = static_cast<int64_t>(train_tokens.size()) - cfg.context - 1;
    for (int64_t step = 0; step < steps; ++step) {
        Rng srng = root.split(1 + static_cast<uint64_t>(step));
        zero_grads(params);
        double loss_acc = 0.0;
        // Non-finite values can trip an op-level guard before the loss itself
        // reads NaN; either way the caller gets the diverging step index.
        try {
            for (int64_t b = 0; b < cfg.batch; ++b) {
                const int64_t start = static_cast<int64_t>(srng.next_below(max_start + 1));
                std::vector<int> input(train_tokens.begin() + start,
                                       train_tokens.begin() + start + cfg.context);
                std::vector<int> target(train_tokens.begin() + start + 1,
                                        train_tokens.begin() + start + 1 + cfg.context);
                auto logits = lm_forward(res.model, input, true, srng);
                auto ids = to_embedding_ids(target, cfg.v_text);
                auto loss = scale(nll_mean(log_softmax(logits), ids),
                                  static_cast<T>(1.0 / static_cast<double>(cfg.batch)));
                backward(loss);
                loss_acc += static_cast<double>(loss.item()) * cfg.batch;
            }
        } catch (const NumericError& e) {
            throw TrainingError(std::string("lm training diverged: ") + e.what(), step);
        }
        const double mean_loss = loss_acc / static_cast<double>(cfg.batch);
        if (std::isnan(mean_loss)) throw TrainingError("lm training loss is NaN", step);
        res.loss_curve.push_back(mean_loss);

        state.lr = static_cast<T>(cfg.lr * std::min<double>(1.0, static_cast<double>(step + 1) /
                                                                     static_cast<double>(cfg.warmup_steps)));
        adam_step(params, state);

        if (!held_out.empty() && cfg.eval_every > 0 &&
            ((step + 1) % cfg.eval_every == 0 || step + 1 == steps)) {
            res.eval_ppl.push_back(perplexity(res.model, held_out, cfg.context));
        }
    }
    return res;
}

inline nlohmann::json block_to_json(const BlockConfig& cfg) {
    return {{"d_model", cfg.d_model}, {"n_head", cfg.n_head},   {"d_ff", cfg.d_ff},
            {"n_layer", cfg.n_layer}, {"dropout", cfg.dropout}, {"rope_base", cfg.rope_base}};
}

inline BlockConfig block_from_json(const nlohmann::json& j) {
    BlockConfig cfg;
    cfg.d_model = j.at("d_model").get<int64_t>();
    cfg.n_head = j.at("n_head").get<int64_t>();
    cfg.d_ff = j.at("d_ff").get<int64_t>();
    cfg.n_layer = j.at("n_layer").get<int64_t>();
    cfg.dropout = j.at("dropout").get<double>();
    cfg.rope_base = j.at("rope_base").get<double>();
    return cfg;
}

template <typename T>
Checkpoint lm_to_checkpoint(LmModel<T>& lm, const LmTrainResult<T>* result = nullptr) {
    Checkpoint ckpt;
    ckpt.meta["kind"] = "lm";
    ckpt.meta["v_text"] = lm.v_text;
    ckpt.meta["block"] = block_to_json(lm.stack.cfg);
    if (result) {
        ckpt.meta["loss_curve"] = result->loss_curve;
        ckpt.meta["eval_ppl"] = result->eval_ppl;
    }
    for (auto& np : named_params(lm)) ckpt.add(np.name, to_record(np.tensor));
    return ckpt;
}

template <typename T>
LmModel<T> lm_from_checkpoint(const Checkpoint& ckpt) {
    if (!ckpt.meta.contains("kind") || ckpt.meta["kind"] != "lm") {
        throw CheckpointError("checkpoint: not a language model checkpoint");
    }
    const auto cfg = block_from_json(ckpt.meta.at("block"));
    Rng dummy(0);
    LmModel<T> lm = make_lm<T>(cfg, ckpt.meta.at("v_text").get<int64_t>(), dummy);
    std::string missing;
    for (auto& np : named_params(lm)) {
        const TensorRecord* rec = ckpt.find(np.name);
        if (!rec) {
            missing += missing.empty() ? np.name : ", " + np.name;
            continue;
        }
        install_record(*rec, np.tensor, np.name);
    }
    if (!missing.empty()) throw CheckpointError("checkpoint: missing tensors: " + missing);
    return lm;
}

}  // namespace pal
