#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "pal/checkpoint.hpp"
#include "pal/ctc.hpp"
#include "pal/encoder.hpp"
#include "pal/error.hpp"
#include "pal/metrics.hpp"
#include "pal/optim.hpp"
#include "pal/rng.hpp"
#include "pal/synth.hpp"

// Experiment orchestration: a study file declares encoder configurations and
// seeds; each (experiment, seed) pair trains one encoder with CTC and reports
// greedy CER on dev, test, and the homophone-heavy test split. Rows are a
// pure function of (config, seed, corpus files); wall time is informational.

namespace pal {

struct AsrTrainConfig {
    int64_t epochs = 15;
    int64_t batch = 16;
    double lr = 1e-3;
    int64_t warmup_steps = 100;
    uint64_t seed = 1;
};

struct AsrTrainLog {
    std::vector<double> loss_curve;     // per-step mean batch loss
    std::vector<double> dev_cer_curve;  // one entry per epoch
    int64_t skipped = 0;                // train utterances no alignment can fit
    int64_t best_epoch = -1;
};

// Greedy-decode CER over a whole split.
template <typename T>
double corpus_cer(const AssembledEncoder<T>& enc, const Corpus& split) {
    std::vector<std::vector<int>> refs, hyps;
    refs.reserve(split.size());
    hyps.reserve(split.size());
    Rng rng(0);  // eval mode draws nothing
    for (const auto& utt : split) {
        auto lp = encoder_forward(enc, utt.feats, false, rng);
        refs.push_back(utt.labels);
        hyps.push_back(greedy_decode(lp));
    }
    return cer(refs, hyps);
}

// CTC training over shuffled minibatches. The encoder is left holding the
// weights of its best dev-CER epoch, not the last one.
template <typename T>
AsrTrainLog train_asr(AssembledEncoder<T>& enc, const Corpus& train_set, const Corpus& dev_set,
                      const AsrTrainConfig& cfg) {
    if (cfg.batch < 1 || cfg.epochs < 1) throw ConfigError("train_asr: batch and epochs must be >= 1");
    std::vector<int64_t> feasible;
    for (size_t i = 0; i < train_set.size(); ++i) {
        if (encoder_out_len(enc, train_set[i].feats.t) >= required_min_length(train_set[i].labels)) {
            feasible.push_back(static_cast<int64_t>(i));
        }
    }
    AsrTrainLog log;
    log.skipped = static_cast<int64_t>(train_set.size()) - static_cast<int64_t>(feasible.size());
    if (feasible.empty()) throw InputError("train_asr: every training utterance is infeasible");

    auto named = named_params(enc);
    std::vector<Tensor<T>> trainable;
    for (auto& np : named) {
        if (np.tensor.requires_grad()) trainable.push_back(np.tensor);
    }
    if (trainable.empty()) throw ConfigError("train_asr: every parameter is frozen");
    auto state = adam_init(trainable, cfg.lr);

    Rng root(cfg.seed);
    double best_cer = std::numeric_limits<double>::infinity();
    std::vector<std::vector<T>> best_data;
    int64_t step = 0;
    for (int64_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::vector<int64_t> order = feasible;
        Rng erng = root.split(1 + static_cast<uint64_t>(epoch));
        for (size_t i = order.size(); i > 1; --i) {
            std::swap(order[i - 1], order[erng.next_below(i)]);
        }
        for (size_t b0 = 0; b0 < order.size(); b0 += cfg.batch) {
            const int64_t bsz =
                std::min<int64_t>(cfg.batch, static_cast<int64_t>(order.size() - b0));
            zero_grads(trainable);
            double acc = 0.0;
            Rng srng = root.split(1000000 + static_cast<uint64_t>(step));
            try {
                for (int64_t k = 0; k < bsz; ++k) {
                    const Utterance& utt = train_set[order[b0 + k]];
                    Rng irng = srng.split(static_cast<uint64_t>(k));
                    auto lp = encoder_forward(enc, features_to_tensor<T>(utt.feats), true, irng);
                    auto loss = scale(ctc_loss(lp, utt.labels),
                                      static_cast<T>(1.0 / static_cast<double>(bsz)));
                    backward(loss);
                    acc += static_cast<double>(loss.item()) * static_cast<double>(bsz);
                }
            } catch (const NumericError& e) {
                throw TrainingError(std::string("asr training diverged: ") + e.what(), step);
            }
            const double mean_loss = acc / static_cast<double>(bsz);
            if (std::isnan(mean_loss)) throw TrainingError("asr training loss is NaN", step);
            log.loss_curve.push_back(mean_loss);
            state.lr = cfg.lr * std::min<double>(1.0, static_cast<double>(step + 1) /
                                                          static_cast<double>(cfg.warmup_steps));
            adam_step(trainable, state);
            ++step;
        }
        const double dev = corpus_cer(enc, dev_set);
        log.dev_cer_curve.push_back(dev);
        if (dev < best_cer) {
            best_cer = dev;
            log.best_epoch = epoch;
            best_data.clear();
            for (auto& np : named) best_data.push_back(np.tensor.data());
        }
    }
    if (log.best_epoch >= 0) {
        for (size_t i = 0; i < named.size(); ++i) named[i].tensor.data() = best_data[i];
    }
    return log;
}

struct ExperimentEntry {
    std::string id;
    std::string form = "conv";           // conv | lfr_stack | lfr_baseline
    std::string stack_init = "random";  // none | random | transplant_small | transplant_large
    std::string freeze = "none";
    double dropout = 0.1;
    int64_t epochs = 15;
    int64_t batch = 16;
    double lr = 0.0;  // 0 = pick by freeze policy: frontend-only 1e-3, full 3e-4
    int64_t warmup_steps = 100;
    std::vector<uint64_t> seeds = {1, 2, 3};
};

struct StudySpec {
    std::string train_path, dev_path, test_path, homophone_path;
    std::string lm_small_path, lm_large_path, asr_path;
    BlockConfig stack_block;  // random-init dims; transplants carry their own
    BlockConfig asr_block;    // lfr_baseline dims; lfr_stack reads its checkpoint
    int64_t conv_channels = 256;
    int64_t stack_m = 7;
    int64_t stack_rate = 6;
    std::vector<ExperimentEntry> experiments;
};

inline BlockConfig default_stack_block() {
    BlockConfig cfg;
    cfg.d_model = 128;
    cfg.n_head = 4;
    cfg.d_ff = 352;
    cfg.n_layer = 4;
    cfg.dropout = 0.1;
    return cfg;
}

inline BlockConfig default_asr_block() {
    BlockConfig cfg = default_stack_block();
    cfg.n_layer = 3;
    return cfg;
}

namespace detail {

inline BlockConfig merge_block(BlockConfig base, const nlohmann::json& j) {
    if (j.contains("d_model")) base.d_model = j.at("d_model").get<int64_t>();
    if (j.contains("n_head")) base.n_head = j.at("n_head").get<int64_t>();
    if (j.contains("d_ff")) base.d_ff = j.at("d_ff").get<int64_t>();
    if (j.contains("n_layer")) base.n_layer = j.at("n_layer").get<int64_t>();
    if (j.contains("dropout")) base.dropout = j.at("dropout").get<double>();
    if (j.contains("rope_base")) base.rope_base = j.at("rope_base").get<double>();
    return base;
}

inline void validate_freeze_policy(const std::string& policy) {
    size_t pos = 0;
    while (pos <= policy.size()) {
        const size_t next = policy.find('+', pos);
        const std::string part =
            policy.substr(pos, next == std::string::npos ? next : next - pos);
        if (part != "none" && part != "freeze_stack" && part != "freeze_asr_encoder" &&
            part.rfind("custom:", 0) != 0) {
            throw ConfigError("study: unknown freeze policy " + part);
        }
        if (next == std::string::npos) break;
        pos = next + 1;
    }
}

}  // namespace detail

// Parses and validates a study file; file-existence checks live in
// validate_study so parsing stays usable in tests without artifacts on disk.
inline StudySpec parse_study(const nlohmann::json& j) {
    StudySpec spec;
    spec.stack_block = default_stack_block();
    spec.asr_block = default_asr_block();

    if (!j.contains("corpus")) throw ConfigError("study: missing corpus section");
    const auto& c = j.at("corpus");
    spec.train_path = c.at("train").get<std::string>();
    spec.dev_path = c.at("dev").get<std::string>();
    spec.test_path = c.at("test").get<std::string>();
    spec.homophone_path = c.at("homophone_test").get<std::string>();

    if (j.contains("checkpoints")) {
        const auto& k = j.at("checkpoints");
        spec.lm_small_path = k.value("lm_small", "");
        spec.lm_large_path = k.value("lm_large", "");
        spec.asr_path = k.value("asr", "");
    }
    if (j.contains("architecture")) {
        const auto& a = j.at("architecture");
        if (a.contains("stack_block")) {
            spec.stack_block = detail::merge_block(spec.stack_block, a.at("stack_block"));
        }
        if (a.contains("asr_block")) {
            spec.asr_block = detail::merge_block(spec.asr_block, a.at("asr_block"));
        }
        spec.conv_channels = a.value("conv_channels", spec.conv_channels);
        spec.stack_m = a.value("stack_m", spec.stack_m);
        spec.stack_rate = a.value("stack_rate", spec.stack_rate);
    }

    if (!j.contains("experiments") || !j.at("experiments").is_array() ||
        j.at("experiments").empty()) {
        throw ConfigError("study: needs a non-empty experiments array");
    }
    for (const auto& e : j.at("experiments")) {
        ExperimentEntry exp;
        exp.id = e.at("id").get<std::string>();
        exp.form = e.value("form", exp.form);
        exp.stack_init = e.value("stack_init", exp.stack_init);
        exp.freeze = e.value("freeze", exp.freeze);
        exp.dropout = e.value("dropout", exp.dropout);
        exp.epochs = e.value("epochs", exp.epochs);
        exp.batch = e.value("batch", exp.batch);
        exp.warmup_steps = e.value("warmup_steps", exp.warmup_steps);
        if (e.contains("lr")) {
            exp.lr = e.at("lr").get<double>();
        } else {
            exp.lr = exp.freeze.find("freeze_stack") != std::string::npos ? 1e-3 : 3e-4;
        }
        if (e.contains("seeds")) {
            exp.seeds.clear();
            for (const auto& s : e.at("seeds")) exp.seeds.push_back(s.get<uint64_t>());
        }
        if (exp.seeds.empty()) throw ConfigError("study: experiment " + exp.id + " has no seeds");
        if (exp.form != "conv" && exp.form != "lfr_stack" && exp.form != "lfr_baseline") {
            throw ConfigError("study: experiment " + exp.id + " has unknown form " + exp.form);
        }
        if (exp.stack_init != "none" && exp.stack_init != "random" &&
            exp.stack_init != "transplant_small" && exp.stack_init != "transplant_large") {
            throw ConfigError("study: experiment " + exp.id + " has unknown stack_init " +
                              exp.stack_init);
        }
        detail::validate_freeze_policy(exp.freeze);
        for (const auto& prev : spec.experiments) {
            if (prev.id == exp.id) throw ConfigError("study: duplicate experiment id " + exp.id);
        }
        spec.experiments.push_back(std::move(exp));
    }
    return spec;
}

inline StudySpec parse_study_file(const std::string& path) {
    std::ifstream in(path);
    if (!in.good()) throw IoError("study: cannot open " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("study: invalid JSON in " + path + ": " + e.what());
    }
    return parse_study(j);
}

// Everything a run needs must exist before any training starts.
inline void validate_study(const StudySpec& spec) {
    auto need_file = [](const std::string& path, const std::string& what) {
        if (path.empty()) throw ConfigError("study: " + what + " not configured");
        if (!std::filesystem::exists(path)) {
            throw ConfigError("study: " + what + " missing at " + path);
        }
    };
    need_file(spec.train_path, "train corpus");
    need_file(spec.dev_path, "dev corpus");
    need_file(spec.test_path, "test corpus");
    need_file(spec.homophone_path, "homophone test corpus");
    for (const auto& exp : spec.experiments) {
        if (exp.stack_init == "transplant_small") {
            need_file(spec.lm_small_path, "small LM checkpoint (experiment " + exp.id + ")");
        }
        if (exp.stack_init == "transplant_large") {
            need_file(spec.lm_large_path, "large LM checkpoint (experiment " + exp.id + ")");
        }
        if (exp.form == "lfr_stack") {
            need_file(spec.asr_path, "pretrained encoder checkpoint (experiment " + exp.id + ")");
        }
    }
}

struct StudyRow {
    std::string exp_id;
    uint64_t seed = 0;
    double dev_cer = 0.0, test_cer = 0.0, homophone_cer = 0.0;
    int64_t trainable_params = 0, total_params = 0, skipped = 0;
    double wall_s = 0.0;
};

struct StudyReport {
    std::vector<StudyRow> rows;
    std::vector<std::string> errors;
    bool complete = true;
};

inline double median(std::vector<double> v) {
    if (v.empty()) throw InputError("median of empty set");
    std::sort(v.begin(), v.end());
    const size_t n = v.size();
    return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

namespace detail {

inline std::string format_double(double v, int decimals) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.*f", decimals, v);
    return buf;
}

}  // namespace detail

inline std::string render_report_csv(const StudyReport& report) {
    std::string out = "exp_id,seed,split,cer,trainable_params,total_params,skipped,wall_s\n";
    for (const auto& r : report.rows) {
        const std::pair<const char*, double> splits[] = {
            {"dev", r.dev_cer}, {"test", r.test_cer}, {"homophone_test", r.homophone_cer}};
        for (const auto& [split, cer_value] : splits) {
            out += r.exp_id + "," + std::to_string(r.seed) + "," + split + "," +
                   detail::format_double(cer_value, 6) + "," + std::to_string(r.trainable_params) +
                   "," + std::to_string(r.total_params) + "," + std::to_string(r.skipped) + "," +
                   detail::format_double(r.wall_s, 3) + "\n";
        }
    }
    return out;
}

inline std::string render_report_md(const StudyReport& report, const StudySpec& spec) {
    std::string out = "# Study report\n\n";
    if (!report.complete) {
        out += "**INCOMPLETE**: some experiments failed.\n\n";
        for (const auto& e : report.errors) out += "- " + e + "\n";
        out += "\n";
    }
    out += "| Exp | Seed | Encoder | Stack init | Freeze | Trainable/Total | Dev CER | Test CER "
           "| Homophone CER |\n";
    out += "|---|---|---|---|---|---|---|---|---|\n";
    for (const auto& exp : spec.experiments) {
        std::vector<const StudyRow*> rows;
        for (const auto& r : report.rows) {
            if (r.exp_id == exp.id) rows.push_back(&r);
        }
        if (rows.empty()) continue;
        std::vector<double> dev, test, homo;
        for (const StudyRow* r : rows) {
            out += "| " + exp.id + " | " + std::to_string(r->seed) + " | " + exp.form + " | " +
                   exp.stack_init + " | " + exp.freeze + " | " +
                   std::to_string(r->trainable_params) + "/" + std::to_string(r->total_params) +
                   " | " + detail::format_double(r->dev_cer, 2) + " | " +
                   detail::format_double(r->test_cer, 2) + " | " +
                   detail::format_double(r->homophone_cer, 2) + " |\n";
            dev.push_back(r->dev_cer);
            test.push_back(r->test_cer);
            homo.push_back(r->homophone_cer);
        }
        out += "| " + exp.id + " | median | " + exp.form + " | " + exp.stack_init + " | " +
               exp.freeze + " | " + std::to_string(rows[0]->trainable_params) + "/" +
               std::to_string(rows[0]->total_params) + " | " +
               detail::format_double(median(dev), 2) + " | " +
               detail::format_double(median(test), 2) + " | " +
               detail::format_double(median(homo), 2) + " |\n";
    }
    return out;
}

// One (experiment, seed) training run. out_enc, when given, receives the
// trained encoder (callers that need more than the row, e.g. to reuse a
// baseline as a pretrained checkpoint).
template <typename T>
StudyRow run_experiment(const StudySpec& spec, const ExperimentEntry& exp, uint64_t seed,
                        const Corpus& train_set, const Corpus& dev_set, const Corpus& test_set,
                        const Corpus& homophone_set, int64_t v, int64_t d,
                        const Checkpoint* lm_small, const Checkpoint* lm_large,
                        const Checkpoint* asr, AssembledEncoder<T>* out_enc = nullptr) {
    const auto t0 = std::chrono::steady_clock::now();

    EncoderSpec es;
    es.form = exp.form;
    es.stack_cfg = spec.stack_block;
    es.asr_cfg = spec.asr_block;
    es.dropout = exp.dropout;
    es.d_feat = d;
    es.v = v;
    es.conv_channels = spec.conv_channels;
    es.stack_m = spec.stack_m;
    es.stack_rate = spec.stack_rate;
    es.seed = seed;
    const Checkpoint* lm = nullptr;
    if (exp.stack_init == "transplant_small") {
        es.stack_init = "transplant";
        lm = lm_small;
    } else if (exp.stack_init == "transplant_large") {
        es.stack_init = "transplant";
        lm = lm_large;
    } else {
        es.stack_init = exp.stack_init;
    }
    auto enc = build_encoder<T>(es, lm, asr);
    apply_freeze(enc, exp.freeze);

    AsrTrainConfig tc;
    tc.epochs = exp.epochs;
    tc.batch = exp.batch;
    tc.lr = exp.lr;
    tc.warmup_steps = exp.warmup_steps;
    tc.seed = seed;
    auto log = train_asr(enc, train_set, dev_set, tc);

    StudyRow row;
    row.exp_id = exp.id;
    row.seed = seed;
    row.dev_cer =
        log.best_epoch >= 0 ? log.dev_cer_curve[log.best_epoch] : log.dev_cer_curve.back();
    row.test_cer = corpus_cer(enc, test_set);
    row.homophone_cer = corpus_cer(enc, homophone_set);
    row.trainable_params = trainable_param_count(enc);
    row.total_params = total_param_count(enc);
    row.skipped = log.skipped;
    row.wall_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (out_enc) *out_enc = std::move(enc);
    return row;
}

template <typename T>
StudyReport run_study(const StudySpec& spec, const std::string& out_dir) {
    validate_study(spec);
    int64_t v = 0, d = 0;
    const Corpus train_set = read_corpus(spec.train_path, &v, &d);
    int64_t v2 = 0, d2 = 0;
    const Corpus dev_set = read_corpus(spec.dev_path, &v2, &d2);
    int64_t v3 = 0, d3 = 0;
    const Corpus test_set = read_corpus(spec.test_path, &v3, &d3);
    int64_t v4 = 0, d4 = 0;
    const Corpus homophone_set = read_corpus(spec.homophone_path, &v4, &d4);
    if (v2 != v || v3 != v || v4 != v || d2 != d || d3 != d || d4 != d) {
        throw ConfigError("study: corpus splits disagree on vocabulary or feature dims");
    }

    std::optional<Checkpoint> lm_small, lm_large, asr;
    for (const auto& exp : spec.experiments) {
        if (exp.stack_init == "transplant_small" && !lm_small) {
            lm_small = load_checkpoint(spec.lm_small_path);
        }
        if (exp.stack_init == "transplant_large" && !lm_large) {
            lm_large = load_checkpoint(spec.lm_large_path);
        }
        if (exp.form == "lfr_stack" && !asr) asr = load_checkpoint(spec.asr_path);
    }

    StudyReport report;
    for (const auto& exp : spec.experiments) {
        for (uint64_t seed : exp.seeds) {
            try {
                report.rows.push_back(run_experiment<T>(
                    spec, exp, seed, train_set, dev_set, test_set, homophone_set, v, d,
                    lm_small ? &*lm_small : nullptr, lm_large ? &*lm_large : nullptr,
                    asr ? &*asr : nullptr));
            } catch (const Error& e) {
                report.complete = false;
                report.errors.push_back(exp.id + " seed " + std::to_string(seed) + ": " +
                                        e.what());
            }
        }
    }

    if (!out_dir.empty()) {
        std::filesystem::create_directories(out_dir);
        std::ofstream csv(std::filesystem::path(out_dir) / "report.csv");
        csv << render_report_csv(report);
        std::ofstream md(std::filesystem::path(out_dir) / "report.md");
        md << render_report_md(report, spec);
    }
    return report;
}

}  // namespace pal
