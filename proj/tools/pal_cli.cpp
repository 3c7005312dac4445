// Command-line front door: data generation, LM pretraining, encoder training,
// evaluation, study orchestration, and checkpoint inspection. Exit codes:
// 0 success, 1 failure (with an "error: ..." line on stderr), 2 usage.
#include <CLI11.hpp>

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "pal/checkpoint.hpp"
#include "pal/encoder.hpp"
#include "pal/error.hpp"
#include "pal/lm.hpp"
#include "pal/study.hpp"
#include "pal/synth.hpp"

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

int fail(const std::string& msg) {
    std::fprintf(stderr, "error: %s\n", msg.c_str());
    return 1;
}

json load_json(const std::string& path) {
    std::ifstream in(path);
    if (!in.good()) throw pal::IoError("cannot open " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw pal::ConfigError("invalid JSON in " + path + ": " + e.what());
    }
    return j;
}

std::string fingerprint_hex(uint64_t fp) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(fp));
    return buf;
}

void write_text_json(const std::string& path, int64_t v_text, const std::vector<int>& tokens) {
    json j = {{"v_text", v_text}, {"tokens", tokens}};
    std::ofstream out(path);
    if (!out.good()) throw pal::IoError("cannot write " + path);
    out << j.dump();
}

std::vector<int> read_text_json(const std::string& path, int64_t expect_v) {
    const json j = load_json(path);
    if (j.at("v_text").get<int64_t>() != expect_v) {
        throw pal::ConfigError(path + " has v_text " + j.at("v_text").dump() + ", expected " +
                               std::to_string(expect_v));
    }
    return j.at("tokens").get<std::vector<int>>();
}

// Synthesizes the corpus splits plus LM pretraining text under one roof so a
// single seed pins the whole data story.
int cmd_gen_data(const std::string& config_path, const std::string& out_dir,
                 std::optional<uint64_t> seed_override) {
    json cfg = config_path.empty() ? json::object() : load_json(config_path);
    const double noise = cfg.value("noise", 4.0);
    pal::SynthTaskSpec spec = pal::default_task_spec(noise);
    const uint64_t base = seed_override.value_or(cfg.value("corpus_seed", uint64_t{1}));
    const int64_t len_lo = cfg.value("len_lo", int64_t{3});
    const int64_t len_hi = cfg.value("len_hi", int64_t{10});
    const double homo_frac = cfg.value("min_homophone_frac", 0.4);
    json split_cfg = cfg.value("splits", json::object());
    const int64_t n_train = split_cfg.value("train", int64_t{4000});
    const int64_t n_dev = split_cfg.value("dev", int64_t{200});
    const int64_t n_test = split_cfg.value("test", int64_t{400});
    const int64_t n_homo = split_cfg.value("homophone_test", int64_t{400});

    fs::create_directories(out_dir);
    const auto emit = [&](const std::string& name, int64_t n, uint64_t seed, double frac) {
        const auto corpus = pal::gen_corpus(spec, n, len_lo, len_hi, seed, frac);
        const std::string path = out_dir + "/" + name + ".palcorp";
        pal::write_corpus(path, corpus, spec.v, spec.d);
        std::printf("wrote %s: %lld utterances, fingerprint %s\n", path.c_str(),
                    static_cast<long long>(n),
                    fingerprint_hex(pal::corpus_fingerprint(corpus)).c_str());
    };
    emit("train", n_train, base, 0.0);
    emit("dev", n_dev, base + 1, 0.0);
    emit("test", n_test, base + 2, 0.0);
    emit("homophone_test", n_homo, base + 3, homo_frac);

    const int64_t lm_tokens = cfg.value("lm_tokens", int64_t{2000000});
    const int64_t lm_held = cfg.value("lm_held_tokens", int64_t{20000});
    const int64_t v_text = spec.v - 1;
    write_text_json(out_dir + "/lm_train.json", v_text,
                    pal::gen_bigram_text(spec, lm_tokens, base + 10));
    write_text_json(out_dir + "/lm_held.json", v_text,
                    pal::gen_bigram_text(spec, lm_held, base + 11));
    std::printf("wrote %s/lm_train.json (%lld tokens) and %s/lm_held.json (%lld tokens)\n",
                out_dir.c_str(), static_cast<long long>(lm_tokens), out_dir.c_str(),
                static_cast<long long>(lm_held));
    std::printf("chain entropy-rate perplexity floor %.6f\n",
                std::exp(pal::chain_entropy_rate(spec)));
    return 0;
}

template <typename T>
int cmd_train_lm(const std::string& config_path, const std::string& out_dir,
                 std::optional<uint64_t> seed_override) {
    const json cfg = load_json(config_path);
    pal::LmTrainConfig tc;
    tc.block = pal::default_stack_block();
    if (cfg.contains("block")) tc.block = pal::detail::merge_block(tc.block, cfg.at("block"));
    tc.v_text = cfg.value("v_text", tc.v_text);
    tc.total_tokens = cfg.value("total_tokens", tc.total_tokens);
    tc.batch = cfg.value("batch", tc.batch);
    tc.context = cfg.value("context", tc.context);
    tc.lr = cfg.value("lr", tc.lr);
    tc.warmup_steps = cfg.value("warmup_steps", tc.warmup_steps);
    tc.eval_every = cfg.value("eval_every", tc.eval_every);
    tc.seed = seed_override.value_or(cfg.value("seed", tc.seed));

    const auto train_tokens = read_text_json(cfg.at("train_text").get<std::string>(), tc.v_text);
    const auto held_tokens = read_text_json(cfg.at("held_text").get<std::string>(), tc.v_text);

    auto result = pal::train_lm<T>(train_tokens, held_tokens, tc);
    const double final_ppl = pal::perplexity(result.model, held_tokens, tc.context);

    fs::create_directories(out_dir);
    const std::string path = out_dir + "/lm_seed" + std::to_string(tc.seed) + ".palckpt";
    pal::save_checkpoint(path, pal::lm_to_checkpoint(result.model, &result));
    std::printf("steps %zu\n", result.loss_curve.size());
    std::printf("final_loss %.6f\n", result.loss_curve.back());
    std::printf("held_out_ppl %.6f\n", final_ppl);
    std::printf("wrote %s\n", path.c_str());
    return 0;
}

template <typename T>
int cmd_train_asr(const std::string& config_path, const std::string& out_dir,
                  const std::string& exp_id, std::optional<uint64_t> seed_override) {
    const pal::StudySpec spec = pal::parse_study_file(config_path);
    const pal::ExperimentEntry* exp = nullptr;
    if (exp_id.empty()) {
        exp = &spec.experiments.front();
    } else {
        for (const auto& e : spec.experiments) {
            if (e.id == exp_id) exp = &e;
        }
        if (!exp) throw pal::ConfigError("no experiment named " + exp_id + " in " + config_path);
    }
    // other experiments' artifacts are not this run's business
    pal::StudySpec scoped = spec;
    scoped.experiments = {*exp};
    pal::validate_study(scoped);
    const uint64_t seed = seed_override.value_or(exp->seeds.front());

    int64_t v = 0, d = 0;
    const pal::Corpus train_set = pal::read_corpus(spec.train_path, &v, &d);
    const pal::Corpus dev_set = pal::read_corpus(spec.dev_path);
    const pal::Corpus test_set = pal::read_corpus(spec.test_path);
    const pal::Corpus homo_set = pal::read_corpus(spec.homophone_path);

    std::optional<pal::Checkpoint> lm_small, lm_large, asr;
    if (exp->stack_init == "transplant_small") lm_small = pal::load_checkpoint(spec.lm_small_path);
    if (exp->stack_init == "transplant_large") lm_large = pal::load_checkpoint(spec.lm_large_path);
    if (exp->form == "lfr_stack") asr = pal::load_checkpoint(spec.asr_path);

    pal::EncoderSpec es;
    es.form = exp->form;
    es.stack_cfg = spec.stack_block;
    es.asr_cfg = spec.asr_block;
    es.dropout = exp->dropout;
    es.d_feat = d;
    es.v = v;
    es.conv_channels = spec.conv_channels;
    es.stack_m = spec.stack_m;
    es.stack_rate = spec.stack_rate;
    es.seed = seed;
    const pal::Checkpoint* lm = nullptr;
    if (exp->stack_init == "transplant_small") {
        es.stack_init = "transplant";
        lm = &*lm_small;
    } else if (exp->stack_init == "transplant_large") {
        es.stack_init = "transplant";
        lm = &*lm_large;
    } else {
        es.stack_init = exp->stack_init;
    }
    auto enc = pal::build_encoder<T>(es, lm, asr ? &*asr : nullptr);
    pal::apply_freeze(enc, exp->freeze);

    pal::AsrTrainConfig tc;
    tc.epochs = exp->epochs;
    tc.batch = exp->batch;
    tc.lr = exp->lr;
    tc.warmup_steps = exp->warmup_steps;
    tc.seed = seed;
    const auto log = pal::train_asr(enc, train_set, dev_set, tc);

    std::printf("exp %s seed %llu\n", exp->id.c_str(), static_cast<unsigned long long>(seed));
    std::printf("skipped %lld\n", static_cast<long long>(log.skipped));
    std::printf("best_epoch %lld\n", static_cast<long long>(log.best_epoch));
    std::printf("dev_cer %.6f\n", pal::corpus_cer(enc, dev_set));
    std::printf("test_cer %.6f\n", pal::corpus_cer(enc, test_set));
    std::printf("homophone_cer %.6f\n", pal::corpus_cer(enc, homo_set));
    std::printf("trainable_params %lld\n", static_cast<long long>(pal::trainable_param_count(enc)));
    std::printf("total_params %lld\n", static_cast<long long>(pal::total_param_count(enc)));

    fs::create_directories(out_dir);
    const std::string path =
        out_dir + "/encoder_" + exp->id + "_seed" + std::to_string(seed) + ".palckpt";
    pal::save_checkpoint(path, pal::encoder_to_checkpoint(enc));
    std::printf("wrote %s\n", path.c_str());
    if (enc.form == "lfr_baseline") {
        // the trained frame-stacking encoder doubles as the pretrained
        // checkpoint that lfr_stack configurations consume
        enc.asr->corpus_fingerprint = fingerprint_hex(pal::corpus_fingerprint(train_set));
        const std::string asr_path =
            out_dir + "/asr_pretrained_seed" + std::to_string(seed) + ".palckpt";
        pal::save_checkpoint(asr_path, pal::asr_to_checkpoint(*enc.asr));
        std::printf("wrote %s\n", asr_path.c_str());
    }
    return 0;
}

template <typename T>
int cmd_eval(const std::string& ckpt_path, const std::string& corpus_path) {
    const auto ckpt = pal::load_checkpoint(ckpt_path);
    auto enc = pal::encoder_from_checkpoint<T>(ckpt);
    int64_t v = 0, d = 0;
    const pal::Corpus corpus = pal::read_corpus(corpus_path, &v, &d);
    if (enc.v != v) {
        throw pal::ConfigError("vocabulary mismatch: encoder has V=" + std::to_string(enc.v) +
                               ", corpus has V=" + std::to_string(v));
    }
    if (enc.d_feat != d) {
        throw pal::ConfigError("feature mismatch: encoder expects D=" +
                               std::to_string(enc.d_feat) + ", corpus has D=" +
                               std::to_string(d));
    }
    std::printf("utterances %zu\n", corpus.size());
    std::printf("cer %.6f\n", pal::corpus_cer(enc, corpus));
    return 0;
}

template <typename T>
int cmd_run_study(const std::string& config_path, const std::string& out_dir, bool dry_run) {
    const pal::StudySpec spec = pal::parse_study_file(config_path);
    pal::validate_study(spec);
    size_t runs = 0;
    for (const auto& e : spec.experiments) runs += e.seeds.size();
    if (dry_run) {
        std::printf("study ok: %zu experiments, %zu runs\n", spec.experiments.size(), runs);
        return 0;
    }
    const auto report = pal::run_study<T>(spec, out_dir);
    for (const auto& row : report.rows) {
        std::printf("%s seed %llu: dev %.2f test %.2f homophone %.2f (%lld/%lld params, "
                    "%lld skipped, %.1fs)\n",
                    row.exp_id.c_str(), static_cast<unsigned long long>(row.seed), row.dev_cer,
                    row.test_cer, row.homophone_cer,
                    static_cast<long long>(row.trainable_params),
                    static_cast<long long>(row.total_params),
                    static_cast<long long>(row.skipped), row.wall_s);
    }
    for (const auto& err : report.errors) std::fprintf(stderr, "error: %s\n", err.c_str());
    std::printf("report written to %s/report.csv and %s/report.md\n", out_dir.c_str(),
                out_dir.c_str());
    return report.complete ? 0 : 1;
}

int cmd_inspect(const std::string& path) {
    const auto ckpt = pal::load_checkpoint(path);
    std::printf("meta %s\n", ckpt.meta.dump().c_str());
    for (const auto& [name, rec] : ckpt.tensors) {
        std::string shape = "[";
        for (size_t i = 0; i < rec.shape.size(); ++i) {
            shape += (i ? "," : "") + std::to_string(rec.shape[i]);
        }
        shape += "]";
        std::printf("%s %s\n", name.c_str(), shape.c_str());
    }
    std::printf("tensors %zu\n", ckpt.tensors.size());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"pal: small-scale speech recognition experiments"};
    app.require_subcommand(1);

    std::string config, out = ".", precision = "f32", ckpt, corpus, exp_id;
    uint64_t seed = 0;
    bool dry_run = false;
    bool seed_given = false;

    auto add_common = [&](CLI::App* cmd, bool needs_config) {
        auto* opt = cmd->add_option("--config", config, "JSON configuration file");
        if (needs_config) opt->required();
        cmd->add_option("--out", out, "output directory");
        cmd->add_option("--seed", seed, "seed override")->each([&](const std::string&) {
            seed_given = true;
        });
        cmd->add_option("--precision", precision, "numeric width")
            ->check(CLI::IsMember({"f32", "f64"}));
    };

    auto* gen = app.add_subcommand("gen-data", "synthesize corpus splits and LM text");
    add_common(gen, false);
    auto* tlm = app.add_subcommand("train-lm", "pretrain a language model");
    add_common(tlm, true);
    auto* tasr = app.add_subcommand("train-asr", "train one encoder configuration");
    add_common(tasr, true);
    tasr->add_option("--experiment", exp_id, "experiment id from the study file");
    auto* ev = app.add_subcommand("eval", "score an encoder checkpoint on a corpus");
    ev->add_option("--ckpt", ckpt, "encoder checkpoint")->required();
    ev->add_option("--corpus", corpus, "corpus file")->required();
    ev->add_option("--precision", precision, "numeric width")
        ->check(CLI::IsMember({"f32", "f64"}));
    auto* study = app.add_subcommand("run-study", "run every experiment in a study file");
    add_common(study, true);
    study->add_flag("--dry-run", dry_run, "validate the study without training");
    auto* inspect = app.add_subcommand("inspect-ckpt", "list checkpoint contents");
    inspect->add_option("path", ckpt, "checkpoint file")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 2;
    }

    const std::optional<uint64_t> seed_opt =
        seed_given ? std::optional<uint64_t>(seed) : std::nullopt;
    const bool f64 = precision == "f64";
    try {
        if (gen->parsed()) return cmd_gen_data(config, out, seed_opt);
        if (tlm->parsed()) {
            return f64 ? cmd_train_lm<double>(config, out, seed_opt)
                       : cmd_train_lm<float>(config, out, seed_opt);
        }
        if (tasr->parsed()) {
            return f64 ? cmd_train_asr<double>(config, out, exp_id, seed_opt)
                       : cmd_train_asr<float>(config, out, exp_id, seed_opt);
        }
        if (ev->parsed()) {
            return f64 ? cmd_eval<double>(ckpt, corpus) : cmd_eval<float>(ckpt, corpus);
        }
        if (study->parsed()) {
            return f64 ? cmd_run_study<double>(config, out, dry_run)
                       : cmd_run_study<float>(config, out, dry_run);
        }
        if (inspect->parsed()) return cmd_inspect(ckpt);
    } catch (const pal::Error& e) {
        return fail(e.what());
    } catch (const std::exception& e) {
        return fail(e.what());
    }
    return 2;
}
