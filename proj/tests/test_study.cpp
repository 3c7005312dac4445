#include <doctest.h>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "pal/checkpoint.hpp"
#include "pal/ctc.hpp"
#include "pal/encoder.hpp"
#include "pal/error.hpp"
#include "pal/lm.hpp"
#include "pal/study.hpp"
#include "pal/synth.hpp"

namespace {

namespace fs = std::filesystem;

std::string fresh_dir(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("pal_study_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p.string();
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in.good());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// 4 symbols with orthogonal templates, short durations: learnable in seconds.
pal::SynthTaskSpec tiny_task() {
    pal::SynthTaskSpec spec;
    spec.v = 5;
    spec.d = 4;
    spec.transition.assign(16, 0.25);
    spec.templates.assign(4 * 4, 0.0f);
    for (int64_t i = 0; i < 4; ++i) spec.templates[i * 4 + i] = 2.0f;
    spec.dur_lo = 6;
    spec.dur_hi = 8;
    spec.noise = 0.1;
    return spec;
}

pal::BlockConfig tiny_block() {
    pal::BlockConfig cfg;
    cfg.d_model = 16;
    cfg.n_head = 2;
    cfg.d_ff = 32;
    cfg.n_layer = 1;
    cfg.dropout = 0.0;
    return cfg;
}

struct Fixture {
    std::string dir;
    nlohmann::json study;
    pal::Corpus train, dev;
};

// Writes corpora and checkpoints a study file can reference.
Fixture make_fixture(const std::string& name) {
    Fixture f;
    f.dir = fresh_dir(name);
    const auto spec = tiny_task();
    f.train = pal::gen_corpus(spec, 32, 2, 3, 101);
    f.dev = pal::gen_corpus(spec, 8, 2, 3, 102);
    const auto test = pal::gen_corpus(spec, 8, 2, 3, 103);
    const auto homo = pal::gen_corpus(spec, 8, 2, 3, 104);
    pal::write_corpus(f.dir + "/train.palcorp", f.train, spec.v, spec.d);
    pal::write_corpus(f.dir + "/dev.palcorp", f.dev, spec.v, spec.d);
    pal::write_corpus(f.dir + "/test.palcorp", test, spec.v, spec.d);
    pal::write_corpus(f.dir + "/homo.palcorp", homo, spec.v, spec.d);

    pal::Rng lm_rng(900);
    auto lm = pal::make_lm<float>(tiny_block(), 4, lm_rng);
    pal::save_checkpoint(f.dir + "/lm.palckpt", pal::lm_to_checkpoint(lm));
    pal::Rng asr_rng(901);
    auto asr = pal::make_asr_encoder<float>(4, tiny_block(), 5, 7, 6, asr_rng);
    asr.corpus_fingerprint = "fp-tiny";
    pal::save_checkpoint(f.dir + "/asr.palckpt", pal::asr_to_checkpoint(asr));

    f.study = {
        {"corpus",
         {{"train", f.dir + "/train.palcorp"},
          {"dev", f.dir + "/dev.palcorp"},
          {"test", f.dir + "/test.palcorp"},
          {"homophone_test", f.dir + "/homo.palcorp"}}},
        {"checkpoints", {{"lm_small", f.dir + "/lm.palckpt"}, {"asr", f.dir + "/asr.palckpt"}}},
        {"architecture",
         {{"stack_block",
           {{"d_model", 16}, {"n_head", 2}, {"d_ff", 32}, {"n_layer", 1}}},
          {"asr_block", {{"d_model", 16}, {"n_head", 2}, {"d_ff", 32}, {"n_layer", 1}}},
          {"conv_channels", 8}}},
        {"experiments", nlohmann::json::array()},
    };
    return f;
}

nlohmann::json tiny_experiment(const std::string& id) {
    return {{"id", id},         {"form", "conv"},  {"stack_init", "random"},
            {"freeze", "none"}, {"dropout", 0.0}, {"epochs", 2},
            {"batch", 8},       {"lr", 3e-3},     {"warmup_steps", 4},
            {"seeds", {1, 2}}};
}

}  // namespace

TEST_CASE("median over seeds") {
    CHECK(pal::median({3.0}) == 3.0);
    CHECK(pal::median({5.0, 1.0, 3.0}) == 3.0);
    CHECK(pal::median({4.0, 1.0}) == 2.5);
    CHECK(pal::median({1.0, 2.0, 3.0, 10.0}) == 2.5);
    CHECK_THROWS_AS(pal::median({}), pal::InputError);
}

TEST_CASE("study parsing applies defaults and rejects malformed configs") {
    nlohmann::json base = {
        {"corpus",
         {{"train", "a"}, {"dev", "b"}, {"test", "c"}, {"homophone_test", "d"}}},
        {"experiments", {{{"id", "exp1"}}}},
    };

    SUBCASE("defaults") {
        auto spec = pal::parse_study(base);
        REQUIRE(spec.experiments.size() == 1);
        const auto& e = spec.experiments[0];
        CHECK(e.form == "conv");
        CHECK(e.stack_init == "random");
        CHECK(e.freeze == "none");
        CHECK(e.dropout == 0.1);
        CHECK(e.epochs == 15);
        CHECK(e.batch == 16);
        CHECK(e.warmup_steps == 100);
        CHECK(e.seeds == std::vector<uint64_t>{1, 2, 3});
        CHECK(spec.stack_block.d_model == 128);
        CHECK(spec.stack_block.n_layer == 4);
        CHECK(spec.asr_block.n_layer == 3);
        CHECK(spec.conv_channels == 256);
        CHECK(spec.stack_m == 7);
        CHECK(spec.stack_rate == 6);
    }
    SUBCASE("learning rate follows the freeze policy unless given") {
        CHECK(pal::parse_study(base).experiments[0].lr == 3e-4);
        base["experiments"][0]["freeze"] = "freeze_stack";
        CHECK(pal::parse_study(base).experiments[0].lr == 1e-3);
        base["experiments"][0]["lr"] = 7e-4;
        CHECK(pal::parse_study(base).experiments[0].lr == 7e-4);
    }
    SUBCASE("empty experiments") {
        base["experiments"] = nlohmann::json::array();
        CHECK_THROWS_AS(pal::parse_study(base), pal::ConfigError);
        base.erase("experiments");
        CHECK_THROWS_AS(pal::parse_study(base), pal::ConfigError);
    }
    SUBCASE("duplicate ids") {
        base["experiments"].push_back({{"id", "exp1"}});
        CHECK_THROWS_AS(pal::parse_study(base), pal::ConfigError);
    }
    SUBCASE("unknown tokens") {
        base["experiments"][0]["form"] = "eq7";
        CHECK_THROWS_AS(pal::parse_study(base), pal::ConfigError);
        base["experiments"][0]["form"] = "conv";
        base["experiments"][0]["stack_init"] = "transplant_tiny";
        CHECK_THROWS_AS(pal::parse_study(base), pal::ConfigError);
        base["experiments"][0]["stack_init"] = "random";
        base["experiments"][0]["freeze"] = "freeze_everything";
        CHECK_THROWS_AS(pal::parse_study(base), pal::ConfigError);
        base["experiments"][0]["freeze"] = "freeze_stack+thaw";
        CHECK_THROWS_AS(pal::parse_study(base), pal::ConfigError);
    }
    SUBCASE("composite and custom freeze policies parse") {
        base["experiments"][0]["freeze"] = "freeze_asr_encoder+freeze_stack";
        CHECK(pal::parse_study(base).experiments[0].freeze == "freeze_asr_encoder+freeze_stack");
        base["experiments"][0]["freeze"] = "custom:ctc.bias";
        CHECK_NOTHROW(pal::parse_study(base));
    }
    SUBCASE("empty seeds") {
        base["experiments"][0]["seeds"] = nlohmann::json::array();
        CHECK_THROWS_AS(pal::parse_study(base), pal::ConfigError);
    }
    SUBCASE("missing corpus section") {
        base.erase("corpus");
        CHECK_THROWS_AS(pal::parse_study(base), pal::ConfigError);
    }
}

TEST_CASE("study validation demands artifacts on disk") {
    auto f = make_fixture("validate");
    f.study["experiments"].push_back(tiny_experiment("exp1"));

    SUBCASE("fixture passes") { CHECK_NOTHROW(pal::validate_study(pal::parse_study(f.study))); }
    SUBCASE("missing corpus file") {
        f.study["corpus"]["train"] = f.dir + "/nope.palcorp";
        CHECK_THROWS_AS(pal::validate_study(pal::parse_study(f.study)), pal::ConfigError);
    }
    SUBCASE("transplant without its checkpoint") {
        f.study["experiments"][0]["stack_init"] = "transplant_large";
        CHECK_THROWS_AS(pal::validate_study(pal::parse_study(f.study)), pal::ConfigError);
        f.study["experiments"][0]["stack_init"] = "transplant_small";
        f.study["checkpoints"].erase("lm_small");
        CHECK_THROWS_AS(pal::validate_study(pal::parse_study(f.study)), pal::ConfigError);
    }
    SUBCASE("lfr_stack without the pretrained encoder") {
        f.study["experiments"][0]["form"] = "lfr_stack";
        f.study["experiments"][0]["stack_init"] = "transplant_small";
        f.study["checkpoints"].erase("asr");
        CHECK_THROWS_AS(pal::validate_study(pal::parse_study(f.study)), pal::ConfigError);
    }
    SUBCASE("parse_study_file round trip") {
        std::ofstream(f.dir + "/study.json") << f.study.dump(2);
        auto spec = pal::parse_study_file(f.dir + "/study.json");
        CHECK(spec.experiments[0].id == "exp1");
        CHECK_NOTHROW(pal::validate_study(spec));
        CHECK_THROWS_AS(pal::parse_study_file(f.dir + "/absent.json"), pal::IoError);
        std::ofstream(f.dir + "/broken.json") << "{not json";
        CHECK_THROWS_AS(pal::parse_study_file(f.dir + "/broken.json"), pal::ConfigError);
    }
}

TEST_CASE("asr training learns the tiny task and keeps the best dev weights") {
    auto f = make_fixture("train");
    pal::EncoderSpec es;
    es.form = "conv";
    es.stack_init = "random";
    es.stack_cfg = tiny_block();
    es.dropout = 0.0;
    es.d_feat = 4;
    es.v = 5;
    es.conv_channels = 8;
    es.seed = 1;
    auto enc = pal::build_encoder<float>(es);

    pal::AsrTrainConfig cfg;
    cfg.epochs = 8;
    cfg.batch = 8;
    cfg.lr = 1e-2;
    cfg.warmup_steps = 4;
    cfg.seed = 1;
    auto log = pal::train_asr(enc, f.train, f.dev, cfg);

    CHECK(log.skipped == 0);
    CHECK(log.dev_cer_curve.size() == 8);
    REQUIRE(log.loss_curve.size() == 32);  // 32 utts / batch 8 * 8 epochs
    double head = 0.0, tail = 0.0;
    for (int i = 0; i < 4; ++i) {
        head += log.loss_curve[i];
        tail += log.loss_curve[28 + i];
    }
    CHECK(tail < head);
    CHECK(log.dev_cer_curve.back() < 100.0);  // off the all-blank ceiling
    REQUIRE(log.best_epoch >= 0);
    REQUIRE(log.best_epoch < 8);
    double best = log.dev_cer_curve[0];
    for (double c : log.dev_cer_curve) best = std::min(best, c);
    CHECK(log.dev_cer_curve[log.best_epoch] == best);
    // restored weights reproduce the best epoch's dev score exactly
    CHECK(pal::corpus_cer(enc, f.dev) == best);
}

TEST_CASE("infeasible utterances are skipped, not trained on") {
    auto f = make_fixture("skip");
    pal::EncoderSpec es;
    es.form = "conv";
    es.stack_init = "none";
    es.stack_cfg = tiny_block();  // adapter width still comes from here
    es.dropout = 0.0;
    es.d_feat = 4;
    es.v = 5;
    es.conv_channels = 8;
    es.seed = 3;
    auto enc = pal::build_encoder<float>(es);

    pal::Corpus train = f.train;
    // 4 frames collapse to 1 under the conv frontend; 7 labels can never fit
    pal::Utterance bad;
    bad.labels = {1, 2, 3, 1, 2, 3, 1};
    bad.feats.t = 4;
    bad.feats.d = 4;
    bad.feats.frames.assign(16, 0.5f);
    train.push_back(bad);
    train.push_back(bad);

    int64_t expected = 0;
    for (const auto& utt : train) {
        if (pal::encoder_out_len(enc, utt.feats.t) < pal::required_min_length(utt.labels)) {
            ++expected;
        }
    }
    REQUIRE(expected == 2);

    pal::AsrTrainConfig cfg;
    cfg.epochs = 1;
    cfg.batch = 8;
    cfg.seed = 1;
    auto log = pal::train_asr(enc, train, f.dev, cfg);
    CHECK(log.skipped == 2);

    pal::Corpus hopeless(3, bad);
    CHECK_THROWS_AS(pal::train_asr(enc, hopeless, f.dev, cfg), pal::InputError);
}

TEST_CASE("training a fully frozen encoder is a configuration error") {
    auto f = make_fixture("frozen");
    pal::EncoderSpec es;
    es.form = "lfr_baseline";
    es.asr_cfg = tiny_block();
    es.dropout = 0.0;
    es.d_feat = 4;
    es.v = 5;
    es.seed = 2;
    auto enc = pal::build_encoder<float>(es);
    pal::apply_freeze(enc, "freeze_asr_encoder");
    pal::AsrTrainConfig cfg;
    cfg.epochs = 1;
    cfg.batch = 8;
    CHECK_THROWS_AS(pal::train_asr(enc, f.train, f.dev, cfg), pal::ConfigError);
}

TEST_CASE("study runs produce one row per (experiment, seed) plus a median line") {
    auto f = make_fixture("shape");
    auto e1 = tiny_experiment("conv_scratch");
    auto e2 = tiny_experiment("conv_lm_frozen");
    e2["stack_init"] = "transplant_small";
    e2["freeze"] = "freeze_stack";
    e2["seeds"] = {1};
    f.study["experiments"] = {e1, e2};

    auto spec = pal::parse_study(f.study);
    auto report = pal::run_study<float>(spec, f.dir + "/out");

    CHECK(report.complete);
    CHECK(report.errors.empty());
    REQUIRE(report.rows.size() == 3);
    CHECK(report.rows[0].exp_id == "conv_scratch");
    CHECK(report.rows[0].seed == 1);
    CHECK(report.rows[1].seed == 2);
    CHECK(report.rows[2].exp_id == "conv_lm_frozen");
    for (const auto& row : report.rows) {
        CHECK(row.skipped == 0);
        CHECK(row.total_params > 0);
        CHECK(row.trainable_params > 0);
        CHECK(row.wall_s > 0.0);
        CHECK(std::isfinite(row.dev_cer));
        CHECK(std::isfinite(row.test_cer));
        CHECK(std::isfinite(row.homophone_cer));
    }
    // frozen transplant trains fewer parameters than its own total
    CHECK(report.rows[2].trainable_params < report.rows[2].total_params);
    CHECK(report.rows[0].trainable_params == report.rows[0].total_params);

    const std::string csv = slurp(f.dir + "/out/report.csv");
    CHECK(csv.rfind("exp_id,seed,split,cer,trainable_params,total_params,skipped,wall_s\n", 0) ==
          0);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 1 + 3 * 3);
    CHECK(csv.find("conv_scratch,1,dev,") != std::string::npos);
    CHECK(csv.find("conv_scratch,2,homophone_test,") != std::string::npos);
    CHECK(csv.find("conv_lm_frozen,1,test,") != std::string::npos);

    const std::string md = slurp(f.dir + "/out/report.md");
    CHECK(md.find("INCOMPLETE") == std::string::npos);
    CHECK(md.find("| conv_scratch | 1 |") != std::string::npos);
    CHECK(md.find("| conv_scratch | 2 |") != std::string::npos);
    CHECK(md.find("| conv_scratch | median |") != std::string::npos);
    CHECK(md.find("| conv_lm_frozen | median |") != std::string::npos);

    // median line carries the median dev CER of the two seeds
    const double want =
        pal::median({report.rows[0].dev_cer, report.rows[1].dev_cer});
    char cell[32];
    std::snprintf(cell, sizeof(cell), "%.2f", want);
    const size_t med_pos = md.find("| conv_scratch | median |");
    REQUIRE(med_pos != std::string::npos);
    CHECK(md.find(cell, med_pos) != std::string::npos);
}

TEST_CASE("study rows are a pure function of config, seed, and corpus") {
    auto f = make_fixture("pure");
    auto e = tiny_experiment("repeat");
    e["epochs"] = 8;  // enough budget that seeds land at distinct scores
    e["lr"] = 1e-2;
    e["seeds"] = {7};
    f.study["experiments"] = {e};
    auto spec = pal::parse_study(f.study);

    auto r1 = pal::run_study<float>(spec, f.dir + "/out1");
    auto r2 = pal::run_study<float>(spec, f.dir + "/out2");
    REQUIRE(r1.rows.size() == 1);
    REQUIRE(r2.rows.size() == 1);
    CHECK(r1.rows[0].dev_cer == r2.rows[0].dev_cer);
    CHECK(r1.rows[0].test_cer == r2.rows[0].test_cer);
    CHECK(r1.rows[0].homophone_cer == r2.rows[0].homophone_cer);
    CHECK(r1.rows[0].trainable_params == r2.rows[0].trainable_params);
    CHECK(r1.rows[0].skipped == r2.rows[0].skipped);

    // byte-identical reports once the wall-time column is dropped
    auto strip_wall = [](const std::string& csv) {
        std::string out;
        std::istringstream in(csv);
        std::string line;
        while (std::getline(in, line)) {
            out += line.substr(0, line.rfind(',')) + "\n";
        }
        return out;
    };
    CHECK(strip_wall(slurp(f.dir + "/out1/report.csv")) ==
          strip_wall(slurp(f.dir + "/out2/report.csv")));

    // a different seed trains a different encoder
    auto e9 = e;
    e9["seeds"] = {9};
    f.study["experiments"] = {e9};
    auto r3 = pal::run_study<float>(pal::parse_study(f.study), "");
    REQUIRE(r3.rows.size() == 1);
    CHECK(r3.rows[0].dev_cer != doctest::Approx(r1.rows[0].dev_cer).epsilon(1e-12));
}

TEST_CASE("one failing experiment does not take down the study") {
    auto f = make_fixture("isolate");
    auto good = tiny_experiment("good");
    good["seeds"] = {1};
    auto broken = tiny_experiment("broken");
    broken["stack_init"] = "transplant_small";
    broken["seeds"] = {1};
    f.study["experiments"] = {good, broken};
    // the "small LM" slot points at an encoder checkpoint: transplant must fail
    f.study["checkpoints"]["lm_small"] = f.dir + "/asr.palckpt";

    auto spec = pal::parse_study(f.study);
    auto report = pal::run_study<float>(spec, f.dir + "/out");
    CHECK_FALSE(report.complete);
    REQUIRE(report.rows.size() == 1);
    CHECK(report.rows[0].exp_id == "good");
    REQUIRE(report.errors.size() == 1);
    CHECK(report.errors[0].find("broken") != std::string::npos);
    CHECK(report.errors[0].find("seed 1") != std::string::npos);

    const std::string md = slurp(f.dir + "/out/report.md");
    CHECK(md.find("INCOMPLETE") != std::string::npos);
    CHECK(md.find("| good | median |") != std::string::npos);
}

TEST_CASE("mismatched corpus splits are rejected") {
    auto f = make_fixture("mismatch");
    const auto other = tiny_task();
    pal::SynthTaskSpec wide = other;
    wide.d = 6;
    wide.templates.assign(4 * 6, 0.5f);
    auto dev = pal::gen_corpus(wide, 4, 2, 2, 70);
    pal::write_corpus(f.dir + "/dev.palcorp", dev, wide.v, wide.d);
    f.study["experiments"].push_back(tiny_experiment("exp1"));
    auto spec = pal::parse_study(f.study);
    CHECK_THROWS_AS(pal::run_study<float>(spec, ""), pal::ConfigError);
}
