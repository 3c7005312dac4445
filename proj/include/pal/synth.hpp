#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "pal/features.hpp"
#include "pal/rng.hpp"

// Synthetic speech-like task: symbols carry mel templates, label sequences
// follow a bigram chain, and utterances are noisy template renderings. The
// chain that orders labels is the same one the text generator samples, which
// is what makes a text-pretrained predictor transferable to recognition.

namespace pal {

struct SynthTaskSpec {
    int64_t v = 21;  // vocabulary incl. blank 0; symbols are 1..v-1
    int64_t d = 80;
    std::vector<double> transition;  // (v-1)x(v-1) row-stochastic, indexed by symbol-1
    std::vector<float> templates;    // (v-1) x d
    int64_t dur_lo = 8;
    int64_t dur_hi = 20;
    double noise = 4.0;
    std::vector<std::pair<int, int>> homophones;  // symbol pairs sharing a template

    int64_t n_symbols() const { return v - 1; }
    bool is_homophone(int tok) const {
        for (auto [a, b] : homophones) {
            if (tok == a || tok == b) return true;
        }
        return false;
    }
};

struct Utterance {
    std::vector<int> labels;
    FeatureSequence feats;
};

using Corpus = std::vector<Utterance>;

// Fixed-structure task: sharpened random bigram rows, unit-normal templates,
// two homophone pairs. The structure seed is pinned so every run of every
// tool sees the same task.
SynthTaskSpec default_task_spec(double noise = 4.0);

// Throws ConfigError unless rows are nonnegative and sum to 1 within 1e-9.
void validate_spec(const SynthTaskSpec& spec);

// Stationary distribution of the label chain (power iteration).
std::vector<double> stationary_distribution(const SynthTaskSpec& spec);

// Exact entropy rate of the chain in nats; exp of it is the perplexity floor
// any next-token predictor can reach.
double chain_entropy_rate(const SynthTaskSpec& spec);

// Markov-chain token stream, initial symbol from the stationary distribution.
std::vector<int> gen_bigram_text(const SynthTaskSpec& spec, int64_t n_tokens, uint64_t seed);

// Each label emits Uniform[dur_lo,dur_hi] frames of template + N(0, noise^2).
FeatureSequence synth_utterance(const SynthTaskSpec& spec, const std::vector<int>& labels, Rng& rng);

// n_utts utterances with label lengths Uniform[len_lo,len_hi], labels from the
// bigram chain. min_homophone_frac > 0 rejection-samples label sequences until
// at least that fraction of tokens belong to homophone pairs.
Corpus gen_corpus(const SynthTaskSpec& spec, int64_t n_utts, int64_t len_lo, int64_t len_hi,
                  uint64_t seed, double min_homophone_frac = 0.0);

// One file per split: magic, version, V, D, then per-utterance records.
void write_corpus(const std::string& path, const Corpus& corpus, int64_t v, int64_t d);
Corpus read_corpus(const std::string& path, int64_t* v_out = nullptr, int64_t* d_out = nullptr);

// Content fingerprint (FNV-1a over labels and frame bytes); stored in encoder
// checkpoints so assembly can detect a corpus/encoder mismatch.
uint64_t corpus_fingerprint(const Corpus& corpus);

}  // namespace pal
