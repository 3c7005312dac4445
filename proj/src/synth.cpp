#include "pal/synth.hpp"

#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>

#include "pal/error.hpp"

namespace pal {

namespace {

constexpr uint64_t kTaskStructureSeed = 7001;  // pinned: task identity, not a knob
constexpr double kRowTemperature = 0.3;

int sample_categorical(const double* probs, int64_t n, Rng& rng) {
    const double u = rng.next_double();
    double acc = 0.0;
    for (int64_t i = 0; i < n; ++i) {
        acc += probs[i];
        if (u < acc) return static_cast<int>(i);
    }
    return static_cast<int>(n - 1);
}

}  // namespace

SynthTaskSpec default_task_spec(double noise) {
    SynthTaskSpec spec;
    spec.noise = noise;
    const int64_t s = spec.n_symbols();
    Rng root(kTaskStructureSeed);

    // Sharpened softmax rows of unit normals: skewed but full-support.
    Rng trng = root.split(1);
    spec.transition.resize(s * s);
    for (int64_t i = 0; i < s; ++i) {
        double mx = -1e300;
        std::vector<double> z(s);
        for (int64_t j = 0; j < s; ++j) {
            z[j] = trng.next_normal() / kRowTemperature;
            mx = std::max(mx, z[j]);
        }
        double sum = 0.0;
        for (int64_t j = 0; j < s; ++j) {
            z[j] = std::exp(z[j] - mx);
            sum += z[j];
        }
        for (int64_t j = 0; j < s; ++j) spec.transition[i * s + j] = z[j] / sum;
    }

    Rng mrng = root.split(2);
    spec.templates.resize(s * spec.d);
    for (auto& x : spec.templates) x = static_cast<float>(mrng.next_normal());

    // Two disjoint pairs acoustically identical; only context separates them.
    spec.homophones = {{17, 18}, {19, 20}};
    for (auto [a, b] : spec.homophones) {
        std::memcpy(spec.templates.data() + (b - 1) * spec.d,
                    spec.templates.data() + (a - 1) * spec.d, spec.d * sizeof(float));
    }
    return spec;
}

void validate_spec(const SynthTaskSpec& spec) {
    const int64_t s = spec.n_symbols();
    if (s < 1 || spec.d < 1) throw ConfigError("task spec: empty vocabulary or feature dim");
    if (static_cast<int64_t>(spec.transition.size()) != s * s) {
        throw ConfigError("task spec: transition matrix must be " + std::to_string(s) + "x" +
                          std::to_string(s));
    }
    for (int64_t i = 0; i < s; ++i) {
        double sum = 0.0;
        for (int64_t j = 0; j < s; ++j) {
            const double p = spec.transition[i * s + j];
            if (p < 0.0) throw ConfigError("task spec: negative transition probability");
            sum += p;
        }
        if (std::fabs(sum - 1.0) > 1e-9) {
            throw ConfigError("task spec: transition row " + std::to_string(i) + " sums to " +
                              std::to_string(sum));
        }
    }
    if (static_cast<int64_t>(spec.templates.size()) != s * spec.d) {
        throw ConfigError("task spec: template matrix size mismatch");
    }
    if (spec.dur_lo < 1 || spec.dur_hi < spec.dur_lo) throw ConfigError("task spec: bad duration range");
    for (size_t i = 0; i < spec.homophones.size(); ++i) {
        auto [a, b] = spec.homophones[i];
        if (a < 1 || a >= spec.v || b < 1 || b >= spec.v || a == b) {
            throw ConfigError("task spec: homophone pair out of range");
        }
        for (size_t j = i + 1; j < spec.homophones.size(); ++j) {
            auto [c, d2] = spec.homophones[j];
            if (a == c || a == d2 || b == c || b == d2) {
                throw ConfigError("task spec: homophone pairs overlap");
            }
        }
    }
}

std::vector<double> stationary_distribution(const SynthTaskSpec& spec) {
    validate_spec(spec);
    const int64_t s = spec.n_symbols();
    std::vector<double> pi(s, 1.0 / static_cast<double>(s)), next(s);
    for (int iter = 0; iter < 2000; ++iter) {
        for (int64_t j = 0; j < s; ++j) {
            double acc = 0.0;
            for (int64_t i = 0; i < s; ++i) acc += pi[i] * spec.transition[i * s + j];
            next[j] = acc;
        }
        double delta = 0.0;
        for (int64_t j = 0; j < s; ++j) {
            delta += std::fabs(next[j] - pi[j]);
            pi[j] = next[j];
        }
        if (delta < 1e-14) break;
    }
    return pi;
}

double chain_entropy_rate(const SynthTaskSpec& spec) {
    const auto pi = stationary_distribution(spec);
    const int64_t s = spec.n_symbols();
    double h = 0.0;
    for (int64_t i = 0; i < s; ++i) {
        for (int64_t j = 0; j < s; ++j) {
            const double p = spec.transition[i * s + j];
            if (p > 0.0) h -= pi[i] * p * std::log(p);
        }
    }
    return h;
}

std::vector<int> gen_bigram_text(const SynthTaskSpec& spec, int64_t n_tokens, uint64_t seed) {
    validate_spec(spec);
    if (n_tokens < 1) throw ConfigError("gen_bigram_text: n_tokens must be >= 1");
    const int64_t s = spec.n_symbols();
    const auto pi = stationary_distribution(spec);
    Rng rng(seed);

    std::vector<int> out;
    out.reserve(n_tokens);
    int cur = sample_categorical(pi.data(), s, rng);
    out.push_back(cur + 1);
    for (int64_t i = 1; i < n_tokens; ++i) {
        cur = sample_categorical(spec.transition.data() + cur * s, s, rng);
        out.push_back(cur + 1);
    }
    return out;
}

FeatureSequence synth_utterance(const SynthTaskSpec& spec, const std::vector<int>& labels, Rng& rng) {
    for (int tok : labels) {
        if (tok < 1 || tok >= spec.v) {
            throw InputError("synth_utterance: label " + std::to_string(tok) + " outside [1, " +
                             std::to_string(spec.v) + ")");
        }
    }
    FeatureSequence out;
    out.d = spec.d;
    std::vector<float> buf;
    for (int tok : labels) {
        const int64_t dur = rng.next_int(spec.dur_lo, spec.dur_hi);
        const float* tmpl = spec.templates.data() + (tok - 1) * spec.d;
        for (int64_t f = 0; f < dur; ++f) {
            for (int64_t j = 0; j < spec.d; ++j) {
                buf.push_back(tmpl[j] + static_cast<float>(rng.next_normal() * spec.noise));
            }
        }
    }
    out.frames = std::move(buf);
    out.t = static_cast<int64_t>(out.frames.size()) / spec.d;
    return out;
}

Corpus gen_corpus(const SynthTaskSpec& spec, int64_t n_utts, int64_t len_lo, int64_t len_hi,
                  uint64_t seed, double min_homophone_frac) {
    validate_spec(spec);
    if (n_utts < 1) throw ConfigError("gen_corpus: n_utts must be >= 1");
    if (len_lo < 1 || len_hi < len_lo) throw ConfigError("gen_corpus: bad length range");
    const int64_t s = spec.n_symbols();
    const auto pi = stationary_distribution(spec);
    Rng root(seed);

    Corpus corpus;
    corpus.reserve(n_utts);
    for (int64_t u = 0; u < n_utts; ++u) {
        Rng rng = root.split(static_cast<uint64_t>(u));
        Utterance utt;
        while (true) {
            const int64_t len = rng.next_int(len_lo, len_hi);
            utt.labels.clear();
            int cur = sample_categorical(pi.data(), s, rng);
            utt.labels.push_back(cur + 1);
            for (int64_t i = 1; i < len; ++i) {
                cur = sample_categorical(spec.transition.data() + cur * s, s, rng);
                utt.labels.push_back(cur + 1);
            }
            if (min_homophone_frac <= 0.0) break;
            int64_t homo = 0;
            for (int tok : utt.labels) homo += spec.is_homophone(tok) ? 1 : 0;
            if (static_cast<double>(homo) >= min_homophone_frac * static_cast<double>(len)) break;
        }
        utt.feats = synth_utterance(spec, utt.labels, rng);
        corpus.push_back(std::move(utt));
    }
    return corpus;
}

namespace {

constexpr char kCorpusMagic[8] = {'P', 'A', 'L', 'C', 'O', 'R', 'P', '1'};

void put_u32(std::FILE* f, uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    std::fwrite(b, 1, 4, f);
}

uint32_t get_u32(std::FILE* f, const std::string& path) {
    unsigned char b[4];
    if (std::fread(b, 1, 4, f) != 4) throw IoError("corpus: truncated file " + path);
    return b[0] | (b[1] << 8) | (b[2] << 16) | (uint32_t(b[3]) << 24);
}

}  // namespace

void write_corpus(const std::string& path, const Corpus& corpus, int64_t v, int64_t d) {
    static_assert(std::endian::native == std::endian::little, "writer assumes little-endian host");
    std::FILE* f = std::fopen(path.c_str(), "wb");
    if (!f) throw IoError("corpus: cannot write " + path);
    struct Closer {
        std::FILE* f;
        ~Closer() { std::fclose(f); }
    } closer{f};

    std::fwrite(kCorpusMagic, 1, 8, f);
    put_u32(f, 1);
    put_u32(f, static_cast<uint32_t>(v));
    put_u32(f, static_cast<uint32_t>(d));
    put_u32(f, static_cast<uint32_t>(corpus.size()));
    for (const auto& utt : corpus) {
        put_u32(f, static_cast<uint32_t>(utt.labels.size()));
        for (int tok : utt.labels) {
            const uint16_t t16 = static_cast<uint16_t>(tok);
            std::fwrite(&t16, 2, 1, f);
        }
        put_u32(f, static_cast<uint32_t>(utt.feats.t));
        put_u32(f, static_cast<uint32_t>(utt.feats.d));
        std::fwrite(utt.feats.frames.data(), sizeof(float), utt.feats.frames.size(), f);
    }
}

Corpus read_corpus(const std::string& path, int64_t* v_out, int64_t* d_out) {
    static_assert(std::endian::native == std::endian::little, "reader assumes little-endian host");
    std::FILE* f = std::fopen(path.c_str(), "rb");
    if (!f) throw IoError("corpus: cannot open " + path);
    struct Closer {
        std::FILE* f;
        ~Closer() { std::fclose(f); }
    } closer{f};

    char magic[8];
    if (std::fread(magic, 1, 8, f) != 8 || std::memcmp(magic, kCorpusMagic, 8) != 0) {
        throw IoError("corpus: bad magic in " + path);
    }
    const uint32_t version = get_u32(f, path);
    if (version != 1) throw IoError("corpus: unsupported version " + std::to_string(version));
    const uint32_t v = get_u32(f, path);
    const uint32_t d = get_u32(f, path);
    const uint32_t n = get_u32(f, path);
    if (v_out) *v_out = v;
    if (d_out) *d_out = d;

    Corpus corpus;
    corpus.reserve(n);
    for (uint32_t u = 0; u < n; ++u) {
        Utterance utt;
        const uint32_t ll = get_u32(f, path);
        utt.labels.resize(ll);
        for (uint32_t i = 0; i < ll; ++i) {
            uint16_t t16;
            if (std::fread(&t16, 2, 1, f) != 1) throw IoError("corpus: truncated labels in " + path);
            utt.labels[i] = t16;
        }
        utt.feats.t = get_u32(f, path);
        utt.feats.d = get_u32(f, path);
        utt.feats.frames.resize(utt.feats.t * utt.feats.d);
        if (std::fread(utt.feats.frames.data(), sizeof(float), utt.feats.frames.size(), f) !=
            utt.feats.frames.size()) {
            throw IoError("corpus: truncated frames in " + path);
        }
        corpus.push_back(std::move(utt));
    }
    return corpus;
}

uint64_t corpus_fingerprint(const Corpus& corpus) {
    uint64_t h = 1469598103934665603ull;
    auto mix = [&h](const void* data, size_t n) {
        const unsigned char* p = static_cast<const unsigned char*>(data);
        for (size_t i = 0; i < n; ++i) {
            h ^= p[i];
            h *= 1099511628211ull;
        }
    };
    for (const auto& utt : corpus) {
        const uint32_t ll = static_cast<uint32_t>(utt.labels.size());
        mix(&ll, 4);
        for (int tok : utt.labels) {
            const uint16_t t16 = static_cast<uint16_t>(tok);
            mix(&t16, 2);
        }
        mix(utt.feats.frames.data(), utt.feats.frames.size() * sizeof(float));
    }
    return h;
}

}  // namespace pal
