#include "pal/features.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>

#include "pal/fft.hpp"

namespace pal {

std::vector<double> build_mel_filters(const MelConfig& cfg) {
    const int n_bins = cfg.n_fft / 2 + 1;
    const double nyquist = cfg.sample_rate / 2.0;
    const double mel_max = hz_to_mel(nyquist);

    // n_mels + 2 edge points, equally spaced in mel.
    std::vector<double> edges(cfg.n_mels + 2);
    for (int i = 0; i < cfg.n_mels + 2; ++i) {
        edges[i] = mel_to_hz(mel_max * i / (cfg.n_mels + 1));
    }

    std::vector<double> filters(static_cast<size_t>(cfg.n_mels) * n_bins, 0.0);
    const double bin_hz = static_cast<double>(cfg.sample_rate) / cfg.n_fft;
    for (int m = 0; m < cfg.n_mels; ++m) {
        const double lo = edges[m], center = edges[m + 1], hi = edges[m + 2];
        for (int k = 0; k < n_bins; ++k) {
            const double f = k * bin_hz;
            double w = 0.0;
            if (f > lo && f < center) {
                w = (f - lo) / (center - lo);
            } else if (f >= center && f < hi) {
                w = (hi - f) / (hi - center);
            }
            filters[static_cast<size_t>(m) * n_bins + k] = w;
        }
    }
    return filters;
}

FeatureSequence log_mel(const Waveform& w, const MelConfig& cfg) {
    const int win = cfg.window_samples();
    const int hop = cfg.hop_samples();
    const int64_t n = static_cast<int64_t>(w.samples.size());
    if (n < win) {
        throw InputError("log_mel: waveform of " + std::to_string(n) + " samples shorter than one " +
                         std::to_string(win) + "-sample window");
    }
    const int64_t t_len = (n - win) / hop + 1;
    const int n_bins = cfg.n_fft / 2 + 1;
    const auto filters = build_mel_filters(cfg);

    // Periodic Hann.
    std::vector<double> hann(win);
    for (int i = 0; i < win; ++i) hann[i] = 0.5 - 0.5 * std::cos(2.0 * M_PI * i / win);

    FeatureSequence out;
    out.t = t_len;
    out.d = cfg.n_mels;
    out.frames.resize(t_len * cfg.n_mels);

    std::vector<double> frame(win);
    for (int64_t t = 0; t < t_len; ++t) {
        const float* src = w.samples.data() + t * hop;
        for (int i = 0; i < win; ++i) frame[i] = src[i] * hann[i];
        auto power = power_spectrum(frame.data(), win, cfg.n_fft);
        float* dst = out.row(t);
        for (int m = 0; m < cfg.n_mels; ++m) {
            const double* fr = filters.data() + static_cast<size_t>(m) * n_bins;
            double acc = 0.0;
            for (int k = 0; k < n_bins; ++k) acc += fr[k] * power[k];
            dst[m] = static_cast<float>(std::log(std::max(acc, cfg.floor)));
        }
    }
    return out;
}

namespace {

uint32_t read_u32(std::FILE* f, const std::string& path) {
    unsigned char b[4];
    if (std::fread(b, 1, 4, f) != 4) throw IoError("wav: truncated file " + path);
    return b[0] | (b[1] << 8) | (b[2] << 16) | (uint32_t(b[3]) << 24);
}

uint16_t read_u16(std::FILE* f, const std::string& path) {
    unsigned char b[2];
    if (std::fread(b, 1, 2, f) != 2) throw IoError("wav: truncated file " + path);
    return static_cast<uint16_t>(b[0] | (b[1] << 8));
}

void write_u32(std::FILE* f, uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    std::fwrite(b, 1, 4, f);
}

void write_u16(std::FILE* f, uint16_t v) {
    unsigned char b[2] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8)};
    std::fwrite(b, 1, 2, f);
}

}  // namespace

Waveform read_wav(const std::string& path) {
    std::FILE* f = std::fopen(path.c_str(), "rb");
    if (!f) throw IoError("wav: cannot open " + path);
    struct Closer {
        std::FILE* f;
        ~Closer() { std::fclose(f); }
    } closer{f};

    char tag[5] = {0};
    if (std::fread(tag, 1, 4, f) != 4 || std::strcmp(tag, "RIFF") != 0) {
        throw IoError("wav: not a RIFF file: " + path);
    }
    read_u32(f, path);  // chunk size
    if (std::fread(tag, 1, 4, f) != 4 || std::strcmp(tag, "WAVE") != 0) {
        throw IoError("wav: not a WAVE file: " + path);
    }

    Waveform w;
    bool got_fmt = false;
    while (std::fread(tag, 1, 4, f) == 4) {
        const uint32_t size = read_u32(f, path);
        if (std::strcmp(tag, "fmt ") == 0) {
            const uint16_t format = read_u16(f, path);
            const uint16_t channels = read_u16(f, path);
            const uint32_t rate = read_u32(f, path);
            read_u32(f, path);  // byte rate
            read_u16(f, path);  // block align
            const uint16_t bits = read_u16(f, path);
            if (format != 1 || channels != 1 || bits != 16) {
                throw IoError("wav: only 16-bit PCM mono supported: " + path);
            }
            w.sample_rate = static_cast<int>(rate);
            if (size > 16) std::fseek(f, size - 16, SEEK_CUR);
            got_fmt = true;
        } else if (std::strcmp(tag, "data") == 0) {
            if (!got_fmt) throw IoError("wav: data chunk before fmt: " + path);
            const uint32_t n = size / 2;
            w.samples.resize(n);
            for (uint32_t i = 0; i < n; ++i) {
                const int16_t s = static_cast<int16_t>(read_u16(f, path));
                w.samples[i] = static_cast<float>(s) / 32768.0f;
            }
            return w;
        } else {
            std::fseek(f, size + (size & 1), SEEK_CUR);
        }
    }
    throw IoError("wav: no data chunk in " + path);
}

void write_wav(const std::string& path, const Waveform& w) {
    std::FILE* f = std::fopen(path.c_str(), "wb");
    if (!f) throw IoError("wav: cannot write " + path);
    struct Closer {
        std::FILE* f;
        ~Closer() { std::fclose(f); }
    } closer{f};

    const uint32_t data_bytes = static_cast<uint32_t>(w.samples.size()) * 2;
    std::fwrite("RIFF", 1, 4, f);
    write_u32(f, 36 + data_bytes);
    std::fwrite("WAVE", 1, 4, f);
    std::fwrite("fmt ", 1, 4, f);
    write_u32(f, 16);
    write_u16(f, 1);
    write_u16(f, 1);
    write_u32(f, static_cast<uint32_t>(w.sample_rate));
    write_u32(f, static_cast<uint32_t>(w.sample_rate) * 2);
    write_u16(f, 2);
    write_u16(f, 16);
    std::fwrite("data", 1, 4, f);
    write_u32(f, data_bytes);
    for (float s : w.samples) {
        double v = std::max(-1.0, std::min(1.0, static_cast<double>(s)));
        write_u16(f, static_cast<uint16_t>(static_cast<int16_t>(std::lrint(v * 32767.0))));
    }
}

}  // namespace pal
