#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "pal/error.hpp"

namespace pal {

struct Waveform {
    std::vector<float> samples;
    int sample_rate = 16000;
};

// T x D row-major frame matrix. 32-bit floats match the on-disk format.
struct FeatureSequence {
    int64_t t = 0;
    int64_t d = 0;
    std::vector<float> frames;

    const float* row(int64_t i) const { return frames.data() + i * d; }
    float* row(int64_t i) { return frames.data() + i * d; }
};

struct MelConfig {
    int sample_rate = 16000;
    int window_ms = 25;
    int frame_shift_ms = 10;
    int n_fft = 512;
    int n_mels = 80;
    double floor = 1e-10;

    int window_samples() const { return sample_rate * window_ms / 1000; }
    int hop_samples() const { return sample_rate * frame_shift_ms / 1000; }
};

// HTK mel scale.
inline double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
inline double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

// Triangular filter matrix [n_mels x (n_fft/2+1)], centers equally spaced on
// the mel scale between 0 Hz and Nyquist.
std::vector<double> build_mel_filters(const MelConfig& cfg);

// Hann window -> real FFT -> power spectrum -> mel filters -> log with floor.
// T = floor((N - window) / hop) + 1; no padding.
FeatureSequence log_mel(const Waveform& w, const MelConfig& cfg = {});

// 16-bit PCM mono RIFF reader.
Waveform read_wav(const std::string& path);
void write_wav(const std::string& path, const Waveform& w);

}  // namespace pal
