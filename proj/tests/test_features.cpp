#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <vector>

#include "pal/features.hpp"
#include "pal/fft.hpp"
#include "pal/rng.hpp"

namespace {

// Naive O(n^2) DFT power spectrum, the reference for the radix-2 FFT.
std::vector<double> dft_power_oracle(const std::vector<double>& frame, int64_t n_fft) {
    std::vector<double> out(n_fft / 2 + 1);
    for (int64_t k = 0; k <= n_fft / 2; ++k) {
        double re = 0, im = 0;
        for (size_t n = 0; n < frame.size(); ++n) {
            const double ang = -2.0 * M_PI * k * static_cast<double>(n) / static_cast<double>(n_fft);
            re += frame[n] * std::cos(ang);
            im += frame[n] * std::sin(ang);
        }
        out[k] = re * re + im * im;
    }
    return out;
}

}  // namespace

TEST_CASE("fft power spectrum matches naive DFT") {
    pal::Rng rng(51);
    std::vector<double> frame(400);
    for (auto& x : frame) x = rng.next_normal();
    auto fast = pal::power_spectrum(frame.data(), 400, 512);
    auto slow = dft_power_oracle(frame, 512);
    REQUIRE(fast.size() == slow.size());
    for (size_t k = 0; k < fast.size(); ++k) {
        CHECK(fast[k] == doctest::Approx(slow[k]).epsilon(1e-8));
    }
}

TEST_CASE("frame count formula") {
    pal::Rng rng(52);
    pal::Waveform w;
    w.samples.assign(16000, 0.0f);
    for (auto& s : w.samples) s = static_cast<float>(rng.next_normal() * 0.1);
    auto feats = pal::log_mel(w);
    CHECK(feats.t == 98);
    CHECK(feats.d == 80);

    // Sweep: the frame count must equal the number of full windows that fit.
    for (int64_t n = 400; n <= 8000; n += 37) {
        pal::Waveform wv;
        wv.samples.assign(n, 0.01f);
        int64_t count = 0;
        while (count * 160 + 400 <= n) ++count;
        CHECK(pal::log_mel(wv).t == count);
    }
}

TEST_CASE("all-zero waveform hits the floor everywhere") {
    pal::Waveform w;
    w.samples.assign(800, 0.0f);
    auto feats = pal::log_mel(w);
    const float expect = std::log(1e-10f);
    for (float v : feats.frames) CHECK(v == doctest::Approx(expect).epsilon(1e-6));
}

TEST_CASE("waveform shorter than one window raises") {
    pal::Waveform w;
    w.samples.assign(399, 0.1f);
    CHECK_THROWS_AS(pal::log_mel(w), pal::InputError);
}

TEST_CASE("1 kHz sine lands in the filter with the nearest center") {
    pal::Waveform w;
    w.samples.resize(16000);
    for (size_t i = 0; i < w.samples.size(); ++i) {
        w.samples[i] = static_cast<float>(std::sin(2.0 * M_PI * 1000.0 * i / 16000.0));
    }
    auto feats = pal::log_mel(w);

    std::vector<double> mean(80, 0.0);
    for (int64_t t = 0; t < feats.t; ++t) {
        for (int64_t m = 0; m < 80; ++m) mean[m] += feats.row(t)[m];
    }
    int argmax = 0;
    for (int m = 1; m < 80; ++m) {
        if (mean[m] > mean[argmax]) argmax = m;
    }

    // Independent oracle: recompute the mel-spaced center frequencies from the
    // published scale formula and take the one nearest 1 kHz.
    auto mel = [](double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); };
    auto hz = [](double m) { return 700.0 * (std::pow(10.0, m / 2595.0) - 1.0); };
    const double mel_max = mel(8000.0);
    int nearest = 0;
    double best = 1e18;
    for (int m = 0; m < 80; ++m) {
        const double center = hz(mel_max * (m + 1) / 81.0);
        if (std::fabs(center - 1000.0) < best) {
            best = std::fabs(center - 1000.0);
            nearest = m;
        }
    }
    CHECK(argmax == nearest);
}

TEST_CASE("mel filters nonnegative with gap-free coverage") {
    pal::MelConfig cfg;
    auto filters = pal::build_mel_filters(cfg);
    const int n_bins = cfg.n_fft / 2 + 1;
    for (double v : filters) CHECK(v >= 0.0);

    const double mel_max = pal::hz_to_mel(8000.0);
    const double first_center = pal::mel_to_hz(mel_max * 1 / 81.0);
    const double last_center = pal::mel_to_hz(mel_max * 80 / 81.0);
    const double bin_hz = 16000.0 / cfg.n_fft;
    for (int k = 0; k < n_bins; ++k) {
        const double f = k * bin_hz;
        if (f <= first_center || f >= last_center) continue;
        double total = 0.0;
        for (int m = 0; m < cfg.n_mels; ++m) total += filters[static_cast<size_t>(m) * n_bins + k];
        CHECK(total > 0.0);
    }
}

TEST_CASE("wav round trip") {
    pal::Rng rng(53);
    pal::Waveform w;
    w.sample_rate = 16000;
    w.samples.resize(1234);
    for (auto& s : w.samples) {
        s = static_cast<float>(static_cast<int16_t>(rng.next_below(65536) - 32768)) / 32768.0f;
    }
    const std::string path = "test_roundtrip.wav";
    pal::write_wav(path, w);
    auto r = pal::read_wav(path);
    CHECK(r.sample_rate == 16000);
    REQUIRE(r.samples.size() == w.samples.size());
    for (size_t i = 0; i < w.samples.size(); ++i) {
        CHECK(std::fabs(r.samples[i] - w.samples[i]) < 1.0f / 16384.0f);
    }
    std::remove(path.c_str());

    CHECK_THROWS_AS(pal::read_wav("does_not_exist.wav"), pal::IoError);
}
