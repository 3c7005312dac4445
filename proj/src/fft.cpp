#include "pal/fft.hpp"

#include <cmath>

#include "pal/error.hpp"

namespace pal {

void fft_complex(std::vector<double>& re, std::vector<double>& im) {
    const size_t n = re.size();
    if (n == 0 || (n & (n - 1)) != 0 || im.size() != n) {
        throw ConfigError("fft_complex: length must be a power of two, got " + std::to_string(n));
    }
    // Bit-reversal permutation.
    for (size_t i = 1, j = 0; i < n; ++i) {
        size_t bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
        if (i < j) {
            std::swap(re[i], re[j]);
            std::swap(im[i], im[j]);
        }
    }
    const double two_pi = 6.283185307179586476925286766559;
    for (size_t len = 2; len <= n; len <<= 1) {
        const double ang = -two_pi / static_cast<double>(len);
        const double wr = std::cos(ang), wi = std::sin(ang);
        for (size_t i = 0; i < n; i += len) {
            double cr = 1.0, ci = 0.0;
            for (size_t j = 0; j < len / 2; ++j) {
                const size_t a = i + j, b = i + j + len / 2;
                const double tr = re[b] * cr - im[b] * ci;
                const double ti = re[b] * ci + im[b] * cr;
                re[b] = re[a] - tr;
                im[b] = im[a] - ti;
                re[a] += tr;
                im[a] += ti;
                const double ncr = cr * wr - ci * wi;
                ci = cr * wi + ci * wr;
                cr = ncr;
            }
        }
    }
}

std::vector<double> power_spectrum(const double* frame, int64_t len, int64_t n_fft) {
    std::vector<double> re(n_fft, 0.0), im(n_fft, 0.0);
    for (int64_t i = 0; i < len && i < n_fft; ++i) re[i] = frame[i];
    fft_complex(re, im);
    std::vector<double> power(n_fft / 2 + 1);
    for (int64_t k = 0; k <= n_fft / 2; ++k) power[k] = re[k] * re[k] + im[k] * im[k];
    return power;
}

}  // namespace pal
