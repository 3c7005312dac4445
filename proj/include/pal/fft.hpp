#pragma once

#include <cstdint>
#include <vector>

namespace pal {

// In-place iterative radix-2 FFT. re/im must have equal power-of-two length.
void fft_complex(std::vector<double>& re, std::vector<double>& im);

// |FFT|^2 of a real frame zero-padded to n_fft (power of two).
// Returns the n_fft/2 + 1 non-redundant bins.
std::vector<double> power_spectrum(const double* frame, int64_t len, int64_t n_fft);

}  // namespace pal
