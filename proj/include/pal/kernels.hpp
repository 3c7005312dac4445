#pragma once

#include <algorithm>
#include <cstdint>

#include "pal/threads.hpp"

namespace pal::kernels {

// C[M x N] (+)= A[M x K] * B[K x N], row-major. The i-k-j order keeps the
// inner loop contiguous in B and C so it vectorizes.
template <typename T>
void gemm_nn(const T* __restrict a, const T* __restrict b, T* __restrict c,
             int64_t m, int64_t k, int64_t n, bool accumulate) {
    parallel_for(m, [=](int64_t i0, int64_t i1) {
        for (int64_t i = i0; i < i1; ++i) {
            T* __restrict crow = c + i * n;
            if (!accumulate) std::fill(crow, crow + n, T(0));
            const T* __restrict arow = a + i * k;
            int64_t p = 0;
            for (; p + 4 <= k; p += 4) {
                const T a0 = arow[p], a1 = arow[p + 1], a2 = arow[p + 2], a3 = arow[p + 3];
                const T* __restrict b0 = b + p * n;
                const T* __restrict b1 = b0 + n;
                const T* __restrict b2 = b1 + n;
                const T* __restrict b3 = b2 + n;
                for (int64_t j = 0; j < n; ++j) {
                    crow[j] += a0 * b0[j] + a1 * b1[j] + a2 * b2[j] + a3 * b3[j];
                }
            }
            for (; p < k; ++p) {
                const T ap = arow[p];
                const T* __restrict brow = b + p * n;
                for (int64_t j = 0; j < n; ++j) crow[j] += ap * brow[j];
            }
        }
    });
}

// C[M x N] (+)= A[M x K] * B[N x K]^T. Rows of A against rows of B: dot
// products over contiguous memory.
template <typename T>
void gemm_nt(const T* __restrict a, const T* __restrict b, T* __restrict c,
             int64_t m, int64_t k, int64_t n, bool accumulate) {
    parallel_for(m, [=](int64_t i0, int64_t i1) {
        for (int64_t i = i0; i < i1; ++i) {
            const T* __restrict arow = a + i * k;
            T* __restrict crow = c + i * n;
            for (int64_t j = 0; j < n; ++j) {
                const T* __restrict brow = b + j * k;
                T acc = 0;
                for (int64_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
                if (accumulate) {
                    crow[j] += acc;
                } else {
                    crow[j] = acc;
                }
            }
        }
    });
}

// C[K x N] (+)= A[M x K]^T * B[M x N]. Outer loop over m, rank-1 updates.
// Serial: every m touches all of C, so a parallel version would need
// per-thread accumulators to stay deterministic.
template <typename T>
void gemm_tn(const T* __restrict a, const T* __restrict b, T* __restrict c,
             int64_t m, int64_t k, int64_t n, bool accumulate) {
    if (!accumulate) std::fill(c, c + k * n, T(0));
    for (int64_t p = 0; p < m; ++p) {
        const T* __restrict arow = a + p * k;
        const T* __restrict brow = b + p * n;
        for (int64_t i = 0; i < k; ++i) {
            const T ai = arow[i];
            T* __restrict crow = c + i * n;
            for (int64_t j = 0; j < n; ++j) crow[j] += ai * brow[j];
        }
    }
}

}  // namespace pal::kernels
