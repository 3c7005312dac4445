#pragma once

#include <algorithm>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "pal/error.hpp"

namespace pal {

// Levenshtein distance, unit costs, two-row DP.
inline int64_t edit_distance(const std::vector<int>& a, const std::vector<int>& b) {
    const size_t n = a.size(), m = b.size();
    std::vector<int64_t> prev(m + 1), cur(m + 1);
    for (size_t j = 0; j <= m; ++j) prev[j] = static_cast<int64_t>(j);
    for (size_t i = 1; i <= n; ++i) {
        cur[0] = static_cast<int64_t>(i);
        for (size_t j = 1; j <= m; ++j) {
            const int64_t sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
            cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
        }
        std::swap(prev, cur);
    }
    return prev[m];
}

// 100 * total edit distance / total reference length. Empty references
// contribute their hypothesis length as errors and nothing to the denominator.
inline double cer(const std::vector<std::vector<int>>& refs,
                  const std::vector<std::vector<int>>& hyps) {
    if (refs.size() != hyps.size()) {
        throw InputError("cer: " + std::to_string(refs.size()) + " references vs " +
                         std::to_string(hyps.size()) + " hypotheses");
    }
    int64_t errors = 0, length = 0;
    for (size_t i = 0; i < refs.size(); ++i) {
        errors += edit_distance(refs[i], hyps[i]);
        length += static_cast<int64_t>(refs[i].size());
    }
    if (length == 0) {
        return errors == 0 ? 0.0 : std::numeric_limits<double>::infinity();
    }
    return 100.0 * static_cast<double>(errors) / static_cast<double>(length);
}

}  // namespace pal
