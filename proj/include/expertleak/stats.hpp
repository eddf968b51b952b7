#pragma once

#include <cstdint>
#include <stdexcept>
#include <vector>

#include "expertleak/moe.hpp"

namespace expertleak::stats {

struct StatsError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct TTestReport {
    std::vector<double> t;       // one statistic per feature coordinate
    double threshold = 4.5;
    int leaky_count = 0;         // #{|t| > threshold}
};

/// Welch's unequal-variance t per coordinate. Each row is one sample's
/// flattened footprint; both groups need >= 2 rows.
TTestReport welch_t(const std::vector<std::vector<double>>& group_a,
                    const std::vector<std::vector<double>>& group_b,
                    double threshold = 4.5);

double pearson(const std::vector<double>& a, const std::vector<double>& b);

double token_asr(const moe::TokenSequence& predicted, const moe::TokenSequence& truth);

/// Fraction of samples whose label ranks among the k highest scores.
/// Ties broken toward the lower class index.
double topk_accuracy(const std::vector<std::vector<double>>& scores,
                     const std::vector<int>& labels, int k);

/// Symmetric-difference accuracy of a recovered expert set against a
/// ground-truth mask with k actives: 1 - |est xor truth| / (2k), floored at 0.
double sequence_accuracy(const std::vector<std::uint8_t>& estimate,
                         const std::vector<std::uint8_t>& truth);

} // namespace expertleak::stats
