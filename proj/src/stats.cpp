#include "expertleak/stats.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace expertleak::stats {

TTestReport welch_t(const std::vector<std::vector<double>>& group_a,
                    const std::vector<std::vector<double>>& group_b,
                    double threshold) {
    if (group_a.size() < 2 || group_b.size() < 2)
        throw StatsError("welch_t: each group needs at least 2 samples");
    const std::size_t dim = group_a[0].size();
    for (const auto& row : group_a)
        if (row.size() != dim) throw StatsError("welch_t: ragged group A");
    for (const auto& row : group_b)
        if (row.size() != dim) throw StatsError("welch_t: ragged group B");

    const double na = static_cast<double>(group_a.size());
    const double nb = static_cast<double>(group_b.size());
    constexpr double eps = 1e-12; // variance floor

    TTestReport report;
    report.threshold = threshold;
    report.t.resize(dim);
    for (std::size_t j = 0; j < dim; ++j) {
        double ma = 0, mb = 0;
        for (const auto& row : group_a) ma += row[j];
        for (const auto& row : group_b) mb += row[j];
        ma /= na;
        mb /= nb;
        double va = 0, vb = 0;
        for (const auto& row : group_a) va += (row[j] - ma) * (row[j] - ma);
        for (const auto& row : group_b) vb += (row[j] - mb) * (row[j] - mb);
        va /= na - 1.0;
        vb /= nb - 1.0;
        const double denom = std::sqrt(std::max(eps, va / na + vb / nb));
        report.t[j] = (ma - mb) / denom;
        if (std::fabs(report.t[j]) > threshold) ++report.leaky_count;
    }
    return report;
}

double pearson(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size() || a.size() < 2)
        throw StatsError("pearson: vectors must share a length of at least 2");
    const double n = static_cast<double>(a.size());
    const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
    const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
    double sab = 0, saa = 0, sbb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double da = a[i] - ma, db = b[i] - mb;
        sab += da * db;
        saa += da * da;
        sbb += db * db;
    }
    if (saa <= 0.0 || sbb <= 0.0)
        throw StatsError("pearson: undefined for zero-variance input");
    return sab / std::sqrt(saa * sbb);
}

double token_asr(const moe::TokenSequence& predicted, const moe::TokenSequence& truth) {
    if (predicted.size() != truth.size())
        throw StatsError("token_asr: length mismatch");
    if (truth.empty()) throw StatsError("token_asr: empty sequences");
    int match = 0;
    for (std::size_t i = 0; i < truth.size(); ++i) match += predicted[i] == truth[i];
    return static_cast<double>(match) / static_cast<double>(truth.size());
}

double topk_accuracy(const std::vector<std::vector<double>>& scores,
                     const std::vector<int>& labels, int k) {
    if (scores.size() != labels.size() || scores.empty())
        throw StatsError("topk_accuracy: scores/labels mismatch");
    if (k < 1 || k > static_cast<int>(scores[0].size()))
        throw StatsError("topk_accuracy: k out of range");
    int hits = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        const auto& s = scores[i];
        const int label = labels[i];
        const double own = s[label];
        // Rank = classes scoring strictly higher, plus ties at lower index.
        int rank = 0;
        for (int c = 0; c < static_cast<int>(s.size()); ++c) {
            if (c == label) continue;
            if (s[c] > own || (s[c] == own && c < label)) ++rank;
        }
        hits += rank < k;
    }
    return static_cast<double>(hits) / static_cast<double>(scores.size());
}

double sequence_accuracy(const std::vector<std::uint8_t>& estimate,
                         const std::vector<std::uint8_t>& truth) {
    if (estimate.size() != truth.size())
        throw StatsError("sequence_accuracy: length mismatch");
    int k = 0, sym = 0;
    for (std::size_t i = 0; i < truth.size(); ++i) {
        k += truth[i] != 0;
        sym += (estimate[i] != 0) != (truth[i] != 0);
    }
    if (k == 0) throw StatsError("sequence_accuracy: empty ground-truth set");
    return std::max(0.0, 1.0 - static_cast<double>(sym) / (2.0 * k));
}

} // namespace expertleak::stats
