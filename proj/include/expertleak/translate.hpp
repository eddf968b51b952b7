#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "expertleak/channel.hpp"
#include "expertleak/moe.hpp"

namespace expertleak::translate {

struct TranslateError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct Changepoints {
    std::vector<int> indices; // strictly increasing, exclusive of 0 and n
    double penalty = 0.0;
    std::string cost = "l2";
};

/// Robust noise scale from median absolute first differences.
double estimate_noise_sd(const std::vector<double>& y);
/// BIC-style default penalty: 2 * sd^2 * log n.
double default_penalty(const std::vector<double>& y);

/// Exact minimizer of sum of segment L2 costs + beta per break, with
/// inadmissible-candidate pruning. Equals the unpruned dynamic program.
Changepoints pelt(const std::vector<double>& y, double beta);
/// Reference O(n^2) dynamic program used as a test oracle.
Changepoints exhaustive_dp(const std::vector<double>& y, double beta);

/// Indices above median + z * robust sd, one index per contiguous run.
std::vector<int> detect_icache_peaks(const std::vector<double>& l1, double z = 6.0);

/// Deterministic 1-d 2-means on log values, centers seeded at min and max.
/// Returns per-point labels, 1 = high cluster. Degenerate when the spread
/// collapses.
struct Split2 {
    std::vector<std::uint8_t> high;
    double low_center = 0.0, high_center = 0.0;
    bool degenerate = false;
};
Split2 split_two_clusters(const std::vector<double>& values);

struct LayerLoad {
    std::vector<double> proportions; // length M, sums to 1 unless partial
    std::vector<long> counts;        // filled when the token budget is known
    bool partial = false;
};

/// Largest-remainder integer apportionment preserving the total.
std::vector<long> round_preserving_sum(const std::vector<double>& weights, long total);

LayerLoad recover_load_cpu(const std::vector<double>& l1,
                           const std::vector<double>& l2, double sample_period,
                           int num_experts, double base_cost,
                           double per_token_cost, long token_budget = -1);

LayerLoad recover_load_gpu(const std::vector<long>& threads,
                           double per_token_threads, long token_budget = -1);

struct SeqEstimate {
    std::vector<std::uint8_t> mask; // length M
    std::vector<double> confidence;
    bool degenerate = false;
};

SeqEstimate recover_seq_pageout(const std::vector<double>& latencies, int k = -1);
/// 65-block trace to a 64-expert mask: active iff both adjacent blocks hit;
/// the first and last block are always-hot and carry no evidence.
SeqEstimate recover_seq_tlb(const std::vector<double>& block_latencies);

// Footprint files: header #fp,kind=<load|seq>,layers=<L>,experts=<M>,
// then one row per layer (load) or per token-layer in token-major order (seq).
void write_footprint(const std::string& path, const moe::ExpertFootprint& fp);
void write_load_proportions(const std::string& path,
                            const std::vector<std::vector<double>>& rows);
std::vector<std::vector<double>> read_load_proportions(const std::string& path);
moe::ExpertFootprint read_footprint(const std::string& path);

} // namespace expertleak::translate
