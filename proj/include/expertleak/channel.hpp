#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "expertleak/moe.hpp"
#include "expertleak/rng.hpp"

namespace expertleak::channel {

struct ChannelError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// All stochastic corruption parameters. Latency units are abstract; only
/// separation relative to the spreads matters.
struct NoiseModel {
    struct Icache {
        double sample_period = 1.0;
        double baseline_mean = 100.0;
        double baseline_sd = 0.0;
        double peak_height = 120.0;
        double peak_miss_prob = 0.0;
        double duration_jitter_sd = 0.0; // timing noise per executed phase
        int lead_in = 8; // idle samples framing the trace
    } icache;

    struct L2 {
        double level_high = 100.0;
        double level_low = 40.0;
        double level_sd = 0.0;
    } l2;

    struct Reload {
        double hit_mean = 100.0;
        double hit_sd = 20.0;
        double miss_mean = 400.0;
        double miss_sd = 20.0;
        double flip_prob = 0.0;
    } reload;

    struct Threads {
        double per_token_threads = 32.0;
        double count_jitter_sd = 0.0;
    } threads;

    struct Tlb {
        double hit_mean = 100.0;
        double hit_sd = 20.0;
        double miss_mean = 400.0;
        double miss_sd = 20.0;
        double flip_prob = 0.0;
    } tlb;

    int contention_level = 0;

    void validate() const;

    /// Zero-noise configuration: unit sample period, no jitter, no flips.
    static NoiseModel noiseless();
    /// Shipped defaults reproducing the reference accuracy table at the
    /// given contention level (flip probabilities frozen by tools/calibrate).
    static NoiseModel calibrated(int contention_level = 0);
};

struct CacheTrace {
    std::vector<double> l1;
    std::vector<double> l2;
    double sample_period = 1.0;
};

using LayerMask = std::vector<std::uint8_t>;

/// Joint L1 instruction-cache / L2 occupancy trace for one layer's schedule.
/// The two series share one time base.
CacheTrace simulate_l1l2(const moe::LayerSchedule& sched, const NoiseModel& nm,
                         Rng& rng);
std::vector<double> simulate_l1_icache(const moe::LayerSchedule& sched,
                                       const NoiseModel& nm, Rng& rng);
std::vector<double> simulate_l2(const moe::LayerSchedule& sched,
                                const NoiseModel& nm, Rng& rng);

/// Per-expert reload latencies for one decode step, one vector per layer.
std::vector<std::vector<double>>
simulate_pageout_reload(const std::vector<LayerMask>& step_masks,
                        const NoiseModel& nm, Rng& rng);

/// Per-expert thread counts for a prefill load footprint.
std::vector<std::vector<long>>
simulate_perf_counter(const std::vector<std::vector<long>>& load,
                      const NoiseModel& nm, Rng& rng);

/// Per-block TLB latencies (M+1 blocks) for one decode step.
std::vector<std::vector<double>>
simulate_tlb(const std::vector<LayerMask>& step_masks, const NoiseModel& nm,
             Rng& rng);

/// Noiseless hit-block set for one layer mask: expert i touches blocks i and
/// i+1; blocks 0 and M are always hot.
std::vector<std::uint8_t> tlb_hit_blocks(const LayerMask& mask);

// MTRC v1 trace files. One section per (channel, layer).
struct TraceSection {
    std::string channel; // l1|l2|reload|threads|tlb
    int layer = 0;
    std::uint64_t seed = 0;
    std::vector<std::vector<double>> rows;
};

std::string format_g17(double v);
void write_mtrc(const std::string& path, const std::vector<TraceSection>& sections);
std::vector<TraceSection> read_mtrc(const std::string& path);

} // namespace expertleak::channel
