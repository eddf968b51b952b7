#include "expertleak/channel.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace expertleak::channel {

namespace {

// Flip tables frozen by tools/calibrate against the reference accuracy
// sequences (contention levels 0..4).
constexpr double kReloadFlip[5] = {0.000845, 0.010705, 0.021125, 0.025155,
                                   0.026087};
constexpr double kTlbFlip[5] = {0.003077, 0.049350, 0.079753, 0.120156,
                                0.123858};

} // namespace

void NoiseModel::validate() const {
    if (reload.miss_mean <= reload.hit_mean)
        throw ChannelError("reload: miss_mean must exceed hit_mean");
    if (tlb.miss_mean <= tlb.hit_mean)
        throw ChannelError("tlb: miss_mean must exceed hit_mean");
    for (double p : {icache.peak_miss_prob, reload.flip_prob, tlb.flip_prob})
        if (p < 0.0 || p > 1.0) throw ChannelError("probability outside [0,1]");
    if (contention_level < 0 || contention_level > 4)
        throw ChannelError("contention_level must be in 0..4");
    if (icache.sample_period <= 0.0) throw ChannelError("sample_period must be positive");
    if (icache.duration_jitter_sd < 0.0)
        throw ChannelError("duration_jitter_sd must be non-negative");
}

NoiseModel NoiseModel::noiseless() { return NoiseModel{}; }

NoiseModel NoiseModel::calibrated(int contention_level) {
    if (contention_level < 0 || contention_level > 4)
        throw ChannelError("contention_level must be in 0..4");
    NoiseModel nm;
    nm.contention_level = contention_level;
    nm.icache.sample_period = 24.0;
    nm.icache.baseline_sd = 4.0;
    nm.icache.peak_miss_prob = 0.02;
    nm.icache.duration_jitter_sd = 24.0;
    nm.l2.level_sd = 14.0;
    nm.threads.count_jitter_sd = 32.0;
    nm.reload.flip_prob = kReloadFlip[contention_level];
    nm.tlb.flip_prob = kTlbFlip[contention_level];
    return nm;
}

CacheTrace simulate_l1l2(const moe::LayerSchedule& sched, const NoiseModel& nm,
                         Rng& rng) {
    nm.validate();
    const double period = nm.icache.sample_period;

    // Observed phase durations: execution timing jitters independently per
    // phase, floored so phases never collapse to nothing.
    std::vector<std::array<double, 3>> durations(sched.size());
    double total = 0.0;
    for (std::size_t i = 0; i < sched.size(); ++i)
        for (int p = 0; p < 3; ++p) {
            double d = sched[i].phase_duration[p];
            if (nm.icache.duration_jitter_sd > 0)
                d = std::max(1.0, d + rng.gaussian(0, nm.icache.duration_jitter_sd));
            durations[i][p] = d;
            total += d;
        }

    const int lead = nm.icache.lead_in;
    const int body = static_cast<int>(std::ceil(total / period));
    const int n = lead + body + lead;

    CacheTrace trace;
    trace.sample_period = period;
    trace.l1.resize(n);
    trace.l2.resize(n);

    // Baselines. The L2 idle level equals the down-phase (low) level.
    for (int i = 0; i < n; ++i) {
        trace.l1[i] = nm.icache.baseline_mean +
                      (nm.icache.baseline_sd > 0 ? rng.gaussian(0, nm.icache.baseline_sd) : 0.0);
        trace.l2[i] = nm.l2.level_low +
                      (nm.l2.level_sd > 0 ? rng.gaussian(0, nm.l2.level_sd) : 0.0);
    }

    double t = 0.0;
    for (std::size_t s = 0; s < sched.size(); ++s) {
        for (int phase = 0; phase < 3; ++phase) {
            const double d = durations[s][phase];
            const int start = lead + static_cast<int>(t / period);
            if (start < n && !rng.bernoulli(nm.icache.peak_miss_prob))
                trace.l1[start] += nm.icache.peak_height;
            if (phase < 2) {
                // Up and gate phases run at the high occupancy level.
                const int end = lead + static_cast<int>((t + d) / period);
                for (int i = start; i < std::min(end, n); ++i)
                    trace.l2[i] += nm.l2.level_high - nm.l2.level_low;
            }
            t += d;
        }
    }
    return trace;
}

std::vector<double> simulate_l1_icache(const moe::LayerSchedule& sched,
                                       const NoiseModel& nm, Rng& rng) {
    return simulate_l1l2(sched, nm, rng).l1;
}

std::vector<double> simulate_l2(const moe::LayerSchedule& sched,
                                const NoiseModel& nm, Rng& rng) {
    return simulate_l1l2(sched, nm, rng).l2;
}

std::vector<std::vector<double>>
simulate_pageout_reload(const std::vector<LayerMask>& step_masks,
                        const NoiseModel& nm, Rng& rng) {
    nm.validate();
    std::vector<std::vector<double>> out;
    out.reserve(step_masks.size());
    for (const auto& mask : step_masks) {
        std::vector<double> lat(mask.size());
        for (std::size_t i = 0; i < mask.size(); ++i) {
            bool active = mask[i] != 0;
            if (rng.bernoulli(nm.reload.flip_prob)) active = !active;
            lat[i] = active ? rng.gaussian(nm.reload.hit_mean, nm.reload.hit_sd)
                            : rng.gaussian(nm.reload.miss_mean, nm.reload.miss_sd);
        }
        out.push_back(std::move(lat));
    }
    return out;
}

std::vector<std::vector<long>>
simulate_perf_counter(const std::vector<std::vector<long>>& load,
                      const NoiseModel& nm, Rng& rng) {
    nm.validate();
    std::vector<std::vector<long>> out;
    out.reserve(load.size());
    for (const auto& layer : load) {
        std::vector<long> threads(layer.size(), 0);
        for (std::size_t i = 0; i < layer.size(); ++i) {
            if (layer[i] == 0) continue; // inactive experts launch nothing
            double v = nm.threads.per_token_threads * static_cast<double>(layer[i]);
            if (nm.threads.count_jitter_sd > 0)
                v += rng.gaussian(0, nm.threads.count_jitter_sd);
            threads[i] = std::max<long>(1, std::lround(v));
        }
        out.push_back(std::move(threads));
    }
    return out;
}

std::vector<std::uint8_t> tlb_hit_blocks(const LayerMask& mask) {
    const std::size_t m = mask.size();
    std::vector<std::uint8_t> hit(m + 1, 0);
    hit[0] = 1;
    hit[m] = 1;
    for (std::size_t i = 0; i < m; ++i)
        if (mask[i]) hit[i] = hit[i + 1] = 1;
    return hit;
}

std::vector<std::vector<double>>
simulate_tlb(const std::vector<LayerMask>& step_masks, const NoiseModel& nm,
             Rng& rng) {
    nm.validate();
    std::vector<std::vector<double>> out;
    out.reserve(step_masks.size());
    for (const auto& mask : step_masks) {
        auto hit = tlb_hit_blocks(mask);
        std::vector<double> lat(hit.size());
        for (std::size_t b = 0; b < hit.size(); ++b) {
            bool h = hit[b] != 0;
            if (rng.bernoulli(nm.tlb.flip_prob)) h = !h;
            lat[b] = h ? rng.gaussian(nm.tlb.hit_mean, nm.tlb.hit_sd)
                       : rng.gaussian(nm.tlb.miss_mean, nm.tlb.miss_sd);
        }
        out.push_back(std::move(lat));
    }
    return out;
}

std::string format_g17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

void write_mtrc(const std::string& path, const std::vector<TraceSection>& sections) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ChannelError("cannot write trace file: " + path);
    for (const auto& s : sections) {
        out << "#mtrc,channel=" << s.channel << ",layer=" << s.layer
            << ",seed=" << s.seed << "\n";
        for (const auto& row : s.rows) {
            for (std::size_t i = 0; i < row.size(); ++i) {
                if (i) out << ',';
                out << format_g17(row[i]);
            }
            out << '\n';
        }
    }
}

std::vector<TraceSection> read_mtrc(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ChannelError("cannot open trace file: " + path);
    std::vector<TraceSection> sections;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        if (line.rfind("#mtrc,", 0) == 0) {
            TraceSection s;
            std::istringstream hs(line.substr(6));
            std::string field;
            while (std::getline(hs, field, ',')) {
                auto eq = field.find('=');
                if (eq == std::string::npos)
                    throw ChannelError("bad trace header at line " + std::to_string(lineno));
                std::string key = field.substr(0, eq), val = field.substr(eq + 1);
                if (key == "channel") s.channel = val;
                else if (key == "layer") s.layer = std::stoi(val);
                else if (key == "seed") s.seed = std::stoull(val);
                else throw ChannelError("unknown trace header field: " + key);
            }
            if (s.channel != "l1" && s.channel != "l2" && s.channel != "reload" &&
                s.channel != "threads" && s.channel != "tlb")
                throw ChannelError("unknown trace channel: " + s.channel);
            sections.push_back(std::move(s));
            continue;
        }
        if (sections.empty())
            throw ChannelError("trace data before any header (line " +
                               std::to_string(lineno) + ")");
        std::vector<double> row;
        std::istringstream rs(line);
        std::string cell;
        while (std::getline(rs, cell, ',')) row.push_back(std::stod(cell));
        sections.back().rows.push_back(std::move(row));
    }
    return sections;
}

} // namespace expertleak::channel
