#include "expertleak/translate.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

namespace expertleak::translate {

double estimate_noise_sd(const std::vector<double>& y) {
    if (y.size() < 2) return 0.0;
    std::vector<double> d(y.size() - 1);
    for (std::size_t i = 0; i + 1 < y.size(); ++i) d[i] = std::fabs(y[i + 1] - y[i]);
    std::nth_element(d.begin(), d.begin() + d.size() / 2, d.end());
    const double mad = d[d.size() / 2];
    // Differences of iid gaussians have sd sqrt(2) times the sample sd.
    return mad / (0.6744897501960817 * std::sqrt(2.0));
}

double default_penalty(const std::vector<double>& y) {
    const double sd = estimate_noise_sd(y);
    const double n = static_cast<double>(y.size());
    return std::max(1e-9, 2.0 * sd * sd * std::log(std::max(2.0, n)));
}

namespace {

struct SegCost {
    std::vector<double> s1, s2;
    explicit SegCost(const std::vector<double>& y) : s1(y.size() + 1, 0.0), s2(y.size() + 1, 0.0) {
        for (std::size_t i = 0; i < y.size(); ++i) {
            s1[i + 1] = s1[i] + y[i];
            s2[i + 1] = s2[i] + y[i] * y[i];
        }
    }
    // L2 cost of segment [a, b)
    double operator()(int a, int b) const {
        const double sum = s1[b] - s1[a];
        return (s2[b] - s2[a]) - sum * sum / static_cast<double>(b - a);
    }
};

Changepoints backtrack(const std::vector<int>& prev, int n, double beta) {
    Changepoints out;
    out.penalty = beta;
    int t = n;
    while (t > 0) {
        int s = prev[t];
        if (s > 0) out.indices.push_back(s);
        t = s;
    }
    std::reverse(out.indices.begin(), out.indices.end());
    return out;
}

} // namespace

Changepoints pelt(const std::vector<double>& y, double beta) {
    if (beta < 0) throw TranslateError("pelt: penalty must be nonnegative");
    const int n = static_cast<int>(y.size());
    if (n < 2) return Changepoints{{}, beta, "l2"};
    SegCost cost(y);

    std::vector<double> F(n + 1, std::numeric_limits<double>::infinity());
    std::vector<int> prev(n + 1, 0);
    F[0] = -beta;
    std::vector<int> cands = {0};
    for (int t = 1; t <= n; ++t) {
        double best = std::numeric_limits<double>::infinity();
        int arg = 0;
        for (int s : cands) {
            const double v = F[s] + cost(s, t) + beta;
            if (v < best) {
                best = v;
                arg = s;
            }
        }
        F[t] = best;
        prev[t] = arg;
        // Prune candidates that can never become optimal again (K = 0 for
        // the additive L2 cost).
        std::vector<int> keep;
        keep.reserve(cands.size() + 1);
        for (int s : cands)
            if (F[s] + cost(s, t) <= F[t]) keep.push_back(s);
        keep.push_back(t);
        cands = std::move(keep);
    }
    return backtrack(prev, n, beta);
}

Changepoints exhaustive_dp(const std::vector<double>& y, double beta) {
    if (beta < 0) throw TranslateError("exhaustive_dp: penalty must be nonnegative");
    const int n = static_cast<int>(y.size());
    if (n < 2) return Changepoints{{}, beta, "l2"};
    SegCost cost(y);
    std::vector<double> F(n + 1, std::numeric_limits<double>::infinity());
    std::vector<int> prev(n + 1, 0);
    F[0] = -beta;
    for (int t = 1; t <= n; ++t) {
        for (int s = 0; s < t; ++s) {
            const double v = F[s] + cost(s, t) + beta;
            if (v < F[t]) {
                F[t] = v;
                prev[t] = s;
            }
        }
    }
    return backtrack(prev, n, beta);
}

std::vector<int> detect_icache_peaks(const std::vector<double>& l1, double z) {
    if (l1.empty()) return {};
    std::vector<double> sorted = l1;
    std::nth_element(sorted.begin(), sorted.begin() + sorted.size() / 2, sorted.end());
    const double med = sorted[sorted.size() / 2];
    std::vector<double> dev(l1.size());
    for (std::size_t i = 0; i < l1.size(); ++i) dev[i] = std::fabs(l1[i] - med);
    std::nth_element(dev.begin(), dev.begin() + dev.size() / 2, dev.end());
    const double sd = 1.4826 * dev[dev.size() / 2];
    const double thresh = med + z * sd;

    std::vector<int> peaks;
    std::size_t i = 0;
    while (i < l1.size()) {
        if (l1[i] <= thresh) {
            ++i;
            continue;
        }
        std::size_t best = i;
        while (i < l1.size() && l1[i] > thresh) {
            if (l1[i] > l1[best]) best = i;
            ++i;
        }
        peaks.push_back(static_cast<int>(best));
    }
    return peaks;
}

Split2 split_two_clusters(const std::vector<double>& values) {
    Split2 out;
    out.high.assign(values.size(), 0);
    if (values.empty()) {
        out.degenerate = true;
        return out;
    }
    double lo = *std::min_element(values.begin(), values.end());
    double hi = *std::max_element(values.begin(), values.end());
    if (hi - lo < 1e-12) {
        out.degenerate = true;
        out.low_center = out.high_center = lo;
        return out;
    }
    double cl = lo, ch = hi;
    for (int iter = 0; iter < 50; ++iter) {
        double sl = 0, sh = 0;
        int nl = 0, nh = 0;
        for (double v : values) {
            if (std::fabs(v - cl) <= std::fabs(v - ch)) {
                sl += v;
                ++nl;
            } else {
                sh += v;
                ++nh;
            }
        }
        if (nl == 0 || nh == 0) break;
        cl = sl / nl;
        ch = sh / nh;
    }
    out.low_center = cl;
    out.high_center = ch;
    for (std::size_t i = 0; i < values.size(); ++i)
        out.high[i] = std::fabs(values[i] - ch) < std::fabs(values[i] - cl) ? 1 : 0;
    return out;
}

std::vector<long> round_preserving_sum(const std::vector<double>& weights, long total) {
    double wsum = 0;
    for (double w : weights) wsum += std::max(0.0, w);
    std::vector<long> counts(weights.size(), 0);
    if (wsum <= 0 || total <= 0) return counts;
    std::vector<double> frac(weights.size());
    long assigned = 0;
    for (std::size_t i = 0; i < weights.size(); ++i) {
        const double share = std::max(0.0, weights[i]) / wsum * total;
        counts[i] = static_cast<long>(std::floor(share));
        frac[i] = share - counts[i];
        assigned += counts[i];
    }
    std::vector<std::size_t> order(weights.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return frac[a] > frac[b]; });
    for (long r = total - assigned, j = 0; r > 0; --r, ++j) ++counts[order[j]];
    return counts;
}

namespace {

int nearest_peak(const std::vector<int>& peaks, double pos, double tol) {
    int best = -1;
    double bestd = tol;
    for (int p : peaks) {
        const double d = std::fabs(p - pos);
        if (d <= bestd) {
            bestd = d;
            best = p;
        }
    }
    return best;
}

} // namespace

LayerLoad recover_load_cpu(const std::vector<double>& l1,
                           const std::vector<double>& l2, double sample_period,
                           int num_experts, double base_cost,
                           double per_token_cost, long token_budget) {
    if (l1.size() != l2.size())
        throw TranslateError("recover_load_cpu: traces must share one time base");
    LayerLoad out;
    out.proportions.assign(num_experts, 0.0);

    auto cps = pelt(l2, default_penalty(l2));
    std::vector<int> bounds = {0};
    bounds.insert(bounds.end(), cps.indices.begin(), cps.indices.end());
    bounds.push_back(static_cast<int>(l2.size()));

    std::vector<double> means;
    for (std::size_t i = 0; i + 1 < bounds.size(); ++i) {
        double s = 0;
        for (int j = bounds[i]; j < bounds[i + 1]; ++j) s += l2[j];
        means.push_back(s / (bounds[i + 1] - bounds[i]));
    }
    auto split = split_two_clusters(means);
    if (split.degenerate) {
        out.partial = true;
        return out;
    }

    // Each high-occupancy segment is one expert's up+gate span.
    auto peaks = detect_icache_peaks(l1);
    std::vector<double> durations;
    std::vector<std::size_t> high_segs;
    for (std::size_t i = 0; i < means.size(); ++i)
        if (split.high[i]) high_segs.push_back(i);
    for (std::size_t h = 0; h < high_segs.size(); ++h) {
        const std::size_t i = high_segs[h];
        double start = bounds[i];
        double down = bounds[i + 1];
        // Tolerances must stay below half the distance to the neighboring
        // experts' peaks, or a dropped boundary peak gets replaced by a
        // foreign one.
        const double quarter = (down - start) / 4.0;
        const double prev_end = h > 0 ? bounds[high_segs[h - 1] + 1] : 0.0;
        const double next_start = h + 1 < high_segs.size()
                                      ? bounds[high_segs[h + 1]]
                                      : static_cast<double>(l2.size());
        const double tol_a = std::min(quarter, (start - prev_end) / 2.0);
        const double tol_b = std::min(quarter, (next_start - down) / 2.0);
        const int pa = nearest_peak(peaks, start, tol_a);
        const int pb = nearest_peak(peaks, down, tol_b);
        const int pm = nearest_peak(peaks, (start + down) / 2.0, quarter);
        // The three phases are equal, so a missing boundary peak can be
        // reconstructed from the other two.
        double s = start, d = down;
        if (pa >= 0) s = pa;
        else if (pm >= 0 && pb >= 0) s = 2.0 * pm - pb;
        if (pb >= 0) d = pb;
        else if (pm >= 0 && pa >= 0) d = 2.0 * pm - pa;
        if (d <= s) {
            s = start;
            d = down;
        }
        const double dur = (d - s) * sample_period; // up + gate
        durations.push_back(std::max(0.0, dur / 2.0 - base_cost) / per_token_cost);
    }

    const int found = static_cast<int>(durations.size());
    if (found != num_experts) out.partial = true;
    const int usable = std::min(found, num_experts);
    double total = 0;
    for (int i = 0; i < usable; ++i) total += durations[i];
    if (total <= 0) {
        out.partial = true;
        return out;
    }
    for (int i = 0; i < usable; ++i) out.proportions[i] = durations[i] / total;
    if (token_budget >= 0)
        out.counts = round_preserving_sum(out.proportions, token_budget);
    return out;
}

LayerLoad recover_load_gpu(const std::vector<long>& threads,
                           double per_token_threads, long token_budget) {
    LayerLoad out;
    out.proportions.assign(threads.size(), 0.0);
    double total = 0;
    for (long t : threads) total += t;
    if (total <= 0) {
        out.partial = true;
        return out;
    }
    for (std::size_t i = 0; i < threads.size(); ++i)
        out.proportions[i] = threads[i] / total;
    (void)per_token_threads;
    if (token_budget >= 0)
        out.counts = round_preserving_sum(out.proportions, token_budget);
    return out;
}

SeqEstimate recover_seq_pageout(const std::vector<double>& latencies, int k) {
    SeqEstimate out;
    const int m = static_cast<int>(latencies.size());
    out.mask.assign(m, 0);
    out.confidence.assign(m, 0.0);

    if (k >= 0) {
        if (k > m) throw TranslateError("recover_seq_pageout: k exceeds expert count");
        std::vector<int> order(m);
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
            return latencies[a] < latencies[b];
        });
        for (int i = 0; i < k; ++i) out.mask[order[i]] = 1;
        const double cut = k == 0 || k == m
                               ? 0.0
                               : (latencies[order[k - 1]] + latencies[order[k]]) / 2.0;
        for (int i = 0; i < m; ++i) out.confidence[i] = std::fabs(latencies[i] - cut);
        return out;
    }

    std::vector<double> logs(m);
    for (int i = 0; i < m; ++i) logs[i] = std::log(std::max(1e-12, latencies[i]));
    auto split = split_two_clusters(logs);
    if (split.degenerate || split.high_center - split.low_center < 0.5) {
        out.degenerate = true;
        out.mask.clear();
        out.confidence.clear();
        return out;
    }
    const double cut = (split.low_center + split.high_center) / 2.0;
    for (int i = 0; i < m; ++i) {
        out.mask[i] = split.high[i] ? 0 : 1; // low latency means active
        out.confidence[i] = std::fabs(logs[i] - cut);
    }
    return out;
}

SeqEstimate recover_seq_tlb(const std::vector<double>& block_latencies) {
    const int blocks = static_cast<int>(block_latencies.size());
    if (blocks < 2) throw TranslateError("recover_seq_tlb: need at least 2 blocks");
    const int m = blocks - 1;

    std::vector<double> logs(blocks);
    for (int b = 0; b < blocks; ++b)
        logs[b] = std::log(std::max(1e-12, block_latencies[b]));
    auto split = split_two_clusters(logs);

    SeqEstimate out;
    out.mask.assign(m, 0);
    out.confidence.assign(m, 0.0);
    std::vector<std::uint8_t> hit(blocks, 0);
    if (split.degenerate || split.high_center - split.low_center < 0.5) {
        // All blocks in one cluster: the always-hot edge blocks tell us the
        // cluster is hits, so every block reads as hit.
        std::fill(hit.begin(), hit.end(), 1);
        out.degenerate = true;
    } else {
        for (int b = 0; b < blocks; ++b) hit[b] = split.high[b] ? 0 : 1;
    }
    // Edge blocks are shared with always-running code: forced hits, no
    // evidence either way.
    hit[0] = 1;
    hit[m] = 1;
    const double cut = (split.low_center + split.high_center) / 2.0;
    for (int i = 0; i < m; ++i) {
        out.mask[i] = (hit[i] && hit[i + 1]) ? 1 : 0;
        double c = std::numeric_limits<double>::infinity();
        if (i != 0) c = std::min(c, std::fabs(logs[i] - cut));
        if (i + 1 != m) c = std::min(c, std::fabs(logs[i + 1] - cut));
        out.confidence[i] = std::isfinite(c) ? c : 0.0;
    }
    return out;
}

void write_footprint(const std::string& path, const moe::ExpertFootprint& fp) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw TranslateError("cannot write footprint file: " + path);
    if (fp.kind == moe::ExpertFootprint::Kind::Load) {
        const int layers = static_cast<int>(fp.load.size());
        const int experts = layers ? static_cast<int>(fp.load[0].size()) : 0;
        out << "#fp,kind=load,layers=" << layers << ",experts=" << experts << "\n";
        for (const auto& row : fp.load) {
            for (std::size_t i = 0; i < row.size(); ++i) {
                if (i) out << ',';
                out << row[i];
            }
            out << '\n';
        }
    } else {
        const int layers = fp.seq.empty() ? 0 : static_cast<int>(fp.seq[0].size());
        const int experts =
            layers ? static_cast<int>(fp.seq[0][0].size()) : 0;
        out << "#fp,kind=seq,layers=" << layers << ",experts=" << experts << "\n";
        for (const auto& step : fp.seq)
            for (const auto& mask : step) {
                for (std::size_t i = 0; i < mask.size(); ++i) {
                    if (i) out << ',';
                    out << int(mask[i]);
                }
                out << '\n';
            }
    }
}

void write_load_proportions(const std::string& path,
                            const std::vector<std::vector<double>>& rows) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw TranslateError("cannot write footprint file: " + path);
    const int layers = static_cast<int>(rows.size());
    const int experts = layers ? static_cast<int>(rows[0].size()) : 0;
    out << "#fp,kind=load,layers=" << layers << ",experts=" << experts << "\n";
    for (const auto& row : rows) {
        for (std::size_t i = 0; i < row.size(); ++i) {
            if (i) out << ',';
            out << channel::format_g17(row[i]);
        }
        out << '\n';
    }
}

std::vector<std::vector<double>> read_load_proportions(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw TranslateError("cannot open footprint file: " + path);
    std::string header;
    if (!std::getline(in, header) || header.rfind("#fp,kind=load", 0) != 0)
        throw TranslateError("bad proportion footprint header in " + path);
    std::vector<std::vector<double>> rows;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<double> row;
        std::istringstream ls(line);
        std::string cell;
        while (std::getline(ls, cell, ',')) row.push_back(std::stod(cell));
        rows.push_back(std::move(row));
    }
    return rows;
}

moe::ExpertFootprint read_footprint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw TranslateError("cannot open footprint file: " + path);
    std::string header;
    if (!std::getline(in, header) || header.rfind("#fp,", 0) != 0)
        throw TranslateError("bad footprint header in " + path);
    std::string kind;
    int layers = -1, experts = -1;
    std::istringstream hs(header.substr(4));
    std::string field;
    while (std::getline(hs, field, ',')) {
        auto eq = field.find('=');
        if (eq == std::string::npos) throw TranslateError("bad footprint header field");
        std::string key = field.substr(0, eq), val = field.substr(eq + 1);
        if (key == "kind") kind = val;
        else if (key == "layers") layers = std::stoi(val);
        else if (key == "experts") experts = std::stoi(val);
        else throw TranslateError("unknown footprint header field: " + key);
    }
    if ((kind != "load" && kind != "seq") || layers < 0 || experts < 0)
        throw TranslateError("incomplete footprint header in " + path);

    std::vector<std::vector<long>> rows;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<long> row;
        std::istringstream rs(line);
        std::string cell;
        while (std::getline(rs, cell, ',')) row.push_back(std::stol(cell));
        if (static_cast<int>(row.size()) != experts)
            throw TranslateError("footprint row width mismatch in " + path);
        rows.push_back(std::move(row));
    }

    moe::ExpertFootprint fp;
    if (kind == "load") {
        fp.kind = moe::ExpertFootprint::Kind::Load;
        if (static_cast<int>(rows.size()) != layers)
            throw TranslateError("footprint row count mismatch in " + path);
        fp.load = std::move(rows);
    } else {
        fp.kind = moe::ExpertFootprint::Kind::Sequence;
        if (layers == 0 || rows.size() % layers != 0)
            throw TranslateError("footprint row count mismatch in " + path);
        for (std::size_t r = 0; r < rows.size(); r += layers) {
            std::vector<std::vector<std::uint8_t>> step;
            for (int l = 0; l < layers; ++l) {
                std::vector<std::uint8_t> mask(experts);
                for (int e = 0; e < experts; ++e)
                    mask[e] = rows[r + l][e] ? 1 : 0;
                step.push_back(std::move(mask));
            }
            fp.seq.push_back(std::move(step));
        }
    }
    return fp;
}

} // namespace expertleak::translate
