#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "expertleak/channel.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>

using namespace expertleak;
using namespace expertleak::channel;

namespace {

moe::LayerSchedule make_schedule(const std::vector<std::pair<int, long>>& entries,
                                 double base = 10.0, double ptc = 5.0) {
    moe::LayerSchedule sched;
    for (auto [e, c] : entries) {
        moe::ExpertEntry entry;
        entry.expert = e;
        entry.token_count = c;
        const double d = base + ptc * c;
        entry.phase_duration = {d, d, d};
        sched.push_back(entry);
    }
    return sched;
}

std::vector<std::uint8_t> mask_from(const std::vector<int>& active, int m) {
    std::vector<std::uint8_t> mask(m, 0);
    for (int i : active) mask[i] = 1;
    return mask;
}

} // namespace

TEST_CASE("noise model validation") {
    NoiseModel nm = NoiseModel::noiseless();
    CHECK_NOTHROW(nm.validate());
    nm.reload.miss_mean = nm.reload.hit_mean;
    CHECK_THROWS_AS(nm.validate(), ChannelError);
    nm = NoiseModel::noiseless();
    nm.tlb.flip_prob = 1.5;
    CHECK_THROWS_AS(nm.validate(), ChannelError);
    CHECK_THROWS_AS(NoiseModel::calibrated(5), ChannelError);
    for (int level = 0; level < 5; ++level) {
        NoiseModel c = NoiseModel::calibrated(level);
        CHECK(c.contention_level == level);
        CHECK_NOTHROW(c.validate());
        if (level > 0) {
            CHECK(c.reload.flip_prob >= NoiseModel::calibrated(level - 1).reload.flip_prob);
            CHECK(c.tlb.flip_prob >= NoiseModel::calibrated(level - 1).tlb.flip_prob);
        }
    }
}

TEST_CASE("noiseless l1 trace has exactly three peaks per expert") {
    NoiseModel nm = NoiseModel::noiseless();
    Rng rng(1);
    auto trace = simulate_l1l2(make_schedule({{3, 4}}), nm, rng);
    int peaks = 0;
    for (double v : trace.l1) peaks += v > nm.icache.baseline_mean + 1.0;
    CHECK(peaks == 3);

    Rng rng2(1);
    auto two = simulate_l1l2(make_schedule({{1, 2}, {5, 7}}), nm, rng2);
    peaks = 0;
    for (double v : two.l1) peaks += v > nm.icache.baseline_mean + 1.0;
    CHECK(peaks == 6);
}

TEST_CASE("peak spacing is proportional to load after base subtraction") {
    NoiseModel nm = NoiseModel::noiseless();
    Rng rng(2);
    auto trace = simulate_l1l2(make_schedule({{0, 10}, {1, 1}}), nm, rng);
    std::vector<int> peaks;
    for (int i = 0; i < (int)trace.l1.size(); ++i)
        if (trace.l1[i] > nm.icache.baseline_mean + 1.0) peaks.push_back(i);
    REQUIRE(peaks.size() == 6);
    const double spanA = peaks[1] - peaks[0]; // one phase of expert 0
    const double spanB = peaks[4] - peaks[3];
    CHECK((spanA - 10.0) / 5.0 == doctest::Approx(10.0));
    CHECK((spanB - 10.0) / 5.0 == doctest::Approx(1.0));
}

TEST_CASE("two percent of peaks are dropped on average") {
    NoiseModel nm = NoiseModel::noiseless();
    nm.icache.peak_miss_prob = 0.02;
    Rng rng(3);
    // 3334 single-expert schedules give 10002 peak opportunities.
    int total = 0, present = 0;
    for (int i = 0; i < 3334; ++i) {
        auto trace = simulate_l1l2(make_schedule({{0, 2}}), nm, rng);
        for (double v : trace.l1) present += v > nm.icache.baseline_mean + 1.0;
        total += 3;
    }
    const int dropped = total - present;
    // 3-sigma binomial window around 200 of 10002.
    CHECK(dropped >= 155);
    CHECK(dropped <= 245);
}

TEST_CASE("l2 occupancy is high during up and gate and low during down") {
    NoiseModel nm = NoiseModel::noiseless();
    Rng rng(4);
    auto trace = simulate_l1l2(make_schedule({{0, 2}}), nm, rng); // phase 20
    const int lead = nm.icache.lead_in;
    for (int i = 0; i < lead; ++i) CHECK(trace.l2[i] == nm.l2.level_low);
    for (int i = lead; i < lead + 40; ++i) CHECK(trace.l2[i] == nm.l2.level_high);
    for (int i = lead + 40; i < lead + 60; ++i) CHECK(trace.l2[i] == nm.l2.level_low);

    // Exactly two mean changes per expert when framed by idle samples.
    int changes = 0;
    for (std::size_t i = 1; i < trace.l2.size(); ++i)
        changes += trace.l2[i] != trace.l2[i - 1];
    CHECK(changes == 2);

    // Degenerate: equal levels produce a flat trace.
    NoiseModel flat = nm;
    flat.l2.level_high = flat.l2.level_low;
    Rng rng2(4);
    auto ftrace = simulate_l1l2(make_schedule({{0, 2}}), flat, rng2);
    changes = 0;
    for (std::size_t i = 1; i < ftrace.l2.size(); ++i)
        changes += ftrace.l2[i] != ftrace.l2[i - 1];
    CHECK(changes == 0);
}

TEST_CASE("pageout reload separates active from inactive") {
    NoiseModel nm = NoiseModel::noiseless();
    Rng rng(5);
    auto masks = std::vector<LayerMask>{mask_from({2, 9, 17, 30, 41, 63}, 64)};
    auto lat = simulate_pageout_reload(masks, nm, rng);
    REQUIRE(lat.size() == 1);
    REQUIRE(lat[0].size() == 64);
    int low = 0;
    for (int i = 0; i < 64; ++i) {
        const bool is_low = lat[0][i] < 250.0;
        low += is_low;
        CHECK(is_low == (masks[0][i] != 0));
    }
    CHECK(low == 6);
}

TEST_CASE("flip probability one inverts every reload label") {
    NoiseModel nm = NoiseModel::noiseless();
    nm.reload.flip_prob = 1.0;
    Rng rng(6);
    auto masks = std::vector<LayerMask>{mask_from({0, 1}, 8)};
    auto lat = simulate_pageout_reload(masks, nm, rng);
    for (int i = 0; i < 8; ++i)
        CHECK((lat[0][i] < 250.0) == (masks[0][i] == 0));
}

TEST_CASE("perf counter is exactly proportional to load when noiseless") {
    NoiseModel nm = NoiseModel::noiseless();
    Rng rng(7);
    std::vector<std::vector<long>> load = {{3, 0, 7, 12}, {5, 5, 5, 5}};
    auto threads = simulate_perf_counter(load, nm, rng);
    REQUIRE(threads.size() == 2);
    for (int i = 0; i < 4; ++i)
        CHECK(threads[0][i] == std::lround(nm.threads.per_token_threads * load[0][i]));
    CHECK(threads[0][1] == 0); // zero load emits nothing
    for (int i = 1; i < 4; ++i) CHECK(threads[1][i] == threads[1][0]);
}

TEST_CASE("tlb worked example produces the documented hit blocks") {
    NoiseModel nm = NoiseModel::noiseless();
    Rng rng(8);
    auto mask = mask_from({3, 35, 38, 60, 62, 63}, 64);
    auto hits = tlb_hit_blocks(mask);
    std::set<int> got;
    for (int b = 0; b < 65; ++b)
        if (hits[b]) got.insert(b);
    CHECK(got == std::set<int>{0, 3, 4, 35, 36, 38, 39, 60, 61, 62, 63, 64});

    auto lat = simulate_tlb({mask}, nm, rng);
    REQUIRE(lat[0].size() == 65);
    for (int b = 0; b < 65; ++b)
        CHECK((lat[0][b] < 250.0) == (hits[b] != 0));

    // No active experts: only the forced edge blocks are hot.
    auto none = tlb_hit_blocks(mask_from({}, 64));
    for (int b = 0; b < 65; ++b) CHECK((none[b] != 0) == (b == 0 || b == 64));
}

TEST_CASE("simulators are deterministic in the seed") {
    NoiseModel nm = NoiseModel::calibrated(2);
    auto masks = std::vector<LayerMask>{mask_from({1, 5, 9, 20, 33, 50}, 64)};
    Rng a(99), b(99), c(100);
    CHECK(simulate_tlb(masks, nm, a) == simulate_tlb(masks, nm, b));
    Rng a2(99), b2(99);
    CHECK(simulate_pageout_reload(masks, nm, a2) ==
          simulate_pageout_reload(masks, nm, b2));
    Rng s1(7), s2(7);
    auto t1 = simulate_l1l2(make_schedule({{0, 3}, {2, 5}}), nm, s1);
    auto t2 = simulate_l1l2(make_schedule({{0, 3}, {2, 5}}), nm, s2);
    CHECK(t1.l1 == t2.l1);
    CHECK(t1.l2 == t2.l2);
}

TEST_CASE("mtrc files round-trip bit-exactly") {
    NoiseModel nm = NoiseModel::calibrated(1);
    Rng rng(11);
    auto trace = simulate_l1l2(make_schedule({{0, 3}, {1, 8}}), nm, rng);
    auto masks = std::vector<LayerMask>{mask_from({2, 7, 11, 30, 31, 55}, 64)};
    auto tlb = simulate_tlb(masks, nm, rng);

    std::vector<TraceSection> sections;
    TraceSection s1{"l1", 0, 11, {}};
    for (double v : trace.l1) s1.rows.push_back({v});
    TraceSection s2{"l2", 0, 11, {}};
    for (double v : trace.l2) s2.rows.push_back({v});
    TraceSection s3{"tlb", 3, 11, tlb};
    sections = {s1, s2, s3};

    const std::string path = "test_channel_trace.mtrc";
    write_mtrc(path, sections);
    auto back = read_mtrc(path);
    REQUIRE(back.size() == 3);
    for (int i = 0; i < 3; ++i) {
        CHECK(back[i].channel == sections[i].channel);
        CHECK(back[i].layer == sections[i].layer);
        CHECK(back[i].seed == sections[i].seed);
        REQUIRE(back[i].rows.size() == sections[i].rows.size());
        for (std::size_t r = 0; r < back[i].rows.size(); ++r)
            CHECK(back[i].rows[r] == sections[i].rows[r]);
    }

    // Re-serialization is byte-identical.
    const std::string path2 = "test_channel_trace2.mtrc";
    write_mtrc(path2, back);
    std::ifstream f1(path, std::ios::binary), f2(path2, std::ios::binary);
    std::string b1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
    std::string b2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
    CHECK(b1 == b2);
    std::remove(path.c_str());
    std::remove(path2.c_str());

    CHECK_THROWS_AS(read_mtrc("does_not_exist.mtrc"), ChannelError);
}
