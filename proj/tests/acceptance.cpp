// Acceptance gate: one pass/fail line per criterion, nonzero exit on any
// failure. Protocols and tolerances are pinned here; the calibration sweeps
// live in tools/calibrate.cpp.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <sstream>
#include <thread>
#include <vector>

#include "expertleak/attack.hpp"
#include "expertleak/channel.hpp"
#include "expertleak/corpus.hpp"
#include "expertleak/moe.hpp"
#include "expertleak/pipeline.hpp"
#include "expertleak/stats.hpp"
#include "expertleak/translate.hpp"

namespace fs = std::filesystem;
using namespace expertleak;
using channel::NoiseModel;
using Clock = std::chrono::steady_clock;

namespace {

int g_failures = 0;

void report(int criterion, const char* name, bool pass, const std::string& detail,
            double seconds) {
    std::printf("criterion %2d  %-22s %s  (%s, %.1fs)\n", criterion, name,
                pass ? "PASS" : "FAIL", detail.c_str(), seconds);
    std::fflush(stdout);
    if (!pass) ++g_failures;
}

template <class Fn>
void parallel_for(int n, Fn fn) {
    const int workers =
        std::max(1u, std::min(8u, std::thread::hardware_concurrency()));
    std::mutex err_mutex;
    std::exception_ptr first_error;
    std::vector<std::thread> pool;
    for (int t = 0; t < workers; ++t)
        pool.emplace_back([&, t] {
            try {
                for (int i = t; i < n; i += workers) fn(i);
            } catch (...) {
                std::lock_guard<std::mutex> lock(err_mutex);
                if (!first_error) first_error = std::current_exception();
            }
        });
    for (auto& th : pool) th.join();
    if (first_error) std::rethrow_exception(first_error);
}

std::string fmt(const char* f, ...) {
    char buf[256];
    va_list ap;
    va_start(ap, f);
    std::vsnprintf(buf, sizeof buf, f, ap);
    va_end(ap);
    return buf;
}

// ---- shared measurement protocol (matches tools/calibrate.cpp) ----

constexpr int kM64 = 64, kK6 = 6, kPromptTokens = 900;
constexpr double kBase = 10.0, kPtc = 5.0;

std::vector<long> multinomial_load(Rng& rng) {
    std::vector<long> load(kM64, 0);
    for (int t = 0; t < kPromptTokens; ++t) {
        std::vector<int> picked;
        while ((int)picked.size() < kK6) {
            int e = static_cast<int>(rng.uniform_int(kM64));
            bool dup = false;
            for (int q : picked) dup = dup || q == e;
            if (!dup) picked.push_back(e);
        }
        for (int e : picked) ++load[e];
    }
    return load;
}

moe::LayerSchedule schedule_of(const std::vector<long>& load) {
    moe::LayerSchedule sched;
    for (std::size_t e = 0; e < load.size(); ++e) {
        if (load[e] == 0) continue;
        moe::ExpertEntry entry;
        entry.expert = static_cast<int>(e);
        entry.token_count = load[e];
        const double d = kBase + kPtc * load[e];
        entry.phase_duration = {d, d, d};
        sched.push_back(entry);
    }
    return sched;
}

double cpu_corr(const NoiseModel& nm, int trials, std::uint64_t seed) {
    std::vector<double> truth, est;
    for (int t = 0; t < trials; ++t) {
        Rng rng = Rng::derive(seed, t);
        auto load = multinomial_load(rng);
        auto trace = channel::simulate_l1l2(schedule_of(load), nm, rng);
        auto rec = translate::recover_load_cpu(trace.l1, trace.l2,
                                               trace.sample_period, kM64, kBase,
                                               kPtc, kPromptTokens * kK6);
        for (int e = 0; e < kM64; ++e) {
            truth.push_back(static_cast<double>(load[e]));
            est.push_back(static_cast<double>(rec.counts[e]));
        }
    }
    return stats::pearson(truth, est);
}

double gpu_corr(const NoiseModel& nm, int trials, std::uint64_t seed) {
    std::vector<double> truth, est;
    for (int t = 0; t < trials; ++t) {
        Rng rng = Rng::derive(seed, 5000 + t);
        auto load = multinomial_load(rng);
        auto threads = channel::simulate_perf_counter({load}, nm, rng);
        auto rec = translate::recover_load_gpu(
            threads[0], nm.threads.per_token_threads, kPromptTokens * kK6);
        for (int e = 0; e < kM64; ++e) {
            truth.push_back(static_cast<double>(load[e]));
            est.push_back(static_cast<double>(rec.counts[e]));
        }
    }
    return stats::pearson(truth, est);
}

std::vector<std::uint8_t> random_mask(Rng& rng, int m = kM64, int k = kK6) {
    std::vector<std::uint8_t> mask(m, 0);
    int placed = 0;
    while (placed < k) {
        int e = static_cast<int>(rng.uniform_int(m));
        if (!mask[e]) {
            mask[e] = 1;
            ++placed;
        }
    }
    return mask;
}

double channel_seq_accuracy(const NoiseModel& nm, bool tlb, int trials,
                            std::uint64_t seed) {
    double acc = 0.0;
    for (int t = 0; t < trials; ++t) {
        Rng rng = Rng::derive(seed, 9000 + t);
        auto mask = random_mask(rng);
        translate::SeqEstimate est;
        if (tlb) {
            auto lat = channel::simulate_tlb({mask}, nm, rng);
            est = translate::recover_seq_tlb(lat[0]);
        } else {
            auto lat = channel::simulate_pageout_reload({mask}, nm, rng);
            est = translate::recover_seq_pageout(lat[0], kK6);
        }
        acc += stats::sequence_accuracy(est.mask, mask);
    }
    return acc / trials;
}

moe::TokenSequence random_prompt(Rng& rng, int len, int vocab) {
    moe::TokenSequence t(len);
    for (auto& id : t) id = 1 + static_cast<int>(rng.uniform_int(vocab - 1));
    return t;
}

// ---- criteria ----

void criterion_1() {
    const auto t0 = Clock::now();
    long violations = 0, runs = 0;
    struct Cfg {
        const char* preset;
        int count;
        int max_len;
    } plans[] = {{"toy", 600, 50}, {"toy64", 300, 40}, {"lite-shape", 100, 12}};
    for (const auto& plan : plans) {
        const moe::Model model(moe::ModelConfig::preset(plan.preset));
        const auto& mc = model.config();
        std::mutex m;
        parallel_for(plan.count, [&](int i) {
            Rng rng = Rng::derive(0xC1 + mc.seed, i);
            const int n = 4 + static_cast<int>(rng.uniform_int(plan.max_len - 3));
            auto prompt = random_prompt(rng, n, mc.vocab_size);
            auto pre = model.prefill(prompt);
            long bad = 0;
            for (const auto& layer : pre.footprint.load) {
                long sum = 0;
                for (long c : layer) sum += c;
                bad += sum != static_cast<long>(n) * mc.top_k;
            }
            auto [tokens, fp] = model.generate(prompt, 3);
            for (const auto& step : fp.seq)
                for (const auto& mask : step) {
                    int ones = 0;
                    for (auto b : mask) ones += b != 0;
                    bad += ones != mc.top_k;
                }
            std::lock_guard<std::mutex> lock(m);
            violations += bad;
            ++runs;
        });
    }
    const double secs = std::chrono::duration<double>(Clock::now() - t0).count();
    report(1, "conservation/sparsity", violations == 0 && runs == 1000 && secs < 10.0,
           fmt("%ld violations over %ld runs", violations, runs), secs);
}

void criterion_2() {
    const auto t0 = Clock::now();
    const NoiseModel nm = NoiseModel::noiseless();
    const int trials = 1000;
    int cpu_ok = 0, gpu_ok = 0, page_ok = 0, tlb_ok = 0;

    Rng rng(0xC2);
    for (int t = 0; t < trials; ++t) {
        // cpu: strictly positive loads (a silent expert leaves no trace
        // feature to anchor its index)
        std::vector<long> loads(16);
        long total = 0;
        for (auto& l : loads) {
            l = 1 + static_cast<long>(rng.uniform_int(30));
            total += l;
        }
        auto trace = channel::simulate_l1l2(schedule_of(loads), nm, rng);
        auto rec = translate::recover_load_cpu(trace.l1, trace.l2,
                                               trace.sample_period, 16, kBase,
                                               kPtc, total);
        cpu_ok += !rec.partial && rec.counts == loads;

        // gpu: zeros allowed, identity carried by position
        std::vector<long> gload(16);
        long gtotal = 0;
        for (auto& l : gload) {
            l = static_cast<long>(rng.uniform_int(31));
            gtotal += l;
        }
        auto threads = channel::simulate_perf_counter({gload}, nm, rng);
        auto grec = translate::recover_load_gpu(threads[0],
                                                nm.threads.per_token_threads, gtotal);
        gpu_ok += grec.counts == gload;

        auto mask = random_mask(rng);
        auto lat = channel::simulate_pageout_reload({mask}, nm, rng);
        page_ok += translate::recover_seq_pageout(lat[0], kK6).mask == mask;

        // tlb: rejection-sample ambiguity-free active sets
        std::vector<std::uint8_t> tmask;
        for (;;) {
            tmask = random_mask(rng);
            auto hits = channel::tlb_hit_blocks(tmask);
            bool ambiguous = false;
            for (int e = 0; e < kM64; ++e)
                ambiguous = ambiguous || ((hits[e] && hits[e + 1]) != (tmask[e] != 0));
            if (!ambiguous) break;
        }
        auto tlat = channel::simulate_tlb({tmask}, nm, rng);
        tlb_ok += translate::recover_seq_tlb(tlat[0]).mask == tmask;
    }
    const double secs = std::chrono::duration<double>(Clock::now() - t0).count();
    const bool pass = cpu_ok == trials && gpu_ok == trials && page_ok == trials &&
                      tlb_ok == trials && secs < 60.0;
    report(2, "noiseless round-trip", pass,
           fmt("cpu %d/%d gpu %d page %d tlb %d", cpu_ok, trials, gpu_ok, page_ok,
               tlb_ok),
           secs);
}

void criterion_3() {
    const auto t0 = Clock::now();
    Rng rng(0xC3);
    int equal = 0;
    for (int trial = 0; trial < 500; ++trial) {
        const int n = 20 + static_cast<int>(rng.uniform_int(181));
        const int pieces = 1 + static_cast<int>(rng.uniform_int(5));
        std::vector<double> y;
        double level = 0.0;
        for (int p = 0; p < pieces; ++p) {
            level += rng.gaussian(0, 5.0);
            const int len = 1 + static_cast<int>(rng.uniform_int(n / pieces + 1));
            for (int i = 0; i < len; ++i) y.push_back(level + rng.gaussian(0, 1.0));
        }
        while ((int)y.size() < n) y.push_back(level + rng.gaussian(0, 1.0));
        const double beta = translate::default_penalty(y);
        equal += translate::pelt(y, beta).indices ==
                 translate::exhaustive_dp(y, beta).indices;
    }

    // step detection at SNR 5: a changepoint within +-1 of the step
    int localized = 0;
    const int trials = 1000;
    for (int t = 0; t < trials; ++t) {
        const int n = 120;
        const int step = 30 + static_cast<int>(rng.uniform_int(60));
        std::vector<double> y(n);
        for (int i = 0; i < n; ++i) y[i] = (i < step ? 0.0 : 5.0) + rng.gaussian();
        auto cps = translate::pelt(y, 2.0 * std::log(double(n)));
        bool near = false;
        for (int c : cps.indices) near = near || std::abs(c - step) <= 1;
        localized += near;
    }
    const double secs = std::chrono::duration<double>(Clock::now() - t0).count();
    const bool pass = equal == 500 && localized >= 990 && secs < 60.0;
    report(3, "pelt oracle", pass,
           fmt("dp-equal %d/500, localized %d/%d", equal, localized, trials), secs);
}

void criterion_4() {
    const auto t0 = Clock::now();
    const NoiseModel nm = NoiseModel::noiseless();
    Rng rng(0xC4);
    long insertions = 0, candidates = 0;
    bool adjacency_ok = true, no_misses = true;
    for (int t = 0; t < 10000; ++t) {
        auto mask = random_mask(rng);
        auto lat = channel::simulate_tlb({mask}, nm, rng);
        auto est = translate::recover_seq_tlb(lat[0]).mask;
        auto hits = channel::tlb_hit_blocks(mask);
        for (int e = 0; e < kM64; ++e) {
            if (hits[e] || hits[e + 1]) ++candidates;
            if (mask[e] && !est[e]) no_misses = false;
            if (!mask[e] && est[e]) {
                ++insertions;
                // zero-noise error must sit next to true activity
                const bool left = e > 0 && mask[e - 1];
                const bool right = e < kM64 - 1 && mask[e + 1];
                if (!(left || right || e == 0 || e == kM64 - 1))
                    adjacency_ok = false;
            }
        }
    }
    const double rate = 100.0 * static_cast<double>(insertions) /
                        static_cast<double>(candidates);

    // worked example from the reference trace
    std::vector<std::uint8_t> ex(kM64, 0);
    for (int e : {3, 35, 38, 60, 62, 63}) ex[e] = 1;
    Rng erng(0xC4F);
    auto elat = channel::simulate_tlb({ex}, nm, erng);
    auto eest = translate::recover_seq_tlb(elat[0]).mask;
    std::vector<int> got;
    for (int e = 0; e < kM64; ++e)
        if (eest[e]) got.push_back(e);
    const bool example_ok = got == std::vector<int>{3, 35, 38, 60, 61, 62, 63};

    const double secs = std::chrono::duration<double>(Clock::now() - t0).count();
    const bool pass = std::fabs(rate - 3.4) <= 0.5 && adjacency_ok && no_misses &&
                      example_ok && secs < 30.0;
    report(4, "tlb ambiguity oracle", pass,
           fmt("error rate %.2f%%, adjacency %s, example %s", rate,
               adjacency_ok && no_misses ? "ok" : "VIOLATED",
               example_ok ? "ok" : "WRONG"),
           secs);
}

void criterion_5() {
    const auto t0 = Clock::now();
    const double cc = cpu_corr(NoiseModel::calibrated(0), 160, 1);
    const double gc = gpu_corr(NoiseModel::calibrated(0), 160, 2);
    const double pa = 100.0 * channel_seq_accuracy(NoiseModel::calibrated(0), false,
                                                   4000, 77);
    const double ta = 100.0 * channel_seq_accuracy(NoiseModel::calibrated(0), true,
                                                   4000, 78);
    const double secs = std::chrono::duration<double>(Clock::now() - t0).count();
    const bool pass = std::fabs(cc - 0.901) <= 0.02 && std::fabs(gc - 0.993) <= 0.02 &&
                      std::fabs(pa - 99.2) <= 2.0 && std::fabs(ta - 94.3) <= 2.0 &&
                      secs < 120.0;
    report(5, "calibration targets", pass,
           fmt("cpu %.3f gpu %.4f pageout %.2f%% tlb %.2f%%", cc, gc, pa, ta), secs);
}

void criterion_6() {
    const auto t0 = Clock::now();
    const double page_ref[5] = {99.2, 91.2, 83.8, 81.4, 81.8};
    const double tlb_ref[5] = {94.3, 85.1, 78.5, 68.3, 68.4};
    double page[5], tlb[5];
    bool within = true;
    for (int level = 0; level < 5; ++level) {
        page[level] = 100.0 * channel_seq_accuracy(NoiseModel::calibrated(level),
                                                   false, 4000, 200 + level);
        tlb[level] = 100.0 * channel_seq_accuracy(NoiseModel::calibrated(level), true,
                                                  4000, 300 + level);
        within = within && std::fabs(page[level] - page_ref[level]) <= 2.0 &&
                 std::fabs(tlb[level] - tlb_ref[level]) <= 2.0;
    }
    bool monotone = true;
    for (int level = 1; level < 5; ++level)
        monotone = monotone && page[level] <= page[level - 1] &&
                   tlb[level] <= tlb[level - 1];
    const bool plateau = std::fabs(page[4] - page[3]) <= 1.5 &&
                         std::fabs(tlb[4] - tlb[3]) <= 1.5;
    const double secs = std::chrono::duration<double>(Clock::now() - t0).count();
    report(6, "contention trend", within && monotone && plateau && secs < 180.0,
           fmt("pageout {%.1f %.1f %.1f %.1f %.1f} tlb {%.1f %.1f %.1f %.1f %.1f}",
               page[0], page[1], page[2], page[3], page[4], tlb[0], tlb[1], tlb[2],
               tlb[3], tlb[4]),
           secs);
}

double rel_vec_error(const std::vector<double>& a, const std::vector<double>& b) {
    double num = 0, den = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        num += (a[i] - b[i]) * (a[i] - b[i]);
        den += a[i] * a[i] + b[i] * b[i];
    }
    return std::sqrt(num) / std::max(1e-12, std::sqrt(den));
}

void criterion_7() {
    const auto t0 = Clock::now();
    Rng rng(0xC7);
    auto random_batch = [&](int n, int dim, int classes) {
        attack::Dataset d;
        d.classes = classes;
        for (int i = 0; i < n; ++i) {
            std::vector<double> x(dim);
            for (auto& v : x) v = rng.gaussian();
            d.x.push_back(std::move(x));
            d.y.push_back(static_cast<int>(rng.uniform_int(classes)));
        }
        d.y[0] = 0;
        d.y[1] = 1;
        return d;
    };

    double worst_pia = 0.0, worst_rra = 0.0;
    const double h = 1e-5;
    for (int trial = 0; trial < 20; ++trial) {
        const int dim = 3 + static_cast<int>(rng.uniform_int(4));
        const int classes = 2 + static_cast<int>(rng.uniform_int(4));

        // pia: resample until clear of the rectifier kinks
        attack::PiaModel m;
        attack::Dataset batch;
        for (;;) {
            m = attack::init_pia(dim, 5, 4, classes, 7000 + trial);
            batch = random_batch(8, dim, classes);
            double margin = 1e300;
            for (const auto& xv : batch.x) {
                Eigen::VectorXd x =
                    Eigen::Map<const Eigen::VectorXd>(xv.data(), xv.size());
                Eigen::VectorXd z1 = m.w1 * x + m.b1;
                Eigen::VectorXd z2 = m.w2 * z1.cwiseMax(0.0) + m.b2;
                margin = std::min(
                    {margin, z1.cwiseAbs().minCoeff(), z2.cwiseAbs().minCoeff()});
            }
            if (margin > 1e-2) break;
        }
        auto analytic = attack::pia_gradient(m, batch);
        auto params = attack::pia_parameters(m);
        std::vector<double> fd(params.size());
        for (std::size_t i = 0; i < params.size(); ++i) {
            auto p = params;
            p[i] = params[i] + h;
            attack::pia_set_parameters(m, p);
            const double up = attack::pia_loss(m, batch);
            p[i] = params[i] - h;
            attack::pia_set_parameters(m, p);
            fd[i] = (up - attack::pia_loss(m, batch)) / (2 * h);
        }
        worst_pia = std::max(worst_pia, rel_vec_error(analytic, fd));

        attack::RraModel r;
        r.w.resize(classes, dim);
        r.b.resize(classes);
        for (int i = 0; i < r.w.size(); ++i) r.w.data()[i] = rng.gaussian(0, 0.5);
        for (int i = 0; i < classes; ++i) r.b[i] = rng.gaussian(0, 0.5);
        attack::Dataset rbatch = random_batch(6, dim, classes);
        auto ranalytic = attack::rra_gradient(r, rbatch, 1e-4);
        auto rparams = attack::rra_parameters(r);
        std::vector<double> rfd(rparams.size());
        for (std::size_t i = 0; i < rparams.size(); ++i) {
            auto p = rparams;
            p[i] = rparams[i] + h;
            attack::rra_set_parameters(r, p);
            const double up = attack::rra_loss(r, rbatch, 1e-4);
            p[i] = rparams[i] - h;
            attack::rra_set_parameters(r, p);
            rfd[i] = (up - attack::rra_loss(r, rbatch, 1e-4)) / (2 * h);
        }
        worst_rra = std::max(worst_rra, rel_vec_error(ranalytic, rfd));
    }
    const double secs = std::chrono::duration<double>(Clock::now() - t0).count();
    report(7, "gradient checks", worst_pia < 1e-4 && worst_rra < 1e-4 && secs < 30.0,
           fmt("worst rel err pia %.2e rra %.2e", worst_pia, worst_rra), secs);
}

std::vector<corpus::PromptTemplate> short_templates() {
    auto all = corpus::load_templates(EL_DATA_DIR "/templates.tsv");
    std::vector<corpus::PromptTemplate> shorts;
    for (auto& t : all)
        if (t.length == corpus::PromptTemplate::Length::Short)
            shorts.push_back(std::move(t));
    return shorts;
}

std::vector<std::vector<double>>
prefill_features(const moe::Model& model,
                 const std::vector<corpus::LabeledPrompt>& data) {
    std::vector<std::vector<double>> feats(data.size());
    parallel_for(static_cast<int>(data.size()), [&](int i) {
        feats[i] = attack::featurize_load(model.prefill(data[i].ids).footprint.load);
    });
    return feats;
}

void criterion_8() {
    const auto t0 = Clock::now();
    auto shorts = short_templates();
    corpus::Vocabulary vocab(4096);
    auto data = corpus::build_pia_dataset(10000, shorts, vocab, 101);
    const moe::Model model(moe::ModelConfig::toy());
    auto feats = prefill_features(model, data);

    auto split = [&](auto label_of, int classes) {
        attack::Dataset train, test;
        train.classes = test.classes = classes;
        for (int i = 0; i < 10000; ++i) {
            auto& dst = i < 8000 ? train : test;
            dst.x.push_back(feats[i]);
            dst.y.push_back(label_of(data[i].record));
        }
        return std::make_pair(train, test);
    };

    attack::PiaHyper hyper;
    hyper.seed = 1001;

    auto [ill_train, ill_test] =
        split([](const corpus::HealthRecord& r) { return r.illness; }, 116);
    auto ill_model = attack::train_pia(ill_train, hyper);
    const double ill_top1 = attack::top1_accuracy(ill_model, ill_test);

    auto [g_train, g_test] =
        split([](const corpus::HealthRecord& r) { return r.gender; }, 2);
    hyper.seed = 1002;
    auto g_model = attack::train_pia(g_train, hyper);
    const double g_top1 = attack::top1_accuracy(g_model, g_test);

    // cross-template: clause-scrambled restatements of fresh records
    auto xdata = corpus::build_pia_dataset(2000, shorts, vocab, 555, true);
    auto xfeats = prefill_features(model, xdata);
    attack::Dataset xtest;
    xtest.classes = 116;
    for (int i = 0; i < 2000; ++i) {
        xtest.x.push_back(xfeats[i]);
        xtest.y.push_back(xdata[i].record.illness);
    }
    const double x_top1 = attack::top1_accuracy(ill_model, xtest);

    const double secs = std::chrono::duration<double>(Clock::now() - t0).count();
    const bool pass = ill_top1 >= 0.43 && g_top1 >= 0.90 && x_top1 < ill_top1 &&
                      secs < 600.0;
    report(8, "pia desk-scale", pass,
           fmt("illness %.1f%% gender %.1f%% cross-template %.1f%%", 100 * ill_top1,
               100 * g_top1, 100 * x_top1),
           secs);
}

void criterion_9() {
    const auto t0 = Clock::now();
    std::vector<std::string> texts;
    const std::vector<std::string> domains = {"general", "medical", "financial"};
    for (std::size_t d = 0; d < domains.size(); ++d) {
        auto sents = corpus::synth_domain_sentences(domains[d], 400,
                                                    Rng::derive(103, d).next_u64());
        texts.insert(texts.end(), sents.begin(), sents.end());
    }
    auto rc = corpus::build_rra_corpus(texts, 103);
    const bool vocab_ok = rc.vocab.known_count() <= 2000;

    const moe::Model model(moe::ModelConfig::toy64());
    const int n = static_cast<int>(rc.pairs.size());
    const int train_pairs = n * 9 / 10;

    // teacher-forced footprints for every pair
    std::vector<std::vector<std::vector<std::vector<std::uint8_t>>>> masks(n);
    parallel_for(n, [&](int i) {
        auto trace =
            model.teacher_forced_trace(rc.pairs[i].prompt, rc.pairs[i].response);
        for (auto& pair : trace) masks[i].push_back(std::move(pair.masks));
    });

    attack::Dataset train;
    int max_label = 0;
    for (const auto& pair : rc.pairs)
        for (int id : pair.response) max_label = std::max(max_label, id);
    train.classes = max_label + 1;
    for (int i = 0; i < train_pairs; ++i)
        for (std::size_t t = 0; t < masks[i].size(); ++t) {
            train.x.push_back(attack::featurize_seq(masks[i][t]));
            train.y.push_back(rc.pairs[i].response[t]);
        }
    attack::RraHyper hyper;
    hyper.seed = 2002;
    auto rra = attack::train_rra(train, hyper);

    // evaluation legs: direct footprints, pageout at contention 0,
    // tlb at contention 4
    auto eval_leg = [&](int which) {
        long hits = 0, total = 0;
        const NoiseModel nm =
            which == 1 ? NoiseModel::calibrated(0) : NoiseModel::calibrated(4);
        for (int i = train_pairs; i < n; ++i) {
            Rng rng = Rng::derive(0xC9 + which, i);
            std::vector<std::vector<double>> feats;
            for (const auto& step : masks[i]) {
                if (which == 0) {
                    feats.push_back(attack::featurize_seq(step));
                    continue;
                }
                auto lat = which == 1 ? channel::simulate_pageout_reload(step, nm, rng)
                                      : channel::simulate_tlb(step, nm, rng);
                std::vector<std::vector<std::uint8_t>> est_step;
                for (const auto& row : lat) {
                    auto est = which == 1 ? translate::recover_seq_pageout(row, kK6)
                                          : translate::recover_seq_tlb(row);
                    if ((int)est.mask.size() != kM64) est.mask.resize(kM64, 0);
                    est_step.push_back(std::move(est.mask));
                }
                feats.push_back(attack::featurize_seq(est_step));
            }
            auto pred = attack::reconstruct_response(rra, feats);
            for (std::size_t t = 0; t < pred.size(); ++t) {
                hits += pred[t] == rc.pairs[i].response[t];
                ++total;
            }
        }
        return static_cast<double>(hits) / static_cast<double>(total);
    };
    const double direct = eval_leg(0);
    const double pageout = eval_leg(1);
    const double tlb = eval_leg(2);

    const double secs = std::chrono::duration<double>(Clock::now() - t0).count();
    const bool pass = vocab_ok && direct >= 0.90 &&
                      std::fabs(direct - pageout) <= 0.015 && tlb < direct &&
                      tlb >= 0.70 && secs < 600.0;
    report(9, "rra desk-scale", pass,
           fmt("vocab %d, asr direct %.3f pageout %.3f tlb %.3f",
               rc.vocab.known_count(), direct, pageout, tlb),
           secs);
}

void criterion_10() {
    const auto t0 = Clock::now();
    auto shorts = short_templates();
    corpus::Vocabulary vocab(4096);
    const moe::Model model(moe::ModelConfig::toy());

    auto group_features = [&](int illness, int count, Rng& rng) {
        std::vector<std::vector<double>> rows(count);
        std::vector<moe::TokenSequence> prompts(count);
        for (int i = 0; i < count; ++i) {
            corpus::HealthRecord r = corpus::sample_record(rng);
            r.illness = illness;
            const auto& t = shorts[rng.uniform_int(shorts.size())];
            prompts[i] = corpus::tokenize(corpus::fill_template(t, r), vocab);
        }
        parallel_for(count, [&](int i) {
            rows[i] =
                attack::featurize_load(model.prefill(prompts[i]).footprint.load);
        });
        return rows;
    };

    int wins = 0;
    for (int seed = 0; seed < 20; ++seed) {
        Rng rng(4000 + seed);
        auto a = group_features(7, 100, rng);
        auto b = group_features(64, 100, rng);
        const int distinct = stats::welch_t(a, b).leaky_count;

        auto same = group_features(7, 200, rng);
        std::vector<std::vector<double>> s1(same.begin(), same.begin() + 100);
        std::vector<std::vector<double>> s2(same.begin() + 100, same.end());
        const int null_count = stats::welch_t(s1, s2).leaky_count;
        wins += distinct > null_count;
    }

    // property sweeps
    bool props = true;
    Rng rng(0xCA);
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<std::vector<double>> a, b;
        for (int i = 0; i < 6; ++i) {
            a.push_back({rng.gaussian(), rng.gaussian(2, 3)});
            b.push_back({rng.gaussian(1, 2), rng.gaussian()});
        }
        auto ab = stats::welch_t(a, b);
        auto ba = stats::welch_t(b, a);
        for (std::size_t j = 0; j < ab.t.size(); ++j)
            props = props && std::fabs(ab.t[j] + ba.t[j]) < 1e-9;
        props = props && ab.leaky_count == ba.leaky_count;

        std::vector<double> x(20), y(20);
        for (int i = 0; i < 20; ++i) {
            x[i] = rng.gaussian();
            y[i] = rng.gaussian();
        }
        double alpha = rng.gaussian(0, 3);
        if (std::fabs(alpha) < 1e-3) alpha = 1.0;
        std::vector<double> xs(20);
        for (int i = 0; i < 20; ++i) xs[i] = alpha * x[i] + 4.2;
        const double sgn = alpha > 0 ? 1.0 : -1.0;
        props = props && std::fabs(stats::pearson(xs, y) -
                                   sgn * stats::pearson(x, y)) < 1e-9;
    }

    const double secs = std::chrono::duration<double>(Clock::now() - t0).count();
    report(10, "leakage statistics", wins >= 19 && props && secs < 120.0,
           fmt("contrast wins %d/20, properties %s", wins, props ? "ok" : "VIOLATED"),
           secs);
}

std::map<std::string, std::string> snapshot(const fs::path& root) {
    std::map<std::string, std::string> files;
    for (const auto& entry : fs::recursive_directory_iterator(root)) {
        if (!entry.is_regular_file()) continue;
        std::ifstream in(entry.path(), std::ios::binary);
        std::ostringstream ss;
        ss << in.rdbuf();
        files[fs::relative(entry.path(), root).string()] = ss.str();
    }
    return files;
}

void criterion_11() {
    const auto t0 = Clock::now();
    bool pass = true;
    std::string detail;

    pipeline::Config pia;
    pia.name = "acc-pia";
    pia.seed = 31;
    pia.workers = 4;
    pia.corpus = "templated-short";
    pia.train = 150;
    pia.test = 30;
    pia.channel = "l1l2";
    pia.attack = "pia-gender";
    pia.epochs = 6;
    pia.out = "acc_rep_pia";

    pipeline::Config rra;
    rra.name = "acc-rra";
    rra.seed = 33;
    rra.workers = 4;
    rra.preset = "toy64";
    rra.corpus = "domains";
    rra.sentences = 50;
    rra.channel = "tlb";
    rra.contention = 3;
    rra.attack = "rra";
    rra.epochs = 8;
    rra.out = "acc_rep_rra";

    for (auto* cfg : {&pia, &rra}) {
        fs::remove_all(cfg->out);
        pipeline::run_pipeline(*cfg);
        auto first = snapshot(cfg->out);
        fs::remove_all(cfg->out);
        pipeline::run_pipeline(*cfg);
        auto second = snapshot(cfg->out);
        bool same = first.size() == second.size() && !first.empty();
        if (same)
            for (const auto& [rel, bytes] : first)
                same = same && second.count(rel) && second[rel] == bytes;
        pass = pass && same;
        detail += fmt("%s %zu files %s  ", cfg->name.c_str(), first.size(),
                      same ? "identical" : "DIFFER");
        fs::remove_all(cfg->out);
    }
    const double secs = std::chrono::duration<double>(Clock::now() - t0).count();
    report(11, "reproducibility", pass, detail, secs);
}

} // namespace

int main() {
    criterion_1();
    criterion_2();
    criterion_3();
    criterion_4();
    criterion_5();
    criterion_6();
    criterion_7();
    criterion_8();
    criterion_9();
    criterion_10();
    criterion_11();
    std::printf("%s (%d criterion failures)\n", g_failures ? "FAIL" : "ALL PASS",
                g_failures);
    return g_failures ? 1 : 0;
}
