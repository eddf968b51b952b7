#include "expertleak/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <sstream>
#include <thread>

#include "expertleak/attack.hpp"
#include "expertleak/channel.hpp"
#include "expertleak/corpus.hpp"
#include "expertleak/moe.hpp"
#include "expertleak/stats.hpp"
#include "expertleak/translate.hpp"

namespace fs = std::filesystem;

namespace expertleak::pipeline {

namespace {

const char* kTemplatePath = EL_DATA_DIR "/templates.tsv";

bool is_pia(const Config& cfg) { return cfg.attack.rfind("pia-", 0) == 0; }

std::string fp_name(int idx) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "%05d.fp", idx);
    return buf;
}

std::string trace_name(int idx) {
    char buf[20];
    std::snprintf(buf, sizeof buf, "%05d.mtrc", idx);
    return buf;
}

struct Paths {
    fs::path out, dataset, corpus_tsv, vocab, direct, translated, traces, model,
        predictions, predictions_direct, rows;
    explicit Paths(const Config& cfg) {
        out = cfg.out;
        dataset = out / "dataset.tsv";
        corpus_tsv = out / "corpus.tsv";
        vocab = out / "vocab.tsv";
        direct = out / "fp" / "direct";
        translated = out / "fp" / "translated";
        traces = out / "traces";
        model = out / "model.bin";
        predictions = out / "predictions.tsv";
        predictions_direct = out / "predictions_direct.tsv";
        rows = out / "rows.csv";
    }
};

std::uint64_t stage_seed(const Config& cfg, std::uint64_t tag) {
    return splitmix64(cfg.seed ^ tag);
}
constexpr std::uint64_t kSimTag = 0x51A17E;
constexpr std::uint64_t kTrainTag = 0x7A41;

channel::NoiseModel noise_of(const Config& cfg) {
    return cfg.noiseless ? channel::NoiseModel::noiseless()
                         : channel::NoiseModel::calibrated(cfg.contention);
}

// Sample-level parallelism: strided ownership, no shared mutable state.
template <class Fn>
void parallel_for(int n, int workers, Fn fn) {
    if (workers <= 1 || n <= 1) {
        for (int i = 0; i < n; ++i) fn(i);
        return;
    }
    std::mutex err_mutex;
    std::exception_ptr first_error;
    std::vector<std::thread> pool;
    const int w = std::min(workers, n);
    for (int t = 0; t < w; ++t)
        pool.emplace_back([&, t] {
            try {
                for (int i = t; i < n; i += w) fn(i);
            } catch (...) {
                std::lock_guard<std::mutex> lock(err_mutex);
                if (!first_error) first_error = std::current_exception();
            }
        });
    for (auto& th : pool) th.join();
    if (first_error) std::rethrow_exception(first_error);
}

std::vector<corpus::PromptTemplate> templates_of(const Config& cfg) {
    auto all = corpus::load_templates(kTemplatePath);
    const auto want = cfg.corpus == "templated-long"
                          ? corpus::PromptTemplate::Length::Long
                          : corpus::PromptTemplate::Length::Short;
    std::vector<corpus::PromptTemplate> keep;
    for (auto& t : all)
        if (t.length == want) keep.push_back(std::move(t));
    return keep;
}

int pia_label(const Config& cfg, const corpus::HealthRecord& r) {
    if (cfg.attack == "pia-illness") return r.illness;
    if (cfg.attack == "pia-gender") return r.gender;
    if (cfg.attack == "pia-blood") return r.blood_type;
    if (cfg.attack == "pia-age") return (r.age - 20) / 10;
    throw ConfigError("unknown attack kind: " + cfg.attack);
}

int pia_classes(const Config& cfg) {
    if (cfg.attack == "pia-illness")
        return static_cast<int>(corpus::illness_names().size());
    if (cfg.attack == "pia-gender") return 2;
    if (cfg.attack == "pia-blood") return 8;
    if (cfg.attack == "pia-age") return 8;
    throw ConfigError("unknown attack kind: " + cfg.attack);
}

moe::LayerSchedule schedule_of(const std::vector<long>& loads,
                               const moe::ModelConfig& mc) {
    moe::LayerSchedule sched;
    for (std::size_t e = 0; e < loads.size(); ++e) {
        if (loads[e] == 0) continue;
        moe::ExpertEntry entry;
        entry.expert = static_cast<int>(e);
        entry.token_count = loads[e];
        const double d = mc.base_cost + mc.per_token_cost * loads[e];
        entry.phase_duration = {d, d, d};
        sched.push_back(entry);
    }
    return sched;
}

struct RraFiles {
    std::vector<corpus::RraPair> pairs;
    int train_pairs = 0;
};

RraFiles read_rra_pairs(const Paths& p) {
    std::ifstream in(p.corpus_tsv);
    if (!in) throw ConfigError("missing corpus file: " + p.corpus_tsv.string());
    RraFiles rf;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto tab = line.find('\t');
        if (tab == std::string::npos) throw ConfigError("bad corpus row");
        corpus::RraPair pair;
        std::istringstream ps(line.substr(0, tab)), rs(line.substr(tab + 1));
        int id;
        while (ps >> id) pair.prompt.push_back(id);
        while (rs >> id) pair.response.push_back(id);
        rf.pairs.push_back(std::move(pair));
    }
    rf.train_pairs = static_cast<int>(rf.pairs.size()) * 9 / 10; // 90/10 split
    return rf;
}

struct Predictions {
    // pia: one token per row; rra: whole response per row
    std::vector<moe::TokenSequence> truth, pred;
};

Predictions read_predictions(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("missing predictions file: " + path.string());
    Predictions out;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::string idx, truth, pred;
        if (!std::getline(ls, idx, '\t') || !std::getline(ls, truth, '\t') ||
            !std::getline(ls, pred, '\t'))
            throw ConfigError("bad predictions row in " + path.string());
        moe::TokenSequence t, q;
        std::istringstream ts(truth), qs(pred);
        int id;
        while (ts >> id) t.push_back(id);
        while (qs >> id) q.push_back(id);
        out.truth.push_back(std::move(t));
        out.pred.push_back(std::move(q));
    }
    return out;
}

double token_asr_of(const Predictions& p) {
    long hits = 0, total = 0;
    for (std::size_t i = 0; i < p.truth.size(); ++i) {
        if (p.truth[i].size() != p.pred[i].size())
            throw ConfigError("prediction length mismatch");
        for (std::size_t j = 0; j < p.truth[i].size(); ++j) {
            hits += p.truth[i][j] == p.pred[i][j];
            ++total;
        }
    }
    if (total == 0) throw ConfigError("empty predictions");
    return static_cast<double>(hits) / static_cast<double>(total);
}

attack::Dataset pia_features(const Config& cfg, const Paths& p,
                             const std::vector<corpus::LabeledPrompt>& data,
                             int begin, int end, bool translated) {
    attack::Dataset ds;
    ds.classes = pia_classes(cfg);
    for (int i = begin; i < end; ++i) {
        if (translated)
            ds.x.push_back(attack::featurize_load_props(
                translate::read_load_proportions((p.translated / fp_name(i)).string())));
        else
            ds.x.push_back(attack::featurize_load(
                translate::read_footprint((p.direct / fp_name(i)).string()).load));
        ds.y.push_back(pia_label(cfg, data[i].record));
    }
    return ds;
}

void write_pia_predictions(const fs::path& path, const attack::PiaModel& model,
                           const attack::Dataset& ds, int base_idx) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("cannot write " + path.string());
    for (std::size_t i = 0; i < ds.x.size(); ++i) {
        auto scores = model.infer(ds.x[i]);
        const int pred = static_cast<int>(
            std::max_element(scores.begin(), scores.end()) - scores.begin());
        out << base_idx + static_cast<int>(i) << '\t' << ds.y[i] << '\t' << pred
            << '\n';
    }
}

void write_rra_predictions(const fs::path& path, const attack::RraModel& model,
                           const Paths& p, const RraFiles& rf, bool translated) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("cannot write " + path.string());
    const int n = static_cast<int>(rf.pairs.size());
    for (int i = rf.train_pairs; i < n; ++i) {
        const auto dir = translated ? p.translated : p.direct;
        auto fp = translate::read_footprint((dir / fp_name(i)).string());
        std::vector<std::vector<double>> feats;
        for (const auto& step : fp.seq) feats.push_back(attack::featurize_seq(step));
        auto pred = attack::reconstruct_response(model, feats);
        out << i << '\t';
        const auto& truth = rf.pairs[i].response;
        for (std::size_t j = 0; j < truth.size(); ++j)
            out << (j ? " " : "") << truth[j];
        out << '\t';
        for (std::size_t j = 0; j < pred.size(); ++j) out << (j ? " " : "") << pred[j];
        out << '\n';
    }
}

} // namespace

void Config::validate() const {
    if (name.empty()) throw ConfigError("run.name must not be empty");
    if (workers < 1) throw ConfigError("run.workers must be >= 1");
    if (preset != "toy" && preset != "toy64" && preset != "lite-shape")
        throw ConfigError("unknown model.preset: " + preset);
    static const char* channels[] = {"none", "l1l2", "perf", "pageout", "tlb"};
    if (std::find_if(std::begin(channels), std::end(channels),
                     [&](const char* c) { return channel == c; }) ==
        std::end(channels))
        throw ConfigError("unknown channel.kind: " + channel);
    if (contention < 0 || contention > 4)
        throw ConfigError("channel.contention must be in 0..4");
    if (epochs < 1 || batch < 1 || lr <= 0 || hidden1 < 1 || hidden2 < 1 ||
        lambda < 0 || rra_lr <= 0)
        throw ConfigError("bad attack hyperparameters");
    if (attack == "rra") {
        if (corpus != "domains")
            throw ConfigError("attack rra requires corpus.kind = domains");
        if (channel == "l1l2" || channel == "perf")
            throw ConfigError("rra uses sequence channels (pageout|tlb) or none");
        if (sentences < 10) throw ConfigError("corpus.sentences too small");
        if (domains.empty()) throw ConfigError("corpus.domains must not be empty");
    } else if (attack.rfind("pia-", 0) == 0) {
        if (attack != "pia-illness" && attack != "pia-gender" &&
            attack != "pia-blood" && attack != "pia-age")
            throw ConfigError("unknown attack kind: " + attack);
        if (corpus != "templated-short" && corpus != "templated-long" &&
            corpus != "unstructured")
            throw ConfigError("pia requires a templated or unstructured corpus");
        if (channel == "pageout" || channel == "tlb")
            throw ConfigError("pia uses load channels (l1l2|perf) or none");
        if (train < 2 || test < 1) throw ConfigError("corpus.train/test too small");
    } else {
        throw ConfigError("unknown attack kind: " + attack);
    }
}

Config parse_config_text(const std::string& text) {
    Config cfg;
    std::istringstream in(text);
    std::string line, section;
    int lineno = 0;
    auto fail = [&](const std::string& msg) {
        throw ConfigError("config line " + std::to_string(lineno) + ": " + msg);
    };
    while (std::getline(in, line)) {
        ++lineno;
        const auto a = line.find_first_not_of(" \t\r");
        if (a == std::string::npos) continue;
        const auto b = line.find_last_not_of(" \t\r");
        std::string s = line.substr(a, b - a + 1);
        if (s[0] == '#') continue;
        if (s.front() == '[') {
            if (s.back() != ']') fail("unterminated section header");
            section = s.substr(1, s.size() - 2);
            continue;
        }
        const auto eq = s.find('=');
        if (eq == std::string::npos) fail("expected key = value");
        auto trim = [](std::string v) {
            const auto x = v.find_first_not_of(" \t");
            if (x == std::string::npos) return std::string();
            const auto y = v.find_last_not_of(" \t");
            return v.substr(x, y - x + 1);
        };
        const std::string key = section + "." + trim(s.substr(0, eq));
        const std::string val = trim(s.substr(eq + 1));
        if (val.empty()) fail("empty value for " + key);
        try {
            if (key == "run.name") cfg.name = val;
            else if (key == "run.seed") cfg.seed = std::stoull(val);
            else if (key == "run.out") cfg.out = val;
            else if (key == "run.workers") cfg.workers = std::stoi(val);
            else if (key == "model.preset") cfg.preset = val;
            else if (key == "corpus.kind") cfg.corpus = val;
            else if (key == "corpus.train") cfg.train = std::stoi(val);
            else if (key == "corpus.test") cfg.test = std::stoi(val);
            else if (key == "corpus.sentences") cfg.sentences = std::stoi(val);
            else if (key == "corpus.domains") {
                cfg.domains.clear();
                std::istringstream ds(val);
                std::string d;
                while (std::getline(ds, d, ',')) cfg.domains.push_back(trim(d));
            } else if (key == "channel.kind") cfg.channel = val;
            else if (key == "channel.contention") cfg.contention = std::stoi(val);
            else if (key == "channel.noiseless") {
                if (val != "true" && val != "false" && val != "0" && val != "1")
                    fail("channel.noiseless must be boolean");
                cfg.noiseless = val == "true" || val == "1";
            } else if (key == "attack.kind") cfg.attack = val;
            else if (key == "attack.epochs") cfg.epochs = std::stoi(val);
            else if (key == "attack.batch") cfg.batch = std::stoi(val);
            else if (key == "attack.lr") cfg.lr = std::stod(val);
            else if (key == "attack.momentum") cfg.momentum = std::stod(val);
            else if (key == "attack.rra_momentum")
                cfg.rra_momentum = std::stod(val);
            else if (key == "attack.lambda") cfg.lambda = std::stod(val);
            else if (key == "attack.hidden1") cfg.hidden1 = std::stoi(val);
            else if (key == "attack.hidden2") cfg.hidden2 = std::stoi(val);
            else if (key == "attack.rra_lr") cfg.rra_lr = std::stod(val);
            else fail("unknown key: " + key);
        } catch (const ConfigError&) {
            throw;
        } catch (const std::exception&) {
            fail("bad value for " + key + ": " + val);
        }
    }
    cfg.validate();
    return cfg;
}

Config parse_config_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open config file: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_config_text(ss.str());
}

void write_report_csv(const std::string& path, const std::vector<ReportRow>& rows) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("cannot write report: " + path);
    out << "experiment,metric,value,n,seed\n";
    for (const auto& r : rows)
        out << r.experiment << ',' << r.metric << ',' << channel::format_g17(r.value)
            << ',' << r.n << ',' << r.seed << '\n';
}

std::vector<ReportRow> read_report_csv(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open report: " + path);
    std::string line;
    if (!std::getline(in, line) || line != "experiment,metric,value,n,seed")
        throw ConfigError("bad report header in " + path);
    std::vector<ReportRow> rows;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        ReportRow r;
        std::string value, n, seed;
        if (!std::getline(ls, r.experiment, ',') || !std::getline(ls, r.metric, ',') ||
            !std::getline(ls, value, ',') || !std::getline(ls, n, ',') ||
            !std::getline(ls, seed, ','))
            throw ConfigError("bad report row in " + path);
        r.value = std::stod(value);
        r.n = std::stol(n);
        r.seed = std::stoull(seed);
        rows.push_back(std::move(r));
    }
    return rows;
}

std::vector<ReportRow> aggregate_reports(const std::string& dir) {
    std::vector<fs::path> files;
    for (const auto& entry : fs::recursive_directory_iterator(dir))
        if (entry.is_regular_file() && entry.path().filename() == "rows.csv")
            files.push_back(entry.path());
    std::sort(files.begin(), files.end());
    std::vector<ReportRow> all;
    for (const auto& f : files) {
        auto rows = read_report_csv(f.string());
        all.insert(all.end(), rows.begin(), rows.end());
    }
    return all;
}

void stage_corpus(const Config& cfg) {
    cfg.validate();
    Paths p(cfg);
    fs::create_directories(p.out);
    if (is_pia(cfg)) {
        auto templates = templates_of(cfg);
        corpus::Vocabulary vocab(4096);
        auto data = corpus::build_pia_dataset(cfg.train + cfg.test, templates, vocab,
                                              cfg.seed, cfg.corpus == "unstructured");
        corpus::write_pia_dataset(p.dataset.string(), data);
        corpus::write_vocab(p.vocab.string(), vocab);
    } else {
        std::vector<std::string> texts;
        for (std::size_t d = 0; d < cfg.domains.size(); ++d) {
            auto sents = corpus::synth_domain_sentences(
                cfg.domains[d], cfg.sentences, Rng::derive(cfg.seed, d).next_u64());
            texts.insert(texts.end(), sents.begin(), sents.end());
        }
        auto rc = corpus::build_rra_corpus(texts, cfg.seed);
        std::ofstream out(p.corpus_tsv, std::ios::binary);
        if (!out) throw ConfigError("cannot write " + p.corpus_tsv.string());
        for (const auto& pair : rc.pairs) {
            for (std::size_t i = 0; i < pair.prompt.size(); ++i)
                out << (i ? " " : "") << pair.prompt[i];
            out << '\t';
            for (std::size_t i = 0; i < pair.response.size(); ++i)
                out << (i ? " " : "") << pair.response[i];
            out << '\n';
        }
        corpus::write_vocab(p.vocab.string(), rc.vocab);
    }
}

void stage_profile(const Config& cfg) {
    cfg.validate();
    Paths p(cfg);
    fs::create_directories(p.direct);
    const moe::Model model(moe::ModelConfig::preset(cfg.preset));
    if (is_pia(cfg)) {
        auto data = corpus::read_pia_dataset(p.dataset.string());
        parallel_for(static_cast<int>(data.size()), cfg.workers, [&](int i) {
            auto pre = model.prefill(data[i].ids);
            translate::write_footprint((p.direct / fp_name(i)).string(),
                                       pre.footprint);
        });
    } else {
        auto rf = read_rra_pairs(p);
        parallel_for(static_cast<int>(rf.pairs.size()), cfg.workers, [&](int i) {
            auto trace =
                model.teacher_forced_trace(rf.pairs[i].prompt, rf.pairs[i].response);
            moe::ExpertFootprint fp;
            fp.kind = moe::ExpertFootprint::Kind::Sequence;
            for (auto& step : trace) fp.seq.push_back(std::move(step.masks));
            translate::write_footprint((p.direct / fp_name(i)).string(), fp);
        });
    }
}

void stage_simulate(const Config& cfg) {
    cfg.validate();
    if (cfg.channel == "none") return;
    Paths p(cfg);
    fs::create_directories(p.traces);
    const auto mc = moe::ModelConfig::preset(cfg.preset);
    const auto nm = noise_of(cfg);
    const std::uint64_t base = stage_seed(cfg, kSimTag);

    int begin = 0, end = 0;
    if (is_pia(cfg)) {
        begin = cfg.train;
        end = cfg.train + cfg.test;
    } else {
        auto rf = read_rra_pairs(p);
        begin = rf.train_pairs;
        end = static_cast<int>(rf.pairs.size());
    }

    parallel_for(end - begin, cfg.workers, [&](int j) {
        const int i = begin + j;
        const std::uint64_t sample_seed =
            Rng::derive(base, static_cast<std::uint64_t>(i)).next_u64();
        Rng rng(sample_seed);
        auto fp = translate::read_footprint((p.direct / fp_name(i)).string());
        std::vector<channel::TraceSection> sections;
        if (cfg.channel == "l1l2") {
            for (std::size_t l = 0; l < fp.load.size(); ++l) {
                auto tr = channel::simulate_l1l2(schedule_of(fp.load[l], mc), nm, rng);
                sections.push_back({"l1", static_cast<int>(l), sample_seed, {tr.l1}});
                sections.push_back({"l2", static_cast<int>(l), sample_seed, {tr.l2}});
            }
        } else if (cfg.channel == "perf") {
            auto threads = channel::simulate_perf_counter(fp.load, nm, rng);
            for (std::size_t l = 0; l < threads.size(); ++l) {
                std::vector<double> row(threads[l].begin(), threads[l].end());
                sections.push_back(
                    {"threads", static_cast<int>(l), sample_seed, {row}});
            }
        } else { // pageout | tlb: token-major sections
            for (const auto& step : fp.seq) {
                auto rows = cfg.channel == "pageout"
                                ? channel::simulate_pageout_reload(step, nm, rng)
                                : channel::simulate_tlb(step, nm, rng);
                for (std::size_t l = 0; l < rows.size(); ++l)
                    sections.push_back({cfg.channel == "pageout" ? "reload" : "tlb",
                                        static_cast<int>(l), sample_seed,
                                        {rows[l]}});
            }
        }
        channel::write_mtrc((p.traces / trace_name(i)).string(), sections);
    });
}

void stage_translate(const Config& cfg) {
    cfg.validate();
    if (cfg.channel == "none") return;
    Paths p(cfg);
    fs::create_directories(p.translated);
    const auto mc = moe::ModelConfig::preset(cfg.preset);
    const auto nm = noise_of(cfg);

    int begin = 0, end = 0;
    if (is_pia(cfg)) {
        begin = cfg.train;
        end = cfg.train + cfg.test;
    } else {
        auto rf = read_rra_pairs(p);
        begin = rf.train_pairs;
        end = static_cast<int>(rf.pairs.size());
    }

    parallel_for(end - begin, cfg.workers, [&](int j) {
        const int i = begin + j;
        auto sections = channel::read_mtrc((p.traces / trace_name(i)).string());
        if (is_pia(cfg)) {
            std::vector<std::vector<double>> props;
            if (cfg.channel == "l1l2") {
                for (std::size_t s = 0; s + 1 < sections.size(); s += 2) {
                    auto est = translate::recover_load_cpu(
                        sections[s].rows[0], sections[s + 1].rows[0],
                        nm.icache.sample_period, mc.num_experts, mc.base_cost,
                        mc.per_token_cost);
                    props.push_back(est.proportions);
                }
            } else {
                for (const auto& sec : sections) {
                    std::vector<long> threads;
                    for (double v : sec.rows[0])
                        threads.push_back(std::lround(v));
                    auto est = translate::recover_load_gpu(
                        threads, nm.threads.per_token_threads);
                    props.push_back(est.proportions);
                }
            }
            translate::write_load_proportions((p.translated / fp_name(i)).string(),
                                              props);
        } else {
            const int layers = mc.num_layers;
            if (sections.size() % layers != 0)
                throw ConfigError("trace section count not a multiple of layers");
            moe::ExpertFootprint fp;
            fp.kind = moe::ExpertFootprint::Kind::Sequence;
            for (std::size_t s = 0; s < sections.size(); s += layers) {
                std::vector<std::vector<std::uint8_t>> step;
                for (int l = 0; l < layers; ++l) {
                    const auto& lat = sections[s + l].rows[0];
                    auto est = cfg.channel == "pageout"
                                   ? translate::recover_seq_pageout(lat, mc.top_k)
                                   : translate::recover_seq_tlb(lat);
                    if (static_cast<int>(est.mask.size()) != mc.num_experts)
                        est.mask.resize(mc.num_experts, 0);
                    step.push_back(std::move(est.mask));
                }
                fp.seq.push_back(std::move(step));
            }
            translate::write_footprint((p.translated / fp_name(i)).string(), fp);
        }
    });
}

void stage_train(const Config& cfg) {
    cfg.validate();
    Paths p(cfg);
    const std::uint64_t train_seed = stage_seed(cfg, kTrainTag);
    if (is_pia(cfg)) {
        auto data = corpus::read_pia_dataset(p.dataset.string());
        if (static_cast<int>(data.size()) < cfg.train + cfg.test)
            throw ConfigError("dataset smaller than configured splits");
        auto ds = pia_features(cfg, p, data, 0, cfg.train, false);
        attack::PiaHyper hyper;
        hyper.hidden1 = cfg.hidden1;
        hyper.hidden2 = cfg.hidden2;
        hyper.epochs = cfg.epochs;
        hyper.batch = cfg.batch;
        hyper.lr = cfg.lr;
        hyper.momentum = cfg.momentum;
        hyper.seed = train_seed;
        auto model = attack::train_pia(ds, hyper);
        attack::write_pia_model(p.model.string(), model);
    } else {
        auto rf = read_rra_pairs(p);
        attack::Dataset ds;
        int max_label = 0;
        for (const auto& pair : rf.pairs)
            for (int id : pair.response) max_label = std::max(max_label, id);
        ds.classes = max_label + 1;
        for (int i = 0; i < rf.train_pairs; ++i) {
            auto fp = translate::read_footprint((p.direct / fp_name(i)).string());
            if (fp.seq.size() != rf.pairs[i].response.size())
                throw ConfigError("footprint/response length mismatch");
            for (std::size_t t = 0; t < fp.seq.size(); ++t) {
                ds.x.push_back(attack::featurize_seq(fp.seq[t]));
                ds.y.push_back(rf.pairs[i].response[t]);
            }
        }
        attack::RraHyper hyper;
        hyper.epochs = cfg.epochs;
        hyper.batch = cfg.batch;
        hyper.lr = cfg.rra_lr;
        hyper.momentum = cfg.rra_momentum;
        hyper.lambda = cfg.lambda;
        hyper.seed = train_seed;
        auto model = attack::train_rra(ds, hyper);
        attack::write_rra_model(p.model.string(), model);
    }
}

void stage_attack(const Config& cfg) {
    cfg.validate();
    Paths p(cfg);
    const bool translated = cfg.channel != "none";
    if (is_pia(cfg)) {
        auto model = attack::read_pia_model(p.model.string());
        auto data = corpus::read_pia_dataset(p.dataset.string());
        const int begin = cfg.train, end = cfg.train + cfg.test;
        auto ds = pia_features(cfg, p, data, begin, end, translated);
        write_pia_predictions(p.predictions, model, ds, begin);
        if (translated) {
            auto direct = pia_features(cfg, p, data, begin, end, false);
            write_pia_predictions(p.predictions_direct, model, direct, begin);
        }
    } else {
        auto model = attack::read_rra_model(p.model.string());
        auto rf = read_rra_pairs(p);
        write_rra_predictions(p.predictions, model, p, rf, translated);
        if (translated)
            write_rra_predictions(p.predictions_direct, model, p, rf, false);
    }
}

std::vector<ReportRow> stage_evaluate(const Config& cfg) {
    cfg.validate();
    Paths p(cfg);
    const bool translated = cfg.channel != "none";
    std::vector<ReportRow> rows;
    auto add = [&](const std::string& metric, double value, long n) {
        rows.push_back({cfg.name, metric, value, n, cfg.seed});
    };
    if (is_pia(cfg)) {
        auto pred = read_predictions(p.predictions);
        long total = static_cast<long>(pred.truth.size());
        add("top1", token_asr_of(pred), total);
        if (translated)
            add("top1_direct", token_asr_of(read_predictions(p.predictions_direct)),
                total);
    } else {
        auto pred = read_predictions(p.predictions);
        long tokens = 0;
        for (const auto& t : pred.truth) tokens += static_cast<long>(t.size());
        add("asr", token_asr_of(pred), tokens);
        if (translated) {
            add("asr_direct", token_asr_of(read_predictions(p.predictions_direct)),
                tokens);
            // mean per-mask symmetric-difference accuracy vs the true footprints
            auto rf = read_rra_pairs(p);
            double acc = 0.0;
            long masks = 0;
            for (int i = rf.train_pairs; i < static_cast<int>(rf.pairs.size()); ++i) {
                auto truth = translate::read_footprint((p.direct / fp_name(i)).string());
                auto est =
                    translate::read_footprint((p.translated / fp_name(i)).string());
                if (truth.seq.size() != est.seq.size())
                    throw ConfigError("translated footprint length mismatch");
                for (std::size_t t = 0; t < truth.seq.size(); ++t)
                    for (std::size_t l = 0; l < truth.seq[t].size(); ++l) {
                        acc += stats::sequence_accuracy(est.seq[t][l], truth.seq[t][l]);
                        ++masks;
                    }
            }
            add("seq_accuracy", masks ? acc / masks : 0.0, masks);
        }
    }
    write_report_csv(p.rows.string(), rows);
    return rows;
}

std::vector<ReportRow> run_pipeline(const Config& cfg) {
    cfg.validate();
    auto guard = [&](const char* stage, auto&& fn) {
        try {
            return fn();
        } catch (const ConfigError&) {
            throw;
        } catch (const std::exception& e) {
            throw StageError(stage, e.what());
        }
    };
    guard("corpus", [&] { stage_corpus(cfg); return 0; });
    guard("profile", [&] { stage_profile(cfg); return 0; });
    guard("simulate", [&] { stage_simulate(cfg); return 0; });
    guard("translate", [&] { stage_translate(cfg); return 0; });
    guard("train", [&] { stage_train(cfg); return 0; });
    guard("attack", [&] { stage_attack(cfg); return 0; });
    return guard("evaluate", [&] { return stage_evaluate(cfg); });
}

std::vector<ReportRow> ttest_dirs(const std::string& dir_a, const std::string& dir_b,
                                  const std::string& out_csv, double threshold) {
    auto load_group = [](const std::string& dir) {
        std::vector<fs::path> files;
        for (const auto& entry : fs::directory_iterator(dir))
            if (entry.is_regular_file() && entry.path().extension() == ".fp")
                files.push_back(entry.path());
        std::sort(files.begin(), files.end());
        std::vector<std::vector<double>> rows;
        for (const auto& f : files)
            rows.push_back(attack::featurize_load(
                translate::read_footprint(f.string()).load));
        return rows;
    };
    auto a = load_group(dir_a), b = load_group(dir_b);
    auto report = stats::welch_t(a, b, threshold);
    double max_t = 0.0;
    for (double t : report.t) max_t = std::max(max_t, std::fabs(t));
    std::vector<ReportRow> rows = {
        {"ttest", "leaky_count", static_cast<double>(report.leaky_count),
         static_cast<long>(report.t.size()), 0},
        {"ttest", "max_abs_t", max_t, static_cast<long>(report.t.size()), 0}};
    write_report_csv(out_csv, rows);
    return rows;
}

} // namespace expertleak::pipeline
