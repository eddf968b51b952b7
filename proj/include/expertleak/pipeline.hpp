#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace expertleak::pipeline {

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Failure inside a pipeline stage; carries the stage name so batch drivers
/// can report where a run died. Earlier artifacts stay on disk.
struct StageError : std::runtime_error {
    StageError(std::string stage_, const std::string& what_)
        : std::runtime_error("[" + stage_ + "] " + what_), stage(std::move(stage_)) {}
    std::string stage;
};

struct Config {
    // [run]
    std::string name = "exp";
    std::uint64_t seed = 1;
    std::string out = "out";
    int workers = 1;
    // [model]
    std::string preset = "toy";
    // [corpus]
    std::string corpus = "templated-short"; // templated-long | unstructured | domains
    int train = 8000;
    int test = 2000;
    std::vector<std::string> domains = {"general", "medical", "financial"};
    int sentences = 400; // per domain, rra corpora
    // [channel]
    std::string channel = "none"; // none | l1l2 | perf | pageout | tlb
    int contention = 0;
    bool noiseless = false;
    // [attack]
    std::string attack = "pia-illness"; // pia-{illness,gender,blood,age} | rra
    int epochs = 30;
    int batch = 64;
    double lr = 1e-3;
    double momentum = 0.98;     // pia trainer
    double rra_momentum = 0.9;  // rra trainer
    double lambda = 1e-4;
    int hidden1 = 1024;
    int hidden2 = 512;
    double rra_lr = 0.5;

    void validate() const; // throws ConfigError
};

Config parse_config_text(const std::string& text);
Config parse_config_file(const std::string& path);

struct ReportRow {
    std::string experiment;
    std::string metric;
    double value = 0.0;
    long n = 0;
    std::uint64_t seed = 0;
};

void write_report_csv(const std::string& path, const std::vector<ReportRow>& rows);
std::vector<ReportRow> read_report_csv(const std::string& path);
/// Concatenates every rows.csv found under dir (sorted by path).
std::vector<ReportRow> aggregate_reports(const std::string& dir);

// Individually invocable stages; each reads its inputs from files written by
// the previous stage under cfg.out, so running them separately reproduces
// run_pipeline byte for byte.
void stage_corpus(const Config& cfg);
void stage_profile(const Config& cfg);
void stage_simulate(const Config& cfg);
void stage_translate(const Config& cfg);
void stage_train(const Config& cfg);
void stage_attack(const Config& cfg);
std::vector<ReportRow> stage_evaluate(const Config& cfg); // also writes rows.csv

std::vector<ReportRow> run_pipeline(const Config& cfg);

/// Welch t-test over two directories of load-footprint files; writes a rows
/// CSV with leaky_count and max |t|.
std::vector<ReportRow> ttest_dirs(const std::string& dir_a, const std::string& dir_b,
                                  const std::string& out_csv, double threshold = 4.5);

} // namespace expertleak::pipeline
