// expertleak: batch experiment driver for the MoE side-channel laboratory.
// Subcommands cover corpus generation through report aggregation; every stage
// is separately invocable and reads/writes the documented file formats.

#include <cstdio>
#include <exception>
#include <string>

#include "CLI11.hpp"

#include "expertleak/pipeline.hpp"

using namespace expertleak;

namespace {

struct CommonFlags {
    std::string config_path;
    std::string out;
    std::string channel;
    std::uint64_t seed = 0;
    int workers = 0;
    int contention = -1;
    bool has_seed = false;
};

void add_common(CLI::App* cmd, CommonFlags& f) {
    cmd->add_option("--config", f.config_path, "experiment config file");
    cmd->add_option("--seed", f.seed, "override run seed")
        ->each([&](const std::string&) { f.has_seed = true; });
    cmd->add_option("--workers", f.workers, "worker threads (override)");
    cmd->add_option("--out", f.out, "output directory (override)");
    cmd->add_option("--channel", f.channel, "side channel (override)")
        ->check(CLI::IsMember({"l1l2", "pageout", "perf", "tlb", "none"}));
    cmd->add_option("--contention", f.contention, "contention level (override)")
        ->check(CLI::Range(0, 4));
}

pipeline::Config config_of(const CommonFlags& f) {
    pipeline::Config cfg;
    if (!f.config_path.empty()) cfg = pipeline::parse_config_file(f.config_path);
    if (f.has_seed) cfg.seed = f.seed;
    if (f.workers > 0) cfg.workers = f.workers;
    if (!f.out.empty()) cfg.out = f.out;
    if (!f.channel.empty()) cfg.channel = f.channel;
    if (f.contention >= 0) cfg.contention = f.contention;
    cfg.validate();
    return cfg;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"MoE expert-footprint side-channel laboratory"};
    app.require_subcommand(1);

    CommonFlags flags;
    std::string stage_of_cmd;
    auto add_stage = [&](const std::string& name, const std::string& help) {
        auto* cmd = app.add_subcommand(name, help);
        add_common(cmd, flags);
        cmd->callback([&, name] { stage_of_cmd = name; });
        return cmd;
    };

    add_stage("generate-corpus", "sample prompts / synthesize corpora");
    add_stage("profile", "collect ground-truth expert footprints");
    add_stage("simulate", "emit side-channel traces for the attack split");
    add_stage("translate", "recover footprints from traces");
    add_stage("train", "fit the attack model on direct footprints");
    add_stage("attack", "run inference on translated footprints");
    add_stage("evaluate", "score predictions and write rows.csv");
    add_stage("run", "full pipeline: all stages in order");

    auto* ttest = app.add_subcommand("ttest", "Welch t-test over two footprint dirs");
    std::string dir_a, dir_b, ttest_out = "ttest.csv";
    double threshold = 4.5;
    ttest->add_option("--group-a", dir_a, "directory of .fp files")->required();
    ttest->add_option("--group-b", dir_b, "directory of .fp files")->required();
    ttest->add_option("--out", ttest_out, "output CSV path");
    ttest->add_option("--threshold", threshold, "|t| leak threshold");

    auto* report = app.add_subcommand("report", "aggregate rows.csv files");
    std::string report_dir = ".", report_out = "report.csv";
    report->add_option("--dir", report_dir, "directory to scan recursively");
    report->add_option("--out", report_out, "aggregated CSV path");

    CLI11_PARSE(app, argc, argv);

    try {
        if (ttest->parsed()) {
            auto rows = pipeline::ttest_dirs(dir_a, dir_b, ttest_out, threshold);
            for (const auto& r : rows)
                std::printf("%s = %g\n", r.metric.c_str(), r.value);
            return 0;
        }
        if (report->parsed()) {
            auto rows = pipeline::aggregate_reports(report_dir);
            pipeline::write_report_csv(report_out, rows);
            std::printf("wrote %zu rows to %s\n", rows.size(), report_out.c_str());
            return 0;
        }

        const auto cfg = config_of(flags);
        std::vector<pipeline::ReportRow> rows;
        if (stage_of_cmd == "generate-corpus") pipeline::stage_corpus(cfg);
        else if (stage_of_cmd == "profile") pipeline::stage_profile(cfg);
        else if (stage_of_cmd == "simulate") pipeline::stage_simulate(cfg);
        else if (stage_of_cmd == "translate") pipeline::stage_translate(cfg);
        else if (stage_of_cmd == "train") pipeline::stage_train(cfg);
        else if (stage_of_cmd == "attack") pipeline::stage_attack(cfg);
        else if (stage_of_cmd == "evaluate") rows = pipeline::stage_evaluate(cfg);
        else if (stage_of_cmd == "run") rows = pipeline::run_pipeline(cfg);
        for (const auto& r : rows)
            std::printf("%s,%s = %g (n=%ld)\n", r.experiment.c_str(),
                        r.metric.c_str(), r.value, r.n);
        return 0;
    } catch (const pipeline::ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    } catch (const pipeline::StageError& e) {
        std::fprintf(stderr, "stage failure %s\n", e.what());
        return 3;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "stage failure: %s\n", e.what());
        return 3;
    }
}
