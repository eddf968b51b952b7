#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "expertleak/attack.hpp"
#include "expertleak/channel.hpp"
#include "expertleak/corpus.hpp"
#include "expertleak/moe.hpp"
#include "expertleak/pipeline.hpp"
#include "expertleak/stats.hpp"
#include "expertleak/translate.hpp"

namespace py = pybind11;
using namespace expertleak;

PYBIND11_MODULE(_expertleak, m) {
    m.doc() = "MoE expert-footprint side-channel laboratory";

    // moe
    py::class_<moe::ModelConfig>(m, "ModelConfig")
        .def(py::init<>())
        .def_static("preset", &moe::ModelConfig::preset)
        .def_readwrite("num_layers", &moe::ModelConfig::num_layers)
        .def_readwrite("num_experts", &moe::ModelConfig::num_experts)
        .def_readwrite("top_k", &moe::ModelConfig::top_k)
        .def_readwrite("hidden_dim", &moe::ModelConfig::hidden_dim)
        .def_readwrite("expert_inner_dim", &moe::ModelConfig::expert_inner_dim)
        .def_readwrite("vocab_size", &moe::ModelConfig::vocab_size)
        .def_readwrite("seed", &moe::ModelConfig::seed);

    py::class_<moe::ExpertFootprint>(m, "ExpertFootprint")
        .def_property_readonly("kind",
                               [](const moe::ExpertFootprint& fp) {
                                   return fp.kind == moe::ExpertFootprint::Kind::Load
                                              ? "load"
                                              : "seq";
                               })
        .def_readonly("load", &moe::ExpertFootprint::load)
        .def_readonly("seq", &moe::ExpertFootprint::seq);

    py::class_<moe::Model>(m, "Model")
        .def(py::init<const moe::ModelConfig&>())
        .def_property_readonly("config", &moe::Model::config)
        .def("prefill_footprint",
             [](const moe::Model& model, const moe::TokenSequence& prompt) {
                 return model.prefill(prompt).footprint;
             })
        .def("generate",
             [](const moe::Model& model, const moe::TokenSequence& prompt,
                int max_len) { return model.generate(prompt, max_len); },
             py::arg("prompt"), py::arg("max_len"))
        .def("teacher_forced_masks",
             [](const moe::Model& model, const moe::TokenSequence& prompt,
                const moe::TokenSequence& response) {
                 std::vector<std::vector<std::vector<std::uint8_t>>> masks;
                 for (auto& pair : model.teacher_forced_trace(prompt, response))
                     masks.push_back(std::move(pair.masks));
                 return masks;
             });

    // corpus
    m.def("load_templates", [](const std::string& path) {
        std::vector<std::pair<std::string, std::string>> out;
        for (const auto& t : corpus::load_templates(path))
            out.emplace_back(t.id, t.text);
        return out;
    });
    m.def("illness_names", [] { return corpus::illness_names(); });
    m.def("synth_domain_sentences", &corpus::synth_domain_sentences);

    // channels
    py::class_<channel::NoiseModel>(m, "NoiseModel")
        .def_static("noiseless", &channel::NoiseModel::noiseless)
        .def_static("calibrated", &channel::NoiseModel::calibrated,
                    py::arg("contention_level") = 0);

    m.def("simulate_pageout_reload",
          [](const std::vector<channel::LayerMask>& masks,
             const channel::NoiseModel& nm, std::uint64_t seed) {
              Rng rng(seed);
              return channel::simulate_pageout_reload(masks, nm, rng);
          });
    m.def("simulate_tlb",
          [](const std::vector<channel::LayerMask>& masks,
             const channel::NoiseModel& nm, std::uint64_t seed) {
              Rng rng(seed);
              return channel::simulate_tlb(masks, nm, rng);
          });
    m.def("simulate_perf_counter",
          [](const std::vector<std::vector<long>>& load,
             const channel::NoiseModel& nm, std::uint64_t seed) {
              Rng rng(seed);
              return channel::simulate_perf_counter(load, nm, rng);
          });

    // translation
    m.def("pelt", [](const std::vector<double>& y, double beta) {
        return translate::pelt(y, beta).indices;
    });
    m.def("default_penalty", &translate::default_penalty);
    m.def("recover_seq_pageout",
          [](const std::vector<double>& lat, int k) {
              return translate::recover_seq_pageout(lat, k).mask;
          },
          py::arg("latencies"), py::arg("k") = -1);
    m.def("recover_seq_tlb", [](const std::vector<double>& lat) {
        return translate::recover_seq_tlb(lat).mask;
    });
    m.def("recover_load_gpu",
          [](const std::vector<long>& threads, double per_token, long budget) {
              auto est = translate::recover_load_gpu(threads, per_token, budget);
              return std::make_pair(est.proportions, est.counts);
          },
          py::arg("threads"), py::arg("per_token_threads"),
          py::arg("token_budget") = -1);

    // stats
    m.def("welch_t", [](const std::vector<std::vector<double>>& a,
                        const std::vector<std::vector<double>>& b, double thr) {
        auto r = stats::welch_t(a, b, thr);
        return std::make_pair(r.t, r.leaky_count);
    },
          py::arg("group_a"), py::arg("group_b"), py::arg("threshold") = 4.5);
    m.def("pearson", &stats::pearson);
    m.def("token_asr", &stats::token_asr);
    m.def("sequence_accuracy", &stats::sequence_accuracy);

    // pipeline
    py::class_<pipeline::Config>(m, "Config")
        .def(py::init<>())
        .def_readwrite("name", &pipeline::Config::name)
        .def_readwrite("seed", &pipeline::Config::seed)
        .def_readwrite("out", &pipeline::Config::out)
        .def_readwrite("workers", &pipeline::Config::workers)
        .def_readwrite("preset", &pipeline::Config::preset)
        .def_readwrite("corpus", &pipeline::Config::corpus)
        .def_readwrite("train", &pipeline::Config::train)
        .def_readwrite("test", &pipeline::Config::test)
        .def_readwrite("sentences", &pipeline::Config::sentences)
        .def_readwrite("channel", &pipeline::Config::channel)
        .def_readwrite("contention", &pipeline::Config::contention)
        .def_readwrite("noiseless", &pipeline::Config::noiseless)
        .def_readwrite("attack", &pipeline::Config::attack)
        .def_readwrite("epochs", &pipeline::Config::epochs);
    m.def("parse_config_text", &pipeline::parse_config_text);
    m.def("run_pipeline", [](const pipeline::Config& cfg) {
        std::vector<std::tuple<std::string, std::string, double, long>> rows;
        for (const auto& r : pipeline::run_pipeline(cfg))
            rows.emplace_back(r.experiment, r.metric, r.value, r.n);
        return rows;
    });

    py::register_exception<moe::ConfigError>(m, "MoeConfigError");
    py::register_exception<pipeline::ConfigError>(m, "PipelineConfigError");
    py::register_exception<pipeline::StageError>(m, "StageError");
}
