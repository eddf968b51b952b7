#pragma once

#include <array>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "expertleak/rng.hpp"

namespace expertleak::moe {

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Toy decoder-only MoE model configuration. The expert FFN uses three
/// linear layers (up, gate, down) with inner dimension wider than hidden.
struct ModelConfig {
    int num_layers = 4;
    int num_experts = 16;  // M
    int top_k = 2;         // k
    int hidden_dim = 64;
    int expert_inner_dim = 128;  // h_i, must exceed hidden_dim
    int vocab_size = 4096;
    std::uint64_t seed = 1;

    // Abstract cost model: phase duration = base_cost + token_count * per_token_cost.
    double base_cost = 10.0;
    double per_token_cost = 5.0;

    // Causal mixer: u_t = w * emb_t + (1 - w) * mean(inputs up to t).
    double mix_current_weight = 0.7;

    void validate() const;

    static ModelConfig toy();        // 4 layers, M=16, k=2
    static ModelConfig toy64();      // 4 layers, M=64, k=6 (TLB-compatible)
    static ModelConfig lite_shape(); // 26 layers, M=64, k=6
    static ModelConfig preset(const std::string& name);
};

using TokenSequence = std::vector<int>;

/// Top-k routing decision for one token at one layer.
struct ExpertSelection {
    std::vector<std::uint8_t> mask; // length M, exactly k ones
    std::vector<int> active;        // sorted indices of ones
    std::vector<double> gates;      // length M, zero outside active, sums to 1
};

struct ExpertFootprint {
    enum class Kind { Load, Sequence };
    Kind kind = Kind::Load;
    // Load: [layer][expert] token counts from prefill.
    std::vector<std::vector<long>> load;
    // Sequence: [token][layer][expert] binary masks from decoding.
    std::vector<std::vector<std::vector<std::uint8_t>>> seq;
};

struct ExpertEntry {
    int expert = 0;
    long token_count = 0;
    std::array<double, 3> phase_duration{}; // up, gate, down
};

using LayerSchedule = std::vector<ExpertEntry>; // ascending expert index
using Schedule = std::vector<LayerSchedule>;    // one per layer

/// Per-layer causal running mean used by the mixer; owned by one decode stream.
struct DecodeState {
    std::vector<Eigen::VectorXd> layer_sum; // running sum of layer inputs
    long token_count = 0;
    int last_token = -1;
};

struct PrefillResult {
    int first_token = 0;
    ExpertFootprint footprint; // Kind::Load
    Schedule schedules;
    DecodeState state;
};

struct DecodeStep {
    int next_token = 0;
    std::vector<ExpertSelection> selections; // one per layer
};

struct TeacherForcedPair {
    std::vector<std::vector<std::uint8_t>> masks; // [layer][expert]
    int label = 0;                                // token this step generated
};

ExpertSelection select_experts(const Eigen::VectorXd& affinity, int k);

class Model {
  public:
    explicit Model(const ModelConfig& config);

    const ModelConfig& config() const { return cfg_; }

    Eigen::VectorXd embed(int token) const;
    Eigen::VectorXd affinity(const Eigen::VectorXd& u, int layer) const;
    Eigen::VectorXd expert_forward(int layer, int expert, const Eigen::VectorXd& u) const;

    /// Runs one MoE layer over a batch of mixed hidden states (columns).
    /// Returns outputs and the sequential-execution schedule.
    std::pair<Eigen::MatrixXd, LayerSchedule>
    moe_layer_forward(int layer, const Eigen::MatrixXd& u_batch,
                      const std::vector<ExpertSelection>& selections) const;

    PrefillResult prefill(const TokenSequence& prompt) const;
    DecodeStep decode_step(DecodeState& state, int token) const;

    /// Greedy decode until stop_token or max_len; returns generated tokens
    /// and the per-token expert-sequence footprint.
    std::pair<TokenSequence, ExpertFootprint>
    generate(const TokenSequence& prompt, int max_len, int stop_token = -1) const;

    std::vector<TeacherForcedPair>
    teacher_forced_trace(const TokenSequence& prompt, const TokenSequence& response) const;

  private:
    Eigen::VectorXd mix(const Eigen::VectorXd& input, const Eigen::VectorXd& sum,
                        long count) const;
    std::vector<ExpertSelection> route_batch(const Eigen::MatrixXd& u_batch,
                                             int layer) const;
    int argmax_token(const Eigen::VectorXd& h) const;

    ModelConfig cfg_;
    std::vector<Eigen::MatrixXd> gating_;             // [layer] M x hidden
    std::vector<std::vector<Eigen::MatrixXd>> up_;    // [layer][expert] inner x hidden
    std::vector<std::vector<Eigen::MatrixXd>> gate_;  // [layer][expert] inner x hidden
    std::vector<std::vector<Eigen::MatrixXd>> down_;  // [layer][expert] hidden x inner
    Eigen::MatrixXd output_;                          // vocab x hidden
};

} // namespace expertleak::moe
