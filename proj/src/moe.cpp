#include "expertleak/moe.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace expertleak::moe {

void ModelConfig::validate() const {
    if (num_layers < 1) throw ConfigError("num_layers must be >= 1");
    if (num_experts < 1) throw ConfigError("num_experts must be >= 1");
    if (top_k < 1 || top_k > num_experts)
        throw ConfigError("top_k must satisfy 1 <= k <= num_experts");
    if (hidden_dim < 1) throw ConfigError("hidden_dim must be >= 1");
    if (expert_inner_dim <= hidden_dim)
        throw ConfigError("expert_inner_dim must exceed hidden_dim");
    if (vocab_size < 1) throw ConfigError("vocab_size must be >= 1");
    if (base_cost < 0 || per_token_cost <= 0)
        throw ConfigError("cost model constants must be positive");
    if (mix_current_weight <= 0.0 || mix_current_weight > 1.0)
        throw ConfigError("mix_current_weight must be in (0, 1]");
}

ModelConfig ModelConfig::toy() {
    ModelConfig c;
    c.num_layers = 4;
    c.num_experts = 16;
    c.top_k = 2;
    c.hidden_dim = 64;
    c.expert_inner_dim = 128;
    c.vocab_size = 4096;
    c.seed = 7;
    return c;
}

ModelConfig ModelConfig::toy64() {
    ModelConfig c = toy();
    c.num_experts = 64;
    c.top_k = 6;
    c.seed = 11;
    return c;
}

ModelConfig ModelConfig::lite_shape() {
    ModelConfig c = toy();
    c.num_layers = 26;
    c.num_experts = 64;
    c.top_k = 6;
    c.seed = 13;
    return c;
}

ModelConfig ModelConfig::preset(const std::string& name) {
    if (name == "toy") return toy();
    if (name == "toy64") return toy64();
    if (name == "lite-shape" || name == "lite_shape") return lite_shape();
    throw ConfigError("unknown model preset: " + name);
}

ExpertSelection select_experts(const Eigen::VectorXd& affinity, int k) {
    const int m = static_cast<int>(affinity.size());
    if (k < 1 || k > m) throw ConfigError("select_experts: k out of range");

    // Top-k with ties broken by lower expert index.
    std::vector<int> order(m);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        return affinity[a] > affinity[b];
    });

    ExpertSelection sel;
    sel.mask.assign(m, 0);
    sel.gates.assign(m, 0.0);
    sel.active.assign(order.begin(), order.begin() + k);
    std::sort(sel.active.begin(), sel.active.end());

    double max_phi = -std::numeric_limits<double>::infinity();
    for (int i : sel.active) max_phi = std::max(max_phi, affinity[i]);
    double denom = 0.0;
    for (int i : sel.active) denom += std::exp(affinity[i] - max_phi);
    for (int i : sel.active) {
        sel.mask[i] = 1;
        sel.gates[i] = std::exp(affinity[i] - max_phi) / denom;
    }
    return sel;
}

namespace {

double silu(double x) { return x / (1.0 + std::exp(-x)); }

// Deterministic per-(seed, token, dim) embedding entry: uniform with unit variance.
double hash_embed(std::uint64_t seed, int token, int dim) {
    std::uint64_t h = splitmix64(seed);
    h = splitmix64(h ^ (static_cast<std::uint64_t>(token) * 0x9E3779B97F4A7C15ULL));
    h = splitmix64(h ^ static_cast<std::uint64_t>(dim));
    const double u = static_cast<double>(h >> 11) * 0x1.0p-53;
    return (u - 0.5) * 3.4641016151377544; // sqrt(12)
}

Eigen::MatrixXd random_matrix(Rng& rng, int rows, int cols, double scale) {
    Eigen::MatrixXd m(rows, cols);
    for (int c = 0; c < cols; ++c)
        for (int r = 0; r < rows; ++r) m(r, c) = rng.gaussian() * scale;
    return m;
}

} // namespace

Model::Model(const ModelConfig& config) : cfg_(config) {
    cfg_.validate();
    Rng rng(cfg_.seed);
    const double ws = 1.0 / std::sqrt(static_cast<double>(cfg_.hidden_dim));
    const double ds = 1.0 / std::sqrt(static_cast<double>(cfg_.expert_inner_dim));

    gating_.reserve(cfg_.num_layers);
    up_.resize(cfg_.num_layers);
    gate_.resize(cfg_.num_layers);
    down_.resize(cfg_.num_layers);
    for (int l = 0; l < cfg_.num_layers; ++l) {
        gating_.push_back(random_matrix(rng, cfg_.num_experts, cfg_.hidden_dim, ws));
        up_[l].reserve(cfg_.num_experts);
        gate_[l].reserve(cfg_.num_experts);
        down_[l].reserve(cfg_.num_experts);
        for (int e = 0; e < cfg_.num_experts; ++e) {
            up_[l].push_back(random_matrix(rng, cfg_.expert_inner_dim, cfg_.hidden_dim, ws));
            gate_[l].push_back(random_matrix(rng, cfg_.expert_inner_dim, cfg_.hidden_dim, ws));
            down_[l].push_back(random_matrix(rng, cfg_.hidden_dim, cfg_.expert_inner_dim, ds));
        }
    }
    output_ = random_matrix(rng, cfg_.vocab_size, cfg_.hidden_dim, ws);
}

Eigen::VectorXd Model::embed(int token) const {
    if (token < 0 || token >= cfg_.vocab_size)
        throw ConfigError("token id out of vocabulary range");
    Eigen::VectorXd v(cfg_.hidden_dim);
    for (int j = 0; j < cfg_.hidden_dim; ++j)
        v[j] = hash_embed(cfg_.seed, token, j);
    return v;
}

Eigen::VectorXd Model::affinity(const Eigen::VectorXd& u, int layer) const {
    if (u.size() != cfg_.hidden_dim)
        throw ConfigError("affinity: hidden state dimension mismatch");
    return gating_.at(layer) * u;
}

Eigen::VectorXd Model::expert_forward(int layer, int expert,
                                      const Eigen::VectorXd& u) const {
    Eigen::VectorXd a = gate_.at(layer).at(expert) * u;
    Eigen::VectorXd b = up_[layer][expert] * u;
    for (int i = 0; i < a.size(); ++i) a[i] = silu(a[i]) * b[i];
    return down_[layer][expert] * a;
}

Eigen::VectorXd Model::mix(const Eigen::VectorXd& input, const Eigen::VectorXd& sum,
                           long count) const {
    const double w = cfg_.mix_current_weight;
    return w * input + (1.0 - w) * (sum / static_cast<double>(count));
}

std::vector<ExpertSelection> Model::route_batch(const Eigen::MatrixXd& u_batch,
                                                int layer) const {
    const int n = static_cast<int>(u_batch.cols());
    Eigen::MatrixXd phi = gating_.at(layer) * u_batch; // M x N
    std::vector<ExpertSelection> sels;
    sels.reserve(n);
    for (int t = 0; t < n; ++t) sels.push_back(select_experts(phi.col(t), cfg_.top_k));
    return sels;
}

std::pair<Eigen::MatrixXd, LayerSchedule>
Model::moe_layer_forward(int layer, const Eigen::MatrixXd& u_batch,
                         const std::vector<ExpertSelection>& selections) const {
    const int n = static_cast<int>(u_batch.cols());
    if (static_cast<int>(selections.size()) != n)
        throw ConfigError("moe_layer_forward: one selection per token required");

    Eigen::MatrixXd h = u_batch;
    LayerSchedule sched;
    // Sequential per-expert execution, ascending index.
    for (int e = 0; e < cfg_.num_experts; ++e) {
        long count = 0;
        for (int t = 0; t < n; ++t) {
            if (!selections[t].mask[e]) continue;
            ++count;
            h.col(t) += selections[t].gates[e] * expert_forward(layer, e, u_batch.col(t));
        }
        if (count > 0) {
            ExpertEntry entry;
            entry.expert = e;
            entry.token_count = count;
            const double d =
                cfg_.base_cost + cfg_.per_token_cost * static_cast<double>(count);
            entry.phase_duration = {d, d, d};
            sched.push_back(entry);
        }
    }
    return {std::move(h), std::move(sched)};
}

PrefillResult Model::prefill(const TokenSequence& prompt) const {
    if (prompt.empty()) throw ConfigError("prefill: empty prompt");
    const int n = static_cast<int>(prompt.size());
    Eigen::MatrixXd x(cfg_.hidden_dim, n);
    for (int t = 0; t < n; ++t) x.col(t) = embed(prompt[t]);

    PrefillResult out;
    out.footprint.kind = ExpertFootprint::Kind::Load;
    out.state.layer_sum.resize(cfg_.num_layers);
    out.state.token_count = n;

    for (int l = 0; l < cfg_.num_layers; ++l) {
        // Causal cumulative-mean mixer over this layer's inputs.
        out.state.layer_sum[l] = x.rowwise().sum();
        Eigen::MatrixXd u(cfg_.hidden_dim, n);
        Eigen::VectorXd run = Eigen::VectorXd::Zero(cfg_.hidden_dim);
        for (int t = 0; t < n; ++t) {
            run += x.col(t);
            u.col(t) = mix(x.col(t), run, t + 1);
        }

        auto sels = route_batch(u, l);
        std::vector<long> load(cfg_.num_experts, 0);
        for (const auto& sel : sels)
            for (int e : sel.active) ++load[e];
        auto [h, sched] = moe_layer_forward(l, u, sels);
        out.footprint.load.push_back(std::move(load));
        out.schedules.push_back(std::move(sched));
        x = std::move(h);
    }
    out.first_token = argmax_token(x.col(n - 1));
    out.state.last_token = out.first_token;
    return out;
}

DecodeStep Model::decode_step(DecodeState& state, int token) const {
    if (state.layer_sum.empty()) throw ConfigError("decode_step before prefill");
    DecodeStep step;
    Eigen::VectorXd x = embed(token);
    state.token_count += 1;
    for (int l = 0; l < cfg_.num_layers; ++l) {
        state.layer_sum[l] += x;
        Eigen::VectorXd u = mix(x, state.layer_sum[l], state.token_count);
        ExpertSelection sel = select_experts(affinity(u, l), cfg_.top_k);
        Eigen::VectorXd h = u;
        for (int e : sel.active) h += sel.gates[e] * expert_forward(l, e, u);
        step.selections.push_back(std::move(sel));
        x = h;
    }
    step.next_token = argmax_token(x);
    state.last_token = step.next_token;
    return step;
}

std::pair<TokenSequence, ExpertFootprint>
Model::generate(const TokenSequence& prompt, int max_len, int stop_token) const {
    PrefillResult pre = prefill(prompt);
    TokenSequence out;
    ExpertFootprint fp;
    fp.kind = ExpertFootprint::Kind::Sequence;
    out.push_back(pre.first_token);
    int token = pre.first_token;
    DecodeState state = pre.state;
    while (static_cast<int>(out.size()) < max_len && token != stop_token) {
        DecodeStep step = decode_step(state, token);
        std::vector<std::vector<std::uint8_t>> masks;
        for (const auto& sel : step.selections) masks.push_back(sel.mask);
        fp.seq.push_back(std::move(masks));
        out.push_back(step.next_token);
        token = step.next_token;
    }
    return {out, fp};
}

std::vector<TeacherForcedPair>
Model::teacher_forced_trace(const TokenSequence& prompt,
                            const TokenSequence& response) const {
    if (response.empty()) throw ConfigError("teacher_forced_trace: empty response");

    // The first response token is generated by the prefill itself; its
    // footprint is the routing of the final prompt token. Re-run the final
    // prompt position through the per-layer router to recover those masks.
    std::vector<TeacherForcedPair> pairs;
    pairs.reserve(response.size());

    const int n = static_cast<int>(prompt.size());
    if (n < 1) throw ConfigError("teacher_forced_trace: empty prompt");

    Eigen::MatrixXd x(cfg_.hidden_dim, n);
    for (int t = 0; t < n; ++t) x.col(t) = embed(prompt[t]);

    DecodeState state;
    state.layer_sum.resize(cfg_.num_layers);
    state.token_count = n;

    TeacherForcedPair first;
    first.label = response[0];
    for (int l = 0; l < cfg_.num_layers; ++l) {
        state.layer_sum[l] = x.rowwise().sum();
        Eigen::MatrixXd u(cfg_.hidden_dim, n);
        Eigen::VectorXd run = Eigen::VectorXd::Zero(cfg_.hidden_dim);
        for (int t = 0; t < n; ++t) {
            run += x.col(t);
            u.col(t) = mix(x.col(t), run, t + 1);
        }
        auto sels = route_batch(u, l);
        auto [h, sched] = moe_layer_forward(l, u, sels);
        first.masks.push_back(sels[n - 1].mask);
        x = std::move(h);
    }
    pairs.push_back(std::move(first));

    // Subsequent tokens: feed each ground-truth response token as input.
    for (std::size_t i = 0; i + 1 < response.size(); ++i) {
        DecodeStep step = decode_step(state, response[i]);
        TeacherForcedPair p;
        p.label = response[i + 1];
        for (const auto& sel : step.selections) p.masks.push_back(sel.mask);
        pairs.push_back(std::move(p));
    }
    return pairs;
}

int Model::argmax_token(const Eigen::VectorXd& h) const {
    Eigen::VectorXd logits = output_ * h;
    int best = 0;
    for (int i = 1; i < logits.size(); ++i)
        if (logits[i] > logits[best]) best = i;
    return best;
}

} // namespace expertleak::moe
