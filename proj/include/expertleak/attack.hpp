#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "expertleak/moe.hpp"
#include "expertleak/rng.hpp"

namespace expertleak::attack {

struct AttackError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Per-layer load proportions, concatenated layer-major.
std::vector<double> featurize_load(const std::vector<std::vector<long>>& load);
std::vector<double> featurize_load_props(const std::vector<std::vector<double>>& props);
/// Flattened per-layer binary masks for one decode step.
std::vector<double> featurize_seq(const std::vector<std::vector<std::uint8_t>>& masks);

struct Dataset {
    std::vector<std::vector<double>> x;
    std::vector<int> y;
    int classes = 0;
};

struct PiaHyper {
    int hidden1 = 1024;
    int hidden2 = 512;
    int epochs = 30;
    int batch = 64;
    double lr = 1e-3;
    double momentum = 0.98; // heavy ball; effective step lr/(1-momentum)
    std::uint64_t seed = 1;
};

/// Three-layer rectifier network, sizes [input, h1, h2, classes], with input
/// standardization folded into the model.
struct PiaModel {
    Eigen::MatrixXd w1, w2, w3;
    Eigen::VectorXd b1, b2, b3;
    Eigen::VectorXd mean, scale; // feature standardization
    int input() const { return static_cast<int>(w1.cols()); }
    int classes() const { return static_cast<int>(w3.rows()); }

    std::vector<double> infer(const std::vector<double>& x) const;
    Eigen::MatrixXd infer_batch(const Eigen::MatrixXd& x_cols) const; // softmax columns
};

PiaModel init_pia(int input, int h1, int h2, int classes, std::uint64_t seed);
PiaModel train_pia(const Dataset& train, const PiaHyper& hyper);

/// Mean cross-entropy of the batch and its analytic gradient, flattened in
/// parameter order (w1,b1,w2,b2,w3,b3). Inputs are taken pre-standardized.
double pia_loss(const PiaModel& m, const Dataset& batch);
std::vector<double> pia_gradient(const PiaModel& m, const Dataset& batch);
std::vector<double> pia_parameters(const PiaModel& m);
void pia_set_parameters(PiaModel& m, const std::vector<double>& p);

struct RraHyper {
    int epochs = 30;
    int batch = 64;
    double lr = 0.5;
    double momentum = 0.9;
    double lambda = 1e-4; // L2 regularization
    std::uint64_t seed = 1;
};

/// Multinomial logistic regression: one weight row per vocabulary token.
struct RraModel {
    Eigen::MatrixXd w; // classes x features
    Eigen::VectorXd b;
    int input() const { return static_cast<int>(w.cols()); }
    int classes() const { return static_cast<int>(w.rows()); }

    std::vector<double> infer(const std::vector<double>& x) const;
    Eigen::MatrixXd infer_batch(const Eigen::MatrixXd& x_cols) const;
};

RraModel train_rra(const Dataset& train, const RraHyper& hyper);

double rra_loss(const RraModel& m, const Dataset& batch, double lambda);
std::vector<double> rra_gradient(const RraModel& m, const Dataset& batch, double lambda);
std::vector<double> rra_parameters(const RraModel& m);
void rra_set_parameters(RraModel& m, const std::vector<double>& p);

/// Per-token argmax over the model scores.
moe::TokenSequence reconstruct_response(const RraModel& m,
                                        const std::vector<std::vector<double>>& features);

double top1_accuracy(const PiaModel& m, const Dataset& data);
double top1_accuracy(const RraModel& m, const Dataset& data);
std::vector<std::vector<double>> scores_of(const PiaModel& m, const Dataset& data);

/// Source-model x target-dataset grid of top-1 accuracies.
std::vector<std::vector<double>> cross_evaluate(const std::vector<RraModel>& models,
                                                const std::vector<Dataset>& datasets);

// Versioned binary model blobs, little-endian 64-bit floats.
void write_pia_model(const std::string& path, const PiaModel& m);
PiaModel read_pia_model(const std::string& path);
void write_rra_model(const std::string& path, const RraModel& m);
RraModel read_rra_model(const std::string& path);

} // namespace expertleak::attack
