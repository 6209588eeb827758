#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include "shiftcal/types.hpp"

namespace shiftcal {

enum class Activation { Tanh, Relu };

struct LearnerConfig {
    enum class Arch { Linear, Mlp };
    Arch arch = Arch::Linear;
    int hidden_units = 16;
    int hidden_layers = 1;  // 1 or 2
    Activation activation = Activation::Tanh;
    double l2_penalty = 0.0;
    double learning_rate = 1.0;  // initial full-batch step / SGD step
    int max_epochs = 500;
    int batch_size = 0;  // 0 = full batch with backtracking
    double tolerance = 1e-8;
    std::uint64_t seed = 0;
    int n_classes = 0;  // 0 = infer as 1 + max(label)

    void validate() const;
};

// Feed-forward classifier: zero or more activated hidden layers, then an
// affine map to K logits.
struct ProbabilisticModel {
    struct Layer {
        Matrix weight;  // out x in
        Vector bias;    // out
    };
    std::vector<Layer> layers;
    Activation activation = Activation::Tanh;
    int input_dim = 0;
    int n_classes = 0;
    std::vector<double> training_loss_trace;  // objective after each accepted step

    Matrix predict_logits(const Matrix& x) const;
    Matrix predict_proba(const Matrix& x) const;
};

// Numerically stable row-wise softmax (max subtraction).
Vector softmax(const Vector& logits);
Matrix softmax_rows(const Matrix& logits);

// (1/sum w) * sum_i w_i * -log probs(i, labels[i]), probabilities clamped
// below at 1e-12. Throws DegenerateWeightsError when all weights are zero.
double weighted_nll(const Matrix& probs, const IntVector& labels,
                    const Vector& weights);

ProbabilisticModel fit(const LearnerConfig& config, const Matrix& x,
                       const IntVector& labels,
                       const std::optional<Vector>& weights = std::nullopt,
                       const std::optional<ProbabilisticModel>& warm_start =
                           std::nullopt);

// Objective (normalized weighted NLL + l2 * ||W||^2) and its gradient in the
// same layer layout as the model. Exposed for optimization and for
// finite-difference checks.
struct LossGradient {
    double loss;
    std::vector<ProbabilisticModel::Layer> grads;
};
LossGradient loss_and_gradient(const ProbabilisticModel& model, const Matrix& x,
                               const IntVector& labels, const Vector& norm_weights,
                               double l2_penalty);

void save_model(const ProbabilisticModel& model, const std::filesystem::path& path);
ProbabilisticModel load_model(const std::filesystem::path& path);

}  // namespace shiftcal
