#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "shiftcal/dataset.hpp"
#include "shiftcal/learner.hpp"
#include "shiftcal/types.hpp"
#include "shiftcal/weights.hpp"

namespace shiftcal {

struct RatioDiagnostics {
    double renyi_alpha = 1.0;
    double renyi_divergence_estimate = 1.0;
    double weight_variance = 0.0;
    double effective_sample_size = 0.0;  // (sum w)^2 / sum w^2

    // Outputs of the variance diagnostic. The bound is reported under both
    // readings of the test-side expectation: plain target loss (mean w*l) and
    // weighted loss (mean w^2*l).
    double empirical_variance = 0.0;
    double bound_unweighted_reading = 0.0;
    double bound_weighted_reading = 0.0;
    bool variance_within_bound = true;
};

// gamma(x) = (n_source / n_target) * P(d=0|x) / P(d=1|x) with P(d=1|x)
// clamped to [1e-6, 1 - 1e-6]. p_source holds P(d=1|x) per source sample.
Vector weights_from_discriminator_probs(const Vector& p_source,
                                        Eigen::Index n_source,
                                        Eigen::Index n_target);

// Binary source-vs-target discriminator over the given features.
ImportanceWeights estimate_weights_discriminator(const Matrix& source_features,
                                                 const Matrix& target_features,
                                                 const LearnerConfig& config);

// Rescale to mean 1.
ImportanceWeights self_normalize(ImportanceWeights w);

// Elementwise w^alpha, alpha in [0, 1].
ImportanceWeights flatten(ImportanceWeights w, double alpha);

// Elementwise min(w, c), c > 0.
ImportanceWeights clip(ImportanceWeights w, double c);

// max(0, w + N(0, sigma^2)) per element; provenance becomes Noisy(sigma).
ImportanceWeights add_weight_noise(ImportanceWeights w, double sigma,
                                   std::uint64_t seed);

ImportanceWeights apply_corrections(ImportanceWeights w,
                                    const std::vector<WeightCorrection>& list);

// Plug-in estimate of the alpha+1 Renyi divergence exponential:
// (mean w^(alpha+1))^(1/alpha) on self-normalized weights.
double renyi_divergence_estimate(const ImportanceWeights& w, double alpha);

double effective_sample_size(const Vector& w);

// Empirical Var(w_i * l_i) against the divergence-based bound.
RatioDiagnostics weighted_loss_variance_diagnostic(const Vector& losses,
                                                   const ImportanceWeights& w,
                                                   double alpha);

// Exact ratios available for the synthetic families.
ImportanceWeights ground_truth_mixture_weights(const MixtureShiftConfig& config,
                                               const IntVector& labels);
ImportanceWeights ground_truth_gaussian_weights(const GaussianShiftConfig& config,
                                                const Matrix& x);

void write_weights_csv(const ImportanceWeights& w,
                       const std::filesystem::path& path);
ImportanceWeights read_weights_csv(const std::filesystem::path& path);

}  // namespace shiftcal
