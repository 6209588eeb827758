#pragma once

#include <cstdint>
#include <filesystem>
#include <utility>
#include <vector>

#include "shiftcal/types.hpp"
#include "shiftcal/weights.hpp"

namespace shiftcal {

enum class Domain { Source, Target };

struct LabeledDataset {
    Matrix features;   // n x d
    IntVector labels;  // values in [0, n_classes)
    int n_classes = 2;
    Domain domain = Domain::Source;
    std::uint64_t seed = 0;  // generator seed, 0 when loaded from file

    Eigen::Index size() const { return features.rows(); }
    Eigen::Index dim() const { return features.cols(); }

    // Throws ConfigError if any invariant is violated.
    void validate() const;

    LabeledDataset subset(const std::vector<Eigen::Index>& idx) const;
};

// Conditional label rule shared by both domains (covariate-shift assumption).
// Gives P(Y=1 | x) as a function of the first coordinate.
struct LabelRule {
    enum class Kind { Sigmoid, Ramp, Constant };
    Kind kind = Kind::Sigmoid;
    double a = 1.0;  // slope, used by Sigmoid and Ramp
    double b = 0.0;  // offset, used by Sigmoid and Ramp
    double p = 0.5;  // used by Constant

    double prob_class1(double x1) const;
};

struct GaussianShiftConfig {
    Vector source_mean;
    Vector target_mean;
    Matrix source_cov;
    Matrix target_cov;
    LabelRule label_fn;
    Eigen::Index n_source = 0;
    Eigen::Index n_target = 0;

    void validate() const;
};

struct ClassGenerator {
    Vector mean;
    Matrix cov;
};

struct MixtureShiftConfig {
    std::vector<ClassGenerator> class_generators;  // shared across domains
    Vector source_ratio;  // strictly positive, normalized internally
    Vector target_ratio;
    Eigen::Index n_source = 0;
    Eigen::Index n_target = 0;

    int n_classes() const { return static_cast<int>(class_generators.size()); }
    void validate() const;

    // Ratios scaled to sum 1.
    Vector normalized_source_ratio() const;
    Vector normalized_target_ratio() const;

    // gamma for a source sample of class k: target_ratio[k] / source_ratio[k]
    // (both pre-normalized).
    double class_weight(int k) const;
};

// Unit-covariance classes in `dim` dimensions, means at exact pairwise
// distance `separation` along seeded random orthonormal directions.
MixtureShiftConfig make_default_mixture_config(int n_classes, int dim,
                                               const Vector& source_ratio,
                                               const Vector& target_ratio,
                                               Eigen::Index n_source,
                                               Eigen::Index n_target,
                                               std::uint64_t placement_seed,
                                               double separation = 3.0);

std::pair<LabeledDataset, LabeledDataset>
generate_gaussian_shift(const GaussianShiftConfig& config, std::uint64_t seed);

struct MixtureSample {
    LabeledDataset source;
    LabeledDataset target;
    ImportanceWeights gt_weights;  // per source sample
};

MixtureSample generate_mixture_shift(const MixtureShiftConfig& config,
                                     std::uint64_t seed);

// Deterministic disjoint partition of [0, n). First part has
// floor(fraction * n) elements. Throws SplitError when a side is empty.
std::pair<std::vector<Eigen::Index>, std::vector<Eigen::Index>>
split_indices(Eigen::Index n, double fraction, std::uint64_t seed);

std::pair<LabeledDataset, LabeledDataset>
split(const LabeledDataset& ds, double fraction, std::uint64_t seed);

void write_csv(const LabeledDataset& ds, const std::filesystem::path& path);
LabeledDataset read_csv(const std::filesystem::path& path);

}  // namespace shiftcal
