#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "shiftcal/calibration.hpp"
#include "shiftcal/dataset.hpp"
#include "shiftcal/importance.hpp"
#include "shiftcal/learner.hpp"
#include "shiftcal/metrics.hpp"

namespace shiftcal {

// Stage tags for deriving per-purpose seeds from one replication seed. The
// CLI pipeline uses the same tags so a chained generate/train/.../evaluate
// run reproduces `experiment` exactly.
namespace stage {
constexpr std::uint64_t kData = 1;
constexpr std::uint64_t kSourceSplit = 2;
constexpr std::uint64_t kTargetSplit = 3;
constexpr std::uint64_t kClassifier = 4;
constexpr std::uint64_t kDiscriminator = 5;
constexpr std::uint64_t kNoise = 6;
constexpr std::uint64_t kPlacement = 7;
constexpr std::uint64_t kSubsample = 8;
}  // namespace stage

std::uint64_t stage_seed(std::uint64_t seed, std::uint64_t tag);

// Mixture described by ratios only; class geometry is placed from the
// experiment seed (unit covariance, means at pairwise distance separation).
struct MixtureAutoSpec {
    int n_classes = 2;
    int dim = 8;
    double separation = 3.0;
    Vector source_ratio;
    Vector target_ratio;
    Eigen::Index n_source = 0;
    Eigen::Index n_target = 0;
};

struct FileDataSpec {
    std::filesystem::path source;
    std::filesystem::path target;
    std::optional<std::filesystem::path> gt_weights;
};

using GeneratorSpec = std::variant<GaussianShiftConfig, MixtureShiftConfig,
                                   MixtureAutoSpec, FileDataSpec>;

// One hidden layer of 16 tanh units; a second layer is available by config.
inline LearnerConfig default_discriminator_config() {
    LearnerConfig cfg;
    cfg.arch = LearnerConfig::Arch::Mlp;
    cfg.hidden_units = 16;
    cfg.activation = Activation::Tanh;
    cfg.max_epochs = 400;
    return cfg;
}

struct WeightsModeSpec {
    enum class Type { GroundTruth, Discriminator, NoisyGroundTruth };
    Type type = Type::GroundTruth;
    LearnerConfig discriminator = default_discriminator_config();
    double sigma = 0.0;  // used when type == NoisyGroundTruth
};

struct ExperimentConfig {
    GeneratorSpec generator;
    LearnerConfig classifier;
    std::vector<CalibratorKind> calibrators{CalibratorKind::Temperature};
    WeightsModeSpec weights_mode;
    std::vector<WeightCorrection> corrections{
        {WeightCorrection::Kind::SelfNormalize, 0.0}};
    double split_fraction = 0.7;
    int m_bins = 15;
    int n_replications = 10;
    std::uint64_t seed = 0;
    Eigen::Index validation_subsample = 0;  // 0 = use the full validation split
    std::string digest;  // canonical-config digest, passthrough metadata

    void validate() const;
};

constexpr std::array<MethodTag, 4> kAllMethods = {
    MethodTag::Uncalibrated, MethodTag::Unweighted, MethodTag::Weighted,
    MethodTag::UsingTarget};

// Data for one replication, already resolved from the generator spec.
struct GeneratedData {
    LabeledDataset source;
    LabeledDataset target;
    std::optional<ImportanceWeights> gt_weights;  // full source, when known
    std::optional<MixtureShiftConfig> mixture;    // resolved mixture, if any
    std::optional<GaussianShiftConfig> gaussian;  // gaussian config, if any
};

GeneratedData make_data(const GeneratorSpec& generator,
                        std::uint64_t experiment_seed, std::uint64_t rep_seed);

struct ReplicationResult {
    // cells[calibrator index][method index], methods ordered as kAllMethods
    std::vector<std::array<EvaluationReport, 4>> cells;
    RatioDiagnostics diagnostics;
};

ReplicationResult run_single_replication(const ExperimentConfig& config,
                                         std::uint64_t rep_seed);

struct ExperimentResult {
    struct Cell {
        std::vector<double> ece, accuracy, nll;  // per completed replication
        double ece_mean = 0.0, ece_std = 0.0;
        double accuracy_mean = 0.0, accuracy_std = 0.0;
        double nll_mean = 0.0, nll_std = 0.0;
    };
    std::vector<CalibratorKind> calibrators;
    std::vector<std::array<Cell, 4>> cells;  // [calibrator][method]
    std::vector<RatioDiagnostics> per_rep_diagnostics;
    std::vector<std::pair<int, std::string>> failed_replications;
    int n_replications = 0;
    int m_bins = 0;
    std::string config_digest;

    const Cell& cell(CalibratorKind kind, MethodTag method) const;
    std::string report_json() const;
};

ExperimentResult run_experiment(const ExperimentConfig& config, int jobs = 1);

struct SweepSpec {
    enum class Axis { Divergence, ValidationSize, WeightNoise };
    Axis axis = Axis::Divergence;
    // Strictly monotone. Divergence: target class-1 proportion in (0,1);
    // ValidationSize: calibration sample counts; WeightNoise: noise sigmas.
    std::vector<double> grid;
    ExperimentConfig base;

    void validate() const;
};

struct SweepResult {
    SweepSpec::Axis axis;
    std::vector<double> axis_values;
    std::vector<ExperimentResult> per_point;

    // Long format: axis_value,method,calibrator,ece_mean,ece_std
    std::string to_csv() const;
};

SweepResult run_sweep(const SweepSpec& spec, int jobs = 1);

// Two-Gaussian demo: deliberately mis-specified classifier, isotonic
// calibration fit on source / target / ground-truth-weighted source, with
// calibrated P(Y=1|x) surfaces over a mesh covering the data.
struct Figure2Config {
    GaussianShiftConfig generator;  // must be 2-d
    LearnerConfig classifier;
    int mesh_resolution = 60;
    int m_bins = 15;
    double split_fraction = 0.7;
    std::uint64_t seed = 0;
};

struct Figure2Result {
    Matrix mesh;  // (res*res) x 2, row-major over the grid
    Vector surface_true;
    Vector surface_uncalibrated;
    Vector surface_source_isotonic;
    Vector surface_target_isotonic;
    Vector surface_weighted_isotonic;
    double mesh_min_x1 = 0, mesh_max_x1 = 0, mesh_min_x2 = 0, mesh_max_x2 = 0;
    double mad_weighted_vs_target = 0.0;
    double mad_source_vs_target = 0.0;
    std::string scatter_csv;
    std::map<std::string, std::string> reliability_csvs;  // method -> csv
};

Figure2Result replicate_figure2(const Figure2Config& config);
void write_figure2(const Figure2Result& result,
                   const std::filesystem::path& dir);

double mean_of(const std::vector<double>& v);
double std_of(const std::vector<double>& v);  // sample std, 0 when n < 2

}  // namespace shiftcal
