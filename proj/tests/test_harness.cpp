#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "shiftcal/config.hpp"
#include "shiftcal/errors.hpp"
#include "shiftcal/harness.hpp"

using namespace shiftcal;
namespace fs = std::filesystem;

namespace {

ExperimentConfig small_mixture_experiment(double s1 = 1.0, double s2 = 4.0,
                                          double t1 = 4.0, double t2 = 1.0) {
    ExperimentConfig cfg;
    MixtureAutoSpec gen;
    gen.n_classes = 2;
    gen.dim = 4;
    Vector src(2), tgt(2);
    src << s1, s2;
    tgt << t1, t2;
    gen.source_ratio = src;
    gen.target_ratio = tgt;
    gen.n_source = 400;
    gen.n_target = 400;
    cfg.generator = gen;
    cfg.classifier.arch = LearnerConfig::Arch::Linear;
    cfg.classifier.max_epochs = 120;
    cfg.calibrators = {CalibratorKind::Temperature};
    cfg.weights_mode.type = WeightsModeSpec::Type::GroundTruth;
    cfg.n_replications = 3;
    cfg.seed = 5;
    return cfg;
}

}  // namespace

TEST_CASE("identical configs give bitwise identical reports") {
    const ExperimentConfig cfg = small_mixture_experiment();
    const ExperimentResult a = run_experiment(cfg);
    const ExperimentResult b = run_experiment(cfg);
    CHECK(a.report_json() == b.report_json());
}

TEST_CASE("worker count does not change the result") {
    const ExperimentConfig cfg = small_mixture_experiment();
    const ExperimentResult a = run_experiment(cfg, 1);
    const ExperimentResult b = run_experiment(cfg, 2);
    CHECK(a.report_json() == b.report_json());
}

TEST_CASE("uncalibrated cell equals raw classifier evaluation") {
    const ExperimentConfig cfg = small_mixture_experiment();
    const std::uint64_t rep_seed = cfg.seed;
    const ReplicationResult rep = run_single_replication(cfg, rep_seed);

    // Recompute the uncalibrated path by hand.
    GeneratedData data = make_data(cfg.generator, cfg.seed, rep_seed);
    auto [train_idx, val_idx] =
        split_indices(data.source.size(), cfg.split_fraction,
                      stage_seed(rep_seed, stage::kSourceSplit));
    auto [test_idx, tval_idx] =
        split_indices(data.target.size(), cfg.split_fraction,
                      stage_seed(rep_seed, stage::kTargetSplit));
    const LabeledDataset train = data.source.subset(train_idx);
    const LabeledDataset test = data.target.subset(test_idx);
    LearnerConfig lc = cfg.classifier;
    lc.seed = stage_seed(rep_seed, stage::kClassifier);
    lc.n_classes = 2;
    const ProbabilisticModel model = fit(lc, train.features, train.labels);
    const EvaluationReport direct =
        evaluate(model.predict_proba(test.features), test.labels, cfg.m_bins,
                 MethodTag::Uncalibrated);

    const auto& cell = rep.cells[0][0];
    CHECK(cell.ece == direct.ece);
    CHECK(cell.accuracy == direct.accuracy);
    CHECK(cell.nll == direct.nll);
}

TEST_CASE("temperature rows keep accuracy constant across methods") {
    const ExperimentConfig cfg = small_mixture_experiment();
    const ReplicationResult rep = run_single_replication(cfg, cfg.seed + 1);
    const auto& row = rep.cells[0];
    const double acc = row[0].accuracy;
    for (const auto& report : row) CHECK(report.accuracy == acc);
}

TEST_CASE("null shift leaves all methods within noise of each other") {
    ExperimentConfig cfg = small_mixture_experiment(1.0, 1.0, 1.0, 1.0);
    std::get<MixtureAutoSpec>(cfg.generator).n_source = 1200;
    std::get<MixtureAutoSpec>(cfg.generator).n_target = 1200;
    cfg.n_replications = 6;
    const ExperimentResult result = run_experiment(cfg, 2);
    const auto& cells = result.cells[0];
    for (std::size_t a = 0; a < cells.size(); ++a) {
        for (std::size_t b = a + 1; b < cells.size(); ++b) {
            const double gap = std::abs(cells[a].ece_mean - cells[b].ece_mean);
            const double spread =
                2.0 * std::sqrt((cells[a].ece_std * cells[a].ece_std +
                                 cells[b].ece_std * cells[b].ece_std) /
                                2.0) +
                1e-12;
            CHECK(gap <= spread + 0.01);
        }
    }
    // Ground-truth weights are all ones here, so weighted == unweighted.
    CHECK(cells[1].ece_mean == cells[2].ece_mean);
}

TEST_CASE("per-replication diagnostics are aggregated") {
    const ExperimentConfig cfg = small_mixture_experiment();
    const ExperimentResult result = run_experiment(cfg);
    REQUIRE(result.per_rep_diagnostics.size() == 3);
    for (const auto& diag : result.per_rep_diagnostics) {
        CHECK(diag.effective_sample_size > 0.0);
        CHECK(diag.effective_sample_size <= 120.0 + 1e-9);  // val split size
        CHECK(diag.renyi_divergence_estimate >= 1.0 - 1e-9);
    }
    const std::string json = result.report_json();
    CHECK(json.find("\"diagnostics\"") != std::string::npos);
    CHECK(json.find("\"renyi_divergence_mean\"") != std::string::npos);
}

TEST_CASE("validation subsample caps the calibration split") {
    ExperimentConfig cfg = small_mixture_experiment();
    cfg.validation_subsample = 25;
    const ReplicationResult rep = run_single_replication(cfg, cfg.seed);
    CHECK(rep.diagnostics.effective_sample_size <= 25.0 + 1e-9);
}

TEST_CASE("file-backed generator reproduces in-memory data") {
    const fs::path dir = fs::temp_directory_path() / "shiftcal_harness_files";
    fs::create_directories(dir);
    const ExperimentConfig mem_cfg = small_mixture_experiment();
    GeneratedData data = make_data(mem_cfg.generator, mem_cfg.seed, mem_cfg.seed);
    write_csv(data.source, dir / "source.csv");
    write_csv(data.target, dir / "target.csv");
    write_weights_csv(*data.gt_weights, dir / "gt_weights.csv");

    FileDataSpec files;
    files.source = dir / "source.csv";
    files.target = dir / "target.csv";
    files.gt_weights = dir / "gt_weights.csv";
    const GeneratedData loaded = make_data(files, 0, 0);
    CHECK(loaded.source.features == data.source.features);
    CHECK(loaded.target.labels == data.target.labels);
    CHECK(loaded.gt_weights->values == data.gt_weights->values);
    fs::remove_all(dir);
}

TEST_CASE("all replications failing raises an error") {
    ExperimentConfig cfg = small_mixture_experiment();
    FileDataSpec files;
    files.source = "/nonexistent/source.csv";
    files.target = "/nonexistent/target.csv";
    cfg.generator = files;
    CHECK_THROWS_AS(run_experiment(cfg), Error);
}

TEST_CASE("sweep validation rejects bad specs") {
    SweepSpec spec;
    spec.base = small_mixture_experiment();
    spec.axis = SweepSpec::Axis::Divergence;
    spec.grid = {0.5, 0.5};
    CHECK_THROWS_AS(spec.validate(), ConfigError);
    spec.grid = {0.5, 0.7, 0.6};
    CHECK_THROWS_AS(spec.validate(), ConfigError);
    spec.grid = {0.7, 0.5, 0.3};
    CHECK_NOTHROW(spec.validate());
    spec.grid = {1.2, 0.5};
    CHECK_THROWS_AS(spec.validate(), ConfigError);

    spec.axis = SweepSpec::Axis::ValidationSize;
    spec.grid = {10.5, 20.0};
    CHECK_THROWS_AS(spec.validate(), ConfigError);
    spec.grid = {10.0, 20.0, 40.0};
    CHECK_NOTHROW(spec.validate());

    spec.axis = SweepSpec::Axis::WeightNoise;
    spec.grid = {-0.5, 1.0};
    CHECK_THROWS_AS(spec.validate(), ConfigError);
    spec.grid = {0.0, 0.5, 1.0};
    CHECK_NOTHROW(spec.validate());
}

TEST_CASE("sweep produces one row per point, method, and calibrator") {
    SweepSpec spec;
    spec.base = small_mixture_experiment();
    spec.base.n_replications = 2;
    spec.axis = SweepSpec::Axis::ValidationSize;
    spec.grid = {30.0, 60.0};
    const SweepResult result = run_sweep(spec, 2);
    REQUIRE(result.per_point.size() == 2);

    std::istringstream in(result.to_csv());
    std::string line;
    std::getline(in, line);
    CHECK(line == "axis_value,method,calibrator,ece_mean,ece_std");
    int rows = 0;
    while (std::getline(in, line)) ++rows;
    CHECK(rows == 2 * 4 * 1);  // points x methods x calibrators
}

TEST_CASE("weight-noise sweep switches the weights mode") {
    SweepSpec spec;
    spec.base = small_mixture_experiment();
    spec.base.n_replications = 2;
    spec.axis = SweepSpec::Axis::WeightNoise;
    spec.grid = {0.0, 2.0};
    const SweepResult result = run_sweep(spec);
    // sigma = 0 leaves ground-truth weights intact; both runs complete.
    CHECK(result.per_point[0].failed_replications.empty());
    CHECK(result.per_point[1].failed_replications.empty());
}

TEST_CASE("figure2 demo produces coherent surfaces") {
    Figure2Config cfg;
    cfg.generator.source_mean = Vector::Zero(2);
    cfg.generator.target_mean = Vector::Zero(2);
    cfg.generator.target_mean << 1.2, 0.4;
    cfg.generator.source_cov = Matrix::Identity(2, 2) * 1.44;
    cfg.generator.target_cov = Matrix::Identity(2, 2) * 0.49;
    cfg.generator.label_fn.a = 1.5;
    cfg.generator.n_source = 900;
    cfg.generator.n_target = 900;
    cfg.classifier.arch = LearnerConfig::Arch::Mlp;
    cfg.classifier.hidden_units = 24;
    cfg.classifier.activation = Activation::Relu;
    cfg.classifier.max_epochs = 250;
    cfg.mesh_resolution = 25;
    cfg.seed = 3;

    const Figure2Result result = replicate_figure2(cfg);

    CHECK(result.mesh.rows() == 25 * 25);
    CHECK(result.mesh.col(0).minCoeff() == result.mesh_min_x1);
    CHECK(result.mesh.col(0).maxCoeff() == result.mesh_max_x1);
    CHECK(result.mesh.col(1).minCoeff() == result.mesh_min_x2);
    CHECK(result.mesh.col(1).maxCoeff() == result.mesh_max_x2);

    for (const Vector* surface :
         {&result.surface_true, &result.surface_uncalibrated,
          &result.surface_source_isotonic, &result.surface_target_isotonic,
          &result.surface_weighted_isotonic}) {
        CHECK(surface->size() == result.mesh.rows());
        CHECK(surface->minCoeff() >= 0.0);
        CHECK(surface->maxCoeff() <= 1.0);
    }

    CHECK(result.mad_weighted_vs_target < result.mad_source_vs_target);

    CHECK(result.reliability_csvs.size() == 4);
    CHECK(result.reliability_csvs.count("uncalibrated") == 1);
    CHECK(result.reliability_csvs.count("weighted") == 1);

    const fs::path dir = fs::temp_directory_path() / "shiftcal_fig2";
    write_figure2(result, dir);
    CHECK(fs::exists(dir / "scatter.csv"));
    CHECK(fs::exists(dir / "surface_weighted_isotonic.csv"));
    CHECK(fs::exists(dir / "reliability_using_target.csv"));
    fs::remove_all(dir);
}

TEST_CASE("figure2 needs a two-dimensional gaussian") {
    Figure2Config cfg;
    cfg.generator.source_mean = Vector::Zero(3);
    cfg.generator.target_mean = Vector::Zero(3);
    cfg.generator.source_cov = Matrix::Identity(3, 3);
    cfg.generator.target_cov = Matrix::Identity(3, 3);
    cfg.generator.n_source = 100;
    cfg.generator.n_target = 100;
    CHECK_THROWS_AS(replicate_figure2(cfg), ConfigError);
}
