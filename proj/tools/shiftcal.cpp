// Command line front end: generate / train / estimate-weights / calibrate /
// evaluate / experiment / sweep / figure2. Every stage derives its RNG seeds
// from the config seed the same way `experiment` does, so a chained manual
// pipeline reproduces a single-replication experiment exactly.

#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "shiftcal/config.hpp"
#include "shiftcal/errors.hpp"
#include "shiftcal/harness.hpp"

namespace fs = std::filesystem;
using namespace shiftcal;

namespace {

constexpr const char* kVersion = "0.1.0";

struct CommonArgs {
    std::string config_path;
    std::vector<std::string> overrides;
    bool json_errors = false;
};

fs::path resolve(const fs::path& workdir, const fs::path& p) {
    if (p.is_absolute()) return p;
    return workdir / p;
}

void write_text(const fs::path& path, const std::string& content) {
    std::ofstream out(path);
    if (!out) throw Error("cannot open " + path.string() + " for writing");
    out << content;
    if (!out) throw Error("write failed for " + path.string());
}

CliConfig load(const CommonArgs& args, const std::string& expected_command) {
    CliConfig cfg = load_cli_config(args.config_path, args.overrides);
    if (cfg.command != expected_command)
        throw ConfigError("config command is '" + cfg.command +
                          "' but the subcommand is '" + expected_command + "'");
    return cfg;
}

struct PipelineData {
    LabeledDataset source;
    LabeledDataset target;
    std::vector<Eigen::Index> src_train_idx, src_val_idx;
    std::vector<Eigen::Index> tgt_test_idx, tgt_val_idx;
};

PipelineData load_pipeline_data(const fs::path& dir, double split_fraction,
                                std::uint64_t seed, bool need_target) {
    PipelineData data;
    data.source = read_csv(dir / "source.csv");
    std::tie(data.src_train_idx, data.src_val_idx) =
        split_indices(data.source.size(), split_fraction,
                      stage_seed(seed, stage::kSourceSplit));
    if (need_target) {
        data.target = read_csv(dir / "target.csv");
        std::tie(data.tgt_test_idx, data.tgt_val_idx) =
            split_indices(data.target.size(), split_fraction,
                          stage_seed(seed, stage::kTargetSplit));
    }
    return data;
}

int cmd_generate(const CommonArgs& args, const std::string& out_dir) {
    CliConfig cfg = load(args, "generate");
    const fs::path out = resolve(cfg.workdir, out_dir);
    fs::create_directories(out);
    GeneratedData data = make_data(cfg.experiment.generator,
                                   cfg.experiment.seed, cfg.experiment.seed);
    write_csv(data.source, out / "source.csv");
    write_csv(data.target, out / "target.csv");
    if (data.gt_weights)
        write_weights_csv(*data.gt_weights, out / "gt_weights.csv");
    std::cout << "wrote " << data.source.size() << " source and "
              << data.target.size() << " target samples to " << out.string()
              << (data.gt_weights ? " (with ground-truth weights)" : "")
              << "\n";
    return 0;
}

int cmd_train(const CommonArgs& args, const std::string& data_dir,
              const std::string& out_file) {
    CliConfig cfg = load(args, "train");
    const auto& exp = cfg.experiment;
    PipelineData data = load_pipeline_data(resolve(cfg.workdir, data_dir),
                                           exp.split_fraction, exp.seed, false);
    const LabeledDataset train = data.source.subset(data.src_train_idx);
    const LabeledDataset val = data.source.subset(data.src_val_idx);

    LearnerConfig classifier = exp.classifier;
    classifier.seed = stage_seed(exp.seed, stage::kClassifier);
    classifier.n_classes = data.source.n_classes;
    ProbabilisticModel model = fit(classifier, train.features, train.labels);

    const fs::path out = resolve(cfg.workdir, out_file);
    if (out.has_parent_path()) fs::create_directories(out.parent_path());
    save_model(model, out);
    std::cout << "train accuracy "
              << accuracy(model.predict_proba(train.features), train.labels)
              << ", validation accuracy "
              << accuracy(model.predict_proba(val.features), val.labels)
              << "\n";
    return 0;
}

int cmd_estimate_weights(const CommonArgs& args, const std::string& data_dir,
                         const std::string& out_file) {
    CliConfig cfg = load(args, "estimate-weights");
    const auto& exp = cfg.experiment;
    const fs::path dir = resolve(cfg.workdir, data_dir);
    PipelineData data =
        load_pipeline_data(dir, exp.split_fraction, exp.seed, true);
    const LabeledDataset src_val = data.source.subset(data.src_val_idx);
    const LabeledDataset tgt_test = data.target.subset(data.tgt_test_idx);

    ImportanceWeights weights;
    switch (exp.weights_mode.type) {
        case WeightsModeSpec::Type::Discriminator: {
            LearnerConfig disc = exp.weights_mode.discriminator;
            disc.seed = stage_seed(exp.seed, stage::kDiscriminator);
            weights = estimate_weights_discriminator(
                src_val.features, tgt_test.features, disc);
            break;
        }
        case WeightsModeSpec::Type::GroundTruth:
        case WeightsModeSpec::Type::NoisyGroundTruth: {
            ImportanceWeights full = read_weights_csv(dir / "gt_weights.csv");
            if (full.values.size() != data.source.size())
                throw ConfigError("gt_weights.csv does not match source.csv");
            weights.values.resize(
                static_cast<Eigen::Index>(data.src_val_idx.size()));
            for (std::size_t i = 0; i < data.src_val_idx.size(); ++i)
                weights.values[static_cast<Eigen::Index>(i)] =
                    full.values[data.src_val_idx[i]];
            weights.provenance = WeightProvenance::GroundTruth;
            if (exp.weights_mode.type ==
                WeightsModeSpec::Type::NoisyGroundTruth)
                weights = add_weight_noise(std::move(weights),
                                           exp.weights_mode.sigma,
                                           stage_seed(exp.seed, stage::kNoise));
            break;
        }
    }
    weights = apply_corrections(std::move(weights), exp.corrections);

    const fs::path out = resolve(cfg.workdir, out_file);
    if (out.has_parent_path()) fs::create_directories(out.parent_path());
    write_weights_csv(weights, out);

    std::map<int, std::pair<double, int>> by_class;
    for (Eigen::Index i = 0; i < src_val.size(); ++i) {
        auto& [total, count] = by_class[src_val.labels[i]];
        total += weights.values[i];
        count += 1;
    }
    for (const auto& [label, stats] : by_class)
        std::cout << "class " << label << ": mean weight "
                  << stats.first / stats.second << " over " << stats.second
                  << " samples\n";
    std::cout << "effective sample size "
              << effective_sample_size(weights.values) << " of "
              << weights.values.size() << "\n";
    std::cout << "renyi divergence estimate (alpha=1) "
              << renyi_divergence_estimate(weights, 1.0) << "\n";
    return 0;
}

int cmd_calibrate(const CommonArgs& args, const std::string& model_file,
                  const std::string& data_dir, const std::string& weights_file,
                  const std::string& out_file) {
    CliConfig cfg = load(args, "calibrate");
    const auto& exp = cfg.experiment;
    const bool use_target = cfg.calibrate_mode == CalibrateMode::UsingTarget;
    PipelineData data = load_pipeline_data(resolve(cfg.workdir, data_dir),
                                           exp.split_fraction, exp.seed,
                                           use_target);
    const ProbabilisticModel model =
        load_model(resolve(cfg.workdir, model_file));

    LabeledDataset fit_set = use_target ? data.target.subset(data.tgt_val_idx)
                                        : data.source.subset(data.src_val_idx);
    Vector weights;
    if (cfg.calibrate_mode == CalibrateMode::Weighted) {
        if (weights_file.empty())
            throw ConfigError("weighted calibration needs --weights");
        ImportanceWeights w =
            read_weights_csv(resolve(cfg.workdir, weights_file));
        if (w.values.size() != fit_set.size())
            throw ConfigError("weights length does not match the "
                              "source validation split");
        weights = w.values;
    } else {
        weights = Vector::Ones(fit_set.size());
    }

    const Calibrator cal =
        fit_calibrator(cfg.calibrate_kind, model.predict_logits(fit_set.features),
                       fit_set.labels, weights);
    const fs::path out = resolve(cfg.workdir, out_file);
    if (out.has_parent_path()) fs::create_directories(out.parent_path());
    save_calibrator(cal, out);
    std::cout << "fitted " << calibrator_label(cfg.calibrate_kind) << " on "
              << cal.fit_record.n_fit << " samples, final loss "
              << cal.fit_record.final_loss << "\n";
    return 0;
}

int cmd_evaluate(const std::string& model_file, const std::string& cal_file,
                 const std::string& data_dir, int bins, std::uint64_t seed,
                 double split_fraction, const std::string& out_dir) {
    PipelineData data =
        load_pipeline_data(data_dir, split_fraction, seed, true);
    const LabeledDataset tgt_test = data.target.subset(data.tgt_test_idx);
    const ProbabilisticModel model = load_model(model_file);
    const Matrix logits = model.predict_logits(tgt_test.features);
    Matrix probs;
    if (cal_file.empty()) {
        probs = softmax_rows(logits);
    } else {
        probs = apply(load_calibrator(cal_file), logits);
    }
    const EvaluationReport report =
        evaluate(probs, tgt_test.labels, bins, MethodTag::Uncalibrated);

    fs::create_directories(out_dir);
    nlohmann::json j;
    j["ece"] = report.ece;
    j["accuracy"] = report.accuracy;
    j["nll"] = report.nll;
    j["n"] = tgt_test.size();
    j["m_bins"] = bins;
    write_text(fs::path(out_dir) / "report.json", j.dump(2) + "\n");
    write_text(fs::path(out_dir) / "reliability.csv",
               reliability_csv(report.bins));
    std::cout << "ece " << report.ece << ", accuracy " << report.accuracy
              << ", nll " << report.nll << "\n";
    return 0;
}

int cmd_experiment(const CommonArgs& args, const std::string& out_dir,
                   int jobs) {
    CliConfig cfg = load(args, "experiment");
    const ExperimentResult result = run_experiment(cfg.experiment, jobs);
    const fs::path out = resolve(cfg.workdir, out_dir);
    fs::create_directories(out);
    write_text(out / "report.json", result.report_json());
    for (std::size_t c = 0; c < result.calibrators.size(); ++c) {
        const auto& label = calibrator_label(result.calibrators[c]);
        for (const auto method : kAllMethods) {
            const auto& cell = result.cell(result.calibrators[c], method);
            std::cout << label << " / " << method_label(method) << ": ece "
                      << cell.ece_mean << " +- " << cell.ece_std << "\n";
        }
    }
    if (!result.failed_replications.empty())
        std::cerr << "warning: " << result.failed_replications.size()
                  << " replication(s) failed; report flags them\n";
    return 0;
}

int cmd_sweep(const CommonArgs& args, const std::string& out_dir, int jobs) {
    CliConfig cfg = load(args, "sweep");
    const SweepResult result = run_sweep(cfg.sweep, jobs);
    const fs::path out = resolve(cfg.workdir, out_dir);
    fs::create_directories(out);
    write_text(out / "sweep.csv", result.to_csv());
    std::cout << "swept " << result.axis_values.size() << " grid points\n";
    return 0;
}

int cmd_figure2(const CommonArgs& args, const std::string& out_dir) {
    CliConfig cfg = load(args, "figure2");
    const Figure2Result result = replicate_figure2(cfg.figure2);
    write_figure2(result, resolve(cfg.workdir, out_dir));
    std::cout << "mean |weighted - target| surface gap "
              << result.mad_weighted_vs_target
              << ", |source - target| gap " << result.mad_source_vs_target
              << "\n";
    return 0;
}

int error_exit_code(const std::exception& e) {
    if (dynamic_cast<const ConfigError*>(&e)) return 1;
    if (dynamic_cast<const ParseError*>(&e)) return 1;
    if (dynamic_cast<const SplitError*>(&e)) return 1;
    return 2;
}

const char* error_type(const std::exception& e) {
    if (dynamic_cast<const ConfigError*>(&e)) return "config";
    if (dynamic_cast<const ParseError*>(&e)) return "parse";
    if (dynamic_cast<const SplitError*>(&e)) return "split";
    if (dynamic_cast<const Error*>(&e)) return "runtime";
    return "internal";
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Importance-weighted probability calibration under covariate "
                 "shift"};
    app.set_version_flag("--version", kVersion);
    app.require_subcommand(1);

    CommonArgs common;
    std::string out = "out";
    std::string data_dir;
    std::string model_file;
    std::string cal_file;
    std::string weights_file;
    int bins = 15;
    std::uint64_t seed = 0;
    double split_fraction = 0.7;
    int jobs = 1;

    auto add_config = [&](CLI::App* cmd) {
        cmd->add_option("config", common.config_path, "JSON config file")
            ->required();
        cmd->add_option("--set", common.overrides,
                        "Override a config leaf, e.g. "
                        "--set classifier.learning_rate=0.01");
        cmd->add_flag("--json-errors", common.json_errors,
                      "Emit machine-readable errors on stderr");
    };

    CLI::App* generate = app.add_subcommand(
        "generate", "Write source/target CSVs (and ground-truth weights)");
    add_config(generate);
    generate->add_option("--out", out, "Output directory")->required();

    CLI::App* train =
        app.add_subcommand("train", "Fit the classifier on the source train split");
    add_config(train);
    train->add_option("--data", data_dir, "Directory with source.csv")->required();
    train->add_option("--out", out, "Model JSON path")->required();

    CLI::App* estimate = app.add_subcommand(
        "estimate-weights", "Estimate importance weights for the source "
                            "validation split");
    add_config(estimate);
    estimate->add_option("--data", data_dir, "Directory with source.csv/target.csv")
        ->required();
    estimate->add_option("--out", out, "Weights CSV path")->required();

    CLI::App* calibrate =
        app.add_subcommand("calibrate", "Fit one calibrator in one mode");
    add_config(calibrate);
    calibrate->add_option("--model", model_file, "Model JSON")->required();
    calibrate->add_option("--data", data_dir, "Data directory")->required();
    calibrate->add_option("--weights", weights_file,
                          "Weights CSV (weighted mode)");
    calibrate->add_option("--out", out, "Calibrator JSON path")->required();

    CLI::App* evaluate_cmd = app.add_subcommand(
        "evaluate", "Evaluate a model (optionally calibrated) on the target "
                    "test split");
    evaluate_cmd->add_option("--model", model_file, "Model JSON")->required();
    evaluate_cmd->add_option("--calibrator", cal_file, "Calibrator JSON");
    evaluate_cmd->add_option("--data", data_dir, "Data directory")->required();
    evaluate_cmd->add_option("--bins", bins, "Reliability bins")
        ->check(CLI::PositiveNumber);
    evaluate_cmd->add_option("--seed", seed, "Split seed");
    evaluate_cmd->add_option("--split-fraction", split_fraction,
                             "Split fraction");
    evaluate_cmd->add_option("--out", out, "Output directory")->required();
    evaluate_cmd->add_flag("--json-errors", common.json_errors,
                           "Emit machine-readable errors on stderr");

    CLI::App* experiment =
        app.add_subcommand("experiment", "Run the full four-baseline protocol");
    add_config(experiment);
    experiment->add_option("--out", out, "Output directory")->required();
    experiment->add_option("--jobs", jobs, "Parallel replications")
        ->check(CLI::PositiveNumber);

    CLI::App* sweep = app.add_subcommand("sweep", "Run a parameter sweep");
    add_config(sweep);
    sweep->add_option("--out", out, "Output directory")->required();
    sweep->add_option("--jobs", jobs, "Parallel replications")
        ->check(CLI::PositiveNumber);

    CLI::App* figure2 = app.add_subcommand(
        "figure2", "Two-Gaussian calibration demo artifact bundle");
    add_config(figure2);
    figure2->add_option("--out", out, "Output directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);
        app.exit(e);
        return 1;
    }

    try {
        if (generate->parsed()) return cmd_generate(common, out);
        if (train->parsed()) return cmd_train(common, data_dir, out);
        if (estimate->parsed()) return cmd_estimate_weights(common, data_dir, out);
        if (calibrate->parsed())
            return cmd_calibrate(common, model_file, data_dir, weights_file, out);
        if (evaluate_cmd->parsed())
            return cmd_evaluate(model_file, cal_file, data_dir, bins, seed,
                                split_fraction, out);
        if (experiment->parsed()) return cmd_experiment(common, out, jobs);
        if (sweep->parsed()) return cmd_sweep(common, out, jobs);
        if (figure2->parsed()) return cmd_figure2(common, out);
    } catch (const std::exception& e) {
        if (common.json_errors) {
            nlohmann::json err;
            err["error"] = {{"type", error_type(e)}, {"message", e.what()}};
            std::cerr << err.dump() << "\n";
        } else {
            std::cerr << "error: " << e.what() << "\n";
        }
        return error_exit_code(e);
    }
    return 0;
}
