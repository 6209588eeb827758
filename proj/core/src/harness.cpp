#include "shiftcal/harness.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <thread>

#include <nlohmann/json.hpp>

#include "shiftcal/errors.hpp"
#include "shiftcal/rng.hpp"

namespace shiftcal {

std::uint64_t stage_seed(std::uint64_t seed, std::uint64_t tag) {
    return derive_seed(seed, tag);
}

double mean_of(const std::vector<double>& v) {
    if (v.empty()) return 0.0;
    return std::accumulate(v.begin(), v.end(), 0.0) / double(v.size());
}

double std_of(const std::vector<double>& v) {
    if (v.size() < 2) return 0.0;
    const double m = mean_of(v);
    double sq = 0.0;
    for (double x : v) sq += (x - m) * (x - m);
    return std::sqrt(sq / double(v.size() - 1));
}

namespace {

std::string format_double(double v) {
    char buf[32];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

int method_index(MethodTag tag) { return static_cast<int>(tag); }

void validate_generator(const GeneratorSpec& generator) {
    if (const auto* g = std::get_if<GaussianShiftConfig>(&generator)) {
        g->validate();
    } else if (const auto* m = std::get_if<MixtureShiftConfig>(&generator)) {
        m->validate();
    } else if (const auto* a = std::get_if<MixtureAutoSpec>(&generator)) {
        if (a->n_classes < 2) throw ConfigError("mixture needs K >= 2 classes");
        if (a->dim < a->n_classes)
            throw ConfigError("default mixture placement needs dim >= K");
        if (a->source_ratio.size() != a->n_classes ||
            a->target_ratio.size() != a->n_classes)
            throw ConfigError("ratio vectors must have one entry per class");
        if ((a->source_ratio.array() <= 0.0).any() ||
            (a->target_ratio.array() <= 0.0).any())
            throw ConfigError("mixing ratios must be strictly positive");
        if (a->n_source < 1 || a->n_target < 1)
            throw ConfigError("n_source and n_target must be >= 1");
        if (!(a->separation > 0.0))
            throw ConfigError("class separation must be > 0");
    } else {
        const auto& f = std::get<FileDataSpec>(generator);
        if (f.source.empty() || f.target.empty())
            throw ConfigError("file generator needs source and target paths");
    }
}

}  // namespace

void ExperimentConfig::validate() const {
    validate_generator(generator);
    classifier.validate();
    if (calibrators.empty())
        throw ConfigError("at least one calibrator is required");
    if (!(split_fraction > 0.0 && split_fraction < 1.0))
        throw ConfigError("split_fraction must lie in (0, 1)");
    if (m_bins < 1) throw ConfigError("m_bins must be >= 1");
    if (n_replications < 1) throw ConfigError("n_replications must be >= 1");
    if (validation_subsample != 0 && validation_subsample < 2)
        throw ConfigError("validation_subsample must be 0 or >= 2");
    if (weights_mode.type == WeightsModeSpec::Type::Discriminator)
        weights_mode.discriminator.validate();
    if (weights_mode.type == WeightsModeSpec::Type::NoisyGroundTruth &&
        weights_mode.sigma < 0.0)
        throw ConfigError("noise sigma must be >= 0");
    for (const auto& c : corrections) {
        if (c.kind == WeightCorrection::Kind::Flatten &&
            !(c.param >= 0.0 && c.param <= 1.0))
            throw ConfigError("flatten alpha must lie in [0, 1]");
        if (c.kind == WeightCorrection::Kind::Clip && !(c.param > 0.0))
            throw ConfigError("clip cap must be > 0");
    }
}

GeneratedData make_data(const GeneratorSpec& generator,
                        std::uint64_t experiment_seed, std::uint64_t rep_seed) {
    GeneratedData data;
    const std::uint64_t data_seed = stage_seed(rep_seed, stage::kData);
    if (const auto* g = std::get_if<GaussianShiftConfig>(&generator)) {
        auto [src, tgt] = generate_gaussian_shift(*g, data_seed);
        data.source = std::move(src);
        data.target = std::move(tgt);
        data.gaussian = *g;
    } else if (const auto* m = std::get_if<MixtureShiftConfig>(&generator)) {
        auto sample = generate_mixture_shift(*m, data_seed);
        data.source = std::move(sample.source);
        data.target = std::move(sample.target);
        data.gt_weights = std::move(sample.gt_weights);
        data.mixture = *m;
    } else if (const auto* a = std::get_if<MixtureAutoSpec>(&generator)) {
        MixtureShiftConfig resolved = make_default_mixture_config(
            a->n_classes, a->dim, a->source_ratio, a->target_ratio,
            a->n_source, a->n_target,
            stage_seed(experiment_seed, stage::kPlacement), a->separation);
        auto sample = generate_mixture_shift(resolved, data_seed);
        data.source = std::move(sample.source);
        data.target = std::move(sample.target);
        data.gt_weights = std::move(sample.gt_weights);
        data.mixture = std::move(resolved);
    } else {
        const auto& f = std::get<FileDataSpec>(generator);
        data.source = read_csv(f.source);
        data.target = read_csv(f.target);
        if (f.gt_weights) {
            ImportanceWeights w = read_weights_csv(*f.gt_weights);
            if (w.values.size() != data.source.size())
                throw ConfigError("gt_weights length does not match source");
            data.gt_weights = std::move(w);
        }
    }
    data.source.validate();
    data.target.validate();
    if (data.source.dim() != data.target.dim())
        throw ConfigError("source and target dims differ");
    return data;
}

namespace {

ImportanceWeights ground_truth_weights_for(const GeneratedData& data,
                                           const LabeledDataset& subset,
                                           const std::vector<Eigen::Index>& idx) {
    if (data.mixture)
        return ground_truth_mixture_weights(*data.mixture, subset.labels);
    if (data.gaussian)
        return ground_truth_gaussian_weights(*data.gaussian, subset.features);
    if (data.gt_weights) {
        ImportanceWeights w;
        w.values.resize(static_cast<Eigen::Index>(idx.size()));
        for (std::size_t i = 0; i < idx.size(); ++i)
            w.values[static_cast<Eigen::Index>(i)] = data.gt_weights->values[idx[i]];
        w.provenance = WeightProvenance::GroundTruth;
        return w;
    }
    throw ConfigError(
        "ground-truth weights requested but the generator provides none");
}

void check_disjoint(const std::vector<Eigen::Index>& a,
                    const std::vector<Eigen::Index>& b, Eigen::Index n) {
    std::set<Eigen::Index> seen(a.begin(), a.end());
    for (Eigen::Index i : b)
        if (!seen.insert(i).second)
            throw Error("internal: split parts overlap");
    if (static_cast<Eigen::Index>(seen.size()) != n)
        throw Error("internal: split parts are not exhaustive");
}

}  // namespace

ReplicationResult run_single_replication(const ExperimentConfig& config,
                                         std::uint64_t rep_seed) {
    GeneratedData data = make_data(config.generator, config.seed, rep_seed);

    auto [src_train_idx, src_val_idx] =
        split_indices(data.source.size(), config.split_fraction,
                      stage_seed(rep_seed, stage::kSourceSplit));
    auto [tgt_test_idx, tgt_val_idx] =
        split_indices(data.target.size(), config.split_fraction,
                      stage_seed(rep_seed, stage::kTargetSplit));
    check_disjoint(src_train_idx, src_val_idx, data.source.size());
    check_disjoint(tgt_test_idx, tgt_val_idx, data.target.size());

    if (config.validation_subsample > 0) {
        // The split order is already a uniform permutation; keeping a prefix
        // is a uniform subsample and nests across grid points.
        if (static_cast<Eigen::Index>(src_val_idx.size()) >
            config.validation_subsample)
            src_val_idx.resize(static_cast<std::size_t>(config.validation_subsample));
        if (static_cast<Eigen::Index>(tgt_val_idx.size()) >
            config.validation_subsample)
            tgt_val_idx.resize(static_cast<std::size_t>(config.validation_subsample));
    }

    const LabeledDataset src_train = data.source.subset(src_train_idx);
    const LabeledDataset src_val = data.source.subset(src_val_idx);
    const LabeledDataset tgt_test = data.target.subset(tgt_test_idx);
    const LabeledDataset tgt_val = data.target.subset(tgt_val_idx);

    LearnerConfig classifier_cfg = config.classifier;
    classifier_cfg.seed = stage_seed(rep_seed, stage::kClassifier);
    classifier_cfg.n_classes = data.source.n_classes;
    const ProbabilisticModel model =
        fit(classifier_cfg, src_train.features, src_train.labels);

    ImportanceWeights weights;
    switch (config.weights_mode.type) {
        case WeightsModeSpec::Type::GroundTruth:
            weights = ground_truth_weights_for(data, src_val, src_val_idx);
            break;
        case WeightsModeSpec::Type::Discriminator: {
            LearnerConfig disc_cfg = config.weights_mode.discriminator;
            disc_cfg.seed = stage_seed(rep_seed, stage::kDiscriminator);
            weights = estimate_weights_discriminator(
                src_val.features, tgt_test.features, disc_cfg);
            break;
        }
        case WeightsModeSpec::Type::NoisyGroundTruth:
            weights = add_weight_noise(
                ground_truth_weights_for(data, src_val, src_val_idx),
                config.weights_mode.sigma, stage_seed(rep_seed, stage::kNoise));
            break;
    }
    weights = apply_corrections(std::move(weights), config.corrections);

    const Matrix logits_val = model.predict_logits(src_val.features);
    const Matrix logits_tval = model.predict_logits(tgt_val.features);
    const Matrix logits_test = model.predict_logits(tgt_test.features);
    const Matrix probs_uncal = softmax_rows(logits_test);
    const Vector ones_val = Vector::Ones(src_val.size());
    const Vector ones_tval = Vector::Ones(tgt_val.size());

    ReplicationResult result;
    result.cells.resize(config.calibrators.size());
    for (std::size_t c = 0; c < config.calibrators.size(); ++c) {
        const CalibratorKind kind = config.calibrators[c];
        const Calibrator unweighted =
            fit_calibrator(kind, logits_val, src_val.labels, ones_val);
        const Calibrator weighted =
            fit_calibrator(kind, logits_val, src_val.labels, weights.values);
        const Calibrator using_target =
            fit_calibrator(kind, logits_tval, tgt_val.labels, ones_tval);

        auto& row = result.cells[c];
        row[method_index(MethodTag::Uncalibrated)] =
            evaluate(probs_uncal, tgt_test.labels, config.m_bins,
                     MethodTag::Uncalibrated);
        row[method_index(MethodTag::Unweighted)] =
            evaluate(apply(unweighted, logits_test), tgt_test.labels,
                     config.m_bins, MethodTag::Unweighted);
        row[method_index(MethodTag::Weighted)] =
            evaluate(apply(weighted, logits_test), tgt_test.labels,
                     config.m_bins, MethodTag::Weighted);
        row[method_index(MethodTag::UsingTarget)] =
            evaluate(apply(using_target, logits_test), tgt_test.labels,
                     config.m_bins, MethodTag::UsingTarget);
    }

    // Lemma-style variance diagnostic on the uncalibrated per-sample NLL.
    const Matrix probs_val = softmax_rows(logits_val);
    Vector losses(src_val.size());
    for (Eigen::Index i = 0; i < src_val.size(); ++i)
        losses[i] =
            -std::log(std::max(probs_val(i, src_val.labels[i]), 1e-12));
    result.diagnostics = weighted_loss_variance_diagnostic(losses, weights, 1.0);
    return result;
}

const ExperimentResult::Cell& ExperimentResult::cell(CalibratorKind kind,
                                                     MethodTag method) const {
    for (std::size_t c = 0; c < calibrators.size(); ++c)
        if (calibrators[c] == kind)
            return cells[c][static_cast<std::size_t>(method_index(method))];
    throw Error("calibrator " + calibrator_label(kind) + " not in result");
}

ExperimentResult run_experiment(const ExperimentConfig& config, int jobs) {
    config.validate();
    const int reps = config.n_replications;

    std::vector<std::optional<ReplicationResult>> slots(
        static_cast<std::size_t>(reps));
    std::vector<std::string> errors(static_cast<std::size_t>(reps));

    auto run_one = [&](int i) {
        try {
            slots[static_cast<std::size_t>(i)] = run_single_replication(
                config, config.seed + static_cast<std::uint64_t>(i));
        } catch (const std::exception& e) {
            errors[static_cast<std::size_t>(i)] =
                std::string("replication ") + std::to_string(i) + ": " + e.what();
        }
    };

    const int workers = std::max(1, std::min(jobs, reps));
    if (workers == 1) {
        for (int i = 0; i < reps; ++i) run_one(i);
    } else {
        std::atomic<int> next{0};
        std::vector<std::thread> pool;
        pool.reserve(static_cast<std::size_t>(workers));
        for (int t = 0; t < workers; ++t)
            pool.emplace_back([&] {
                for (;;) {
                    const int i = next.fetch_add(1);
                    if (i >= reps) return;
                    run_one(i);
                }
            });
        for (auto& th : pool) th.join();
    }

    ExperimentResult result;
    result.calibrators = config.calibrators;
    result.cells.resize(config.calibrators.size());
    result.n_replications = reps;
    result.m_bins = config.m_bins;
    result.config_digest = config.digest;

    int completed = 0;
    for (int i = 0; i < reps; ++i) {
        const auto& slot = slots[static_cast<std::size_t>(i)];
        if (!slot) {
            result.failed_replications.emplace_back(
                i, errors[static_cast<std::size_t>(i)]);
            continue;
        }
        ++completed;
        for (std::size_t c = 0; c < config.calibrators.size(); ++c) {
            for (std::size_t m = 0; m < kAllMethods.size(); ++m) {
                const auto& report = slot->cells[c][m];
                auto& cell = result.cells[c][m];
                cell.ece.push_back(report.ece);
                cell.accuracy.push_back(report.accuracy);
                cell.nll.push_back(report.nll);
            }
        }
        result.per_rep_diagnostics.push_back(slot->diagnostics);
    }
    if (completed == 0)
        throw Error("all replications failed; first error: " +
                    (reps > 0 ? errors[0] : std::string("none")));

    for (auto& row : result.cells) {
        for (auto& cell : row) {
            cell.ece_mean = mean_of(cell.ece);
            cell.ece_std = std_of(cell.ece);
            cell.accuracy_mean = mean_of(cell.accuracy);
            cell.accuracy_std = std_of(cell.accuracy);
            cell.nll_mean = mean_of(cell.nll);
            cell.nll_std = std_of(cell.nll);
        }
    }
    return result;
}

std::string ExperimentResult::report_json() const {
    nlohmann::json j;
    j["config_digest"] = config_digest;
    j["m_bins"] = m_bins;
    j["n_replications"] = n_replications;
    j["replications_completed"] =
        n_replications - static_cast<int>(failed_replications.size());
    auto failures = nlohmann::json::array();
    for (const auto& [index, message] : failed_replications)
        failures.push_back({{"index", index}, {"error", message}});
    j["failed_replications"] = std::move(failures);

    nlohmann::json per_method;
    for (std::size_t m = 0; m < kAllMethods.size(); ++m) {
        nlohmann::json row;
        for (std::size_t c = 0; c < calibrators.size(); ++c) {
            const auto& cell = cells[c][m];
            row[calibrator_label(calibrators[c])] = {
                {"ece_mean", cell.ece_mean},   {"ece_std", cell.ece_std},
                {"acc_mean", cell.accuracy_mean}, {"acc_std", cell.accuracy_std},
                {"nll_mean", cell.nll_mean},   {"nll_std", cell.nll_std}};
        }
        per_method[method_label(kAllMethods[m])] = std::move(row);
    }
    j["per_method"] = std::move(per_method);

    std::vector<double> renyi, wvar, ess;
    double within = 0.0;
    for (const auto& d : per_rep_diagnostics) {
        renyi.push_back(d.renyi_divergence_estimate);
        wvar.push_back(d.weight_variance);
        ess.push_back(d.effective_sample_size);
        within += d.variance_within_bound ? 1.0 : 0.0;
    }
    j["diagnostics"] = {
        {"renyi_alpha",
         per_rep_diagnostics.empty() ? 1.0
                                     : per_rep_diagnostics.front().renyi_alpha},
        {"renyi_divergence_mean", mean_of(renyi)},
        {"weight_variance_mean", mean_of(wvar)},
        {"effective_sample_size_mean", mean_of(ess)},
        {"variance_within_bound_fraction",
         per_rep_diagnostics.empty()
             ? 0.0
             : within / double(per_rep_diagnostics.size())}};
    return j.dump(2) + "\n";
}

void SweepSpec::validate() const {
    base.validate();
    if (grid.empty()) throw ConfigError("sweep grid must be non-empty");
    bool increasing = true, decreasing = true;
    for (std::size_t i = 1; i < grid.size(); ++i) {
        if (grid[i] <= grid[i - 1]) increasing = false;
        if (grid[i] >= grid[i - 1]) decreasing = false;
    }
    if (!increasing && !decreasing)
        throw ConfigError("sweep grid must be strictly monotone");
    switch (axis) {
        case Axis::Divergence: {
            for (double q : grid)
                if (!(q > 0.0 && q < 1.0))
                    throw ConfigError(
                        "divergence grid holds target class-1 proportions in (0,1)");
            const auto* auto_spec = std::get_if<MixtureAutoSpec>(&base.generator);
            const auto* mix = std::get_if<MixtureShiftConfig>(&base.generator);
            const int k = auto_spec ? auto_spec->n_classes
                                    : (mix ? mix->n_classes() : 0);
            if (k != 2)
                throw ConfigError(
                    "divergence sweep needs a 2-class mixture generator");
            break;
        }
        case Axis::ValidationSize:
            for (double v : grid)
                if (v < 2.0 || v != std::floor(v))
                    throw ConfigError(
                        "validation size grid needs integral counts >= 2");
            break;
        case Axis::WeightNoise:
            for (double s : grid)
                if (s < 0.0)
                    throw ConfigError("noise grid needs sigma >= 0");
            break;
    }
}

SweepResult run_sweep(const SweepSpec& spec, int jobs) {
    spec.validate();
    SweepResult result;
    result.axis = spec.axis;
    for (double value : spec.grid) {
        ExperimentConfig cfg = spec.base;
        switch (spec.axis) {
            case SweepSpec::Axis::Divergence: {
                Vector target(2);
                target << value, 1.0 - value;
                if (auto* auto_spec = std::get_if<MixtureAutoSpec>(&cfg.generator))
                    auto_spec->target_ratio = target;
                else
                    std::get<MixtureShiftConfig>(cfg.generator).target_ratio =
                        target;
                break;
            }
            case SweepSpec::Axis::ValidationSize:
                cfg.validation_subsample = static_cast<Eigen::Index>(value);
                break;
            case SweepSpec::Axis::WeightNoise:
                cfg.weights_mode.type = WeightsModeSpec::Type::NoisyGroundTruth;
                cfg.weights_mode.sigma = value;
                break;
        }
        result.axis_values.push_back(value);
        result.per_point.push_back(run_experiment(cfg, jobs));
    }
    return result;
}

std::string SweepResult::to_csv() const {
    std::string out = "axis_value,method,calibrator,ece_mean,ece_std\n";
    for (std::size_t p = 0; p < per_point.size(); ++p) {
        const auto& point = per_point[p];
        for (std::size_t m = 0; m < kAllMethods.size(); ++m) {
            for (std::size_t c = 0; c < point.calibrators.size(); ++c) {
                const auto& cell = point.cells[c][m];
                out += format_double(axis_values[p]);
                out += ',' + method_label(kAllMethods[m]) + ',' +
                       calibrator_label(point.calibrators[c]) + ',';
                out += format_double(cell.ece_mean);
                out += ',';
                out += format_double(cell.ece_std);
                out += '\n';
            }
        }
    }
    return out;
}

namespace {

std::string surface_csv(const Matrix& mesh, const Vector& values) {
    std::string out = "x1,x2,p\n";
    for (Eigen::Index i = 0; i < mesh.rows(); ++i) {
        out += format_double(mesh(i, 0));
        out += ',';
        out += format_double(mesh(i, 1));
        out += ',';
        out += format_double(values[i]);
        out += '\n';
    }
    return out;
}

}  // namespace

Figure2Result replicate_figure2(const Figure2Config& config) {
    config.generator.validate();
    if (config.generator.source_mean.size() != 2)
        throw ConfigError("figure2 replication needs a 2-d gaussian config");
    if (config.mesh_resolution < 2)
        throw ConfigError("mesh_resolution must be >= 2");

    const std::uint64_t rep_seed = config.seed;
    GeneratedData data = make_data(config.generator, config.seed, rep_seed);
    auto [src_train_idx, src_val_idx] =
        split_indices(data.source.size(), config.split_fraction,
                      stage_seed(rep_seed, stage::kSourceSplit));
    auto [tgt_test_idx, tgt_val_idx] =
        split_indices(data.target.size(), config.split_fraction,
                      stage_seed(rep_seed, stage::kTargetSplit));
    const LabeledDataset src_train = data.source.subset(src_train_idx);
    const LabeledDataset src_val = data.source.subset(src_val_idx);
    const LabeledDataset tgt_test = data.target.subset(tgt_test_idx);
    const LabeledDataset tgt_val = data.target.subset(tgt_val_idx);

    LearnerConfig classifier_cfg = config.classifier;
    classifier_cfg.seed = stage_seed(rep_seed, stage::kClassifier);
    classifier_cfg.n_classes = 2;
    const ProbabilisticModel model =
        fit(classifier_cfg, src_train.features, src_train.labels);

    const Vector ones_val = Vector::Ones(src_val.size());
    const Vector ones_tval = Vector::Ones(tgt_val.size());
    ImportanceWeights gt = self_normalize(
        ground_truth_gaussian_weights(config.generator, src_val.features));

    const Matrix logits_val = model.predict_logits(src_val.features);
    const Matrix logits_tval = model.predict_logits(tgt_val.features);
    const Calibrator source_iso = fit_calibrator(
        CalibratorKind::Isotonic, logits_val, src_val.labels, ones_val);
    const Calibrator target_iso = fit_calibrator(
        CalibratorKind::Isotonic, logits_tval, tgt_val.labels, ones_tval);
    const Calibrator weighted_iso = fit_calibrator(
        CalibratorKind::Isotonic, logits_val, src_val.labels, gt.values);

    Figure2Result result;
    // Mesh spans the bounding box of all data points.
    Matrix all(data.source.size() + data.target.size(), 2);
    all.topRows(data.source.size()) = data.source.features;
    all.bottomRows(data.target.size()) = data.target.features;
    result.mesh_min_x1 = all.col(0).minCoeff();
    result.mesh_max_x1 = all.col(0).maxCoeff();
    result.mesh_min_x2 = all.col(1).minCoeff();
    result.mesh_max_x2 = all.col(1).maxCoeff();

    const int res = config.mesh_resolution;
    result.mesh.resize(Eigen::Index(res) * res, 2);
    // Convex interpolation lands exactly on both endpoints.
    auto lerp = [](double lo, double hi, double t) {
        return lo * (1.0 - t) + hi * t;
    };
    for (int i = 0; i < res; ++i) {
        const double x2 = lerp(result.mesh_min_x2, result.mesh_max_x2,
                               i / double(res - 1));
        for (int j = 0; j < res; ++j) {
            result.mesh(Eigen::Index(i) * res + j, 0) =
                lerp(result.mesh_min_x1, result.mesh_max_x1,
                     j / double(res - 1));
            result.mesh(Eigen::Index(i) * res + j, 1) = x2;
        }
    }

    const Matrix mesh_logits = model.predict_logits(result.mesh);
    const Matrix mesh_probs = softmax_rows(mesh_logits);
    result.surface_true.resize(result.mesh.rows());
    for (Eigen::Index i = 0; i < result.mesh.rows(); ++i)
        result.surface_true[i] =
            config.generator.label_fn.prob_class1(result.mesh(i, 0));
    result.surface_uncalibrated = mesh_probs.col(1);
    result.surface_source_isotonic = apply(source_iso, mesh_logits).col(1);
    result.surface_target_isotonic = apply(target_iso, mesh_logits).col(1);
    result.surface_weighted_isotonic = apply(weighted_iso, mesh_logits).col(1);

    result.mad_weighted_vs_target =
        (result.surface_weighted_isotonic - result.surface_target_isotonic)
            .cwiseAbs()
            .mean();
    result.mad_source_vs_target =
        (result.surface_source_isotonic - result.surface_target_isotonic)
            .cwiseAbs()
            .mean();

    std::string scatter = "x1,x2,label,domain\n";
    auto add_points = [&](const LabeledDataset& ds, const char* domain) {
        for (Eigen::Index i = 0; i < ds.size(); ++i) {
            scatter += format_double(ds.features(i, 0));
            scatter += ',';
            scatter += format_double(ds.features(i, 1));
            scatter += ',' + std::to_string(ds.labels[i]) + ',' + domain + '\n';
        }
    };
    add_points(data.source, "source");
    add_points(data.target, "target");
    result.scatter_csv = std::move(scatter);

    const Matrix logits_test = model.predict_logits(tgt_test.features);
    auto bins_for = [&](const Matrix& probs) {
        return reliability_csv(
            reliability_bins(probs, tgt_test.labels, config.m_bins));
    };
    result.reliability_csvs["uncalibrated"] = bins_for(softmax_rows(logits_test));
    result.reliability_csvs["unweighted"] = bins_for(apply(source_iso, logits_test));
    result.reliability_csvs["weighted"] = bins_for(apply(weighted_iso, logits_test));
    result.reliability_csvs["using_target"] = bins_for(apply(target_iso, logits_test));
    return result;
}

void write_figure2(const Figure2Result& result,
                   const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    auto write = [&](const std::string& name, const std::string& content) {
        std::ofstream out(dir / name);
        if (!out) throw Error("cannot open " + (dir / name).string());
        out << content;
    };
    write("scatter.csv", result.scatter_csv);
    write("surface_true.csv", surface_csv(result.mesh, result.surface_true));
    write("surface_uncalibrated.csv",
          surface_csv(result.mesh, result.surface_uncalibrated));
    write("surface_source_isotonic.csv",
          surface_csv(result.mesh, result.surface_source_isotonic));
    write("surface_target_isotonic.csv",
          surface_csv(result.mesh, result.surface_target_isotonic));
    write("surface_weighted_isotonic.csv",
          surface_csv(result.mesh, result.surface_weighted_isotonic));
    for (const auto& [method, csv] : result.reliability_csvs)
        write("reliability_" + method + ".csv", csv);
}

}  // namespace shiftcal
