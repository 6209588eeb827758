#include "shiftcal/config.hpp"

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "shiftcal/errors.hpp"

namespace shiftcal {

namespace {

using nlohmann::json;

[[noreturn]] void fail(const std::string& ctx, const std::string& msg) {
    throw ConfigError(ctx.empty() ? msg : ctx + ": " + msg);
}

void check_keys(const json& obj, const std::string& ctx,
                const std::set<std::string>& allowed,
                const std::vector<std::string>& required) {
    if (!obj.is_object()) fail(ctx, "expected a JSON object");
    for (const auto& [key, value] : obj.items())
        if (!allowed.count(key)) fail(ctx, "unknown key '" + key + "'");
    for (const auto& key : required)
        if (!obj.contains(key)) fail(ctx, "missing required key '" + key + "'");
}

double get_double(const json& obj, const std::string& key,
                  const std::string& ctx) {
    const auto& v = obj.at(key);
    if (!v.is_number()) fail(ctx, "'" + key + "' must be a number");
    return v.get<double>();
}

double get_double_or(const json& obj, const std::string& key,
                     const std::string& ctx, double fallback) {
    return obj.contains(key) ? get_double(obj, key, ctx) : fallback;
}

std::int64_t get_int(const json& obj, const std::string& key,
                     const std::string& ctx) {
    const auto& v = obj.at(key);
    if (!v.is_number_integer()) fail(ctx, "'" + key + "' must be an integer");
    return v.get<std::int64_t>();
}

std::int64_t get_int_or(const json& obj, const std::string& key,
                        const std::string& ctx, std::int64_t fallback) {
    return obj.contains(key) ? get_int(obj, key, ctx) : fallback;
}

std::string get_string(const json& obj, const std::string& key,
                       const std::string& ctx) {
    const auto& v = obj.at(key);
    if (!v.is_string()) fail(ctx, "'" + key + "' must be a string");
    return v.get<std::string>();
}

Vector get_vector(const json& obj, const std::string& key,
                  const std::string& ctx) {
    const auto& v = obj.at(key);
    if (!v.is_array() || v.empty())
        fail(ctx, "'" + key + "' must be a non-empty array of numbers");
    Vector out(static_cast<Eigen::Index>(v.size()));
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (!v[i].is_number()) fail(ctx, "'" + key + "' must hold numbers");
        out[static_cast<Eigen::Index>(i)] = v[i].get<double>();
    }
    return out;
}

Matrix get_matrix(const json& obj, const std::string& key,
                  const std::string& ctx) {
    const auto& v = obj.at(key);
    if (!v.is_array() || v.empty())
        fail(ctx, "'" + key + "' must be a non-empty array of rows");
    const std::size_t cols = v[0].is_array() ? v[0].size() : 0;
    if (cols == 0) fail(ctx, "'" + key + "' rows must be non-empty arrays");
    Matrix out(static_cast<Eigen::Index>(v.size()),
               static_cast<Eigen::Index>(cols));
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (!v[i].is_array() || v[i].size() != cols)
            fail(ctx, "'" + key + "' rows have inconsistent lengths");
        for (std::size_t j = 0; j < cols; ++j) {
            if (!v[i][j].is_number())
                fail(ctx, "'" + key + "' must hold numbers");
            out(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
                v[i][j].get<double>();
        }
    }
    return out;
}

LabelRule parse_label_rule(const json& obj, const std::string& ctx) {
    check_keys(obj, ctx, {"type", "a", "b", "p"}, {"type"});
    LabelRule rule;
    const std::string type = get_string(obj, "type", ctx);
    if (type == "sigmoid") {
        rule.kind = LabelRule::Kind::Sigmoid;
    } else if (type == "ramp") {
        rule.kind = LabelRule::Kind::Ramp;
    } else if (type == "constant") {
        rule.kind = LabelRule::Kind::Constant;
    } else {
        fail(ctx, "unknown label rule type '" + type + "'");
    }
    rule.a = get_double_or(obj, "a", ctx, 1.0);
    rule.b = get_double_or(obj, "b", ctx, 0.0);
    rule.p = get_double_or(obj, "p", ctx, 0.5);
    return rule;
}

LearnerConfig parse_learner(const json& obj, const std::string& ctx) {
    check_keys(obj, ctx,
               {"architecture", "hidden_units", "hidden_layers", "activation",
                "l2_penalty", "learning_rate", "max_epochs", "batch_size",
                "tolerance"},
               {"architecture"});
    LearnerConfig cfg;
    const std::string arch = get_string(obj, "architecture", ctx);
    if (arch == "linear") {
        cfg.arch = LearnerConfig::Arch::Linear;
    } else if (arch == "mlp") {
        cfg.arch = LearnerConfig::Arch::Mlp;
    } else {
        fail(ctx, "architecture must be 'linear' or 'mlp'");
    }
    cfg.hidden_units = static_cast<int>(get_int_or(obj, "hidden_units", ctx, 16));
    cfg.hidden_layers =
        static_cast<int>(get_int_or(obj, "hidden_layers", ctx, 1));
    if (obj.contains("activation")) {
        const std::string act = get_string(obj, "activation", ctx);
        if (act == "tanh") {
            cfg.activation = Activation::Tanh;
        } else if (act == "relu") {
            cfg.activation = Activation::Relu;
        } else {
            fail(ctx, "activation must be 'tanh' or 'relu'");
        }
    }
    cfg.l2_penalty = get_double_or(obj, "l2_penalty", ctx, 0.0);
    cfg.learning_rate = get_double_or(obj, "learning_rate", ctx, 1.0);
    cfg.max_epochs = static_cast<int>(get_int_or(obj, "max_epochs", ctx, 500));
    cfg.batch_size = static_cast<int>(get_int_or(obj, "batch_size", ctx, 0));
    cfg.tolerance = get_double_or(obj, "tolerance", ctx, 1e-8);
    cfg.validate();
    return cfg;
}

GeneratorSpec parse_generator(const json& obj, const std::string& ctx) {
    if (!obj.is_object()) fail(ctx, "expected a JSON object");
    const std::string type =
        obj.contains("type") ? get_string(obj, "type", ctx) : "";
    if (type == "gaussian") {
        check_keys(obj, ctx,
                   {"type", "source_mean", "target_mean", "source_cov",
                    "target_cov", "label_fn", "n_source", "n_target"},
                   {"type", "source_mean", "target_mean", "source_cov",
                    "target_cov", "n_source", "n_target"});
        GaussianShiftConfig cfg;
        cfg.source_mean = get_vector(obj, "source_mean", ctx);
        cfg.target_mean = get_vector(obj, "target_mean", ctx);
        cfg.source_cov = get_matrix(obj, "source_cov", ctx);
        cfg.target_cov = get_matrix(obj, "target_cov", ctx);
        if (obj.contains("label_fn"))
            cfg.label_fn = parse_label_rule(obj.at("label_fn"), ctx + ".label_fn");
        cfg.n_source = get_int(obj, "n_source", ctx);
        cfg.n_target = get_int(obj, "n_target", ctx);
        cfg.validate();
        return cfg;
    }
    if (type == "mixture") {
        check_keys(obj, ctx,
                   {"type", "classes", "dim", "separation", "class_means",
                    "class_covs", "source_ratio", "target_ratio", "n_source",
                    "n_target"},
                   {"type", "source_ratio", "target_ratio", "n_source",
                    "n_target"});
        const Vector source_ratio = get_vector(obj, "source_ratio", ctx);
        const Vector target_ratio = get_vector(obj, "target_ratio", ctx);
        if (obj.contains("class_means")) {
            MixtureShiftConfig cfg;
            const Matrix means = get_matrix(obj, "class_means", ctx);
            const Eigen::Index d = means.cols();
            for (Eigen::Index c = 0; c < means.rows(); ++c) {
                ClassGenerator gen;
                gen.mean = means.row(c).transpose();
                gen.cov = Matrix::Identity(d, d);
                cfg.class_generators.push_back(std::move(gen));
            }
            if (obj.contains("class_covs")) {
                const auto& covs = obj.at("class_covs");
                if (!covs.is_array() ||
                    covs.size() != cfg.class_generators.size())
                    fail(ctx, "'class_covs' needs one matrix per class");
                for (std::size_t c = 0; c < covs.size(); ++c) {
                    json holder;
                    holder["m"] = covs[c];
                    cfg.class_generators[c].cov = get_matrix(holder, "m", ctx);
                }
            }
            cfg.source_ratio = source_ratio;
            cfg.target_ratio = target_ratio;
            cfg.n_source = get_int(obj, "n_source", ctx);
            cfg.n_target = get_int(obj, "n_target", ctx);
            cfg.validate();
            return cfg;
        }
        MixtureAutoSpec spec;
        spec.n_classes = static_cast<int>(
            get_int_or(obj, "classes", ctx, source_ratio.size()));
        if (spec.n_classes != source_ratio.size())
            fail(ctx, "'classes' must match the ratio vector length");
        spec.dim = static_cast<int>(get_int_or(obj, "dim", ctx, 8));
        spec.separation = get_double_or(obj, "separation", ctx, 3.0);
        spec.source_ratio = source_ratio;
        spec.target_ratio = target_ratio;
        spec.n_source = get_int(obj, "n_source", ctx);
        spec.n_target = get_int(obj, "n_target", ctx);
        return spec;
    }
    if (type == "files") {
        check_keys(obj, ctx, {"type", "source", "target", "gt_weights"},
                   {"type", "source", "target"});
        FileDataSpec spec;
        spec.source = get_string(obj, "source", ctx);
        spec.target = get_string(obj, "target", ctx);
        if (obj.contains("gt_weights"))
            spec.gt_weights = get_string(obj, "gt_weights", ctx);
        return spec;
    }
    fail(ctx, "generator type must be 'gaussian', 'mixture', or 'files'");
}

WeightsModeSpec parse_weights_mode(const json& obj, const std::string& ctx) {
    check_keys(obj, ctx, {"type", "config", "sigma"}, {"type"});
    WeightsModeSpec spec;
    const std::string type = get_string(obj, "type", ctx);
    if (type == "ground_truth") {
        spec.type = WeightsModeSpec::Type::GroundTruth;
    } else if (type == "discriminator") {
        spec.type = WeightsModeSpec::Type::Discriminator;
        if (obj.contains("config"))
            spec.discriminator = parse_learner(obj.at("config"), ctx + ".config");
    } else if (type == "noisy_ground_truth") {
        spec.type = WeightsModeSpec::Type::NoisyGroundTruth;
        spec.sigma = get_double(obj, "sigma", ctx);
        if (spec.sigma < 0.0) fail(ctx, "'sigma' must be >= 0");
    } else {
        fail(ctx, "weights_mode type must be 'ground_truth', 'discriminator', "
                  "or 'noisy_ground_truth'");
    }
    return spec;
}

std::vector<WeightCorrection> parse_corrections(const json& arr,
                                                const std::string& ctx) {
    if (!arr.is_array()) fail(ctx, "'corrections' must be an array");
    std::vector<WeightCorrection> out;
    for (std::size_t i = 0; i < arr.size(); ++i) {
        const std::string ictx = ctx + "[" + std::to_string(i) + "]";
        check_keys(arr[i], ictx, {"op", "alpha", "c"}, {"op"});
        const std::string op = get_string(arr[i], "op", ictx);
        if (op == "normalize") {
            out.push_back({WeightCorrection::Kind::SelfNormalize, 0.0});
        } else if (op == "flatten") {
            out.push_back({WeightCorrection::Kind::Flatten,
                           get_double(arr[i], "alpha", ictx)});
        } else if (op == "clip") {
            out.push_back(
                {WeightCorrection::Kind::Clip, get_double(arr[i], "c", ictx)});
        } else {
            fail(ictx, "op must be 'normalize', 'flatten', or 'clip'");
        }
    }
    return out;
}

std::vector<CalibratorKind> parse_calibrators(const json& arr,
                                              const std::string& ctx) {
    if (!arr.is_array() || arr.empty())
        fail(ctx, "'calibrators' must be a non-empty array");
    std::vector<CalibratorKind> out;
    for (const auto& v : arr) {
        if (!v.is_string()) fail(ctx, "'calibrators' must hold strings");
        const CalibratorKind kind = parse_calibrator_label(v.get<std::string>());
        if (std::find(out.begin(), out.end(), kind) != out.end())
            fail(ctx, "duplicate calibrator '" + v.get<std::string>() + "'");
        out.push_back(kind);
    }
    return out;
}

ExperimentConfig parse_experiment_sections(const json& obj,
                                           const std::string& ctx,
                                           bool generator_required) {
    ExperimentConfig cfg;
    if (obj.contains("generator"))
        cfg.generator = parse_generator(obj.at("generator"), ctx + "generator");
    else if (generator_required)
        fail(ctx + "generator", "missing section");
    if (obj.contains("classifier"))
        cfg.classifier = parse_learner(obj.at("classifier"), ctx + "classifier");
    if (obj.contains("calibrators"))
        cfg.calibrators =
            parse_calibrators(obj.at("calibrators"), ctx + "calibrators");
    if (obj.contains("weights_mode"))
        cfg.weights_mode =
            parse_weights_mode(obj.at("weights_mode"), ctx + "weights_mode");
    if (obj.contains("corrections"))
        cfg.corrections =
            parse_corrections(obj.at("corrections"), ctx + "corrections");
    cfg.split_fraction = get_double_or(obj, "split_fraction", ctx, 0.7);
    cfg.m_bins = static_cast<int>(get_int_or(obj, "m_bins", ctx, 15));
    cfg.n_replications =
        static_cast<int>(get_int_or(obj, "n_replications", ctx, 10));
    cfg.seed = static_cast<std::uint64_t>(get_int_or(obj, "seed", ctx, 0));
    cfg.validation_subsample = static_cast<Eigen::Index>(
        get_int_or(obj, "validation_subsample", ctx, 0));
    return cfg;
}

// FNV-1a over the canonical (sorted-key, compact) document.
std::string digest_of(const json& j) {
    const std::string canonical = j.dump();
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : canonical) {
        h ^= c;
        h *= 1099511628211ull;
    }
    std::ostringstream out;
    out << std::hex << h;
    return out.str();
}

void apply_override(json& doc, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0)
        throw ConfigError("--set expects dotted.path=value, got '" +
                          assignment + "'");
    const std::string path = assignment.substr(0, eq);
    const std::string raw = assignment.substr(eq + 1);
    json value;
    try {
        value = json::parse(raw);
    } catch (const json::exception&) {
        value = raw;  // unparseable values are taken as strings
    }
    json* cur = &doc;
    std::size_t start = 0;
    while (true) {
        const std::size_t dot = path.find('.', start);
        const std::string key =
            path.substr(start, dot == std::string::npos ? dot : dot - start);
        if (key.empty())
            throw ConfigError("--set path has an empty segment: '" + path + "'");
        if (dot == std::string::npos) {
            (*cur)[key] = value;
            return;
        }
        cur = &(*cur)[key];
        start = dot + 1;
    }
}

}  // namespace

CliConfig parse_cli_config(const std::string& json_text,
                           const std::vector<std::string>& overrides) {
    json doc;
    try {
        doc = json::parse(json_text);
    } catch (const json::exception& e) {
        throw ParseError(std::string("config is not valid JSON: ") + e.what());
    }
    for (const auto& o : overrides) apply_override(doc, o);
    if (!doc.is_object()) throw ConfigError("config root must be a JSON object");
    if (!doc.contains("command"))
        throw ConfigError("config needs a top-level 'command'");

    CliConfig out;
    out.command = get_string(doc, "command", "");
    if (doc.contains("workdir"))
        out.workdir = get_string(doc, "workdir", "");

    const std::string digest = digest_of(doc);
    const std::set<std::string> common = {"command", "workdir", "seed"};
    auto with = [&](std::initializer_list<std::string> extra) {
        std::set<std::string> keys = common;
        keys.insert(extra.begin(), extra.end());
        return keys;
    };

    if (out.command == "generate") {
        check_keys(doc, "", with({"generator"}), {"generator"});
        out.experiment = parse_experiment_sections(doc, "", true);
    } else if (out.command == "train") {
        check_keys(doc, "", with({"classifier", "split_fraction"}),
                   {"classifier"});
        out.experiment = parse_experiment_sections(doc, "", false);
    } else if (out.command == "estimate-weights") {
        check_keys(doc, "",
                   with({"weights_mode", "corrections", "split_fraction"}),
                   {"weights_mode"});
        out.experiment = parse_experiment_sections(doc, "", false);
    } else if (out.command == "calibrate") {
        check_keys(doc, "", with({"calibrator", "mode", "split_fraction"}),
                   {"calibrator", "mode"});
        out.experiment = parse_experiment_sections(doc, "", false);
        out.calibrate_kind =
            parse_calibrator_label(get_string(doc, "calibrator", ""));
        const std::string mode = get_string(doc, "mode", "");
        if (mode == "unweighted") {
            out.calibrate_mode = CalibrateMode::Unweighted;
        } else if (mode == "weighted") {
            out.calibrate_mode = CalibrateMode::Weighted;
        } else if (mode == "using_target") {
            out.calibrate_mode = CalibrateMode::UsingTarget;
        } else {
            fail("", "mode must be 'unweighted', 'weighted', or 'using_target'");
        }
    } else if (out.command == "experiment") {
        check_keys(doc, "",
                   with({"generator", "classifier", "calibrators",
                         "weights_mode", "corrections", "split_fraction",
                         "m_bins", "n_replications", "validation_subsample"}),
                   {"generator", "classifier"});
        out.experiment = parse_experiment_sections(doc, "", true);
        out.experiment.digest = digest;
        out.experiment.validate();
    } else if (out.command == "sweep") {
        check_keys(doc, "", with({"axis", "base"}), {"axis", "base"});
        const auto& axis = doc.at("axis");
        check_keys(axis, "axis", {"type", "grid"}, {"type", "grid"});
        const std::string type = get_string(axis, "type", "axis");
        if (type == "divergence") {
            out.sweep.axis = SweepSpec::Axis::Divergence;
        } else if (type == "validation_size") {
            out.sweep.axis = SweepSpec::Axis::ValidationSize;
        } else if (type == "weight_noise") {
            out.sweep.axis = SweepSpec::Axis::WeightNoise;
        } else {
            fail("axis", "type must be 'divergence', 'validation_size', or "
                         "'weight_noise'");
        }
        const Vector grid = get_vector(axis, "grid", "axis");
        out.sweep.grid.assign(grid.data(), grid.data() + grid.size());
        const auto& base = doc.at("base");
        check_keys(base, "base",
                   {"generator", "classifier", "calibrators", "weights_mode",
                    "corrections", "split_fraction", "m_bins", "n_replications",
                    "validation_subsample", "seed"},
                   {"generator", "classifier"});
        out.sweep.base = parse_experiment_sections(base, "base.", true);
        out.sweep.base.digest = digest;
        out.sweep.validate();
    } else if (out.command == "figure2") {
        check_keys(doc, "",
                   with({"generator", "classifier", "mesh_resolution",
                         "m_bins", "split_fraction"}),
                   {"generator", "classifier"});
        ExperimentConfig sections = parse_experiment_sections(doc, "", true);
        const auto* gaussian =
            std::get_if<GaussianShiftConfig>(&sections.generator);
        if (!gaussian) fail("generator", "figure2 needs a gaussian generator");
        out.figure2.generator = *gaussian;
        out.figure2.classifier = sections.classifier;
        out.figure2.mesh_resolution =
            static_cast<int>(get_int_or(doc, "mesh_resolution", "", 60));
        out.figure2.m_bins = sections.m_bins;
        out.figure2.split_fraction = sections.split_fraction;
        out.figure2.seed = sections.seed;
    } else {
        throw ConfigError("unknown command '" + out.command + "'");
    }
    out.experiment.digest = digest;
    return out;
}

CliConfig load_cli_config(const std::filesystem::path& path,
                          const std::vector<std::string>& overrides) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_cli_config(buf.str(), overrides);
}

}  // namespace shiftcal
