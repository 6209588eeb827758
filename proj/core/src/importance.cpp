#include "shiftcal/importance.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numbers>
#include <string>

#include "shiftcal/errors.hpp"
#include "shiftcal/rng.hpp"

namespace shiftcal {

namespace {

constexpr double kProbClamp = 1e-6;

void check_values(const ImportanceWeights& w) {
    if (w.values.size() == 0)
        throw DegenerateWeightsError("empty weight vector");
    if (!w.values.allFinite())
        throw NumericError("weights contain non-finite values");
    if ((w.values.array() < 0.0).any())
        throw DegenerateWeightsError("weights must be nonnegative");
}

Vector normalized_values(const ImportanceWeights& w) {
    check_values(w);
    const double mean = w.values.mean();
    if (std::abs(mean - 1.0) <= 1e-12) return w.values;
    if (!(mean > 0.0)) throw DegenerateWeightsError("weights sum to zero");
    return w.values * (1.0 / mean);
}

std::string format_double(double v) {
    char buf[32];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

// Row-wise log N(x; mean, cov) through the Cholesky factor.
Vector gaussian_log_density(const Matrix& x, const Vector& mean,
                            const Matrix& cov) {
    Eigen::LLT<Matrix> llt(cov);
    if (llt.info() != Eigen::Success)
        throw ConfigError("covariance is not positive definite");
    const Matrix l = llt.matrixL();
    double log_det = 0.0;
    for (Eigen::Index i = 0; i < l.rows(); ++i)
        log_det += 2.0 * std::log(l(i, i));
    const double base =
        -0.5 * (double(mean.size()) * std::log(2.0 * std::numbers::pi) +
                log_det);
    Matrix centered = x.rowwise() - mean.transpose();
    Matrix solved =
        l.triangularView<Eigen::Lower>().solve(centered.transpose());
    Vector out(x.rows());
    for (Eigen::Index i = 0; i < x.rows(); ++i)
        out[i] = base - 0.5 * solved.col(i).squaredNorm();
    return out;
}

}  // namespace

std::string provenance_label(WeightProvenance p, double noise_sigma) {
    switch (p) {
        case WeightProvenance::GroundTruth: return "ground-truth";
        case WeightProvenance::Discriminator: return "discriminator";
        case WeightProvenance::Noisy:
            return "noisy(" + format_double(noise_sigma) + ")";
    }
    return "unknown";
}

std::string correction_label(const WeightCorrection& c) {
    switch (c.kind) {
        case WeightCorrection::Kind::SelfNormalize: return "self_normalize";
        case WeightCorrection::Kind::Flatten:
            return "flatten(" + format_double(c.param) + ")";
        case WeightCorrection::Kind::Clip:
            return "clip(" + format_double(c.param) + ")";
    }
    return "unknown";
}

Vector weights_from_discriminator_probs(const Vector& p_source,
                                        Eigen::Index n_source,
                                        Eigen::Index n_target) {
    if (n_source < 1 || n_target < 1)
        throw ShapeError("domain sample counts must be >= 1");
    Vector out(p_source.size());
    const double prior_ratio = double(n_source) / double(n_target);
    for (Eigen::Index i = 0; i < p_source.size(); ++i) {
        const double p = std::clamp(p_source[i], kProbClamp, 1.0 - kProbClamp);
        out[i] = prior_ratio * (1.0 - p) / p;
    }
    return out;
}

ImportanceWeights estimate_weights_discriminator(const Matrix& source_features,
                                                 const Matrix& target_features,
                                                 const LearnerConfig& config) {
    if (source_features.rows() < 1 || target_features.rows() < 1)
        throw ShapeError("discriminator needs non-empty source and target");
    if (source_features.cols() != target_features.cols())
        throw ShapeError("source/target feature dims differ");

    const Eigen::Index n_s = source_features.rows();
    const Eigen::Index n_t = target_features.rows();
    Matrix x(n_s + n_t, source_features.cols());
    x.topRows(n_s) = source_features;
    x.bottomRows(n_t) = target_features;
    IntVector d(n_s + n_t);
    d.head(n_s).setConstant(1);  // source
    d.tail(n_t).setConstant(0);  // target

    LearnerConfig cfg = config;
    cfg.n_classes = 2;
    ProbabilisticModel disc = fit(cfg, x, d);

    ImportanceWeights w;
    w.values = weights_from_discriminator_probs(
        disc.predict_proba(source_features).col(1), n_s, n_t);
    w.provenance = WeightProvenance::Discriminator;
    return w;
}

ImportanceWeights self_normalize(ImportanceWeights w) {
    check_values(w);
    const double total = w.values.sum();
    if (!(total > 0.0)) throw DegenerateWeightsError("weights sum to zero");
    w.values *= double(w.values.size()) / total;
    w.corrections.push_back({WeightCorrection::Kind::SelfNormalize, 0.0});
    return w;
}

ImportanceWeights flatten(ImportanceWeights w, double alpha) {
    if (!(alpha >= 0.0 && alpha <= 1.0))
        throw ConfigError("flatten alpha must lie in [0, 1]");
    check_values(w);
    w.values = w.values.array().pow(alpha);
    w.corrections.push_back({WeightCorrection::Kind::Flatten, alpha});
    return w;
}

ImportanceWeights clip(ImportanceWeights w, double c) {
    if (!(c > 0.0)) throw ConfigError("clip cap must be > 0");
    check_values(w);
    w.values = w.values.cwiseMin(c);
    w.corrections.push_back({WeightCorrection::Kind::Clip, c});
    return w;
}

ImportanceWeights add_weight_noise(ImportanceWeights w, double sigma,
                                   std::uint64_t seed) {
    if (sigma < 0.0) throw ConfigError("noise sigma must be >= 0");
    check_values(w);
    Rng rng(seed);
    for (Eigen::Index i = 0; i < w.values.size(); ++i)
        w.values[i] = std::max(0.0, w.values[i] + sigma * rng.normal());
    w.provenance = WeightProvenance::Noisy;
    w.noise_sigma = sigma;
    return w;
}

ImportanceWeights apply_corrections(ImportanceWeights w,
                                    const std::vector<WeightCorrection>& list) {
    for (const auto& c : list) {
        switch (c.kind) {
            case WeightCorrection::Kind::SelfNormalize:
                w = self_normalize(std::move(w));
                break;
            case WeightCorrection::Kind::Flatten:
                w = flatten(std::move(w), c.param);
                break;
            case WeightCorrection::Kind::Clip:
                w = clip(std::move(w), c.param);
                break;
        }
    }
    return w;
}

double renyi_divergence_estimate(const ImportanceWeights& w, double alpha) {
    if (!(alpha > 0.0)) throw ConfigError("renyi alpha must be > 0");
    Vector v = normalized_values(w);
    const double moment = v.array().pow(alpha + 1.0).mean();
    return std::pow(moment, 1.0 / alpha);
}

double effective_sample_size(const Vector& w) {
    const double s1 = w.sum();
    const double s2 = w.squaredNorm();
    if (!(s2 > 0.0)) throw DegenerateWeightsError("weights sum to zero");
    return s1 * s1 / s2;
}

RatioDiagnostics weighted_loss_variance_diagnostic(const Vector& losses,
                                                   const ImportanceWeights& w,
                                                   double alpha) {
    if (losses.size() != w.values.size())
        throw ShapeError("losses/weights length mismatch");
    if (!(alpha > 0.0)) throw ConfigError("renyi alpha must be > 0");
    Vector v = normalized_values(w);

    RatioDiagnostics diag;
    diag.renyi_alpha = alpha;
    ImportanceWeights normed{v, w.provenance, w.noise_sigma, w.corrections};
    diag.renyi_divergence_estimate = renyi_divergence_estimate(normed, alpha);
    diag.weight_variance = (v.array() - v.mean()).square().mean();
    diag.effective_sample_size = effective_sample_size(v);

    Vector weighted_loss = v.cwiseProduct(losses);
    const double mean_wl = weighted_loss.mean();
    diag.empirical_variance =
        (weighted_loss.array() - mean_wl).square().mean();

    const double exponent = 1.0 - 1.0 / alpha;
    // Unweighted reading: E_te[l] estimated by mean(w * l).
    diag.bound_unweighted_reading =
        diag.renyi_divergence_estimate * std::pow(mean_wl, exponent) -
        mean_wl * mean_wl;
    // Weighted reading: E_te[l_gamma] estimated by mean(w^2 * l).
    const double mean_wwl = v.cwiseProduct(weighted_loss).mean();
    diag.bound_weighted_reading =
        diag.renyi_divergence_estimate * std::pow(mean_wwl, exponent) -
        mean_wwl * mean_wwl;
    diag.variance_within_bound =
        diag.empirical_variance <= diag.bound_unweighted_reading;
    return diag;
}

ImportanceWeights ground_truth_mixture_weights(const MixtureShiftConfig& config,
                                               const IntVector& labels) {
    config.validate();
    ImportanceWeights w;
    w.values.resize(labels.size());
    for (Eigen::Index i = 0; i < labels.size(); ++i) {
        if (labels[i] < 0 || labels[i] >= config.n_classes())
            throw ConfigError("label out of range for mixture config");
        w.values[i] = config.class_weight(labels[i]);
    }
    w.provenance = WeightProvenance::GroundTruth;
    return w;
}

ImportanceWeights ground_truth_gaussian_weights(const GaussianShiftConfig& config,
                                                const Matrix& x) {
    config.validate();
    if (x.cols() != config.source_mean.size())
        throw ShapeError("feature dim does not match gaussian config");
    Vector log_src = gaussian_log_density(x, config.source_mean, config.source_cov);
    Vector log_tgt = gaussian_log_density(x, config.target_mean, config.target_cov);
    ImportanceWeights w;
    w.values = (log_tgt - log_src).array().exp();
    w.provenance = WeightProvenance::GroundTruth;
    return w;
}

void write_weights_csv(const ImportanceWeights& w,
                       const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw Error("cannot open " + path.string() + " for writing");
    std::string buf = "provenance=" + provenance_label(w.provenance, w.noise_sigma) +
                      ",corrections=";
    if (w.corrections.empty()) {
        buf += "none";
    } else {
        for (std::size_t i = 0; i < w.corrections.size(); ++i) {
            if (i) buf += ';';
            buf += correction_label(w.corrections[i]);
        }
    }
    buf += '\n';
    for (Eigen::Index i = 0; i < w.values.size(); ++i) {
        buf += format_double(w.values[i]);
        buf += '\n';
    }
    out << buf;
    if (!out) throw Error("write failed for " + path.string());
}

namespace {

double parse_paren_param(const std::string& s, const std::string& prefix,
                         std::size_t line_no) {
    // prefix(value)
    if (s.size() < prefix.size() + 2 || s.back() != ')')
        throw ParseError("bad correction tag: " + s, line_no);
    const std::string inner = s.substr(prefix.size() + 1,
                                       s.size() - prefix.size() - 2);
    double v = 0.0;
    auto res = std::from_chars(inner.data(), inner.data() + inner.size(), v);
    if (res.ec != std::errc() || res.ptr != inner.data() + inner.size())
        throw ParseError("bad numeric parameter in: " + s, line_no);
    return v;
}

}  // namespace

ImportanceWeights read_weights_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open " + path.string());
    std::string line;
    if (!std::getline(in, line)) throw ParseError("empty weights file", 1);

    const auto comma = line.find(',');
    if (line.rfind("provenance=", 0) != 0 || comma == std::string::npos ||
        line.compare(comma + 1, 12, "corrections=") != 0)
        throw ParseError("bad weights header", 1);

    ImportanceWeights w;
    const std::string prov = line.substr(11, comma - 11);
    if (prov == "ground-truth") {
        w.provenance = WeightProvenance::GroundTruth;
    } else if (prov == "discriminator") {
        w.provenance = WeightProvenance::Discriminator;
    } else if (prov.rfind("noisy(", 0) == 0) {
        w.provenance = WeightProvenance::Noisy;
        w.noise_sigma = parse_paren_param(prov, "noisy", 1);
    } else {
        throw ParseError("unknown provenance: " + prov, 1);
    }

    const std::string corr = line.substr(comma + 13);
    if (corr != "none" && !corr.empty()) {
        std::size_t start = 0;
        while (start <= corr.size()) {
            std::size_t pos = corr.find(';', start);
            const std::string tag =
                corr.substr(start, pos == std::string::npos ? pos : pos - start);
            if (tag == "self_normalize")
                w.corrections.push_back({WeightCorrection::Kind::SelfNormalize, 0.0});
            else if (tag.rfind("flatten(", 0) == 0)
                w.corrections.push_back({WeightCorrection::Kind::Flatten,
                                         parse_paren_param(tag, "flatten", 1)});
            else if (tag.rfind("clip(", 0) == 0)
                w.corrections.push_back({WeightCorrection::Kind::Clip,
                                         parse_paren_param(tag, "clip", 1)});
            else
                throw ParseError("unknown correction tag: " + tag, 1);
            if (pos == std::string::npos) break;
            start = pos + 1;
        }
    }

    std::vector<double> values;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        double v = 0.0;
        auto res = std::from_chars(line.data(), line.data() + line.size(), v);
        if (res.ec != std::errc() || res.ptr != line.data() + line.size())
            throw ParseError("bad weight value: " + line, line_no);
        if (!std::isfinite(v) || v < 0.0)
            throw ParseError("weight must be finite and >= 0", line_no);
        values.push_back(v);
    }
    if (values.empty()) throw ParseError("weights file has no values", line_no);
    w.values = Eigen::Map<Vector>(values.data(),
                                  static_cast<Eigen::Index>(values.size()));
    return w;
}

}  // namespace shiftcal
