#include "shiftcal/calibration.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include <nlohmann/json.hpp>

#include "shiftcal/errors.hpp"
#include "shiftcal/learner.hpp"

namespace shiftcal {

namespace {

constexpr double kLogTempLow = -4.605170185988091;  // log(1e-2)
constexpr double kLogTempHigh = 4.605170185988092;  // log(1e2)

WeightsUsed classify_weights(const Vector& w) {
    for (Eigen::Index i = 1; i < w.size(); ++i)
        if (w[i] != w[0]) return WeightsUsed::Importance;
    return WeightsUsed::Uniform;
}

void check_fit_inputs(const Matrix& logits, const IntVector& labels,
                      const Vector& weights) {
    if (logits.rows() != labels.size() || logits.rows() != weights.size())
        throw ShapeError("calibration fit: length mismatch");
    if (logits.rows() < 1) throw ShapeError("calibration fit: empty input");
    if (logits.cols() < 2) throw ShapeError("calibration fit: need K >= 2");
}

}  // namespace

double IsotonicMap::eval(double s) const {
    if (steps.empty()) return s;
    auto it = std::upper_bound(
        steps.begin(), steps.end(), s,
        [](double v, const Step& st) { return v < st.breakpoint; });
    if (it == steps.begin()) return steps.front().value;
    return std::prev(it)->value;
}

Calibrator fit_platt(const Matrix& logits, const IntVector& labels,
                     const Vector& weights) {
    check_fit_inputs(logits, labels, weights);
    const auto k = static_cast<int>(logits.cols());

    ProbabilisticModel identity;
    identity.activation = Activation::Tanh;
    identity.input_dim = k;
    identity.n_classes = k;
    identity.layers.push_back({Matrix::Identity(k, k), Vector::Zero(k)});

    LearnerConfig cfg;
    cfg.arch = LearnerConfig::Arch::Linear;
    cfg.learning_rate = 1.0;
    cfg.max_epochs = 2000;
    cfg.tolerance = 1e-10;
    cfg.n_classes = k;
    ProbabilisticModel fitted = fit(cfg, logits, labels, weights, identity);

    Calibrator cal;
    cal.map = PlattMap{fitted.layers[0].weight, fitted.layers[0].bias};
    cal.fit_record = {classify_weights(weights), logits.rows(),
                      fitted.training_loss_trace.back()};
    return cal;
}

Calibrator fit_temperature(const Matrix& logits, const IntVector& labels,
                           const Vector& weights) {
    check_fit_inputs(logits, labels, weights);

    auto loss_at = [&](double log_t) {
        return weighted_nll(softmax_rows(logits / std::exp(log_t)), labels,
                            weights);
    };

    // Golden-section search; the interval shrinks by 1/phi per step.
    const double inv_phi = (std::sqrt(5.0) - 1.0) / 2.0;
    double lo = kLogTempLow, hi = kLogTempHigh;
    double x1 = hi - inv_phi * (hi - lo);
    double x2 = lo + inv_phi * (hi - lo);
    double f1 = loss_at(x1), f2 = loss_at(x2);
    while (hi - lo > 1e-6) {
        if (f1 <= f2) {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - inv_phi * (hi - lo);
            f1 = loss_at(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + inv_phi * (hi - lo);
            f2 = loss_at(x2);
        }
    }
    const double log_t = 0.5 * (lo + hi);

    TemperatureScale scale;
    scale.temperature = std::exp(log_t);
    scale.search_bound_hit =
        log_t - kLogTempLow < 1e-3 || kLogTempHigh - log_t < 1e-3;

    Calibrator cal;
    cal.map = scale;
    cal.fit_record = {classify_weights(weights), logits.rows(), loss_at(log_t)};
    return cal;
}

Calibrator fit_isotonic(const Vector& scores, const Vector& correctness,
                        const Vector& weights, IsotonicMap::Mode mode) {
    if (scores.size() != correctness.size() || scores.size() != weights.size())
        throw ShapeError("isotonic fit: length mismatch");
    if (scores.size() == 0) throw ShapeError("isotonic fit: empty input");
    double weight_total = 0.0;
    for (Eigen::Index i = 0; i < scores.size(); ++i) {
        if (!(scores[i] >= 0.0 && scores[i] <= 1.0))
            throw ConfigError("isotonic fit: scores must lie in [0, 1]");
        if (correctness[i] != 0.0 && correctness[i] != 1.0)
            throw ConfigError("isotonic fit: correctness must be 0 or 1");
        if (!(weights[i] >= 0.0) || !std::isfinite(weights[i]))
            throw DegenerateWeightsError("isotonic fit: bad weight");
        weight_total += weights[i];
    }
    if (!(weight_total > 0.0))
        throw DegenerateWeightsError("isotonic fit: weights sum to zero");

    // Sort by score; zero-weight points cannot move the objective.
    std::vector<Eigen::Index> order;
    for (Eigen::Index i = 0; i < scores.size(); ++i)
        if (weights[i] > 0.0) order.push_back(i);
    std::sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) {
        return scores[a] < scores[b];
    });

    struct Block {
        double score;  // block start (lowest score pooled in)
        double value;
        double weight;
    };
    std::vector<Block> blocks;
    std::size_t i = 0;
    while (i < order.size()) {
        // Pre-pool ties so g stays a function of the score.
        double s = scores[order[i]];
        double w = 0.0, wy = 0.0;
        while (i < order.size() && scores[order[i]] == s) {
            w += weights[order[i]];
            wy += weights[order[i]] * correctness[order[i]];
            ++i;
        }
        blocks.push_back({s, wy / w, w});
        // Pool adjacent violators.
        while (blocks.size() >= 2 &&
               blocks[blocks.size() - 2].value > blocks.back().value) {
            Block b = blocks.back();
            blocks.pop_back();
            Block& a = blocks.back();
            a.value = (a.value * a.weight + b.value * b.weight) /
                      (a.weight + b.weight);
            a.weight += b.weight;
        }
    }

    IsotonicMap map;
    map.mode = mode;
    for (const auto& b : blocks) map.steps.push_back({b.score, b.value});

    double loss = 0.0;
    for (Eigen::Index j : order) {
        const double r = map.eval(scores[j]) - correctness[j];
        loss += weights[j] * r * r;
    }

    Calibrator cal;
    cal.map = map;
    cal.fit_record = {classify_weights(weights), scores.size(),
                      loss / weight_total};
    return cal;
}

Calibrator fit_calibrator(CalibratorKind kind, const Matrix& logits,
                          const IntVector& labels, const Vector& weights) {
    switch (kind) {
        case CalibratorKind::Platt:
            return fit_platt(logits, labels, weights);
        case CalibratorKind::Temperature:
            return fit_temperature(logits, labels, weights);
        case CalibratorKind::Isotonic:
            break;
    }
    check_fit_inputs(logits, labels, weights);
    const Matrix probs = softmax_rows(logits);
    Vector scores(probs.rows());
    Vector correct(probs.rows());
    if (probs.cols() == 2) {
        for (Eigen::Index i = 0; i < probs.rows(); ++i) {
            scores[i] = probs(i, 1);
            correct[i] = labels[i] == 1 ? 1.0 : 0.0;
        }
        return fit_isotonic(scores, correct, weights, IsotonicMap::Mode::Class1);
    }
    for (Eigen::Index i = 0; i < probs.rows(); ++i) {
        Eigen::Index pred = 0;
        for (Eigen::Index j = 1; j < probs.cols(); ++j)
            if (probs(i, j) > probs(i, pred)) pred = j;
        scores[i] = probs(i, pred);
        correct[i] = pred == labels[i] ? 1.0 : 0.0;
    }
    return fit_isotonic(scores, correct, weights, IsotonicMap::Mode::TopLabel);
}

Vector apply_isotonic(const IsotonicMap& map, const Vector& scores) {
    Vector out(scores.size());
    for (Eigen::Index i = 0; i < scores.size(); ++i) out[i] = map.eval(scores[i]);
    return out;
}

Matrix apply(const Calibrator& cal, const Matrix& logits) {
    if (const auto* platt = std::get_if<PlattMap>(&cal.map)) {
        if (logits.cols() != platt->weight.cols())
            throw ShapeError("apply: logits width does not match calibrator");
        Matrix mapped =
            (logits * platt->weight.transpose()).rowwise() +
            platt->bias.transpose();
        return softmax_rows(mapped);
    }
    if (const auto* temp = std::get_if<TemperatureScale>(&cal.map)) {
        return softmax_rows(logits / temp->temperature);
    }
    const auto& iso = std::get<IsotonicMap>(cal.map);
    Matrix probs = softmax_rows(logits);
    if (iso.mode == IsotonicMap::Mode::Class1) {
        if (probs.cols() != 2)
            throw ShapeError("apply: class-1 isotonic calibrator needs K=2");
        for (Eigen::Index i = 0; i < probs.rows(); ++i) {
            const double p1 = iso.eval(probs(i, 1));
            probs(i, 1) = p1;
            probs(i, 0) = 1.0 - p1;
        }
        return probs;
    }
    for (Eigen::Index i = 0; i < probs.rows(); ++i) {
        Eigen::Index pred = 0;
        for (Eigen::Index j = 1; j < probs.cols(); ++j)
            if (probs(i, j) > probs(i, pred)) pred = j;
        const double p_top = probs(i, pred);
        const double c = iso.eval(p_top);
        const double rest = 1.0 - p_top;
        for (Eigen::Index j = 0; j < probs.cols(); ++j) {
            if (j == pred) {
                probs(i, j) = c;
            } else if (rest > 0.0) {
                probs(i, j) *= (1.0 - c) / rest;
            } else {
                probs(i, j) = (1.0 - c) / double(probs.cols() - 1);
            }
        }
    }
    return probs;
}

namespace {

const char* kind_tag(CalibratorKind k) {
    switch (k) {
        case CalibratorKind::Platt: return "platt";
        case CalibratorKind::Temperature: return "temperature";
        case CalibratorKind::Isotonic: return "isotonic";
    }
    return "unknown";
}

const char* weights_tag(WeightsUsed w) {
    switch (w) {
        case WeightsUsed::None: return "none";
        case WeightsUsed::Uniform: return "uniform";
        case WeightsUsed::Importance: return "importance";
    }
    return "unknown";
}

WeightsUsed parse_weights_tag(const std::string& s) {
    if (s == "none") return WeightsUsed::None;
    if (s == "uniform") return WeightsUsed::Uniform;
    if (s == "importance") return WeightsUsed::Importance;
    throw ParseError("unknown weights_used tag: " + s);
}

}  // namespace

std::string calibrator_label(CalibratorKind kind) { return kind_tag(kind); }

CalibratorKind parse_calibrator_label(const std::string& label) {
    if (label == "platt") return CalibratorKind::Platt;
    if (label == "temperature") return CalibratorKind::Temperature;
    if (label == "isotonic") return CalibratorKind::Isotonic;
    throw ConfigError("unknown calibrator: " + label);
}

void save_calibrator(const Calibrator& cal, const std::filesystem::path& path) {
    nlohmann::json j;
    j["kind"] = kind_tag(cal.kind());
    j["fit_record"] = {{"weights_used", weights_tag(cal.fit_record.weights_used)},
                       {"n_fit", cal.fit_record.n_fit},
                       {"final_loss", cal.fit_record.final_loss}};
    if (const auto* platt = std::get_if<PlattMap>(&cal.map)) {
        auto wj = nlohmann::json::array();
        for (Eigen::Index i = 0; i < platt->weight.rows(); ++i)
            for (Eigen::Index c = 0; c < platt->weight.cols(); ++c)
                wj.push_back(platt->weight(i, c));
        j["k"] = platt->weight.rows();
        j["weight"] = std::move(wj);
        auto bj = nlohmann::json::array();
        for (Eigen::Index i = 0; i < platt->bias.size(); ++i)
            bj.push_back(platt->bias[i]);
        j["bias"] = std::move(bj);
    } else if (const auto* temp = std::get_if<TemperatureScale>(&cal.map)) {
        j["temperature"] = temp->temperature;
        j["search_bound_hit"] = temp->search_bound_hit;
    } else {
        const auto& iso = std::get<IsotonicMap>(cal.map);
        j["mode"] = iso.mode == IsotonicMap::Mode::Class1 ? "class1" : "top_label";
        auto steps = nlohmann::json::array();
        for (const auto& st : iso.steps)
            steps.push_back({{"breakpoint", st.breakpoint}, {"value", st.value}});
        j["steps"] = std::move(steps);
    }
    std::ofstream out(path);
    if (!out) throw Error("cannot open " + path.string() + " for writing");
    out << j.dump(2) << '\n';
}

Calibrator load_calibrator(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open " + path.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("bad calibrator json: ") + e.what());
    }
    Calibrator cal;
    try {
        const auto kind = j.at("kind").get<std::string>();
        if (kind == "platt") {
            const auto k = j.at("k").get<Eigen::Index>();
            PlattMap platt;
            platt.weight.resize(k, k);
            const auto& wj = j.at("weight");
            if (static_cast<Eigen::Index>(wj.size()) != k * k)
                throw ParseError("platt weight size mismatch");
            for (Eigen::Index i = 0; i < k; ++i)
                for (Eigen::Index c = 0; c < k; ++c)
                    platt.weight(i, c) =
                        wj[static_cast<std::size_t>(i * k + c)].get<double>();
            const auto& bj = j.at("bias");
            if (static_cast<Eigen::Index>(bj.size()) != k)
                throw ParseError("platt bias size mismatch");
            platt.bias.resize(k);
            for (Eigen::Index i = 0; i < k; ++i)
                platt.bias[i] = bj[static_cast<std::size_t>(i)].get<double>();
            cal.map = std::move(platt);
        } else if (kind == "temperature") {
            TemperatureScale temp;
            temp.temperature = j.at("temperature").get<double>();
            temp.search_bound_hit = j.value("search_bound_hit", false);
            if (!(temp.temperature > 0.0))
                throw ParseError("temperature must be > 0");
            cal.map = temp;
        } else if (kind == "isotonic") {
            IsotonicMap iso;
            iso.mode = j.at("mode").get<std::string>() == "top_label"
                           ? IsotonicMap::Mode::TopLabel
                           : IsotonicMap::Mode::Class1;
            for (const auto& st : j.at("steps"))
                iso.steps.push_back({st.at("breakpoint").get<double>(),
                                     st.at("value").get<double>()});
            cal.map = std::move(iso);
        } else {
            throw ParseError("unknown calibrator kind: " + kind);
        }
        const auto& fr = j.at("fit_record");
        cal.fit_record.weights_used =
            parse_weights_tag(fr.at("weights_used").get<std::string>());
        cal.fit_record.n_fit = fr.at("n_fit").get<Eigen::Index>();
        cal.fit_record.final_loss = fr.at("final_loss").get<double>();
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("bad calibrator json: ") + e.what());
    }
    return cal;
}

}  // namespace shiftcal
