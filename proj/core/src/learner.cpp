#include "shiftcal/learner.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <string>

#include <nlohmann/json.hpp>

#include "shiftcal/errors.hpp"
#include "shiftcal/rng.hpp"

namespace shiftcal {

namespace {

constexpr double kProbFloor = 1e-12;

Matrix activate(const Matrix& z, Activation act) {
    if (act == Activation::Tanh) return z.array().tanh();
    return z.cwiseMax(0.0);
}

// Derivative expressed through the activation output (tanh) or input (relu).
Matrix activate_grad(const Matrix& z, const Matrix& a, Activation act) {
    if (act == Activation::Tanh) return 1.0 - a.array().square();
    return (z.array() > 0.0).cast<double>();
}

// Forward pass keeping pre- and post-activation values per hidden layer.
struct ForwardPass {
    std::vector<Matrix> pre;   // hidden pre-activations
    std::vector<Matrix> post;  // hidden activations
    Matrix logits;
};

ForwardPass forward(const ProbabilisticModel& model, const Matrix& x) {
    ForwardPass fp;
    const Matrix* cur = &x;
    for (std::size_t l = 0; l + 1 < model.layers.size(); ++l) {
        Matrix z = (*cur * model.layers[l].weight.transpose()).rowwise() +
                   model.layers[l].bias.transpose();
        fp.post.push_back(activate(z, model.activation));
        fp.pre.push_back(std::move(z));
        cur = &fp.post.back();
    }
    const auto& out = model.layers.back();
    fp.logits = (*cur * out.weight.transpose()).rowwise() + out.bias.transpose();
    return fp;
}

// Weights scaled to sum 1 so the objective is invariant to rescaling.
Vector normalize_weights(const Vector& w) {
    if (w.size() == 0) throw DegenerateWeightsError("empty weight vector");
    if (!w.allFinite()) throw NumericError("weights contain non-finite values");
    if ((w.array() < 0.0).any())
        throw DegenerateWeightsError("weights must be nonnegative");
    const double total = w.sum();
    if (!(total > 0.0)) throw DegenerateWeightsError("weights sum to zero");
    return w / total;
}

double data_loss(const Matrix& probs, const IntVector& labels,
                 const Vector& norm_weights) {
    double loss = 0.0;
    for (Eigen::Index i = 0; i < labels.size(); ++i)
        loss -= norm_weights[i] *
                std::log(std::max(probs(i, labels[i]), kProbFloor));
    return loss;
}

double l2_term(const ProbabilisticModel& model, double l2) {
    if (l2 == 0.0) return 0.0;
    double sq = 0.0;
    for (const auto& layer : model.layers) sq += layer.weight.squaredNorm();
    return l2 * sq;
}

double objective(const ProbabilisticModel& model, const Matrix& x,
                 const IntVector& labels, const Vector& norm_weights,
                 double l2) {
    Matrix probs = softmax_rows(forward(model, x).logits);
    return data_loss(probs, labels, norm_weights) + l2_term(model, l2);
}

std::vector<ProbabilisticModel::Layer> layer_shapes(const LearnerConfig& cfg,
                                                    int d, int k) {
    std::vector<std::pair<int, int>> dims;
    if (cfg.arch == LearnerConfig::Arch::Linear) {
        dims.emplace_back(k, d);
    } else {
        dims.emplace_back(cfg.hidden_units, d);
        for (int l = 1; l < cfg.hidden_layers; ++l)
            dims.emplace_back(cfg.hidden_units, cfg.hidden_units);
        dims.emplace_back(k, cfg.hidden_units);
    }
    std::vector<ProbabilisticModel::Layer> layers;
    for (auto [rows, cols] : dims)
        layers.push_back({Matrix::Zero(rows, cols), Vector::Zero(rows)});
    return layers;
}

void random_init(std::vector<ProbabilisticModel::Layer>& layers,
                 std::uint64_t seed) {
    Rng rng(seed);
    for (auto& layer : layers)
        for (Eigen::Index i = 0; i < layer.weight.rows(); ++i)
            for (Eigen::Index j = 0; j < layer.weight.cols(); ++j)
                layer.weight(i, j) = 0.1 * rng.normal();
}

}  // namespace

void LearnerConfig::validate() const {
    if (arch == Arch::Mlp && hidden_units < 1)
        throw ConfigError("hidden_units must be >= 1");
    if (arch == Arch::Mlp && (hidden_layers < 1 || hidden_layers > 2))
        throw ConfigError("hidden_layers must be 1 or 2");
    if (l2_penalty < 0.0) throw ConfigError("l2_penalty must be >= 0");
    if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be > 0");
    if (max_epochs < 0) throw ConfigError("max_epochs must be >= 0");
    if (batch_size < 0) throw ConfigError("batch_size must be >= 0");
    if (!(tolerance > 0.0)) throw ConfigError("tolerance must be > 0");
    if (n_classes != 0 && n_classes < 2)
        throw ConfigError("n_classes must be 0 (infer) or >= 2");
}

Vector softmax(const Vector& logits) {
    if (!logits.allFinite()) throw NumericError("softmax input is non-finite");
    Vector shifted = logits.array() - logits.maxCoeff();
    Vector e = shifted.array().exp();
    return e / e.sum();
}

Matrix softmax_rows(const Matrix& logits) {
    if (!logits.allFinite()) throw NumericError("softmax input is non-finite");
    Matrix shifted = logits.colwise() - logits.rowwise().maxCoeff();
    Matrix e = shifted.array().exp();
    return e.array().colwise() / e.rowwise().sum().array();
}

double weighted_nll(const Matrix& probs, const IntVector& labels,
                    const Vector& weights) {
    if (probs.rows() != labels.size() || probs.rows() != weights.size())
        throw ShapeError("weighted_nll: probs/labels/weights length mismatch");
    for (Eigen::Index i = 0; i < labels.size(); ++i)
        if (labels[i] < 0 || labels[i] >= probs.cols())
            throw ShapeError("weighted_nll: label out of range");
    for (Eigen::Index i = 0; i < probs.rows(); ++i)
        if (std::abs(probs.row(i).sum() - 1.0) > 1e-9)
            throw NumericError("weighted_nll: probability row " +
                               std::to_string(i) + " does not sum to 1");
    return data_loss(probs, labels, normalize_weights(weights));
}

Matrix ProbabilisticModel::predict_logits(const Matrix& x) const {
    if (x.cols() != input_dim)
        throw ShapeError("predict: expected " + std::to_string(input_dim) +
                         " columns, got " + std::to_string(x.cols()));
    return forward(*this, x).logits;
}

Matrix ProbabilisticModel::predict_proba(const Matrix& x) const {
    return softmax_rows(predict_logits(x));
}

LossGradient loss_and_gradient(const ProbabilisticModel& model, const Matrix& x,
                               const IntVector& labels,
                               const Vector& norm_weights, double l2_penalty) {
    ForwardPass fp = forward(model, x);
    Matrix probs = softmax_rows(fp.logits);

    LossGradient out;
    out.loss = data_loss(probs, labels, norm_weights) + l2_term(model, l2_penalty);

    // d(loss)/d(logits): w_i * (p_i - onehot(y_i)) per row.
    Matrix delta = probs;
    for (Eigen::Index i = 0; i < labels.size(); ++i) {
        delta(i, labels[i]) -= 1.0;
        delta.row(i) *= norm_weights[i];
    }

    const std::size_t n_layers = model.layers.size();
    out.grads.resize(n_layers);
    for (std::size_t l = n_layers; l-- > 0;) {
        const Matrix& input = l == 0 ? x : fp.post[l - 1];
        out.grads[l].weight =
            delta.transpose() * input + 2.0 * l2_penalty * model.layers[l].weight;
        out.grads[l].bias = delta.colwise().sum();
        if (l > 0) {
            Matrix back = delta * model.layers[l].weight;
            delta = back.cwiseProduct(
                activate_grad(fp.pre[l - 1], fp.post[l - 1], model.activation));
        }
    }
    return out;
}

ProbabilisticModel fit(const LearnerConfig& config, const Matrix& x,
                       const IntVector& labels,
                       const std::optional<Vector>& weights,
                       const std::optional<ProbabilisticModel>& warm_start) {
    config.validate();
    if (x.rows() != labels.size())
        throw ShapeError("fit: features/labels length mismatch");
    if (x.rows() < 1 || x.cols() < 1) throw ShapeError("fit: empty data");
    if (!x.allFinite()) throw NumericError("fit: non-finite features");

    int k = config.n_classes;
    if (k == 0) k = labels.maxCoeff() + 1;
    if (k < 2) throw ConfigError("fit: need at least 2 classes");
    for (Eigen::Index i = 0; i < labels.size(); ++i)
        if (labels[i] < 0 || labels[i] >= k)
            throw ConfigError("fit: label out of range [0, " +
                              std::to_string(k) + ")");

    Vector w = weights ? normalize_weights(*weights)
                       : Vector::Constant(x.rows(), 1.0 / double(x.rows()));

    ProbabilisticModel model;
    model.activation = config.activation;
    model.input_dim = static_cast<int>(x.cols());
    model.n_classes = k;
    if (warm_start) {
        if (warm_start->input_dim != model.input_dim ||
            warm_start->n_classes != k)
            throw ShapeError("fit: warm start shape mismatch");
        model.layers = warm_start->layers;
        model.activation = warm_start->activation;
    } else {
        model.layers = layer_shapes(config, model.input_dim, k);
        random_init(model.layers, config.seed);
    }

    double loss = objective(model, x, labels, w, config.l2_penalty);
    if (!std::isfinite(loss)) throw OptimError("initial loss is non-finite", 0);
    model.training_loss_trace.push_back(loss);

    if (config.batch_size == 0) {
        // Full batch gradient descent, halving the step until the loss does
        // not increase; the trace stays non-increasing.
        double lr = config.learning_rate;
        for (int epoch = 1; epoch <= config.max_epochs; ++epoch) {
            LossGradient lg =
                loss_and_gradient(model, x, labels, w, config.l2_penalty);
            ProbabilisticModel trial = model;
            double trial_loss = std::numeric_limits<double>::infinity();
            bool accepted = false;
            while (lr > 1e-16) {
                for (std::size_t l = 0; l < model.layers.size(); ++l) {
                    trial.layers[l].weight =
                        model.layers[l].weight - lr * lg.grads[l].weight;
                    trial.layers[l].bias =
                        model.layers[l].bias - lr * lg.grads[l].bias;
                }
                trial_loss = objective(trial, x, labels, w, config.l2_penalty);
                if (std::isfinite(trial_loss) && trial_loss <= loss) {
                    accepted = true;
                    break;
                }
                lr *= 0.5;
            }
            if (!accepted) break;  // step size exhausted: at a minimum
            if (!std::isfinite(trial_loss))
                throw OptimError("loss became non-finite", epoch);
            const double improvement = loss - trial_loss;
            model.layers.swap(trial.layers);
            loss = trial_loss;
            model.training_loss_trace.push_back(loss);
            lr = std::min(lr * 2.0, config.learning_rate);
            if (improvement < config.tolerance) break;
        }
    } else {
        // Plain mini-batch SGD; each batch renormalizes its own weight mass.
        Rng order_rng(derive_seed(config.seed, 0x5bdull));
        std::vector<Eigen::Index> idx(static_cast<std::size_t>(x.rows()));
        std::iota(idx.begin(), idx.end(), Eigen::Index{0});
        double prev = loss;
        for (int epoch = 1; epoch <= config.max_epochs; ++epoch) {
            order_rng.shuffle(idx);
            for (std::size_t start = 0; start < idx.size();
                 start += static_cast<std::size_t>(config.batch_size)) {
                const auto stop =
                    std::min(idx.size(),
                             start + static_cast<std::size_t>(config.batch_size));
                const auto bn = static_cast<Eigen::Index>(stop - start);
                Matrix bx(bn, x.cols());
                IntVector by(bn);
                Vector bw(bn);
                for (Eigen::Index r = 0; r < bn; ++r) {
                    bx.row(r) = x.row(idx[start + static_cast<std::size_t>(r)]);
                    by[r] = labels[idx[start + static_cast<std::size_t>(r)]];
                    bw[r] = w[idx[start + static_cast<std::size_t>(r)]];
                }
                if (!(bw.sum() > 0.0)) continue;  // all-zero-weight batch
                bw /= bw.sum();
                LossGradient lg =
                    loss_and_gradient(model, bx, by, bw, config.l2_penalty);
                for (std::size_t l = 0; l < model.layers.size(); ++l) {
                    model.layers[l].weight -=
                        config.learning_rate * lg.grads[l].weight;
                    model.layers[l].bias -=
                        config.learning_rate * lg.grads[l].bias;
                }
            }
            loss = objective(model, x, labels, w, config.l2_penalty);
            if (!std::isfinite(loss))
                throw OptimError("loss became non-finite", epoch);
            model.training_loss_trace.push_back(loss);
            if (std::abs(prev - loss) < config.tolerance) break;
            prev = loss;
        }
    }
    return model;
}

void save_model(const ProbabilisticModel& model,
                const std::filesystem::path& path) {
    nlohmann::json j;
    j["architecture"] = model.layers.size() == 1 ? "linear" : "mlp";
    j["activation"] = model.activation == Activation::Tanh ? "tanh" : "relu";
    j["input_dim"] = model.input_dim;
    j["n_classes"] = model.n_classes;
    auto layers = nlohmann::json::array();
    for (const auto& layer : model.layers) {
        nlohmann::json lj;
        lj["rows"] = layer.weight.rows();
        lj["cols"] = layer.weight.cols();
        auto wj = nlohmann::json::array();
        for (Eigen::Index i = 0; i < layer.weight.rows(); ++i)
            for (Eigen::Index j2 = 0; j2 < layer.weight.cols(); ++j2)
                wj.push_back(layer.weight(i, j2));
        lj["weight"] = std::move(wj);
        auto bj = nlohmann::json::array();
        for (Eigen::Index i = 0; i < layer.bias.size(); ++i)
            bj.push_back(layer.bias[i]);
        lj["bias"] = std::move(bj);
        layers.push_back(std::move(lj));
    }
    j["layers"] = std::move(layers);
    std::ofstream out(path);
    if (!out) throw Error("cannot open " + path.string() + " for writing");
    out << j.dump(2) << '\n';
}

ProbabilisticModel load_model(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open " + path.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("bad model json: ") + e.what());
    }
    ProbabilisticModel model;
    try {
        model.activation = j.at("activation").get<std::string>() == "relu"
                               ? Activation::Relu
                               : Activation::Tanh;
        model.input_dim = j.at("input_dim").get<int>();
        model.n_classes = j.at("n_classes").get<int>();
        for (const auto& lj : j.at("layers")) {
            ProbabilisticModel::Layer layer;
            const auto rows = lj.at("rows").get<Eigen::Index>();
            const auto cols = lj.at("cols").get<Eigen::Index>();
            const auto& wj = lj.at("weight");
            const auto& bj = lj.at("bias");
            if (static_cast<Eigen::Index>(wj.size()) != rows * cols ||
                static_cast<Eigen::Index>(bj.size()) != rows)
                throw ParseError("model layer size mismatch");
            layer.weight.resize(rows, cols);
            for (Eigen::Index i = 0; i < rows; ++i)
                for (Eigen::Index c = 0; c < cols; ++c)
                    layer.weight(i, c) =
                        wj[static_cast<std::size_t>(i * cols + c)].get<double>();
            layer.bias.resize(rows);
            for (Eigen::Index i = 0; i < rows; ++i)
                layer.bias[i] = bj[static_cast<std::size_t>(i)].get<double>();
            model.layers.push_back(std::move(layer));
        }
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("bad model json: ") + e.what());
    }
    if (model.layers.empty()) throw ParseError("model has no layers");
    if (model.layers.front().weight.cols() != model.input_dim ||
        model.layers.back().weight.rows() != model.n_classes)
        throw ParseError("model layer shapes disagree with header");
    return model;
}

}  // namespace shiftcal
