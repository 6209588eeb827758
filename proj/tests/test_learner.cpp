#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "shiftcal/dataset.hpp"
#include "shiftcal/errors.hpp"
#include "shiftcal/learner.hpp"
#include "shiftcal/rng.hpp"

using namespace shiftcal;

namespace {

struct SmallProblem {
    Matrix x;
    IntVector y;
    Vector w;
};

SmallProblem random_problem(std::uint64_t seed, Eigen::Index n, Eigen::Index d,
                            int k) {
    Rng rng(seed);
    SmallProblem p;
    p.x.resize(n, d);
    p.y.resize(n);
    p.w.resize(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = 0; j < d; ++j) p.x(i, j) = rng.normal();
        p.y[i] = static_cast<int>(rng.below(static_cast<std::uint64_t>(k)));
        p.w[i] = 0.1 + rng.uniform();
    }
    return p;
}

// Central finite differences against the analytic gradient; returns the
// worst relative error over all parameters.
double gradient_check(const LearnerConfig& cfg, const SmallProblem& p, int k) {
    ProbabilisticModel model =
        fit(cfg, p.x, p.y, p.w, std::nullopt);  // shapes + init only
    // Jitter every parameter to a generic point; the zero-bias init can park
    // relu pre-activations exactly on the kink.
    Rng jitter(cfg.seed + 999);
    for (auto& layer : model.layers) {
        for (Eigen::Index i = 0; i < layer.weight.size(); ++i)
            layer.weight.data()[i] += 0.05 * jitter.normal();
        for (Eigen::Index i = 0; i < layer.bias.size(); ++i)
            layer.bias[i] += 0.05 * jitter.normal();
    }
    Vector norm_w = p.w / p.w.sum();
    LossGradient lg = loss_and_gradient(model, p.x, p.y, norm_w, cfg.l2_penalty);

    const double step = 1e-5;
    const double base =
        loss_and_gradient(model, p.x, p.y, norm_w, cfg.l2_penalty).loss;
    double worst = 0.0;
    for (std::size_t l = 0; l < model.layers.size(); ++l) {
        auto probe = [&](double* param, double analytic) {
            const double saved = *param;
            *param = saved + step;
            const double up =
                loss_and_gradient(model, p.x, p.y, norm_w, cfg.l2_penalty).loss;
            *param = saved - step;
            const double down =
                loss_and_gradient(model, p.x, p.y, norm_w, cfg.l2_penalty).loss;
            *param = saved;
            const double numeric = (up - down) / (2.0 * step);
            // The second difference measures how much a relu kink inside the
            // probe interval corrupts the central difference; discount it.
            const double kink = std::abs(up + down - 2.0 * base) / (2.0 * step);
            const double denom =
                std::max({std::abs(numeric), std::abs(analytic), 1e-8});
            const double err =
                std::max(0.0, std::abs(numeric - analytic) - kink);
            worst = std::max(worst, err / denom);
        };
        for (Eigen::Index i = 0; i < model.layers[l].weight.rows(); ++i)
            for (Eigen::Index j = 0; j < model.layers[l].weight.cols(); ++j)
                probe(&model.layers[l].weight(i, j), lg.grads[l].weight(i, j));
        for (Eigen::Index i = 0; i < model.layers[l].bias.size(); ++i)
            probe(&model.layers[l].bias(i), lg.grads[l].bias(i));
    }
    (void)k;
    return worst;
}

}  // namespace

TEST_CASE("softmax basics") {
    Vector z(2);
    z << 0.0, 0.0;
    CHECK(softmax(z)[0] == doctest::Approx(0.5).epsilon(1e-15));

    z << 1000.0, 0.0;
    const Vector s = softmax(z);
    CHECK(s[0] == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(s[1] >= 0.0);
    CHECK(std::isfinite(s[0]));

    z << std::log(1.0), std::log(3.0);
    const Vector t = softmax(z);
    CHECK(t[0] == doctest::Approx(0.25).epsilon(1e-12));
    CHECK(t[1] == doctest::Approx(0.75).epsilon(1e-12));

    z << std::nan(""), 0.0;
    CHECK_THROWS_AS(softmax(z), NumericError);
}

TEST_CASE("softmax rows sum to one and are monotone per coordinate") {
    Rng rng(3);
    Matrix z(50, 4);
    for (Eigen::Index i = 0; i < z.rows(); ++i)
        for (Eigen::Index j = 0; j < z.cols(); ++j) z(i, j) = 10.0 * rng.normal();
    const Matrix p = softmax_rows(z);
    for (Eigen::Index i = 0; i < p.rows(); ++i)
        CHECK(std::abs(p.row(i).sum() - 1.0) < 1e-12);

    Vector a(3), b(3);
    a << 0.2, -1.0, 0.5;
    b = a;
    b[1] += 0.3;
    CHECK(softmax(b)[1] > softmax(a)[1]);
}

TEST_CASE("weighted_nll hand cases") {
    Matrix probs(2, 2);
    probs << 0.5, 0.5, 0.25, 0.75;
    IntVector labels(2);
    labels << 0, 1;

    SUBCASE("uniform weights reduce to the mean NLL") {
        const double expected =
            (-std::log(0.5) - std::log(0.75)) / 2.0;
        CHECK(weighted_nll(probs, labels, Vector::Ones(2)) ==
              doctest::Approx(expected).epsilon(1e-15));
    }
    SUBCASE("hand-computed weighted value") {
        Vector w(2);
        w << 1.0, 3.0;
        const double expected =
            (std::log(2.0) + 3.0 * std::log(4.0 / 3.0)) / 4.0;
        CHECK(weighted_nll(probs, labels, w) ==
              doctest::Approx(expected).epsilon(1e-15));
    }
    SUBCASE("scaling invariance") {
        Vector w(2);
        w << 1.0, 3.0;
        const double base = weighted_nll(probs, labels, w);
        CHECK(weighted_nll(probs, labels, Vector(4.0 * w)) == base);
        CHECK(weighted_nll(probs, labels, Vector(3.0 * w)) ==
              doctest::Approx(base).epsilon(1e-13));
    }
    SUBCASE("degenerate weights throw") {
        CHECK_THROWS_AS(weighted_nll(probs, labels, Vector::Zero(2)),
                        DegenerateWeightsError);
    }
    SUBCASE("rows must sum to one") {
        Matrix bad = probs;
        bad(0, 0) = 0.7;
        CHECK_THROWS_AS(weighted_nll(bad, labels, Vector::Ones(2)),
                        NumericError);
    }
}

TEST_CASE("fit reaches perfect accuracy on separable data") {
    Matrix x(40, 2);
    IntVector y(40);
    Rng rng(8);
    for (Eigen::Index i = 0; i < 40; ++i) {
        const int label = i % 2;
        x(i, 0) = (label == 0 ? -2.0 : 2.0) + 0.3 * rng.normal();
        x(i, 1) = rng.normal();
        y[i] = label;
    }
    LearnerConfig cfg;
    cfg.max_epochs = 300;
    const ProbabilisticModel model = fit(cfg, x, y);
    const Matrix probs = model.predict_proba(x);
    Eigen::Index correct = 0;
    for (Eigen::Index i = 0; i < 40; ++i) {
        Eigen::Index pred = probs(i, 0) >= probs(i, 1) ? 0 : 1;
        if (pred == y[i]) ++correct;
    }
    CHECK(correct == 40);
}

TEST_CASE("zero epochs returns the initialization and predict runs") {
    const SmallProblem p = random_problem(4, 12, 3, 2);
    LearnerConfig cfg;
    cfg.max_epochs = 0;
    cfg.seed = 77;
    const ProbabilisticModel a = fit(cfg, p.x, p.y);
    const ProbabilisticModel b = fit(cfg, p.x, p.y);
    CHECK(a.layers[0].weight == b.layers[0].weight);
    CHECK(a.training_loss_trace.size() == 1);
    const Matrix probs = a.predict_proba(p.x);
    for (Eigen::Index i = 0; i < probs.rows(); ++i)
        CHECK(std::abs(probs.row(i).sum() - 1.0) < 1e-12);
}

TEST_CASE("ground-truth-weighted source fit matches a target fit") {
    Vector src(2), tgt(2);
    src << 1.0, 4.0;
    tgt << 4.0, 1.0;
    const auto cfg = make_default_mixture_config(2, 2, src, tgt, 3000, 3000, 5);
    auto sample = generate_mixture_shift(cfg, 17);

    LearnerConfig lc;
    lc.max_epochs = 300;
    lc.seed = 2;
    const ProbabilisticModel weighted =
        fit(lc, sample.source.features, sample.source.labels,
            sample.gt_weights.values);
    const ProbabilisticModel on_target =
        fit(lc, sample.target.features, sample.target.labels);

    Rng rng(30);
    Matrix grid(400, 2);
    for (Eigen::Index i = 0; i < grid.rows(); ++i)
        for (Eigen::Index j = 0; j < 2; ++j) grid(i, j) = 3.0 * rng.normal();
    const Matrix pa = weighted.predict_proba(grid);
    const Matrix pb = on_target.predict_proba(grid);
    Eigen::Index agree = 0;
    for (Eigen::Index i = 0; i < grid.rows(); ++i) {
        const bool a = pa(i, 1) > pa(i, 0);
        const bool b = pb(i, 1) > pb(i, 0);
        if (a == b) ++agree;
    }
    CHECK(double(agree) / double(grid.rows()) >= 0.95);
}

TEST_CASE("hand-set single layer matches manual softmax") {
    ProbabilisticModel model;
    model.input_dim = 2;
    model.n_classes = 2;
    model.layers.push_back({Matrix(2, 2), Vector(2)});
    model.layers[0].weight << 1.0, -1.0, 0.5, 2.0;
    model.layers[0].bias << 0.1, -0.2;

    Matrix x(1, 2);
    x << 0.3, 0.7;
    const Matrix logits = model.predict_logits(x);
    CHECK(logits(0, 0) == doctest::Approx(1.0 * 0.3 - 1.0 * 0.7 + 0.1));
    CHECK(logits(0, 1) == doctest::Approx(0.5 * 0.3 + 2.0 * 0.7 - 0.2));
    const Matrix probs = model.predict_proba(x);
    const double z0 = logits(0, 0), z1 = logits(0, 1);
    CHECK(probs(0, 0) ==
          doctest::Approx(std::exp(z0) / (std::exp(z0) + std::exp(z1))));
}

TEST_CASE("zero-weight linear model predicts uniform rows") {
    ProbabilisticModel model;
    model.input_dim = 3;
    model.n_classes = 4;
    model.layers.push_back({Matrix::Zero(4, 3), Vector::Zero(4)});
    const Matrix probs = model.predict_proba(Matrix::Random(5, 3));
    for (Eigen::Index i = 0; i < probs.rows(); ++i)
        for (Eigen::Index j = 0; j < probs.cols(); ++j)
            CHECK(probs(i, j) == doctest::Approx(0.25).epsilon(1e-12));
}

TEST_CASE("analytic gradients match finite differences") {
    for (int trial = 0; trial < 10; ++trial) {
        Rng sizes(100 + static_cast<std::uint64_t>(trial));
        const auto n = static_cast<Eigen::Index>(5 + sizes.below(16));
        const auto d = static_cast<Eigen::Index>(1 + sizes.below(4));
        const int k = static_cast<int>(2 + sizes.below(2));
        const SmallProblem p =
            random_problem(200 + static_cast<std::uint64_t>(trial), n, d, k);

        LearnerConfig cfg;
        cfg.max_epochs = 0;
        cfg.seed = static_cast<std::uint64_t>(trial);
        cfg.n_classes = k;
        cfg.l2_penalty = trial % 2 == 0 ? 0.0 : 0.01;
        cfg.arch = LearnerConfig::Arch::Linear;
        CHECK(gradient_check(cfg, p, k) < 1e-4);

        cfg.arch = LearnerConfig::Arch::Mlp;
        cfg.hidden_units = 5;
        cfg.activation = trial % 2 == 0 ? Activation::Tanh : Activation::Relu;
        CHECK(gradient_check(cfg, p, k) < 1e-4);

        cfg.hidden_layers = 2;
        CHECK(gradient_check(cfg, p, k) < 1e-4);
    }
}

TEST_CASE("weight scaling leaves the trajectory unchanged") {
    const SmallProblem p = random_problem(42, 30, 3, 2);
    LearnerConfig cfg;
    cfg.max_epochs = 50;
    cfg.seed = 9;
    const ProbabilisticModel base = fit(cfg, p.x, p.y, p.w);
    const ProbabilisticModel doubled = fit(cfg, p.x, p.y, Vector(2.0 * p.w));
    CHECK(base.layers[0].weight == doubled.layers[0].weight);
    CHECK(base.layers[0].bias == doubled.layers[0].bias);

    const ProbabilisticModel tripled = fit(cfg, p.x, p.y, Vector(3.0 * p.w));
    CHECK((base.layers[0].weight - tripled.layers[0].weight)
              .cwiseAbs()
              .maxCoeff() < 1e-9);
}

TEST_CASE("full-batch loss trace is non-increasing") {
    const SmallProblem p = random_problem(7, 60, 4, 3);
    LearnerConfig cfg;
    cfg.arch = LearnerConfig::Arch::Mlp;
    cfg.hidden_units = 8;
    cfg.max_epochs = 120;
    cfg.seed = 1;
    const ProbabilisticModel model = fit(cfg, p.x, p.y, p.w);
    REQUIRE(model.training_loss_trace.size() > 5);
    for (std::size_t i = 1; i < model.training_loss_trace.size(); ++i)
        CHECK(model.training_loss_trace[i] <=
              model.training_loss_trace[i - 1] + 1e-9);
}

TEST_CASE("mini-batch mode trains and stays finite") {
    const SmallProblem p = random_problem(15, 80, 3, 2);
    LearnerConfig cfg;
    cfg.batch_size = 16;
    cfg.learning_rate = 0.1;
    cfg.max_epochs = 40;
    const ProbabilisticModel model = fit(cfg, p.x, p.y);
    CHECK(model.training_loss_trace.back() <= model.training_loss_trace.front());
}

TEST_CASE("shape and validation errors") {
    const SmallProblem p = random_problem(1, 10, 3, 2);
    LearnerConfig cfg;
    cfg.learning_rate = -1.0;
    CHECK_THROWS_AS(fit(cfg, p.x, p.y), ConfigError);
    cfg.learning_rate = 1.0;

    const ProbabilisticModel model = fit(cfg, p.x, p.y);
    CHECK_THROWS_AS(model.predict_logits(Matrix::Zero(2, 5)), ShapeError);

    Matrix bad = p.x;
    bad(0, 0) = std::numeric_limits<double>::infinity();
    CHECK_THROWS_AS(fit(cfg, bad, p.y), NumericError);
}

TEST_CASE("model json round trips exactly") {
    const SmallProblem p = random_problem(33, 25, 3, 3);
    LearnerConfig cfg;
    cfg.arch = LearnerConfig::Arch::Mlp;
    cfg.hidden_units = 4;
    cfg.max_epochs = 30;
    const ProbabilisticModel model = fit(cfg, p.x, p.y);

    const auto path =
        std::filesystem::temp_directory_path() / "shiftcal_model_rt.json";
    save_model(model, path);
    const ProbabilisticModel back = load_model(path);
    REQUIRE(back.layers.size() == model.layers.size());
    for (std::size_t l = 0; l < model.layers.size(); ++l) {
        CHECK(back.layers[l].weight == model.layers[l].weight);
        CHECK(back.layers[l].bias == model.layers[l].bias);
    }
    CHECK(back.input_dim == model.input_dim);
    CHECK(back.n_classes == model.n_classes);
    CHECK(back.activation == model.activation);
    std::filesystem::remove(path);
}
