#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numbers>
#include <vector>

#include "shiftcal/dataset.hpp"
#include "shiftcal/errors.hpp"
#include "shiftcal/harness.hpp"
#include "shiftcal/importance.hpp"
#include "shiftcal/rng.hpp"

using namespace shiftcal;

namespace {

ImportanceWeights make_weights(std::initializer_list<double> values) {
    ImportanceWeights w;
    w.values.resize(static_cast<Eigen::Index>(values.size()));
    Eigen::Index i = 0;
    for (double v : values) w.values[i++] = v;
    return w;
}

double variance_of(const Vector& v) {
    return (v.array() - v.mean()).square().mean();
}

}  // namespace

TEST_CASE("discriminator odds formula") {
    SUBCASE("uninformative probabilities give weights exactly 1") {
        const Vector w = weights_from_discriminator_probs(
            Vector::Constant(5, 0.5), 100, 100);
        for (Eigen::Index i = 0; i < 5; ++i) CHECK(w[i] == 1.0);
    }
    SUBCASE("sample-size prior enters as a constant factor") {
        const Vector w = weights_from_discriminator_probs(
            Vector::Constant(3, 0.5), 200, 100);
        for (Eigen::Index i = 0; i < 3; ++i) CHECK(w[i] == 2.0);
    }
    SUBCASE("confident predictions are clamped") {
        Vector p(2);
        p << 0.0, 1.0;
        const Vector w = weights_from_discriminator_probs(p, 10, 10);
        CHECK(w[0] == doctest::Approx((1.0 - 1e-6) / 1e-6));
        CHECK(w[1] == doctest::Approx(1e-6 / (1.0 - 1e-6)));
    }
}

TEST_CASE("null shift weights concentrate near one") {
    GaussianShiftConfig cfg;
    cfg.source_mean = Vector::Zero(4);
    cfg.target_mean = Vector::Zero(4);
    cfg.source_cov = Matrix::Identity(4, 4);
    cfg.target_cov = Matrix::Identity(4, 4);
    cfg.n_source = 2000;
    cfg.n_target = 2000;
    auto [src, tgt] = generate_gaussian_shift(cfg, 3);

    LearnerConfig disc = default_discriminator_config();
    disc.max_epochs = 150;
    disc.seed = 4;
    ImportanceWeights w = self_normalize(
        estimate_weights_discriminator(src.features, tgt.features, disc));

    std::vector<double> dev(static_cast<std::size_t>(w.values.size()));
    for (Eigen::Index i = 0; i < w.values.size(); ++i)
        dev[static_cast<std::size_t>(i)] = std::abs(w.values[i] - 1.0);
    std::sort(dev.begin(), dev.end());
    CHECK(dev[static_cast<std::size_t>(0.9 * double(dev.size()))] < 0.5);
}

TEST_CASE("discriminator recovers mixture ratios on separable classes") {
    Vector src_ratio(2), tgt_ratio(2);
    src_ratio << 1.0, 4.0;
    tgt_ratio << 4.0, 1.0;
    const auto cfg = make_default_mixture_config(2, 8, src_ratio, tgt_ratio,
                                                 3000, 3000, 11, 5.0);
    auto sample = generate_mixture_shift(cfg, 23);

    LearnerConfig disc = default_discriminator_config();
    disc.learning_rate = 40.0;
    disc.max_epochs = 80;
    disc.tolerance = 1e-12;
    disc.seed = 6;
    ImportanceWeights w = self_normalize(estimate_weights_discriminator(
        sample.source.features, sample.target.features, disc));

    double m0 = 0.0, m1 = 0.0;
    int n0 = 0, n1 = 0;
    for (Eigen::Index i = 0; i < sample.source.size(); ++i) {
        if (sample.source.labels[i] == 0) {
            m0 += w.values[i];
            ++n0;
        } else {
            m1 += w.values[i];
            ++n1;
        }
    }
    CHECK(m0 / n0 > 3.0);
    CHECK(m0 / n0 < 5.0);
    CHECK(m1 / n1 > 0.17);
    CHECK(m1 / n1 < 0.35);
}

TEST_CASE("self normalization") {
    ImportanceWeights w = self_normalize(make_weights({2.0, 2.0, 2.0}));
    CHECK(w.values == Vector::Ones(3));

    w = self_normalize(make_weights({1.0, 3.0}));
    CHECK(w.values[0] == doctest::Approx(0.5));
    CHECK(w.values[1] == doctest::Approx(1.5));
    CHECK(std::abs(w.values.mean() - 1.0) <= 1e-12);

    const ImportanceWeights twice = self_normalize(w);
    CHECK(twice.values == w.values);
    CHECK(twice.corrections.size() == 2);

    CHECK_THROWS_AS(self_normalize(make_weights({0.0, 0.0})),
                    DegenerateWeightsError);
    CHECK_THROWS_AS(self_normalize(make_weights({-1.0, 2.0})),
                    DegenerateWeightsError);
}

TEST_CASE("flatten") {
    CHECK(flatten(make_weights({4.0, 0.25}), 1.0).values ==
          make_weights({4.0, 0.25}).values);
    CHECK(flatten(make_weights({4.0, 0.25}), 0.0).values == Vector::Ones(2));
    const ImportanceWeights w = flatten(make_weights({4.0, 0.25}), 0.5);
    CHECK(w.values[0] == doctest::Approx(2.0).epsilon(1e-15));
    CHECK(w.values[1] == doctest::Approx(0.5).epsilon(1e-15));
    CHECK_THROWS_AS(flatten(make_weights({1.0}), 1.5), ConfigError);
}

TEST_CASE("clip") {
    const ImportanceWeights id = clip(make_weights({0.5, 10.0}), 10.0);
    CHECK(id.values == make_weights({0.5, 10.0}).values);
    const ImportanceWeights c = clip(make_weights({0.5, 10.0}), 2.0);
    CHECK(c.values[0] == 0.5);
    CHECK(c.values[1] == 2.0);
    CHECK_THROWS_AS(clip(make_weights({1.0}), 0.0), ConfigError);

    // Clipping before normalizing reduces weight variance.
    const ImportanceWeights raw = make_weights({0.2, 0.4, 0.9, 7.0, 12.0});
    const ImportanceWeights normed = self_normalize(raw);
    const ImportanceWeights clipped = self_normalize(clip(raw, 2.0));
    CHECK(variance_of(clipped.values) < variance_of(normed.values));
}

TEST_CASE("weight noise") {
    const ImportanceWeights base = make_weights({1.0, 2.0, 0.5, 4.0});
    const ImportanceWeights same = add_weight_noise(base, 0.0, 5);
    CHECK(same.values == base.values);
    CHECK(same.provenance == WeightProvenance::Noisy);

    const ImportanceWeights a = add_weight_noise(base, 1.0, 5);
    const ImportanceWeights b = add_weight_noise(base, 1.0, 5);
    CHECK(a.values == b.values);
    CHECK((a.values.array() >= 0.0).all());

    // Variance grows in expectation; average over 20 seeds.
    double total = 0.0;
    for (std::uint64_t seed = 0; seed < 20; ++seed)
        total += variance_of(add_weight_noise(base, 2.0, seed).values);
    CHECK(total / 20.0 > variance_of(base.values));
}

TEST_CASE("renyi divergence estimate") {
    SUBCASE("all ones gives 1") {
        CHECK(renyi_divergence_estimate(make_weights({1, 1, 1, 1}), 1.0) ==
              doctest::Approx(1.0));
        CHECK(renyi_divergence_estimate(make_weights({1, 1, 1, 1}), 0.5) ==
              doctest::Approx(1.0));
    }
    SUBCASE("matches the closed form on exact mixture proportions") {
        // source 1:4, target 4:1 in exact source proportions.
        const Eigen::Index n = 1000;
        ImportanceWeights w;
        w.values.resize(n);
        for (Eigen::Index i = 0; i < n; ++i)
            w.values[i] = i < n / 5 ? 4.0 : 0.25;
        // closed form: sum_k t_k^2 / s_k
        const double expected = 0.8 * 0.8 / 0.2 + 0.2 * 0.2 / 0.8;
        CHECK(renyi_divergence_estimate(w, 1.0) ==
              doctest::Approx(expected).epsilon(1e-9));
    }
    SUBCASE("monotone along a divergence sweep") {
        const double source_q = 8.0 / 9.0;
        double prev = 0.0;
        for (double target_q : {0.8, 0.6, 0.4, 0.2, 0.1}) {
            // closed-form d_2 for the two-class case
            const double d2 =
                target_q * target_q / source_q +
                (1.0 - target_q) * (1.0 - target_q) / (1.0 - source_q);
            CHECK(d2 >= prev);
            prev = d2;
        }
        // plug-in estimate follows the same ordering on exact proportions
        const Eigen::Index n = 900;
        double prev_est = 0.0;
        for (double target_q : {0.8, 0.6, 0.4, 0.2, 0.1}) {
            ImportanceWeights w;
            w.values.resize(n);
            const auto n1 = static_cast<Eigen::Index>(source_q * n);
            for (Eigen::Index i = 0; i < n; ++i)
                w.values[i] = i < n1 ? target_q / source_q
                                     : (1.0 - target_q) / (1.0 - source_q);
            const double est = renyi_divergence_estimate(w, 1.0);
            CHECK(est >= prev_est - 1e-12);
            prev_est = est;
        }
    }
    SUBCASE("non-normalized input is normalized first") {
        const double a = renyi_divergence_estimate(make_weights({2, 8}), 1.0);
        const double b = renyi_divergence_estimate(make_weights({0.4, 1.6}), 1.0);
        CHECK(a == doctest::Approx(b).epsilon(1e-12));
    }
}

TEST_CASE("effective sample size") {
    CHECK(effective_sample_size(Vector::Ones(50)) == doctest::Approx(50.0));
    Vector w(4);
    w << 1.0, 0.0, 0.0, 0.0;
    CHECK(effective_sample_size(w) == doctest::Approx(1.0));
    CHECK(effective_sample_size(Vector::Constant(10, 3.0)) ==
          doctest::Approx(10.0));
}

TEST_CASE("variance diagnostic") {
    SUBCASE("uniform weights satisfy the bound for nonnegative losses") {
        Rng rng(5);
        Vector losses(500);
        for (Eigen::Index i = 0; i < 500; ++i) losses[i] = 0.2 + rng.uniform();
        ImportanceWeights uniform;
        uniform.values = Vector::Ones(500);
        const RatioDiagnostics diag =
            weighted_loss_variance_diagnostic(losses, uniform, 1.0);
        CHECK(diag.variance_within_bound);
        CHECK(diag.empirical_variance ==
              doctest::Approx(variance_of(losses)).epsilon(1e-12));
        CHECK(diag.renyi_divergence_estimate == doctest::Approx(1.0));
    }
    SUBCASE("ground-truth mixture weights respect the bound in most runs") {
        int within = 0;
        for (std::uint64_t seed = 0; seed < 100; ++seed) {
            Rng rng(seed);
            const Eigen::Index n = 800;
            ImportanceWeights w;
            w.values.resize(n);
            Vector losses(n);
            for (Eigen::Index i = 0; i < n; ++i) {
                const bool class1 = rng.uniform() < 0.2;
                w.values[i] = class1 ? 4.0 : 0.25;
                losses[i] = (class1 ? 0.7 : 0.3) + 0.2 * rng.uniform();
            }
            const RatioDiagnostics diag =
                weighted_loss_variance_diagnostic(losses, w, 1.0);
            if (diag.variance_within_bound) ++within;
        }
        CHECK(within >= 95);
    }
    SUBCASE("bound grows along the divergence sweep") {
        const double source_q = 8.0 / 9.0;
        const Eigen::Index n = 900;
        Vector losses = Vector::Constant(n, 0.5);
        double prev = -1.0;
        for (double target_q : {0.8, 0.6, 0.4, 0.2, 0.1}) {
            ImportanceWeights w;
            w.values.resize(n);
            const auto n1 = static_cast<Eigen::Index>(source_q * n);
            for (Eigen::Index i = 0; i < n; ++i)
                w.values[i] = i < n1 ? target_q / source_q
                                     : (1.0 - target_q) / (1.0 - source_q);
            const RatioDiagnostics diag =
                weighted_loss_variance_diagnostic(losses, w, 1.0);
            CHECK(diag.bound_unweighted_reading > prev);
            prev = diag.bound_unweighted_reading;
        }
    }
    SUBCASE("length mismatch throws") {
        CHECK_THROWS_AS(weighted_loss_variance_diagnostic(
                            Vector::Ones(3), make_weights({1.0, 1.0}), 1.0),
                        ShapeError);
    }
}

TEST_CASE("correction pipeline and algebra") {
    const std::vector<WeightCorrection> pipeline = {
        {WeightCorrection::Kind::Clip, 3.0},
        {WeightCorrection::Kind::SelfNormalize, 0.0}};
    const ImportanceWeights w =
        apply_corrections(make_weights({0.5, 1.0, 9.0}), pipeline);
    CHECK(w.corrections.size() == 2);
    CHECK(std::abs(w.values.mean() - 1.0) <= 1e-12);
    CHECK(w.values.maxCoeff() <=
          3.0 * 3.0 / (0.5 + 1.0 + 3.0) + 1e-12);

    // flatten(1) and clip(inf-like cap) are identities on the values.
    const ImportanceWeights base = make_weights({0.3, 2.0, 5.0});
    CHECK(flatten(base, 1.0).values == base.values);
    CHECK(clip(base, 1e300).values == base.values);
    CHECK((flatten(base, 0.3).values.array() >= 0.0).all());
}

TEST_CASE("gaussian ground-truth weights match the pdf ratio") {
    GaussianShiftConfig cfg;
    cfg.source_mean = Vector::Zero(2);
    cfg.target_mean = Vector::Zero(2);
    cfg.target_mean[0] = 1.0;
    cfg.source_cov = Matrix::Identity(2, 2);
    cfg.target_cov = 0.25 * Matrix::Identity(2, 2);
    cfg.n_source = 10;
    cfg.n_target = 10;

    Matrix x(2, 2);
    x << 0.0, 0.0, 1.0, 0.5;
    const ImportanceWeights w = ground_truth_gaussian_weights(cfg, x);

    auto pdf = [](const Vector& v, const Vector& mean, double var) {
        const double d2 = (v - mean).squaredNorm();
        return std::exp(-0.5 * d2 / var) /
               (2.0 * std::numbers::pi * var);
    };
    for (Eigen::Index i = 0; i < 2; ++i) {
        const Vector v = x.row(i).transpose();
        const double expected = pdf(v, cfg.target_mean, 0.25) /
                                pdf(v, cfg.source_mean, 1.0);
        CHECK(w.values[i] == doctest::Approx(expected).epsilon(1e-12));
    }
}

TEST_CASE("mixture ground-truth weights by label") {
    Vector src(2), tgt(2);
    src << 1.0, 4.0;
    tgt << 4.0, 1.0;
    const auto cfg = make_default_mixture_config(2, 4, src, tgt, 10, 10, 3);
    IntVector labels(4);
    labels << 0, 1, 1, 0;
    const ImportanceWeights w = ground_truth_mixture_weights(cfg, labels);
    CHECK(w.values[0] == doctest::Approx(4.0));
    CHECK(w.values[1] == doctest::Approx(0.25));
}

TEST_CASE("weights csv round trips") {
    namespace fs = std::filesystem;
    const fs::path path = fs::temp_directory_path() / "shiftcal_weights_rt.csv";

    ImportanceWeights w = make_weights({0.1234567890123456, 4.0, 1e-9});
    w.provenance = WeightProvenance::Noisy;
    w.noise_sigma = 0.5;
    w.corrections = {{WeightCorrection::Kind::SelfNormalize, 0.0},
                     {WeightCorrection::Kind::Clip, 2.5}};
    write_weights_csv(w, path);
    const ImportanceWeights back = read_weights_csv(path);
    CHECK(back.values == w.values);
    CHECK(back.provenance == WeightProvenance::Noisy);
    CHECK(back.noise_sigma == 0.5);
    REQUIRE(back.corrections.size() == 2);
    CHECK(back.corrections[0].kind == WeightCorrection::Kind::SelfNormalize);
    CHECK(back.corrections[1].kind == WeightCorrection::Kind::Clip);
    CHECK(back.corrections[1].param == 2.5);
    fs::remove(path);
}
