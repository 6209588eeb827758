#include <benchmark/benchmark.h>

#include "shiftcal/calibration.hpp"
#include "shiftcal/dataset.hpp"
#include "shiftcal/harness.hpp"
#include "shiftcal/importance.hpp"
#include "shiftcal/learner.hpp"
#include "shiftcal/metrics.hpp"
#include "shiftcal/rng.hpp"

namespace {

using namespace shiftcal;

Matrix random_logits(Eigen::Index n, Eigen::Index k, std::uint64_t seed) {
    Rng rng(seed);
    Matrix z(n, k);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < k; ++j) z(i, j) = 2.0 * rng.normal();
    return z;
}

IntVector random_labels(Eigen::Index n, int k, std::uint64_t seed) {
    Rng rng(seed);
    IntVector y(n);
    for (Eigen::Index i = 0; i < n; ++i)
        y[i] = static_cast<int>(rng.below(static_cast<std::uint64_t>(k)));
    return y;
}

MixtureShiftConfig bench_mixture(Eigen::Index n) {
    Vector src(2), tgt(2);
    src << 1.0, 4.0;
    tgt << 4.0, 1.0;
    return make_default_mixture_config(2, 8, src, tgt, n, n, 7);
}

void BM_SoftmaxRows(benchmark::State& state) {
    const Matrix z = random_logits(state.range(0), 10, 1);
    for (auto _ : state) benchmark::DoNotOptimize(softmax_rows(z));
}
BENCHMARK(BM_SoftmaxRows)->Arg(1000)->Arg(10000);

void BM_ReliabilityBins(benchmark::State& state) {
    const Matrix probs = softmax_rows(random_logits(state.range(0), 10, 2));
    const IntVector labels = random_labels(state.range(0), 10, 3);
    for (auto _ : state)
        benchmark::DoNotOptimize(reliability_bins(probs, labels, 15));
}
BENCHMARK(BM_ReliabilityBins)->Arg(1000)->Arg(10000);

void BM_FitLinear(benchmark::State& state) {
    auto sample = generate_mixture_shift(bench_mixture(state.range(0)), 11);
    LearnerConfig cfg;
    cfg.max_epochs = 50;
    for (auto _ : state)
        benchmark::DoNotOptimize(
            fit(cfg, sample.source.features, sample.source.labels));
}
BENCHMARK(BM_FitLinear)->Arg(500)->Arg(2000);

void BM_TemperatureFit(benchmark::State& state) {
    const Matrix z = random_logits(state.range(0), 2, 5);
    const IntVector y = random_labels(state.range(0), 2, 6);
    const Vector w = Vector::Ones(state.range(0));
    for (auto _ : state) benchmark::DoNotOptimize(fit_temperature(z, y, w));
}
BENCHMARK(BM_TemperatureFit)->Arg(1000)->Arg(10000);

void BM_IsotonicFit(benchmark::State& state) {
    Rng rng(9);
    const Eigen::Index n = state.range(0);
    Vector scores(n), correct(n), weights(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        scores[i] = rng.uniform();
        correct[i] = rng.uniform() < scores[i] ? 1.0 : 0.0;
        weights[i] = 0.5 + rng.uniform();
    }
    for (auto _ : state)
        benchmark::DoNotOptimize(fit_isotonic(scores, correct, weights));
}
BENCHMARK(BM_IsotonicFit)->Arg(1000)->Arg(10000);

void BM_DiscriminatorWeights(benchmark::State& state) {
    auto sample = generate_mixture_shift(bench_mixture(state.range(0)), 13);
    LearnerConfig cfg = default_discriminator_config();
    cfg.max_epochs = 50;
    for (auto _ : state)
        benchmark::DoNotOptimize(estimate_weights_discriminator(
            sample.source.features, sample.target.features, cfg));
}
BENCHMARK(BM_DiscriminatorWeights)->Arg(500)->Arg(2000);

}  // namespace

BENCHMARK_MAIN();
