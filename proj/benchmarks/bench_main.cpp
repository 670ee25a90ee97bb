#include <benchmark/benchmark.h>

#include <random>

#include "nrba/glm.hpp"
#include "nrba/impute.hpp"
#include "nrba/longit.hpp"
#include "nrba/pool.hpp"
#include "nrba/simulate.hpp"

using namespace nrba;

namespace {

CohortScenario mar_scenario(std::size_t n) {
    CohortScenario s;
    s.n = n;
    s.seed = 42;
    s.dropout.mechanism = Mechanism::MAR;
    s.dropout.rates = {0.10, 0.08, 0.08, 0.08, 0.08};
    s.dropout.lag_coef = -0.5;
    return s;
}

DesignMatrix logistic_design(std::size_t n, std::size_t p, Eigen::VectorXd& y) {
    Rng rng(7);
    std::normal_distribution<double> z;
    std::uniform_real_distribution<double> u;
    DesignMatrix d;
    d.intercept = true;
    d.x.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(p + 1));
    y.resize(static_cast<Eigen::Index>(n));
    d.labels.push_back("(Intercept)");
    for (std::size_t j = 0; j < p; ++j) d.labels.push_back("x" + std::to_string(j));
    for (Eigen::Index i = 0; i < d.x.rows(); ++i) {
        double eta = -0.5;
        d.x(i, 0) = 1.0;
        for (Eigen::Index j = 1; j < d.x.cols(); ++j) {
            d.x(i, j) = z(rng);
            eta += 0.3 * d.x(i, j) / static_cast<double>(j);
        }
        y(i) = u(rng) < logistic(eta) ? 1.0 : 0.0;
    }
    return d;
}

}  // namespace

static void BM_SimulateCohort(benchmark::State& state) {
    auto s = mar_scenario(static_cast<std::size_t>(state.range(0)));
    for (auto _ : state) benchmark::DoNotOptimize(simulate_cohort(s));
}
BENCHMARK(BM_SimulateCohort)->Arg(500)->Arg(2000)->Unit(benchmark::kMillisecond);

static void BM_LogisticGlm(benchmark::State& state) {
    Eigen::VectorXd y;
    auto d = logistic_design(static_cast<std::size_t>(state.range(0)), 10, y);
    for (auto _ : state) benchmark::DoNotOptimize(fit_glm(d, y, Family::Binomial));
}
BENCHMARK(BM_LogisticGlm)->Arg(1000)->Arg(10000)->Unit(benchmark::kMicrosecond);

static void BM_PmmDraw(benchmark::State& state) {
    const auto n = static_cast<std::size_t>(state.range(0));
    Rng gen(3);
    std::normal_distribution<double> z;
    std::vector<double> pred(n), values(n), target(n / 4);
    for (auto& v : pred) v = z(gen);
    for (auto& v : values) v = z(gen);
    for (auto& v : target) v = z(gen);
    Rng rng(11);
    for (auto _ : state) benchmark::DoNotOptimize(pmm_draw(pred, values, target, 5, rng));
}
BENCHMARK(BM_PmmDraw)->Arg(1000)->Arg(10000)->Unit(benchmark::kMicrosecond);

static void BM_SequentialMi(benchmark::State& state) {
    auto sim = simulate_cohort(mar_scenario(static_cast<std::size_t>(state.range(0))));
    ImputerSpec spec;
    spec.iterations = 5;
    for (auto _ : state) benchmark::DoNotOptimize(sequential_mi(sim.data, spec, 5, 99));
}
BENCHMARK(BM_SequentialMi)->Arg(500)->Unit(benchmark::kMillisecond);

static void BM_FitMixed(benchmark::State& state) {
    auto sim = simulate_cohort(mar_scenario(static_cast<std::size_t>(state.range(0))));
    auto d = build_design(sim.data, default_formula());
    for (auto _ : state) benchmark::DoNotOptimize(fit_mixed(d.x, d.y, d.unit));
}
BENCHMARK(BM_FitMixed)->Arg(500)->Arg(2000)->Unit(benchmark::kMillisecond);

static void BM_Pool(benchmark::State& state) {
    std::vector<double> q(static_cast<std::size_t>(state.range(0))), u(q.size());
    for (std::size_t j = 0; j < q.size(); ++j) {
        q[j] = 1.0 + 0.01 * static_cast<double>(j);
        u[j] = 0.2;
    }
    for (auto _ : state) benchmark::DoNotOptimize(pool(q, u));
}
BENCHMARK(BM_Pool)->Arg(5)->Arg(100);
BENCHMARK_MAIN();
