#include <cmath>
#include <random>

#include <benchmark/benchmark.h>

#include "aminn/survival.hpp"

namespace {

using namespace aminn;

SurvivalData simulate(int n, int p) {
    std::mt19937_64 rng(3);
    std::normal_distribution<double> z;
    std::exponential_distribution<double> unit(1.0);
    SurvivalData d;
    d.covariates.resize(n, p);
    for (int j = 0; j < p; ++j) d.covariate_names.push_back("x" + std::to_string(j));
    for (int i = 0; i < n; ++i) {
        double lp = 0.0;
        for (int j = 0; j < p; ++j) {
            d.covariates(i, j) = z(rng);
            lp += 0.3 * d.covariates(i, j);
        }
        d.subject_ids.push_back("S" + std::to_string(i));
        // Rounded times create ties so the Efron branch does real work.
        d.times.push_back(std::ceil(10.0 * unit(rng) / std::exp(lp)));
        d.events.push_back(static_cast<int>(rng() % 5 != 0));
    }
    return d;
}

void BM_CoxFit(benchmark::State& state) {
    const SurvivalData d = simulate(static_cast<int>(state.range(0)), static_cast<int>(state.range(1)));
    CoxOptions opt;
    opt.ties = state.range(2) ? TieMethod::efron : TieMethod::breslow;
    for (auto _ : state) benchmark::DoNotOptimize(cox_fit(d, opt).log_likelihood);
}
BENCHMARK(BM_CoxFit)->ArgsProduct({{50, 500, 5000}, {1, 4}, {0, 1}});

void BM_Concordance(benchmark::State& state) {
    const SurvivalData d = simulate(static_cast<int>(state.range(0)), 1);
    const std::vector<double> risk(d.covariates.data(), d.covariates.data() + d.covariates.size());
    for (auto _ : state) benchmark::DoNotOptimize(concordance_index(d.times, d.events, risk));
}
BENCHMARK(BM_Concordance)->Arg(50)->Arg(500)->Arg(2000);

}  // namespace
