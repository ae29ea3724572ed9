#include <cmath>
#include <random>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include "aminn/error.hpp"
#include "aminn/survival.hpp"
#include "test_support.hpp"

namespace aminn {
namespace {

SurvivalData make_data(std::vector<double> t, std::vector<int> e, const Eigen::MatrixXd& x,
                       std::vector<std::string> names = {}) {
    SurvivalData d;
    d.times = std::move(t);
    d.events = std::move(e);
    d.covariates = x;
    for (std::size_t i = 0; i < d.times.size(); ++i) d.subject_ids.push_back("S" + std::to_string(i));
    if (names.empty()) {
        for (Eigen::Index j = 0; j < x.cols(); ++j) names.push_back("x" + std::to_string(j));
    }
    d.covariate_names = std::move(names);
    return d;
}

// Exponential survival with hazard exp(beta * group), optional uniform censoring.
SurvivalData simulate(std::uint64_t seed, int n, double beta, double censor_max = 0.0) {
    std::mt19937_64 rng(seed);
    std::bernoulli_distribution group(0.5);
    std::exponential_distribution<double> unit(1.0);
    std::uniform_real_distribution<double> cens(0.0, censor_max);
    std::vector<double> t;
    std::vector<int> e;
    Eigen::MatrixXd x(n, 1);
    for (int i = 0; i < n; ++i) {
        x(i, 0) = group(rng) ? 1.0 : 0.0;
        const double time = unit(rng) / std::exp(beta * x(i, 0));
        if (censor_max > 0.0) {
            const double c = cens(rng);
            t.push_back(std::min(time, c));
            e.push_back(time <= c ? 1 : 0);
        } else {
            t.push_back(time);
            e.push_back(1);
        }
    }
    return make_data(t, e, x);
}

// Partial log-likelihood for one covariate and distinct times, written out directly.
double naive_loglik(const SurvivalData& d, double beta) {
    double l = 0.0;
    for (Eigen::Index i = 0; i < d.size(); ++i) {
        if (!d.events[i]) continue;
        double risk = 0.0;
        for (Eigen::Index j = 0; j < d.size(); ++j) {
            if (d.times[j] >= d.times[i]) risk += std::exp(beta * d.covariates(j, 0));
        }
        l += beta * d.covariates(i, 0) - std::log(risk);
    }
    return l;
}

double golden_section_max(const std::function<double(double)>& f, double lo, double hi) {
    const double phi = (std::sqrt(5.0) - 1.0) / 2.0;
    double a = lo, b = hi;
    double c = b - phi * (b - a), d = a + phi * (b - a);
    while (b - a > 1e-12) {
        if (f(c) > f(d)) b = d;
        else a = c;
        c = b - phi * (b - a);
        d = a + phi * (b - a);
    }
    return (a + b) / 2.0;
}

TEST(CoxFit, FourSubjectsMatchBruteForceMaximizer) {
    Eigen::MatrixXd x(4, 1);
    x << 1.2, -0.4, 0.8, 0.1;
    const SurvivalData d = make_data({2.0, 5.0, 3.0, 7.0}, {1, 1, 1, 0}, x);
    const double oracle = golden_section_max([&](double b) { return naive_loglik(d, b); }, -20.0, 20.0);
    const CoxFit fit = cox_fit(d);
    EXPECT_TRUE(fit.converged);
    EXPECT_NEAR(fit.beta(0), oracle, 1e-6);
    EXPECT_NEAR(fit.log_likelihood, naive_loglik(d, fit.beta(0)), 1e-10);
}

TEST(CoxPartialLikelihood, DerivativesMatchFiniteDifferences) {
    SurvivalData d = simulate(3, 40, 0.5, 3.0);
    Eigen::MatrixXd x(40, 2);
    x.col(0) = d.covariates.col(0);
    std::mt19937_64 rng(1);
    std::normal_distribution<double> z;
    for (Eigen::Index i = 0; i < 40; ++i) x(i, 1) = z(rng);
    // Coarsen times to create ties.
    for (auto& t : d.times) t = std::ceil(t * 4.0) / 4.0;
    d = make_data(d.times, d.events, x);
    for (TieMethod ties : {TieMethod::efron, TieMethod::breslow}) {
        const Eigen::Vector2d beta(0.3, -0.2);
        const auto at = cox_partial_likelihood(d, beta, ties);
        const double h = 1e-5;
        for (int k = 0; k < 2; ++k) {
            Eigen::Vector2d bp = beta, bm = beta;
            bp(k) += h;
            bm(k) -= h;
            const auto p = cox_partial_likelihood(d, bp, ties);
            const auto m = cox_partial_likelihood(d, bm, ties);
            EXPECT_NEAR(at.gradient(k), (p.log_likelihood - m.log_likelihood) / (2 * h), 1e-6);
            for (int l = 0; l < 2; ++l) {
                EXPECT_NEAR(at.hessian(k, l), (p.gradient(l) - m.gradient(l)) / (2 * h), 1e-6);
            }
        }
    }
}

TEST(CoxPartialLikelihood, EfronEqualsBreslowWithoutTies) {
    const SurvivalData d = simulate(4, 30, 0.4, 2.0);
    const Eigen::VectorXd beta = Eigen::VectorXd::Constant(1, 0.3);
    EXPECT_NEAR(cox_partial_likelihood(d, beta, TieMethod::efron).log_likelihood,
                cox_partial_likelihood(d, beta, TieMethod::breslow).log_likelihood, 1e-12);
}

TEST(CoxFit, RecoversSimulatedLogHazard) {
    const CoxFit fit = cox_fit(simulate(7, 500, 0.7));
    EXPECT_NEAR(fit.beta(0), 0.7, 0.15);
    EXPECT_NEAR(fit.hazard_ratio(0), std::exp(fit.beta(0)), 1e-12);
    EXPECT_NEAR(fit.hr_lower(0), std::exp(fit.beta(0) - 1.96 * fit.std_error(0)), 1e-12);
    EXPECT_NEAR(fit.hr_upper(0), std::exp(fit.beta(0) + 1.96 * fit.std_error(0)), 1e-12);
    EXPECT_LT(fit.p_value(0), 1e-6);
    for (std::size_t i = 1; i < fit.log_likelihood_trace.size(); ++i) {
        EXPECT_GE(fit.log_likelihood_trace[i], fit.log_likelihood_trace[i - 1] - 1e-9);
    }
}

TEST(CoxFit, NullCovariateHasHazardRatioNearOne) {
    int rejections = 0;
    for (std::uint64_t s = 0; s < 40; ++s) {
        const CoxFit fit = cox_fit(simulate(100 + s, 300, 0.0, 2.0));
        EXPECT_NEAR(fit.hazard_ratio(0), 1.0, 0.5);
        rejections += fit.p_value(0) < 0.05;
    }
    EXPECT_LE(rejections, 8);
}

TEST(CoxFit, SeparationAndRankErrors) {
    Eigen::MatrixXd x(4, 1);
    x << 4, 3, 2, 1;
    EXPECT_THROW(cox_fit(make_data({1, 2, 3, 4}, {1, 1, 1, 1}, x)), SeparationError);

    Eigen::MatrixXd dup(6, 2);
    dup.col(0) << 0.1, 0.5, -0.3, 0.9, 0.2, -1.0;
    dup.col(1) = dup.col(0);
    EXPECT_THROW(cox_fit(make_data({1, 2, 3, 4, 5, 6}, {1, 0, 1, 1, 0, 1}, dup)), RankDeficiencyError);

    EXPECT_THROW(cox_fit(make_data({1, 2}, {0, 0}, Eigen::MatrixXd::Ones(2, 1))), InputError);
}

TEST(Concordance, HandExamples) {
    const std::vector<double> t{2, 4, 5};
    EXPECT_DOUBLE_EQ(concordance_index(t, std::vector<int>{1, 1, 0}, std::vector<double>{0.9, 0.2, 0.1}), 1.0);
    EXPECT_DOUBLE_EQ(concordance_index(t, std::vector<int>{1, 1, 1}, std::vector<double>{0.1, 0.2, 0.9}), 0.0);
    // Tied risk counts one half; equal times are not comparable.
    EXPECT_DOUBLE_EQ(concordance_index(std::vector<double>{1, 2}, std::vector<int>{1, 1},
                                       std::vector<double>{0.5, 0.5}),
                     0.5);
    EXPECT_DOUBLE_EQ(concordance_index(std::vector<double>{1, 1, 2}, std::vector<int>{1, 1, 0},
                                       std::vector<double>{0.9, 0.1, 0.5}),
                     0.5);
}

TEST(Concordance, RandomRisksNearHalf) {
    std::mt19937_64 rng(2);
    std::uniform_real_distribution<double> u;
    std::vector<double> t, r;
    std::vector<int> e;
    for (int i = 0; i < 2000; ++i) {
        t.push_back(u(rng));
        r.push_back(u(rng));
        e.push_back(u(rng) < 0.7);
    }
    EXPECT_NEAR(concordance_index(t, e, r), 0.5, 0.03);
}

TEST(BhCorrect, LadderAndBounds) {
    const auto q = bh_correct(std::vector<double>{0.01, 0.02, 0.03, 0.04});
    for (double v : q) EXPECT_NEAR(v, 0.04, 1e-15);
    EXPECT_EQ(bh_correct(std::vector<double>{0.3}), std::vector<double>{0.3});

    // Hand evaluation, input order preserved: p*m/rank then running min from the top.
    const auto h = bh_correct(std::vector<double>{0.04, 0.001, 0.5, 0.03});
    EXPECT_NEAR(h[0], 0.04 * 4 / 3, 1e-15);
    EXPECT_NEAR(h[1], 0.004, 1e-15);
    EXPECT_NEAR(h[2], 0.5, 1e-15);
    EXPECT_NEAR(h[3], 0.04 * 4 / 3, 1e-15);

    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u;
    for (int t = 0; t < 50; ++t) {
        std::vector<double> p(1 + t % 12);
        for (auto& v : p) v = u(rng);
        const auto adj = bh_correct(p);
        for (std::size_t i = 0; i < p.size(); ++i) {
            EXPECT_GE(adj[i], p[i]);
            EXPECT_LE(adj[i], 1.0);
        }
    }
}

TEST(WaldPValue, TailsAndFloor) {
    EXPECT_NEAR(wald_p_value(1.96), 0.05, 1e-4);
    EXPECT_DOUBLE_EQ(wald_p_value(0.0), 1.0);
    EXPECT_GT(wald_p_value(60.0), 0.0);
}

SurvivalData informative_and_noise(std::uint64_t seed) {
    SurvivalData d = simulate(seed, 200, 0.9, 3.0);
    Eigen::MatrixXd x(200, 2);
    x.col(0) = d.covariates.col(0);
    std::mt19937_64 rng(seed + 1);
    std::normal_distribution<double> z;
    for (Eigen::Index i = 0; i < 200; ++i) x(i, 1) = z(rng);
    return make_data(d.times, d.events, x, {"risk", "noise"});
}

TEST(BiomarkerTable, InformativeColumnGetsLowerQ) {
    const BiomarkerTable t = biomarker_table(informative_and_noise(5));
    ASSERT_EQ(t.univariate.size(), 2u);
    ASSERT_TRUE(t.univariate[0].q_value && t.univariate[1].q_value);
    EXPECT_LT(*t.univariate[0].q_value, *t.univariate[1].q_value);
    ASSERT_TRUE(t.multivariable.has_value());
    EXPECT_LT(t.multivariable_q[0], t.multivariable_q[1]);
    const std::string text = render_biomarker_table(t);
    EXPECT_NE(text.find("risk"), std::string::npos);
    EXPECT_NE(text.find("C-index"), std::string::npos);
}

TEST(BiomarkerTable, ColumnOrderInvariant) {
    const SurvivalData d = informative_and_noise(6);
    const Eigen::Index swap[] = {1, 0};
    const BiomarkerTable a = biomarker_table(d);
    const BiomarkerTable b = biomarker_table(d.select_columns(swap));
    EXPECT_NEAR(a.univariate[0].fit->beta(0), b.univariate[1].fit->beta(0), 1e-12);
    EXPECT_NEAR(a.univariate[1].fit->p_value(0), b.univariate[0].fit->p_value(0), 1e-12);
    EXPECT_NEAR(a.multivariable->beta(0), b.multivariable->beta(1), 1e-9);
}

TEST(BiomarkerTable, DuplicateColumnFailsOnlyMultivariable) {
    SurvivalData d = informative_and_noise(7);
    Eigen::MatrixXd x(d.size(), 3);
    x.leftCols(2) = d.covariates;
    x.col(2) = d.covariates.col(0);
    d = make_data(d.times, d.events, x, {"risk", "noise", "risk_copy"});
    const BiomarkerTable t = biomarker_table(d);
    for (const auto& row : t.univariate) EXPECT_TRUE(row.fit.has_value()) << row.error;
    EXPECT_FALSE(t.multivariable.has_value());
    EXPECT_NE(t.multivariable_error.find("rank"), std::string::npos) << t.multivariable_error;
    const nlohmann::json j = t;
    EXPECT_TRUE(j.contains("univariate"));
}

TEST(LoadSurvivalCsv, ParsesScoreColumns) {
    testing::TempDir dir;
    const auto p = dir.write("s.csv", "patient_id,survival_months,event,a,b\nP1,10,1,0.5,1\nP2,20,0,0.1,2\n");
    const SurvivalData d = load_survival_csv(p.string());
    EXPECT_EQ(d.covariate_names, (std::vector<std::string>{"a", "b"}));
    EXPECT_EQ(d.events, (std::vector<int>{1, 0}));
    EXPECT_DOUBLE_EQ(d.covariates(1, 1), 2.0);
    EXPECT_THROW(load_survival_csv(dir.write("n.csv", "patient_id,survival_months,event\nP1,1,1\n").string()),
                 InputError);
}

}  // namespace
}  // namespace aminn
