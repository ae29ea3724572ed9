#include <algorithm>
#include <cmath>
#include <random>
#include <set>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include "aminn/error.hpp"
#include "aminn/metrics.hpp"
#include "aminn/synthgen.hpp"
#include "aminn/trainer.hpp"

namespace aminn {
namespace {

const std::vector<std::string> kToyFeatures{"volume", "a", "b"};

// Positive bags carry one lesion with a large "a" value; negatives do not.
std::vector<Bag> separable_bags(int n, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.5, 1.5);
    std::vector<Bag> bags;
    for (int i = 0; i < n; ++i) {
        Bag b;
        b.patient_id = "P" + std::to_string(i);
        b.label = i % 2;
        const int k = 1 + i % 3;
        b.instances.resize(k, 3);
        for (int j = 0; j < k; ++j) {
            b.lesion_ids.push_back("L" + std::to_string(j));
            b.instances(j, 0) = 10.0 * u(rng);
            b.instances(j, 1) = u(rng) + (b.label && j == 0 ? 6.0 : 0.0);
            b.instances(j, 2) = u(rng);
        }
        bags.push_back(std::move(b));
    }
    return bags;
}

TrainConfig quick_config(int epochs = 3) {
    TrainConfig c;
    c.epochs = epochs;
    c.repeats = 2;
    c.folds = 3;
    c.seed = 5;
    return c;
}

TEST(TrainFold, DescendsOnSeparableData) {
    TrainConfig c = quick_config(100);
    c.lr = 1e-3;
    const auto bags = separable_bags(24, 1);
    const FoldModel m = train_fold(bags, kToyFeatures, c, 3);
    ASSERT_EQ(m.curve.bce.size(), 101u);
    EXPECT_LT(m.curve.bce.back(), m.curve.bce.front());
    EXPECT_LT(m.curve.total.back(), m.curve.total.front());
}

TEST(TrainFold, OverfitsToPerfectTrainingAuc) {
    TrainConfig c = quick_config(150);
    c.lr = 3e-3;
    const auto bags = separable_bags(20, 2);
    const FoldModel m = train_fold(bags, kToyFeatures, c, 4);
    std::vector<double> s;
    std::vector<int> y;
    for (const auto& b : bags) {
        s.push_back(predict_patient(m, b));
        y.push_back(b.label);
    }
    EXPECT_EQ(roc_auc(s, y), 1.0);
}

TEST(TrainFold, NoAutoencoderMeansNoDecoder) {
    TrainConfig c = quick_config(2);
    c.ablation.ae = false;
    const FoldModel m = train_fold(separable_bags(12, 3), kToyFeatures, c, 1);
    EXPECT_TRUE(m.model.decoder.empty());
    const nlohmann::json j = m.model;
    EXPECT_TRUE(j.at("decoder").empty());
    for (double r : m.curve.reconstruction) EXPECT_EQ(r, 0.0);
}

TEST(TrainFold, BitIdenticalUnderSameSeed) {
    const auto bags = separable_bags(15, 4);
    for (Pooling p : {Pooling::max, Pooling::attention}) {
        TrainConfig c = quick_config(4);
        c.model.pooling = p;
        const auto a = train_fold(bags, kToyFeatures, c, 9);
        const auto b = train_fold(bags, kToyFeatures, c, 9);
        const auto d = train_fold(bags, kToyFeatures, c, 10);
        EXPECT_EQ(parameter_fingerprint(a.model), parameter_fingerprint(b.model));
        EXPECT_NE(parameter_fingerprint(a.model), parameter_fingerprint(d.model));
    }
}

TEST(TrainFold, SingleClassIsInputError) {
    auto bags = separable_bags(6, 5);
    for (auto& b : bags) b.label = 0;
    EXPECT_THROW(train_fold(bags, kToyFeatures, quick_config(), 1), InputError);
}

TEST(SelectInstances, LargestOnlyWhenMultiOff) {
    TrainConfig c;
    c.ablation.multi = false;
    const auto bags = separable_bags(9, 6);
    const auto sel = select_instances(bags, kToyFeatures, c);
    for (std::size_t i = 0; i < bags.size(); ++i) {
        ASSERT_EQ(sel[i].size(), 1);
        EXPECT_EQ(sel[i].instances(0, 0), bags[i].instances.col(0).maxCoeff());
    }
    c.volume_feature = "nope";
    EXPECT_THROW(select_instances(bags, kToyFeatures, c), InputError);
}

TEST(RunCv, Accounting) {
    const auto bags = separable_bags(18, 7);
    TrainConfig c = quick_config(2);
    c.repeats = 3;
    const CvReport r = run_cv(bags, kToyFeatures, c);
    EXPECT_EQ(r.models_trained, 9);
    EXPECT_EQ(r.model_fingerprints.size(), 9u);
    ASSERT_EQ(r.oof.size(), 3u);
    for (int n : r.prediction_count) EXPECT_EQ(n, 3);
    for (const auto& row : r.oof)
        for (double p : row) EXPECT_TRUE(p > 0.0 && p < 1.0);
    EXPECT_EQ(r.repeat_auc.size(), 3u);
    for (std::size_t i = 0; i < r.consensus.size(); ++i) {
        const double mean = (r.oof[0][i] + r.oof[1][i] + r.oof[2][i]) / 3.0;
        EXPECT_NEAR(r.consensus[i], mean, 1e-15);
    }
}

TEST(RunCv, ReproducibleAndThreadCountInvariant) {
    const auto bags = separable_bags(15, 8);
    TrainConfig c = quick_config(2);
    const CvReport a = run_cv(bags, kToyFeatures, c);
    c.threads = 3;
    const CvReport b = run_cv(bags, kToyFeatures, c);
    EXPECT_EQ(a.oof, b.oof);
    EXPECT_EQ(a.model_fingerprints, b.model_fingerprints);
    EXPECT_EQ(nlohmann::json(a).dump(), nlohmann::json(b).dump());
}

TEST(RunCv, MedianConsensus) {
    const auto bags = separable_bags(15, 9);
    TrainConfig c = quick_config(1);
    c.repeats = 3;
    c.consensus = Consensus::median;
    const CvReport r = run_cv(bags, kToyFeatures, c);
    for (std::size_t i = 0; i < r.consensus.size(); ++i) {
        std::vector<double> v{r.oof[0][i], r.oof[1][i], r.oof[2][i]};
        std::sort(v.begin(), v.end());
        EXPECT_EQ(r.consensus[i], v[1]);
    }
}

TEST(AggregateRepeats, HandArithmetic) {
    const auto flat = aggregate_repeats(std::vector<double>{0.7, 0.7, 0.7});
    EXPECT_DOUBLE_EQ(flat.mean, 0.7);
    EXPECT_DOUBLE_EQ(flat.ci_low, flat.ci_high);

    const auto two = aggregate_repeats(std::vector<double>{0.6, 0.8});
    EXPECT_NEAR(two.mean, 0.7, 1e-15);
    EXPECT_NEAR(two.std, 0.1414, 1e-4);
    EXPECT_NEAR(two.ci_low, 0.7 - 0.196, 1e-12);
    EXPECT_NEAR(two.ci_high, 0.7 + 0.196, 1e-12);
}

TEST(Logistic, SeparableFeatureAndCollinearity) {
    Eigen::MatrixXd x(8, 2);
    std::vector<int> y;
    for (int i = 0; i < 8; ++i) {
        x(i, 0) = i < 4 ? -1.0 - i : 1.0 + i;
        x(i, 1) = x(i, 0);  // exact copy
        y.push_back(i < 4 ? 0 : 1);
    }
    const LogisticModel m = fit_logistic(x, y);
    EXPECT_TRUE(m.weights.allFinite());
    std::vector<double> s;
    for (int i = 0; i < 8; ++i) s.push_back(m.predict(x.row(i)));
    EXPECT_EQ(roc_auc(s, y), 1.0);
    EXPECT_NEAR(m.weights(0), m.weights(1), 1e-12);
}

TEST(Logistic, BaselineIsDeterministic) {
    const auto bags = separable_bags(18, 10);
    const TrainConfig c = quick_config();
    const CvReport a = logistic_baseline(bags, kToyFeatures, c);
    const CvReport b = logistic_baseline(bags, kToyFeatures, c);
    EXPECT_EQ(a.oof, b.oof);
    EXPECT_EQ(a.models_trained, 6);
}

TEST(MedianDichotomize, Rules) {
    EXPECT_EQ(median_dichotomize(std::vector<double>{0.1, 0.4, 0.6, 0.9}), (std::vector<int>{0, 0, 1, 1}));
    EXPECT_EQ(median_dichotomize(std::vector<double>{0.3, 0.3, 0.3}), (std::vector<int>{0, 0, 0}));
    EXPECT_EQ(median_dichotomize(std::vector<double>{0.8, 0.2, 0.5}), (std::vector<int>{1, 0, 0}));
}

TEST(Ablation, RowSetAndLabels) {
    const auto combos = AblationFlags::all_combinations();
    ASSERT_EQ(combos.size(), 8u);
    std::set<std::string> labels;
    for (const auto& f : combos) labels.insert(f.label());
    EXPECT_EQ(labels.size(), 8u);
    EXPECT_EQ(combos.front().label(), "AMINN_baseline");
    EXPECT_EQ(combos.back().label(), "AMINN_multi+log+ae");

    const auto bags = separable_bags(15, 11);
    TrainConfig c = quick_config(1);
    c.repeats = 2;
    const auto rows = run_ablation(bags, kToyFeatures, c);
    ASSERT_EQ(rows.size(), 10u);
    EXPECT_EQ(rows[0].name, "LogisticRegression");
    EXPECT_EQ(rows[1].name, "LogisticRegression_log");
    for (std::size_t i = 0; i < 8; ++i) EXPECT_EQ(rows[i + 2].name, combos[i].label());
    for (const auto& r : rows) EXPECT_EQ(r.report.models_trained, 6);
    const std::string table = render_comparison_table(rows);
    EXPECT_NE(table.find("AMINN_multi+log+ae"), std::string::npos);
}

TEST(PoolingComparison, OneRowPerPooling) {
    const auto bags = separable_bags(12, 12);
    TrainConfig c = quick_config(1);
    c.repeats = 1;
    const Pooling ps[] = {Pooling::max, Pooling::average, Pooling::lse, Pooling::attention};
    const auto rows = run_pooling_comparison(bags, kToyFeatures, c, ps);
    ASSERT_EQ(rows.size(), 4u);
    EXPECT_NE(rows[3].name.find("attention"), std::string::npos);
}

TEST(TrainConfigJson, RoundTripAndValidation) {
    TrainConfig c;
    c.epochs = 7;
    c.ablation.log = false;
    c.model.pooling = Pooling::lse;
    c.consensus = Consensus::median;
    const TrainConfig back = nlohmann::json(c).get<TrainConfig>();
    EXPECT_EQ(nlohmann::json(back).dump(), nlohmann::json(c).dump());

    TrainConfig bad;
    bad.epochs = 0;
    EXPECT_THROW(bad.validate(), InputError);
    EXPECT_THROW(nlohmann::json({{"consensus", "mode"}}).get<TrainConfig>(), InputError);
}

}  // namespace
}  // namespace aminn
