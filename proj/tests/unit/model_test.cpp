#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include "aminn/error.hpp"
#include "aminn/model.hpp"
#include "test_support.hpp"

namespace aminn {
namespace {

constexpr Pooling kAllPoolings[] = {Pooling::max, Pooling::average, Pooling::lse, Pooling::attention};

AminnConfig small_config(Pooling pooling, Eigen::Index input_dim = 6) {
    AminnConfig c;
    c.input_dim = input_dim;
    c.pooling = pooling;
    return c;
}

Eigen::MatrixXd random_bag(Rng& rng, Eigen::Index k, Eigen::Index f) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Eigen::MatrixXd m(k, f);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
    return m;
}

TEST(BuildModel, DefaultShapes) {
    const AminnModel m = build_model(small_config(Pooling::average, 99), 1);
    ASSERT_EQ(m.encoder.size(), 4u);
    EXPECT_EQ(m.encoder[0].in(), 99);
    EXPECT_EQ(m.encoder[0].out(), 64);
    EXPECT_EQ(m.encoder[1].out(), 32);
    EXPECT_EQ(m.encoder[2].out(), 32);
    EXPECT_EQ(m.encoder[3].out(), 16);
    ASSERT_EQ(m.decoder.size(), 4u);
    EXPECT_EQ(m.decoder.back().out(), 99);
    EXPECT_EQ(m.decoder.back().activation, Activation::sigmoid);
    EXPECT_EQ(m.mil.size(), 3u);
    EXPECT_EQ(m.mil[0].in(), 16);
    EXPECT_EQ(m.score.out(), 1);
    EXPECT_EQ(m.score.activation, Activation::sigmoid);
    EXPECT_FALSE(m.attention.has_value());
}

TEST(BuildModel, AutoencoderOffHasNoDecoder) {
    AminnConfig c = small_config(Pooling::attention);
    c.autoencoder = false;
    const AminnModel m = build_model(c, 2);
    EXPECT_TRUE(m.decoder.empty());
    ASSERT_TRUE(m.attention.has_value());
    EXPECT_EQ(m.attention->V.rows(), 16);
    EXPECT_EQ(m.attention->V.cols(), 32);
    for (const auto& b : m.parameters()) EXPECT_EQ(b.name.find("decoder"), std::string::npos);
}

TEST(BuildModel, SeedDeterminism) {
    const AminnModel a = build_model(small_config(Pooling::lse), 7);
    const AminnModel b = build_model(small_config(Pooling::lse), 7);
    const AminnModel c = build_model(small_config(Pooling::lse), 8);
    EXPECT_EQ(parameter_fingerprint(a), parameter_fingerprint(b));
    EXPECT_NE(parameter_fingerprint(a), parameter_fingerprint(c));
}

TEST(AminnConfig, ValidateRejectsBadShapes) {
    AminnConfig c = small_config(Pooling::average);
    c.input_dim = 0;
    EXPECT_THROW(c.validate(), InputError);
    c = small_config(Pooling::lse);
    c.lse_r = 0.0;
    EXPECT_THROW(c.validate(), InputError);
    EXPECT_THROW(parse_pooling("median"), InputError);
}

TEST(Pool, Definitions) {
    const std::vector<double> s{0.2, 0.7, 0.4};
    EXPECT_DOUBLE_EQ(pool(s, Pooling::max, 10), 0.7);
    EXPECT_NEAR(pool(s, Pooling::average, 10), 0.433333333333, 1e-12);
    const double lse1 = std::log((std::exp(0.2) + std::exp(0.7) + std::exp(0.4)) / 3.0);
    EXPECT_NEAR(pool(s, Pooling::lse, 1.0), lse1, 1e-15);
    EXPECT_NEAR(pool(s, Pooling::lse, 1.0), 0.4548, 2e-4);
    const std::vector<double> a{0.5, 0.25, 0.25};
    EXPECT_NEAR(pool(s, Pooling::attention, 10, a), 0.375, 1e-15);
}

TEST(Pool, SingletonCollapses) {
    const std::vector<double> s{0.37};
    for (Pooling p : kAllPoolings) EXPECT_DOUBLE_EQ(pool(s, p, 5.0), 0.37);
}

TEST(Pool, OrderingOnRandomScores) {
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<double> u(0, 1);
    for (int t = 0; t < 200; ++t) {
        std::vector<double> s(1 + t % 9);
        for (auto& v : s) v = u(rng);
        const double avg = pool(s, Pooling::average, 10);
        const double lse = pool(s, Pooling::lse, 10);
        const double mx = pool(s, Pooling::max, 10);
        EXPECT_LE(avg, lse);
        EXPECT_LE(lse, mx);
        EXPECT_LT(mx - pool(s, Pooling::lse, 1000), 0.01);
    }
}

TEST(AttentionWeights, UniformOnIdenticalAndEquivariant) {
    Rng rng(5);
    AttentionParams p;
    p.V = Eigen::MatrixXd::Random(4, 3);
    p.w = Eigen::VectorXd::Random(4);
    const Eigen::MatrixXd same = Eigen::Vector3d(0.1, 0.2, 0.3).replicate(1, 5);
    const Eigen::VectorXd a = attention_weights(same, p);
    for (Eigen::Index i = 0; i < 5; ++i) EXPECT_NEAR(a(i), 0.2, 1e-15);

    EXPECT_DOUBLE_EQ(attention_weights(Eigen::Vector3d(1, 2, 3), p)(0), 1.0);

    const Eigen::MatrixXd h = Eigen::MatrixXd::Random(3, 4);
    Eigen::MatrixXd hp(3, 4);
    const int perm[] = {2, 0, 3, 1};
    for (int j = 0; j < 4; ++j) hp.col(j) = h.col(perm[j]);
    const Eigen::VectorXd w = attention_weights(h, p);
    const Eigen::VectorXd wp = attention_weights(hp, p);
    for (int j = 0; j < 4; ++j) EXPECT_NEAR(wp(j), w(perm[j]), 1e-15);
    EXPECT_NEAR(w.sum(), 1.0, 1e-15);
}

TEST(ForwardBag, ProbabilityInUnitIntervalAndDeterministic) {
    Rng rng(1);
    const Eigen::MatrixXd x = random_bag(rng, 4, 6);
    for (Pooling p : kAllPoolings) {
        const AminnModel m = build_model(small_config(p), 3);
        const double a = predict_bag(m, x);
        EXPECT_GT(a, 0.0);
        EXPECT_LT(a, 1.0);
        EXPECT_EQ(a, predict_bag(build_model(small_config(p), 3), x));
    }
}

TEST(ForwardBag, PermutationInvariant) {
    Rng rng(2);
    for (Pooling p : kAllPoolings) {
        const AminnModel m = build_model(small_config(p), 11);
        for (int t = 0; t < 10; ++t) {
            const Eigen::MatrixXd x = random_bag(rng, 2 + t % 5, 6);
            std::vector<Eigen::Index> order(static_cast<std::size_t>(x.rows()));
            std::iota(order.begin(), order.end(), 0);
            std::shuffle(order.begin(), order.end(), rng);
            Eigen::MatrixXd xp(x.rows(), x.cols());
            for (Eigen::Index i = 0; i < x.rows(); ++i) xp.row(i) = x.row(order[static_cast<std::size_t>(i)]);
            EXPECT_NEAR(predict_bag(m, x), predict_bag(m, xp), 1e-12) << to_string(p);
        }
    }
}

TEST(ForwardBag, IdenticalInstancesCollapseToSingle) {
    Rng rng(3);
    const Eigen::MatrixXd one = random_bag(rng, 1, 6);
    const Eigen::MatrixXd many = one.replicate(4, 1);
    for (Pooling p : kAllPoolings) {
        const AminnModel m = build_model(small_config(p), 5);
        EXPECT_NEAR(predict_bag(m, many), predict_bag(m, one), 1e-12) << to_string(p);
    }
}

TEST(ForwardBag, MaxAtLeastAverageAndDuplicateShiftsMean) {
    Rng rng(4);
    AminnModel m = build_model(small_config(Pooling::average), 6);
    const Eigen::MatrixXd x = random_bag(rng, 3, 6);
    const BagForward f = forward_bag(m, x);
    EXPECT_GE(pool(std::span<const double>(f.scores.data(), 3), Pooling::max, 10), f.probability);

    Eigen::Index top = 0;
    f.scores.maxCoeff(&top);
    Eigen::MatrixXd dup(4, 6);
    dup.topRows(3) = x;
    dup.row(3) = x.row(top);
    const double shifted = predict_bag(m, dup);
    EXPECT_GT(shifted, f.probability);
    EXPECT_LE(shifted, f.scores(top));
}

TEST(ForwardBag, WrongWidthIsInputError) {
    const AminnModel m = build_model(small_config(Pooling::average), 1);
    EXPECT_THROW(forward_bag(m, Eigen::MatrixXd::Zero(2, 5)), InputError);
    EXPECT_THROW(forward_bag(m, Eigen::MatrixXd::Zero(0, 6)), InputError);
}

TEST(LossAndGrads, AlphaZeroDecouplesMilHead) {
    Rng rng(5);
    AminnConfig c = small_config(Pooling::average);
    c.alpha = 0.0;
    const AminnModel m = build_model(c, 2);
    const BagLoss l = loss_and_grads(m, random_bag(rng, 3, 6), 1);
    EXPECT_DOUBLE_EQ(l.total, l.reconstruction);
    for (const auto& g : l.grads.mil) EXPECT_TRUE(g.weights.isZero());
    EXPECT_TRUE(l.grads.score.weights.isZero());
    EXPECT_FALSE(l.grads.encoder[0].weights.isZero());
}

TEST(LossAndGrads, NeutralScoreGivesLogTwo) {
    Rng rng(6);
    AminnConfig c = small_config(Pooling::max);
    c.autoencoder = false;
    AminnModel m = build_model(c, 2);
    m.score.weights.setZero();
    m.score.biases.setZero();
    for (int y : {0, 1}) {
        const BagLoss l = loss_and_grads(m, random_bag(rng, 3, 6), y);
        EXPECT_NEAR(l.total, std::log(2.0), 1e-15);
        EXPECT_EQ(l.reconstruction, 0.0);
    }
}

// Central differences over every parameter of the summed loss on two bags.
GradientCheckReport check_two_bags(Pooling pooling, bool autoencoder, std::uint64_t seed) {
    AminnConfig c = small_config(pooling, 5);
    c.autoencoder = autoencoder;
    c.lse_r = 3.0;
    AminnModel m = build_model(c, seed);
    Rng rng(seed + 100);
    const Eigen::MatrixXd a = random_bag(rng, 3, 5);
    const Eigen::MatrixXd b = random_bag(rng, 2, 5);
    BagLoss la = loss_and_grads(m, a, 1);
    const BagLoss lb = loss_and_grads(m, b, 0);
    la.grads += lb.grads;
    auto eval = [&] {
        const BagLoss x = loss_and_grads(m, a, 1);
        const BagLoss y = loss_and_grads(m, b, 0);
        std::uint64_t sig = x.signature;
        hash_value(sig, y.signature);
        return Evaluation{x.total + y.total, sig};
    };
    const auto params = m.parameters();
    const auto grads = la.grads.blocks();
    return gradient_check(eval, params, grads);
}

TEST(LossAndGrads, MatchesFiniteDifferencesForEveryPooling) {
    for (Pooling p : kAllPoolings) {
        for (bool ae : {true, false}) {
            const auto report = check_two_bags(p, ae, 17);
            EXPECT_TRUE(report.passed) << to_string(p) << " ae=" << ae << " err=" << report.max_rel_error;
            EXPECT_GT(report.checked, report.excluded);
        }
    }
}

TEST(AminnGrads, BlocksLineUpWithParameters) {
    for (Pooling p : kAllPoolings) {
        AminnModel m = build_model(small_config(p), 1);
        const auto params = m.parameters();
        const auto grads = AminnGrads::zeros_like(m).blocks();
        ASSERT_EQ(params.size(), grads.size());
        std::size_t total = 0;
        for (std::size_t i = 0; i < params.size(); ++i) {
            EXPECT_EQ(params[i].name, grads[i].name);
            EXPECT_EQ(params[i].values.size(), grads[i].values.size());
            total += params[i].values.size();
        }
        EXPECT_EQ(total, m.parameter_count());
    }
}

TEST(Checkpoint, RoundTripIsBitExact) {
    testing::TempDir dir;
    for (Pooling p : kAllPoolings) {
        const AminnModel m = build_model(small_config(p), 21);
        save_checkpoint(dir / "m.json", m);
        const AminnModel back = load_checkpoint(dir / "m.json");
        EXPECT_EQ(parameter_fingerprint(back), parameter_fingerprint(m));
        EXPECT_EQ(back.config.pooling, p);
        Rng rng(1);
        const Eigen::MatrixXd x = random_bag(rng, 3, 6);
        EXPECT_EQ(predict_bag(back, x), predict_bag(m, x));
    }
}

TEST(Checkpoint, RejectsWrongFormat) {
    testing::TempDir dir;
    EXPECT_THROW(load_checkpoint(dir.write("bad.json", "{\"format\": \"other\"}")), InputError);
    EXPECT_THROW(load_checkpoint(dir.write("junk.json", "not json")), InputError);
}

}  // namespace
}  // namespace aminn
