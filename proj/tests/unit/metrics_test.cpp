#include <random>

#include <gtest/gtest.h>

#include "aminn/error.hpp"
#include "aminn/metrics.hpp"

namespace aminn {
namespace {

// O(n^2) pair enumeration.
double pairwise_auc(const std::vector<double>& s, const std::vector<int>& y) {
    double wins = 0.0;
    long pairs = 0;
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (y[i] != 1) continue;
        for (std::size_t j = 0; j < s.size(); ++j) {
            if (y[j] != 0) continue;
            ++pairs;
            if (s[i] > s[j]) wins += 1.0;
            else if (s[i] == s[j]) wins += 0.5;
        }
    }
    return wins / static_cast<double>(pairs);
}

TEST(RocAuc, HandCases) {
    EXPECT_DOUBLE_EQ(roc_auc(std::vector<double>{0.9, 0.8, 0.1, 0.2}, std::vector<int>{1, 1, 0, 0}), 1.0);
    EXPECT_DOUBLE_EQ(roc_auc(std::vector<double>{0.4, 0.4, 0.4, 0.4}, std::vector<int>{1, 0, 1, 0}), 0.5);
    EXPECT_DOUBLE_EQ(roc_auc(std::vector<double>{0.5, 0.5, 0.7, 0.3}, std::vector<int>{1, 0, 1, 0}), 0.875);
}

TEST(RocAuc, SingleClassIsError) {
    EXPECT_THROW(roc_auc(std::vector<double>{0.1, 0.2}, std::vector<int>{1, 1}), InputError);
    EXPECT_THROW(roc_auc(std::vector<double>{0.1}, std::vector<int>{1, 0}), InputError);
}

TEST(RocAuc, MatchesPairEnumerationWithTies) {
    std::mt19937_64 rng(12);
    for (int t = 0; t < 100; ++t) {
        const int n = 2 + static_cast<int>(rng() % 199);
        std::vector<double> s(static_cast<std::size_t>(n));
        std::vector<int> y(static_cast<std::size_t>(n));
        const int levels = 1 + static_cast<int>(rng() % 10);
        for (int i = 0; i < n; ++i) {
            s[i] = static_cast<double>(rng() % static_cast<unsigned>(levels)) / levels;
            y[i] = static_cast<int>(rng() % 2);
        }
        y[0] = 1;
        y[1] = 0;
        EXPECT_EQ(roc_auc(s, y), pairwise_auc(s, y)) << "trial " << t;
    }
}

TEST(Accuracy, HandCases) {
    EXPECT_DOUBLE_EQ(accuracy(std::vector<double>{0.9, 0.1}, std::vector<int>{1, 0}), 1.0);
    EXPECT_DOUBLE_EQ(accuracy(std::vector<double>{0.1, 0.9}, std::vector<int>{1, 0}), 0.0);
    EXPECT_NEAR(accuracy(std::vector<double>{0.6, 0.4, 0.3}, std::vector<int>{1, 1, 0}), 2.0 / 3.0, 1e-15);
    // Threshold is strict.
    EXPECT_DOUBLE_EQ(accuracy(std::vector<double>{0.5}, std::vector<int>{0}), 1.0);
}

TEST(RocCurve, EndpointsAndMonotone) {
    const std::vector<double> s{0.9, 0.8, 0.8, 0.3, 0.1};
    const std::vector<int> y{1, 0, 1, 0, 0};
    const auto c = roc_curve(s, y);
    ASSERT_EQ(c.size(), 5u);  // origin + 4 distinct scores
    EXPECT_EQ(c.front().fpr, 0.0);
    EXPECT_EQ(c.front().tpr, 0.0);
    EXPECT_EQ(c.back().fpr, 1.0);
    EXPECT_EQ(c.back().tpr, 1.0);
    double area = 0.0;
    for (std::size_t i = 1; i < c.size(); ++i) {
        EXPECT_GE(c[i].fpr, c[i - 1].fpr);
        EXPECT_GE(c[i].tpr, c[i - 1].tpr);
        area += (c[i].fpr - c[i - 1].fpr) * (c[i].tpr + c[i - 1].tpr) / 2.0;
    }
    EXPECT_NEAR(area, roc_auc(s, y), 1e-15);
}

}  // namespace
}  // namespace aminn
