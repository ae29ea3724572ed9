#include "aminn/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "aminn/error.hpp"

namespace aminn {
namespace {

void check_lengths(std::span<const double> scores, std::span<const int> labels) {
    if (scores.size() != labels.size()) throw InputError("scores and labels differ in length");
    for (double s : scores) {
        if (!std::isfinite(s)) throw InputError("non-finite score");
    }
}

}  // namespace

double roc_auc(std::span<const double> scores, std::span<const int> labels) {
    check_lengths(scores, labels);
    const std::size_t n = scores.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

    // Twice the mid-rank keeps everything in integers.
    double positive_rank_sum2 = 0.0;
    std::size_t positives = 0;
    for (std::size_t i = 0; i < n;) {
        std::size_t j = i;
        while (j < n && scores[order[j]] == scores[order[i]]) ++j;
        const double rank2 = static_cast<double>(i + 1 + j);  // 2 * mean of ranks i+1..j
        for (std::size_t t = i; t < j; ++t) {
            if (labels[order[t]] == 1) {
                positive_rank_sum2 += rank2;
                ++positives;
            }
        }
        i = j;
    }
    const std::size_t negatives = n - positives;
    if (positives == 0 || negatives == 0) throw InputError("AUC needs both classes present");
    const double p = static_cast<double>(positives);
    const double q = static_cast<double>(negatives);
    const double u2 = positive_rank_sum2 - p * (p + 1.0);
    return u2 / (2.0 * p * q);
}

double accuracy(std::span<const double> scores, std::span<const int> labels, double threshold) {
    check_lengths(scores, labels);
    if (scores.empty()) throw InputError("accuracy of an empty set");
    std::size_t hits = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        if ((scores[i] > threshold ? 1 : 0) == labels[i]) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(scores.size());
}

std::vector<RocPoint> roc_curve(std::span<const double> scores, std::span<const int> labels) {
    check_lengths(scores, labels);
    const std::size_t n = scores.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
    const auto positives = static_cast<double>(std::count(labels.begin(), labels.end(), 1));
    const double negatives = static_cast<double>(n) - positives;
    if (positives == 0 || negatives == 0) throw InputError("ROC curve needs both classes present");

    std::vector<RocPoint> points;
    points.push_back({std::numeric_limits<double>::infinity(), 0.0, 0.0});
    double tp = 0.0, fp = 0.0;
    for (std::size_t i = 0; i < n;) {
        std::size_t j = i;
        while (j < n && scores[order[j]] == scores[order[i]]) {
            (labels[order[j]] == 1 ? tp : fp) += 1.0;
            ++j;
        }
        points.push_back({scores[order[i]], fp / negatives, tp / positives});
        i = j;
    }
    return points;
}

}  // namespace aminn
