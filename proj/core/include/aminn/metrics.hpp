#pragma once

#include <span>
#include <vector>

namespace aminn {

struct ScoredLabels {
    std::vector<double> scores;
    std::vector<int> labels;
};

// Mann-Whitney rank form with mid-ranks for ties. Throws InputError unless
// both classes are present.
double roc_auc(std::span<const double> scores, std::span<const int> labels);
inline double roc_auc(const ScoredLabels& data) { return roc_auc(data.scores, data.labels); }

// Fraction of entries with (score > threshold) == label.
double accuracy(std::span<const double> scores, std::span<const int> labels, double threshold = 0.5);
inline double accuracy(const ScoredLabels& data, double threshold = 0.5) {
    return accuracy(data.scores, data.labels, threshold);
}

struct RocPoint {
    double threshold = 0.0;
    double fpr = 0.0;
    double tpr = 0.0;
};

// Empirical ROC curve: one point per distinct score (descending), starting at (0,0).
std::vector<RocPoint> roc_curve(std::span<const double> scores, std::span<const int> labels);

}  // namespace aminn
