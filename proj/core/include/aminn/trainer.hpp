#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json_fwd.hpp>

#include "aminn/bagdata.hpp"
#include "aminn/featnorm.hpp"
#include "aminn/model.hpp"

namespace aminn {

struct AblationFlags {
    bool multi = true;  // all lesions (true) or largest lesion only
    bool log = true;    // two-step normalization (true) or plain Z-score
    bool ae = true;     // autoencoder branch and reconstruction loss

    // "AMINN_baseline", "AMINN_log", ..., "AMINN_multi+log+ae".
    std::string label() const;
    bool operator==(const AblationFlags&) const = default;

    // The eight flag combinations in ablation-table order.
    static std::vector<AblationFlags> all_combinations();
};

enum class Consensus { mean, median };

struct TrainConfig {
    int epochs = 100;
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    int folds = 3;
    int repeats = 10;
    std::uint64_t seed = 0;
    AblationFlags ablation;
    AminnConfig model;  // input_dim is filled from the data
    std::string volume_feature = "volume";
    bool normalize_on_all = false;
    Consensus consensus = Consensus::mean;
    StdMode std_mode = StdMode::population;
    double norm_epsilon = 1e-8;
    int bags_per_step = 1;  // gradients are averaged over this many bags per Adam step
    int threads = 1;

    void validate() const;  // throws InputError
    NormOptions norm_options() const;
};

struct TrainingCurve {
    // Per-epoch means over the training bags; index 0 is before any update.
    std::vector<double> total;
    std::vector<double> reconstruction;
    std::vector<double> bce;
};

struct FoldModel {
    AminnModel model;
    NormalizerState normalizer;
    TrainingCurve curve;
};

// Applies the ablation's lesion selection. Returns the input unchanged when
// flags.multi is set.
std::vector<Bag> select_instances(const std::vector<Bag>& bags,
                                  const std::vector<std::string>& feature_names,
                                  const TrainConfig& config);

// Stacks every instance of every bag into one n x F matrix.
Eigen::MatrixXd stack_instances(const std::vector<Bag>& bags);

// Normalized, unit-rescaled network input for one bag.
Eigen::MatrixXd prepare_bag(const NormalizerState& normalizer, const Bag& bag);

// Trains one model. `train_bags` must already have gone through
// select_instances. When `normalizer` is given it is used as is, otherwise
// one is fitted on the training instances.
FoldModel train_fold(const std::vector<Bag>& train_bags,
                     const std::vector<std::string>& feature_names, const TrainConfig& config,
                     std::uint64_t seed, const NormalizerState* normalizer = nullptr);

double predict_patient(const FoldModel& fold, const Bag& bag);

struct MetricSummary {
    double mean = 0.0;
    double std = 0.0;  // sample standard deviation over repeats
    double ci_low = 0.0;
    double ci_high = 0.0;
};

// Normal-approximation 95% interval: mean +- 1.96 std / sqrt(R).
MetricSummary aggregate_repeats(std::span<const double> values);

struct CvReport {
    std::string model_name;
    std::vector<std::string> patient_ids;
    std::vector<int> labels;
    std::vector<std::vector<double>> oof;  // [repeat][patient]
    std::vector<double> repeat_auc;
    std::vector<double> repeat_accuracy;
    MetricSummary auc;
    MetricSummary accuracy;
    std::vector<double> consensus;     // per patient, across repeats
    std::vector<int> prediction_count; // per patient
    int models_trained = 0;
    std::vector<std::uint64_t> model_fingerprints;  // [repeat * folds + fold]
    std::vector<double> final_train_loss;           // same indexing
};

CvReport run_cv(const std::vector<Bag>& bags, const std::vector<std::string>& feature_names,
                const TrainConfig& config);

struct LogisticOptions {
    double l2 = 1e-2;
    int iterations = 2000;
};

struct LogisticModel {
    Eigen::VectorXd weights;
    double bias = 0.0;

    double predict(const Eigen::Ref<const Eigen::RowVectorXd>& row) const;
};

// L2-penalised mean log-loss minimised by full-batch gradient descent with a
// step size bounded by the loss's Lipschitz constant.
LogisticModel fit_logistic(const Eigen::MatrixXd& rows, std::span<const int> labels,
                           const LogisticOptions& options = {});

// Largest lesion only, normalized per config.ablation.log, same CV protocol
// and splits as run_cv.
CvReport logistic_baseline(const std::vector<Bag>& bags,
                           const std::vector<std::string>& feature_names,
                           const TrainConfig& config, const LogisticOptions& options = {});

// 1 iff probability > median; ties at the median go to 0.
std::vector<int> median_dichotomize(std::span<const double> probabilities);

struct ComparisonRow {
    std::string name;
    CvReport report;
};

// Logistic baselines (plain, log) followed by the eight flag combinations.
std::vector<ComparisonRow> run_ablation(const std::vector<Bag>& bags,
                                        const std::vector<std::string>& feature_names,
                                        const TrainConfig& config,
                                        const LogisticOptions& logistic = {});

// One row per pooling method under config.ablation.
std::vector<ComparisonRow> run_pooling_comparison(const std::vector<Bag>& bags,
                                                  const std::vector<std::string>& feature_names,
                                                  const TrainConfig& config,
                                                  std::span<const Pooling> poolings);

std::string render_comparison_table(std::span<const ComparisonRow> rows);

void to_json(nlohmann::json& j, const AblationFlags& flags);
void from_json(const nlohmann::json& j, AblationFlags& flags);
void to_json(nlohmann::json& j, const TrainConfig& config);
void from_json(const nlohmann::json& j, TrainConfig& config);
void to_json(nlohmann::json& j, const MetricSummary& summary);
void to_json(nlohmann::json& j, const CvReport& report);

}  // namespace aminn
