#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string_view>
#include <vector>

#include "aminn/bagdata.hpp"

namespace aminn {

enum class LabelMechanism { largest_only, aggregate_mean, aggregate_max };

std::string_view to_string(LabelMechanism mechanism);
LabelMechanism parse_mechanism(std::string_view name);
inline constexpr std::string_view kMechanismNames = "largest_only, aggregate_mean, aggregate_max";

struct SynthConfig {
    int n_patients = 60;
    int min_lesions = 2;
    int max_lesions = 6;
    int n_features = 20;  // feature 0 is "volume"
    int informative_features = 5;
    LabelMechanism mechanism = LabelMechanism::aggregate_mean;
    double censor_rate = 0.2;
    double feature_skew = 1.0;  // sigma of the underlying normal
    double effect_size = 2.0;   // log-hazard per unit of aggregated lesion score
    // Monthly hazard at zero risk; ln(0.6)/36 puts ~40% of deaths inside 3 years.
    double baseline_hazard = 0.014189;
    // false: every patient dies at the median of their exponential law, so
    // labels are a deterministic function of risk.
    bool stochastic_times = true;
    std::uint64_t seed = 0;

    void validate() const;  // throws InputError
};

// Raw feature = offset + scale * exp(skew * z), z ~ N(0,1).
struct FeatureLaw {
    double offset = 0.0;
    double scale = 1.0;
};

struct SynthDataset {
    SynthConfig config;
    LesionTable lesions;
    std::vector<PatientRecord> patients;
    std::vector<double> true_risk;  // per patient, same order as patients
    std::vector<FeatureLaw> laws;   // per feature
};

SynthDataset generate(const SynthConfig& config);

// Standardized lesion score: mean of the informative z values scaled by 1/sqrt(m).
double lesion_score(const SynthDataset& dataset, std::span<const double> raw_features);

// Uncentered log-hazard of a bag of raw lesion features under `mechanism`.
double bag_risk(const SynthDataset& dataset, const Bag& bag, LabelMechanism mechanism);

// AUC of the generating risk against realized labels.
double oracle_auc(const SynthDataset& dataset);
// Same, recomputing the risk from `bags` (raw features) under another mechanism.
double oracle_auc(const SynthDataset& dataset, const std::vector<Bag>& bags,
                  LabelMechanism mechanism);

void write_truth(const std::filesystem::path& path, const SynthDataset& dataset);

}  // namespace aminn
