#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace aminn {

// Survival months at or below which an observed death counts as a
// positive 3-year outcome.
inline constexpr double kLabelCutMonths = 36.0;

struct LesionRecord {
    std::string patient_id;
    std::string lesion_id;
    std::vector<double> features;
};

struct LesionTable {
    std::vector<std::string> feature_names;
    std::vector<LesionRecord> records;
};

struct PatientRecord {
    std::string patient_id;
    int label = 0;
    double survival_months = 0.0;
    int event = 0;
};

// 1 iff the death was observed within the label cut.
int outcome_label(double survival_months, int event);

struct Bag {
    std::string patient_id;
    std::vector<std::string> lesion_ids;  // one per instance row
    Eigen::MatrixXd instances;            // k x F, row j is lesion_ids[j]
    int label = 0;

    Eigen::Index size() const { return instances.rows(); }
    Eigen::Index feature_count() const { return instances.cols(); }

    bool operator==(const Bag& other) const;
};

LesionTable load_lesions(const std::filesystem::path& path);
std::vector<PatientRecord> load_patients(const std::filesystem::path& path);

void write_lesions(const std::filesystem::path& path, const LesionTable& table);
void write_patients(const std::filesystem::path& path, const std::vector<PatientRecord>& patients);

struct BagAssembly {
    std::vector<Bag> bags;                      // in patient-table order
    std::vector<std::string> excluded_patients; // patients with zero lesions
};

BagAssembly assemble_bags(const LesionTable& lesions, const std::vector<PatientRecord>& patients);

// Inverse of assemble_bags for the lesion side.
LesionTable lesion_table_from_bags(const std::vector<Bag>& bags,
                                   const std::vector<std::string>& feature_names);

// Keeps the instance with the largest value of the volume feature; ties go
// to the lexicographically smallest lesion_id.
Bag select_largest_lesion(const Bag& bag, Eigen::Index volume_feature_index);

std::size_t feature_index(const std::vector<std::string>& feature_names, const std::string& name);

struct SplitPlan {
    int repeats = 0;
    int folds = 0;
    std::uint64_t seed = 0;
    std::vector<std::string> patient_ids;        // bag order
    std::vector<std::vector<int>> assignments;   // [repeat][bag] -> fold

    int fold_of(int repeat, const std::string& patient_id) const;
    // Bag indices held out in (repeat, fold), ascending.
    std::vector<std::size_t> test_indices(int repeat, int fold) const;
    std::vector<std::size_t> train_indices(int repeat, int fold) const;
};

// Outcome-stratified repeated k-fold assignment. Each class is shuffled and
// dealt round-robin; the dealing position carries over from the positive to
// the negative class so fold sizes also stay within one of each other.
SplitPlan stratified_kfold(const std::vector<Bag>& bags, int folds, int repeats, std::uint64_t seed);
SplitPlan stratified_kfold(const std::vector<int>& labels, const std::vector<std::string>& ids,
                           int folds, int repeats, std::uint64_t seed);

}  // namespace aminn
