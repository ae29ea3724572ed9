#pragma once

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json_fwd.hpp>

namespace aminn {

struct SurvivalData {
    std::vector<std::string> subject_ids;
    std::vector<double> times;
    std::vector<int> events;
    Eigen::MatrixXd covariates;  // n x p
    std::vector<std::string> covariate_names;

    Eigen::Index size() const { return static_cast<Eigen::Index>(times.size()); }
    SurvivalData select_columns(std::span<const Eigen::Index> columns) const;
};

// Input CSV: patient_id,survival_months,event,<score_1>,...
SurvivalData load_survival_csv(const std::string& path);

enum class TieMethod { efron, breslow };

std::string_view to_string(TieMethod ties);

struct CoxOptions {
    TieMethod ties = TieMethod::efron;
    int max_iterations = 100;
    double gradient_tolerance = 1e-9;
    double divergence_bound = 50.0;
    int max_step_halvings = 40;
};

struct CoxFit {
    std::vector<std::string> names;
    Eigen::VectorXd beta;
    Eigen::VectorXd std_error;
    Eigen::VectorXd hazard_ratio;
    Eigen::VectorXd hr_lower;
    Eigen::VectorXd hr_upper;
    Eigen::VectorXd z;
    Eigen::VectorXd p_value;
    double log_likelihood = 0.0;
    double concordance = 0.0;
    int iterations = 0;
    double gradient_norm = 0.0;
    bool converged = false;
    std::vector<double> log_likelihood_trace;  // one entry per accepted iterate
};

struct CoxDerivatives {
    double log_likelihood = 0.0;
    Eigen::VectorXd gradient;
    Eigen::MatrixXd hessian;
};

// Partial log-likelihood and its first two derivatives at beta.
CoxDerivatives cox_partial_likelihood(const SurvivalData& data, const Eigen::VectorXd& beta,
                                      TieMethod ties = TieMethod::efron);

// Newton-Raphson with step halving. Throws RankDeficiencyError,
// SeparationError or InputError on violated preconditions.
CoxFit cox_fit(const SurvivalData& data, const CoxOptions& options = {});

// Harrell's c. Pair (i,j) is comparable when t_i < t_j and subject i had an
// event; tied risks count 1/2. Pairs with equal times are not comparable.
double concordance_index(std::span<const double> times, std::span<const int> events,
                         std::span<const double> risks);

// Benjamini-Hochberg step-up adjusted p-values, in input order.
std::vector<double> bh_correct(std::span<const double> p_values);

// Two-sided normal tail probability, floored at the smallest normal double.
double wald_p_value(double z);

struct BiomarkerRow {
    std::string name;
    std::optional<CoxFit> fit;  // univariate
    std::string error;          // set when fit is empty
    std::optional<double> q_value;
};

struct BiomarkerTable {
    std::vector<BiomarkerRow> univariate;
    std::optional<CoxFit> multivariable;
    std::string multivariable_error;
    std::vector<double> multivariable_q;  // per column, BH over the joint fit's p-values
};

// One univariate fit per covariate column, one joint fit over all columns,
// BH-adjusted q-values per section. Failures are recorded per row.
BiomarkerTable biomarker_table(const SurvivalData& data, const CoxOptions& options = {});

std::string render_biomarker_table(const BiomarkerTable& table);

void to_json(nlohmann::json& j, const CoxFit& fit);
void to_json(nlohmann::json& j, const BiomarkerTable& table);

}  // namespace aminn
