#pragma once

#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json_fwd.hpp>

namespace aminn {

enum class NormScheme { zscore, twostep };

// Denominator used for the Z-score standard deviation.
enum class StdMode { population, sample };

std::string_view to_string(NormScheme scheme);
NormScheme parse_norm_scheme(std::string_view name);

struct NormOptions {
    NormScheme scheme = NormScheme::twostep;
    StdMode std_mode = StdMode::population;
    double epsilon = 1e-8;
};

// Per-feature statistics fitted on training rows. Vectors are indexed by
// the original feature column; dropped columns keep their raw statistics
// but are removed by transform().
struct NormalizerState {
    NormOptions options;
    std::vector<std::string> feature_names;
    std::vector<double> min;
    std::vector<double> median;
    std::vector<double> mean;     // of the log values for twostep, raw for zscore
    std::vector<double> stddev;
    std::vector<double> post_min;  // Z-score bounds on the fit rows
    std::vector<double> post_max;
    std::vector<bool> dropped;

    Eigen::Index input_dim() const { return static_cast<Eigen::Index>(min.size()); }
    Eigen::Index output_dim() const;
    std::vector<std::string> kept_feature_names() const;
    std::vector<std::string> dropped_feature_names() const;

    // Argument of the log step for raw value `value` in column j, floored at epsilon.
    double log_argument(std::size_t j, double value) const;
};

NormalizerState fit_normalizer(const Eigen::MatrixXd& rows, const NormOptions& options,
                               std::vector<std::string> feature_names = {});

Eigen::MatrixXd transform(const NormalizerState& state, const Eigen::MatrixXd& rows);

// Min-max maps transformed rows into [0,1] using the fit-time Z bounds.
// Values outside the bounds clamp; degenerate bounds map to 0.5.
Eigen::MatrixXd rescale_unit_interval(const NormalizerState& state, const Eigen::MatrixXd& rows);

// Adjusted Fisher-Pearson standardized moment coefficient G1.
double skewness(const Eigen::Ref<const Eigen::VectorXd>& column);

double median_of(std::vector<double> values);

void to_json(nlohmann::json& j, const NormalizerState& state);
void from_json(const nlohmann::json& j, NormalizerState& state);

}  // namespace aminn
