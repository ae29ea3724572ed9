#include "aminn/featnorm.hpp"

#include <algorithm>
#include <cmath>

#include <nlohmann/json.hpp>

#include "aminn/error.hpp"

namespace aminn {
namespace {

constexpr double kConstantTolerance = 1e-12;

double column_std(const Eigen::Ref<const Eigen::VectorXd>& v, double mean, StdMode mode) {
    const double n = static_cast<double>(v.size());
    const double ss = (v.array() - mean).square().sum();
    const double denom = mode == StdMode::population ? n : n - 1.0;
    return std::sqrt(ss / denom);
}

}  // namespace

std::string_view to_string(NormScheme scheme) {
    return scheme == NormScheme::twostep ? "twostep" : "zscore";
}

NormScheme parse_norm_scheme(std::string_view name) {
    if (name == "twostep") return NormScheme::twostep;
    if (name == "zscore") return NormScheme::zscore;
    throw InputError("unknown normalization scheme '" + std::string(name) +
                     "' (expected twostep, zscore)");
}

double median_of(std::vector<double> values) {
    if (values.empty()) throw InputError("median of empty column");
    const std::size_t n = values.size();
    const auto mid = values.begin() + static_cast<std::ptrdiff_t>(n / 2);
    std::nth_element(values.begin(), mid, values.end());
    if (n % 2 == 1) return *mid;
    const double upper = *mid;
    const double lower = *std::max_element(values.begin(), mid);
    return 0.5 * (lower + upper);
}

Eigen::Index NormalizerState::output_dim() const {
    return static_cast<Eigen::Index>(std::count(dropped.begin(), dropped.end(), false));
}

std::vector<std::string> NormalizerState::kept_feature_names() const {
    std::vector<std::string> out;
    for (std::size_t j = 0; j < dropped.size(); ++j) {
        if (!dropped[j]) out.push_back(j < feature_names.size() ? feature_names[j] : std::to_string(j));
    }
    return out;
}

std::vector<std::string> NormalizerState::dropped_feature_names() const {
    std::vector<std::string> out;
    for (std::size_t j = 0; j < dropped.size(); ++j) {
        if (dropped[j]) out.push_back(j < feature_names.size() ? feature_names[j] : std::to_string(j));
    }
    return out;
}

double NormalizerState::log_argument(std::size_t j, double value) const {
    const double arg = value - 2.0 * min[j] + median[j] + options.epsilon;
    return std::max(arg, options.epsilon);
}

NormalizerState fit_normalizer(const Eigen::MatrixXd& rows, const NormOptions& options,
                               std::vector<std::string> feature_names) {
    if (rows.rows() < 2) throw InputError("normalizer needs at least 2 rows");
    if (!rows.allFinite()) throw InputError("normalizer input contains non-finite values");
    if (options.epsilon <= 0.0) throw InputError("normalizer epsilon must be positive");
    const Eigen::Index F = rows.cols();
    if (!feature_names.empty() && static_cast<Eigen::Index>(feature_names.size()) != F) {
        throw InputError("feature name count does not match column count");
    }

    NormalizerState s;
    s.options = options;
    s.feature_names = std::move(feature_names);
    const auto n = static_cast<std::size_t>(F);
    s.min.resize(n);
    s.median.resize(n);
    s.mean.resize(n);
    s.stddev.resize(n);
    s.post_min.resize(n);
    s.post_max.resize(n);
    s.dropped.assign(n, false);

    for (Eigen::Index j = 0; j < F; ++j) {
        const auto u = static_cast<std::size_t>(j);
        Eigen::VectorXd col = rows.col(j);
        s.min[u] = col.minCoeff();
        s.median[u] = median_of(std::vector<double>(col.begin(), col.end()));
        if (options.scheme == NormScheme::twostep) {
            for (Eigen::Index i = 0; i < col.size(); ++i) col(i) = std::log(s.log_argument(u, col(i)));
        }
        s.mean[u] = col.mean();
        s.stddev[u] = column_std(col, s.mean[u], options.std_mode);
        const double scale = std::max(1.0, std::abs(s.mean[u]));
        if (!(s.stddev[u] > kConstantTolerance * scale)) {
            s.dropped[u] = true;
            s.post_min[u] = s.post_max[u] = 0.0;
            continue;
        }
        s.post_min[u] = (col.minCoeff() - s.mean[u]) / s.stddev[u];
        s.post_max[u] = (col.maxCoeff() - s.mean[u]) / s.stddev[u];
    }
    if (s.output_dim() == 0) throw InputError("every feature column is constant on the fit rows");
    return s;
}

Eigen::MatrixXd transform(const NormalizerState& state, const Eigen::MatrixXd& rows) {
    if (rows.cols() != state.input_dim()) {
        throw InputError("transform: expected " + std::to_string(state.input_dim()) +
                         " columns, got " + std::to_string(rows.cols()));
    }
    Eigen::MatrixXd out(rows.rows(), state.output_dim());
    Eigen::Index k = 0;
    for (Eigen::Index j = 0; j < rows.cols(); ++j) {
        const auto u = static_cast<std::size_t>(j);
        if (state.dropped[u]) continue;
        for (Eigen::Index i = 0; i < rows.rows(); ++i) {
            double v = rows(i, j);
            if (state.options.scheme == NormScheme::twostep) v = std::log(state.log_argument(u, v));
            out(i, k) = (v - state.mean[u]) / state.stddev[u];
        }
        ++k;
    }
    return out;
}

Eigen::MatrixXd rescale_unit_interval(const NormalizerState& state, const Eigen::MatrixXd& rows) {
    if (rows.cols() != state.output_dim()) {
        throw InputError("rescale: expected " + std::to_string(state.output_dim()) +
                         " columns, got " + std::to_string(rows.cols()));
    }
    Eigen::MatrixXd out(rows.rows(), rows.cols());
    Eigen::Index k = 0;
    for (std::size_t u = 0; u < state.dropped.size(); ++u) {
        if (state.dropped[u]) continue;
        const double lo = state.post_min[u];
        const double hi = state.post_max[u];
        for (Eigen::Index i = 0; i < rows.rows(); ++i) {
            out(i, k) = hi > lo ? std::clamp((rows(i, k) - lo) / (hi - lo), 0.0, 1.0) : 0.5;
        }
        ++k;
    }
    return out;
}

double skewness(const Eigen::Ref<const Eigen::VectorXd>& column) {
    const Eigen::Index n = column.size();
    if (n < 3) throw InputError("skewness needs at least 3 values");
    const double mean = column.mean();
    const Eigen::ArrayXd d = column.array() - mean;
    const double m2 = d.square().mean();
    const double m3 = d.cube().mean();
    if (!(m2 > 0.0)) throw InputError("skewness undefined for a constant column");
    const double g1 = m3 / std::pow(m2, 1.5);
    const double nn = static_cast<double>(n);
    return g1 * std::sqrt(nn * (nn - 1.0)) / (nn - 2.0);
}

void to_json(nlohmann::json& j, const NormalizerState& s) {
    j = nlohmann::json{
        {"scheme", to_string(s.options.scheme)},
        {"std_mode", s.options.std_mode == StdMode::population ? "population" : "sample"},
        {"epsilon", s.options.epsilon},
        {"feature_names", s.feature_names},
        {"min", s.min},
        {"median", s.median},
        {"mean", s.mean},
        {"stddev", s.stddev},
        {"post_min", s.post_min},
        {"post_max", s.post_max},
        {"dropped", s.dropped},
        {"dropped_features", s.dropped_feature_names()},
    };
}

void from_json(const nlohmann::json& j, NormalizerState& s) {
    s.options.scheme = parse_norm_scheme(j.at("scheme").get<std::string>());
    s.options.std_mode = j.at("std_mode").get<std::string>() == "sample" ? StdMode::sample
                                                                          : StdMode::population;
    s.options.epsilon = j.at("epsilon").get<double>();
    s.feature_names = j.at("feature_names").get<std::vector<std::string>>();
    s.min = j.at("min").get<std::vector<double>>();
    s.median = j.at("median").get<std::vector<double>>();
    s.mean = j.at("mean").get<std::vector<double>>();
    s.stddev = j.at("stddev").get<std::vector<double>>();
    s.post_min = j.at("post_min").get<std::vector<double>>();
    s.post_max = j.at("post_max").get<std::vector<double>>();
    s.dropped = j.at("dropped").get<std::vector<bool>>();
    const std::size_t n = s.min.size();
    for (const auto* v : {&s.median, &s.mean, &s.stddev, &s.post_min, &s.post_max}) {
        if (v->size() != n) throw InputError("normalizer JSON: inconsistent vector lengths");
    }
    if (s.dropped.size() != n) throw InputError("normalizer JSON: inconsistent vector lengths");
}

}  // namespace aminn
