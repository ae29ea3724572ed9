#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json_fwd.hpp>

#include "aminn/random.hpp"

namespace aminn {

enum class Activation { relu, sigmoid, tanh, linear };

std::string_view to_string(Activation activation);
Activation parse_activation(std::string_view name);

// Fully connected layer y = act(W x + b). Inputs are column-major batches:
// one column per instance, so a bag of k lesions is an in x k matrix.
struct DenseLayer {
    Eigen::MatrixXd weights;  // out x in
    Eigen::VectorXd biases;   // out
    Activation activation = Activation::linear;

    Eigen::Index in() const { return weights.cols(); }
    Eigen::Index out() const { return weights.rows(); }
};

// Glorot-uniform weights, zero biases.
DenseLayer make_dense(Eigen::Index in, Eigen::Index out, Activation activation, Rng& rng);

struct DenseForward {
    Eigen::MatrixXd input;  // in x n
    Eigen::MatrixXd pre;    // out x n
    Eigen::MatrixXd output; // out x n
};

struct LayerGrads {
    Eigen::MatrixXd weights;
    Eigen::VectorXd biases;

    static LayerGrads zeros_like(const DenseLayer& layer);
    LayerGrads& operator+=(const LayerGrads& other);
    LayerGrads& operator*=(double scale);
};

struct DenseBackward {
    Eigen::MatrixXd input_grad;  // in x n
    LayerGrads params;
};

DenseForward dense_forward(const DenseLayer& layer, const Eigen::MatrixXd& input);
DenseBackward dense_backward(const DenseLayer& layer, const DenseForward& cache,
                             const Eigen::MatrixXd& upstream);

// Folds the sign pattern of every relu pre-activation into `hash`. Two
// evaluations with the same pattern lie in the same linear piece.
void hash_relu_pattern(std::uint64_t& hash, const DenseLayer& layer, const DenseForward& cache);
void hash_value(std::uint64_t& hash, std::uint64_t value);

struct MseLoss {
    double loss = 0.0;
    Eigen::MatrixXd grad;
};

// Mean of squared differences over all entries; grad = 2 (p - t) / n.
MseLoss mse_loss(const Eigen::MatrixXd& prediction, const Eigen::MatrixXd& target);

inline constexpr double kBceClamp = 1e-7;

struct BceLoss {
    double loss = 0.0;
    double grad = 0.0;  // d loss / d p, evaluated at the clamped p
};

BceLoss bce_loss(double p, int y);

struct ParamBlock {
    std::string name;
    std::span<double> values;
};

struct ConstParamBlock {
    std::string name;
    std::span<const double> values;
};

std::span<double> flat_view(Eigen::MatrixXd& m);
std::span<double> flat_view(Eigen::VectorXd& v);
std::span<const double> flat_view(const Eigen::MatrixXd& m);
std::span<const double> flat_view(const Eigen::VectorXd& v);

struct AdamOptions {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct AdamState {
    AdamOptions options;
    long step_count = 0;
    std::vector<std::vector<double>> first_moment;
    std::vector<std::vector<double>> second_moment;

    static AdamState for_blocks(std::span<const ParamBlock> params, const AdamOptions& options);
};

// Bias-corrected Adam update, in place. Throws NumericError naming the block
// if any gradient is non-finite; parameters are untouched in that case.
void adam_step(AdamState& state, std::span<const ParamBlock> params,
               std::span<const ConstParamBlock> grads);

struct Evaluation {
    double value = 0.0;
    // Identifies the smooth piece the point lies on (relu pattern, argmax).
    std::uint64_t signature = 0;
};

struct GradientCheckOptions {
    double step = 1e-5;
    double tolerance = 1e-4;
    // Denominator floor of the relative error, so entries whose true
    // gradient is ~0 are judged on absolute error.
    double abs_floor = 1e-6;
};

struct BlockCheck {
    std::string name;
    double max_rel_error = 0.0;
    std::size_t checked = 0;
    std::size_t excluded = 0;  // perturbation crossed a kink
};

struct GradientCheckReport {
    std::vector<BlockCheck> blocks;
    double max_rel_error = 0.0;
    std::size_t checked = 0;
    std::size_t excluded = 0;
    bool passed = true;
};

// Central differences on every coordinate of `params`, compared against
// `analytic`. A coordinate whose +h/-h evaluations change the signature
// sits on a non-differentiable point and is excluded from the comparison.
GradientCheckReport gradient_check(const std::function<Evaluation()>& evaluate,
                                   std::span<const ParamBlock> params,
                                   std::span<const ConstParamBlock> analytic,
                                   const GradientCheckOptions& options = {});

void to_json(nlohmann::json& j, const DenseLayer& layer);
void from_json(const nlohmann::json& j, DenseLayer& layer);

}  // namespace aminn
