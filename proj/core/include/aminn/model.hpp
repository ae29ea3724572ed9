#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json_fwd.hpp>

#include "aminn/neuralnet.hpp"

namespace aminn {

enum class Pooling { max, average, lse, attention };

std::string_view to_string(Pooling pooling);
Pooling parse_pooling(std::string_view name);
inline constexpr std::string_view kPoolingNames = "max, average, lse, attention";

struct AminnConfig {
    Eigen::Index input_dim = 0;
    std::vector<Eigen::Index> encoder_widths{64, 32, 32, 16};
    std::vector<Eigen::Index> mil_widths{32, 32, 32};
    Pooling pooling = Pooling::average;
    double lse_r = 10.0;
    Eigen::Index attention_dim = 16;
    double alpha = 1.0;
    bool autoencoder = true;

    // Encoder widths reversed, ending at input_dim.
    std::vector<Eigen::Index> decoder_widths() const;
    Eigen::Index latent_dim() const { return encoder_widths.back(); }
    void validate() const;  // throws InputError
};

// Tanh attention: a = softmax_j(w^T tanh(V m_j)), m_j the last MIL hidden.
struct AttentionParams {
    Eigen::MatrixXd V;  // attention_dim x mil_widths.back()
    Eigen::VectorXd w;  // attention_dim
};

struct AminnModel {
    AminnConfig config;
    std::vector<DenseLayer> encoder;  // relu throughout, ends at the bottleneck
    std::vector<DenseLayer> decoder;  // empty when config.autoencoder is false; last is sigmoid
    std::vector<DenseLayer> mil;      // relu hidden layers
    DenseLayer score;                 // mil_widths.back() -> 1, sigmoid
    std::optional<AttentionParams> attention;

    std::vector<ParamBlock> parameters();
    std::vector<ConstParamBlock> parameters() const;
    std::size_t parameter_count() const;
};

AminnModel build_model(const AminnConfig& config, std::uint64_t seed);

struct AttentionGrads {
    Eigen::MatrixXd V;
    Eigen::VectorXd w;
};

// Mirrors AminnModel's layout; blocks() lines up with AminnModel::parameters().
struct AminnGrads {
    std::vector<LayerGrads> encoder;
    std::vector<LayerGrads> decoder;
    std::vector<LayerGrads> mil;
    LayerGrads score;
    std::optional<AttentionGrads> attention;

    static AminnGrads zeros_like(const AminnModel& model);
    AminnGrads& operator+=(const AminnGrads& other);
    AminnGrads& operator*=(double scale);
    std::vector<ConstParamBlock> blocks() const;
};

double pool(std::span<const double> scores, Pooling method, double lse_r,
            std::span<const double> attention_weights = {});

// Softmax over instances of w^T tanh(V h_j); `hidden` is d x k.
Eigen::VectorXd attention_weights(const Eigen::MatrixXd& hidden, const AttentionParams& params);

struct BagForward {
    std::vector<DenseForward> encoder;
    std::vector<DenseForward> decoder;
    std::vector<DenseForward> mil;
    DenseForward score;
    Eigen::MatrixXd attention_hidden;   // tanh(V M), attention only
    Eigen::VectorXd attention_weights;  // attention only
    Eigen::VectorXd scores;             // instance scores f_j in (0,1)
    double probability = 0.0;
    std::uint64_t signature = 0;

    const Eigen::MatrixXd& latent() const { return encoder.back().output; }  // latent_dim x k
    Eigen::Index instance_count() const { return scores.size(); }
};

// `bag_features` is k x input_dim, one lesion per row, already normalized
// and rescaled into [0,1].
BagForward forward_bag(const AminnModel& model, const Eigen::MatrixXd& bag_features);

struct BagLoss {
    double total = 0.0;
    double reconstruction = 0.0;
    double bce = 0.0;
    double probability = 0.0;
    AminnGrads grads;
    Eigen::MatrixXd latent_grad;  // d total / d latent, latent_dim x k
    std::uint64_t signature = 0;
};

// total = MSE(reconstruction, input) + alpha * BCE(p, label). The MSE term
// is absent when the model has no decoder.
BagLoss loss_and_grads(const AminnModel& model, const Eigen::MatrixXd& bag_features, int label);

double predict_bag(const AminnModel& model, const Eigen::MatrixXd& bag_features);

void to_json(nlohmann::json& j, const AminnConfig& config);
void from_json(const nlohmann::json& j, AminnConfig& config);
void to_json(nlohmann::json& j, const AminnModel& model);
void from_json(const nlohmann::json& j, AminnModel& model);

inline constexpr int kCheckpointVersion = 1;
void save_checkpoint(const std::filesystem::path& path, const AminnModel& model);
AminnModel load_checkpoint(const std::filesystem::path& path);

// Order-sensitive hash of every parameter's bit pattern.
std::uint64_t parameter_fingerprint(const AminnModel& model);

}  // namespace aminn
