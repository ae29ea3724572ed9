#include "aminn/neuralnet.hpp"

#include <algorithm>
#include <bit>
#include <cmath>

#include <nlohmann/json.hpp>

#include "aminn/error.hpp"

namespace aminn {
namespace {

Eigen::MatrixXd activate(Activation act, const Eigen::MatrixXd& pre) {
    switch (act) {
        case Activation::relu: return pre.cwiseMax(0.0);
        case Activation::sigmoid: return (1.0 + (-pre.array()).exp()).inverse().matrix();
        case Activation::tanh: return pre.array().tanh().matrix();
        case Activation::linear: return pre;
    }
    return pre;
}

// d out / d pre, elementwise.
Eigen::ArrayXXd activation_slope(Activation act, const DenseForward& c) {
    switch (act) {
        case Activation::relu: return (c.pre.array() > 0.0).cast<double>();
        case Activation::sigmoid: return c.output.array() * (1.0 - c.output.array());
        case Activation::tanh: return 1.0 - c.output.array().square();
        case Activation::linear: return Eigen::ArrayXXd::Ones(c.pre.rows(), c.pre.cols());
    }
    return {};
}

std::string shape(const Eigen::MatrixXd& m) {
    return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

}  // namespace

std::string_view to_string(Activation activation) {
    switch (activation) {
        case Activation::relu: return "relu";
        case Activation::sigmoid: return "sigmoid";
        case Activation::tanh: return "tanh";
        case Activation::linear: return "linear";
    }
    return "linear";
}

Activation parse_activation(std::string_view name) {
    if (name == "relu") return Activation::relu;
    if (name == "sigmoid") return Activation::sigmoid;
    if (name == "tanh") return Activation::tanh;
    if (name == "linear") return Activation::linear;
    throw InputError("unknown activation '" + std::string(name) + "'");
}

DenseLayer make_dense(Eigen::Index in, Eigen::Index out, Activation activation, Rng& rng) {
    if (in < 1 || out < 1) throw InputError("dense layer widths must be >= 1");
    const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
    std::uniform_real_distribution<double> dist(-limit, limit);
    DenseLayer layer;
    layer.weights.resize(out, in);
    // Row-major fill so the draw order does not depend on Eigen's storage order.
    for (Eigen::Index r = 0; r < out; ++r) {
        for (Eigen::Index c = 0; c < in; ++c) layer.weights(r, c) = dist(rng);
    }
    layer.biases = Eigen::VectorXd::Zero(out);
    layer.activation = activation;
    return layer;
}

LayerGrads LayerGrads::zeros_like(const DenseLayer& layer) {
    return {Eigen::MatrixXd::Zero(layer.out(), layer.in()), Eigen::VectorXd::Zero(layer.out())};
}

LayerGrads& LayerGrads::operator+=(const LayerGrads& other) {
    weights += other.weights;
    biases += other.biases;
    return *this;
}

LayerGrads& LayerGrads::operator*=(double scale) {
    weights *= scale;
    biases *= scale;
    return *this;
}

DenseForward dense_forward(const DenseLayer& layer, const Eigen::MatrixXd& input) {
    if (input.rows() != layer.in()) {
        throw InputError("dense_forward: layer expects " + std::to_string(layer.in()) +
                         " inputs, got " + shape(input));
    }
    DenseForward f;
    f.input = input;
    f.pre = layer.weights * input;
    f.pre.colwise() += layer.biases;
    f.output = activate(layer.activation, f.pre);
    return f;
}

DenseBackward dense_backward(const DenseLayer& layer, const DenseForward& cache,
                             const Eigen::MatrixXd& upstream) {
    if (cache.input.rows() != layer.in() || cache.pre.rows() != layer.out() ||
        cache.output.rows() != layer.out() || cache.pre.cols() != cache.input.cols() ||
        cache.output.cols() != cache.input.cols()) {
        throw InputError("dense_backward: cache (input " + shape(cache.input) + ") does not match layer " +
                         std::to_string(layer.out()) + "x" + std::to_string(layer.in()));
    }
    if (upstream.rows() != layer.out() || upstream.cols() != cache.input.cols()) {
        throw InputError("dense_backward: upstream gradient " + shape(upstream) + ", expected " +
                         shape(cache.output));
    }
    const Eigen::MatrixXd delta = (upstream.array() * activation_slope(layer.activation, cache)).matrix();
    DenseBackward b;
    b.params.weights = delta * cache.input.transpose();
    b.params.biases = delta.rowwise().sum();
    b.input_grad = layer.weights.transpose() * delta;
    return b;
}

void hash_value(std::uint64_t& hash, std::uint64_t value) {
    // FNV-1a over the 8 bytes of value.
    for (int i = 0; i < 8; ++i) {
        hash ^= (value >> (8 * i)) & 0xffU;
        hash *= 0x100000001b3ULL;
    }
}

void hash_relu_pattern(std::uint64_t& hash, const DenseLayer& layer, const DenseForward& cache) {
    if (layer.activation != Activation::relu) return;
    std::uint64_t word = 0;
    int bits = 0;
    for (Eigen::Index c = 0; c < cache.pre.cols(); ++c) {
        for (Eigen::Index r = 0; r < cache.pre.rows(); ++r) {
            word = (word << 1) | (cache.pre(r, c) > 0.0 ? 1U : 0U);
            if (++bits == 64) {
                hash_value(hash, word);
                word = 0;
                bits = 0;
            }
        }
    }
    hash_value(hash, word ^ (static_cast<std::uint64_t>(bits) << 56));
}

MseLoss mse_loss(const Eigen::MatrixXd& prediction, const Eigen::MatrixXd& target) {
    if (prediction.rows() != target.rows() || prediction.cols() != target.cols()) {
        throw InputError("mse_loss: prediction " + shape(prediction) + " vs target " + shape(target));
    }
    const double n = static_cast<double>(prediction.size());
    if (n == 0) throw InputError("mse_loss: empty input");
    const Eigen::MatrixXd diff = prediction - target;
    return {diff.squaredNorm() / n, 2.0 * diff / n};
}

BceLoss bce_loss(double p, int y) {
    const double pc = std::clamp(p, kBceClamp, 1.0 - kBceClamp);
    if (y == 1) return {-std::log(pc), -1.0 / pc};
    return {-std::log1p(-pc), 1.0 / (1.0 - pc)};
}

std::span<double> flat_view(Eigen::MatrixXd& m) {
    return {m.data(), static_cast<std::size_t>(m.size())};
}
std::span<double> flat_view(Eigen::VectorXd& v) {
    return {v.data(), static_cast<std::size_t>(v.size())};
}
std::span<const double> flat_view(const Eigen::MatrixXd& m) {
    return {m.data(), static_cast<std::size_t>(m.size())};
}
std::span<const double> flat_view(const Eigen::VectorXd& v) {
    return {v.data(), static_cast<std::size_t>(v.size())};
}

AdamState AdamState::for_blocks(std::span<const ParamBlock> params, const AdamOptions& options) {
    AdamState s;
    s.options = options;
    for (const auto& block : params) {
        s.first_moment.emplace_back(block.values.size(), 0.0);
        s.second_moment.emplace_back(block.values.size(), 0.0);
    }
    return s;
}

void adam_step(AdamState& state, std::span<const ParamBlock> params,
               std::span<const ConstParamBlock> grads) {
    if (params.size() != grads.size() || params.size() != state.first_moment.size()) {
        throw InputError("adam_step: parameter/gradient/state block counts differ");
    }
    for (std::size_t b = 0; b < params.size(); ++b) {
        if (params[b].values.size() != grads[b].values.size() ||
            params[b].values.size() != state.first_moment[b].size()) {
            throw InputError("adam_step: shape mismatch in block " + params[b].name);
        }
        for (double g : grads[b].values) {
            if (!std::isfinite(g)) throw NumericError("adam_step: non-finite gradient in " + grads[b].name);
        }
    }
    const auto& o = state.options;
    ++state.step_count;
    const double t = static_cast<double>(state.step_count);
    const double c1 = 1.0 - std::pow(o.beta1, t);
    const double c2 = 1.0 - std::pow(o.beta2, t);
    for (std::size_t b = 0; b < params.size(); ++b) {
        auto& m = state.first_moment[b];
        auto& v = state.second_moment[b];
        const auto g = grads[b].values;
        const auto p = params[b].values;
        for (std::size_t i = 0; i < p.size(); ++i) {
            m[i] = o.beta1 * m[i] + (1.0 - o.beta1) * g[i];
            v[i] = o.beta2 * v[i] + (1.0 - o.beta2) * g[i] * g[i];
            const double m_hat = m[i] / c1;
            const double v_hat = v[i] / c2;
            p[i] -= o.lr * m_hat / (std::sqrt(v_hat) + o.eps);
        }
    }
}

GradientCheckReport gradient_check(const std::function<Evaluation()>& evaluate,
                                   std::span<const ParamBlock> params,
                                   std::span<const ConstParamBlock> analytic,
                                   const GradientCheckOptions& options) {
    if (params.size() != analytic.size()) {
        throw InputError("gradient_check: parameter and gradient block counts differ");
    }
    GradientCheckReport report;
    const std::uint64_t base_signature = evaluate().signature;
    const double h = options.step;
    for (std::size_t b = 0; b < params.size(); ++b) {
        if (params[b].values.size() != analytic[b].values.size()) {
            throw InputError("gradient_check: shape mismatch in block " + params[b].name);
        }
        BlockCheck check;
        check.name = params[b].name;
        for (std::size_t i = 0; i < params[b].values.size(); ++i) {
            double& x = params[b].values[i];
            const double saved = x;
            x = saved + h;
            const Evaluation plus = evaluate();
            x = saved - h;
            const Evaluation minus = evaluate();
            x = saved;
            if (plus.signature != base_signature || minus.signature != base_signature) {
                ++check.excluded;
                continue;
            }
            const double numeric = (plus.value - minus.value) / (2.0 * h);
            const double exact = analytic[b].values[i];
            const double denom = std::max({std::abs(numeric), std::abs(exact), options.abs_floor});
            check.max_rel_error = std::max(check.max_rel_error, std::abs(numeric - exact) / denom);
            ++check.checked;
        }
        report.max_rel_error = std::max(report.max_rel_error, check.max_rel_error);
        report.checked += check.checked;
        report.excluded += check.excluded;
        report.blocks.push_back(std::move(check));
    }
    report.passed = report.max_rel_error < options.tolerance;
    return report;
}

void to_json(nlohmann::json& j, const DenseLayer& layer) {
    std::vector<double> w;
    w.reserve(static_cast<std::size_t>(layer.weights.size()));
    for (Eigen::Index r = 0; r < layer.out(); ++r) {
        for (Eigen::Index c = 0; c < layer.in(); ++c) w.push_back(layer.weights(r, c));
    }
    j = nlohmann::json{{"in", layer.in()},
                       {"out", layer.out()},
                       {"activation", to_string(layer.activation)},
                       {"weights", w},
                       {"biases", std::vector<double>(layer.biases.begin(), layer.biases.end())}};
}

void from_json(const nlohmann::json& j, DenseLayer& layer) {
    const auto in = j.at("in").get<Eigen::Index>();
    const auto out = j.at("out").get<Eigen::Index>();
    const auto w = j.at("weights").get<std::vector<double>>();
    const auto b = j.at("biases").get<std::vector<double>>();
    if (in < 1 || out < 1 || static_cast<Eigen::Index>(w.size()) != in * out ||
        static_cast<Eigen::Index>(b.size()) != out) {
        throw InputError("checkpoint: dense layer shape does not match its parameter arrays");
    }
    layer.activation = parse_activation(j.at("activation").get<std::string>());
    layer.weights.resize(out, in);
    for (Eigen::Index r = 0; r < out; ++r) {
        for (Eigen::Index c = 0; c < in; ++c) layer.weights(r, c) = w[static_cast<std::size_t>(r * in + c)];
    }
    layer.biases = Eigen::Map<const Eigen::VectorXd>(b.data(), out);
}

}  // namespace aminn
