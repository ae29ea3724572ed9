#include "aminn/model.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include <nlohmann/json.hpp>

#include "aminn/csv.hpp"
#include "aminn/error.hpp"

namespace aminn {
namespace {

struct PoolGrad {
    double p = 0.0;
    Eigen::VectorXd d_scores;     // dp / ds_j
    Eigen::VectorXd d_attention;  // dp / du_j (attention logits), attention only
    Eigen::Index argmax = -1;
};

Eigen::VectorXd softmax(const Eigen::VectorXd& x) {
    const double m = x.maxCoeff();
    Eigen::VectorXd e = (x.array() - m).exp().matrix();
    return e / e.sum();
}

PoolGrad pool_with_grad(const Eigen::VectorXd& s, Pooling method, double r, const Eigen::VectorXd& a) {
    const Eigen::Index k = s.size();
    if (k == 0) throw InputError("pool: empty score list");
    PoolGrad g;
    g.d_scores = Eigen::VectorXd::Zero(k);
    switch (method) {
        case Pooling::max: {
            s.maxCoeff(&g.argmax);
            g.p = s(g.argmax);
            g.d_scores(g.argmax) = 1.0;
            break;
        }
        case Pooling::average: {
            g.p = s.mean();
            g.d_scores.setConstant(1.0 / static_cast<double>(k));
            break;
        }
        case Pooling::lse: {
            if (!(r > 0.0)) throw InputError("pool: lse_r must be positive");
            const double m = s.maxCoeff();
            const Eigen::ArrayXd e = (r * (s.array() - m)).exp();
            g.p = m + std::log(e.sum() / static_cast<double>(k)) / r;
            g.d_scores = (e / e.sum()).matrix();
            break;
        }
        case Pooling::attention: {
            if (a.size() != k) throw InputError("pool: attention weights must match the score count");
            g.p = a.dot(s);
            g.d_scores = a;
            g.d_attention = (a.array() * (s.array() - g.p)).matrix();
            break;
        }
    }
    return g;
}

std::string block_name(std::string_view group, std::size_t index, std::string_view part) {
    return std::string(group) + "." + std::to_string(index) + "." + std::string(part);
}

template <typename Layers, typename Fn>
void for_each_layer_block(Layers& layers, std::string_view group, Fn&& fn) {
    for (std::size_t i = 0; i < layers.size(); ++i) {
        fn(block_name(group, i, "weight"), layers[i].weights);
        fn(block_name(group, i, "bias"), layers[i].biases);
    }
}

}  // namespace

std::string_view to_string(Pooling pooling) {
    switch (pooling) {
        case Pooling::max: return "max";
        case Pooling::average: return "average";
        case Pooling::lse: return "lse";
        case Pooling::attention: return "attention";
    }
    return "average";
}

Pooling parse_pooling(std::string_view name) {
    if (name == "max") return Pooling::max;
    if (name == "average" || name == "mean") return Pooling::average;
    if (name == "lse") return Pooling::lse;
    if (name == "attention" || name == "att") return Pooling::attention;
    throw InputError("unknown pooling '" + std::string(name) + "' (expected " +
                     std::string(kPoolingNames) + ")");
}

std::vector<Eigen::Index> AminnConfig::decoder_widths() const {
    std::vector<Eigen::Index> widths(encoder_widths.rbegin() + 1, encoder_widths.rend());
    widths.push_back(input_dim);
    return widths;
}

void AminnConfig::validate() const {
    if (input_dim < 1) throw InputError("model input_dim must be >= 1");
    if (encoder_widths.empty()) throw InputError("encoder needs at least one layer");
    if (mil_widths.empty()) throw InputError("MIL head needs at least one hidden layer");
    for (auto w : encoder_widths) {
        if (w < 1) throw InputError("encoder widths must be >= 1");
    }
    for (auto w : mil_widths) {
        if (w < 1) throw InputError("MIL widths must be >= 1");
    }
    if (pooling == Pooling::lse && !(lse_r > 0.0)) throw InputError("lse_r must be positive");
    if (pooling == Pooling::attention && attention_dim < 1) throw InputError("attention_dim must be >= 1");
    if (!std::isfinite(alpha) || alpha < 0.0) throw InputError("alpha must be finite and >= 0");
}

std::vector<ParamBlock> AminnModel::parameters() {
    std::vector<ParamBlock> out;
    auto add = [&](std::string name, auto& tensor) { out.push_back({std::move(name), flat_view(tensor)}); };
    for_each_layer_block(encoder, "encoder", add);
    for_each_layer_block(decoder, "decoder", add);
    for_each_layer_block(mil, "mil", add);
    add("score.weight", score.weights);
    add("score.bias", score.biases);
    if (attention) {
        add("attention.V", attention->V);
        add("attention.w", attention->w);
    }
    return out;
}

std::vector<ConstParamBlock> AminnModel::parameters() const {
    std::vector<ConstParamBlock> out;
    for (auto& block : const_cast<AminnModel*>(this)->parameters()) {
        out.push_back({std::move(block.name), block.values});
    }
    return out;
}

std::size_t AminnModel::parameter_count() const {
    std::size_t n = 0;
    for (const auto& b : parameters()) n += b.values.size();
    return n;
}

AminnModel build_model(const AminnConfig& config, std::uint64_t seed) {
    config.validate();
    Rng rng(seed);
    AminnModel m;
    m.config = config;
    Eigen::Index in = config.input_dim;
    for (auto w : config.encoder_widths) {
        m.encoder.push_back(make_dense(in, w, Activation::relu, rng));
        in = w;
    }
    const Eigen::Index latent = in;
    if (config.autoencoder) {
        const auto widths = config.decoder_widths();
        for (std::size_t i = 0; i < widths.size(); ++i) {
            const bool last = i + 1 == widths.size();
            m.decoder.push_back(make_dense(in, widths[i], last ? Activation::sigmoid : Activation::relu, rng));
            in = widths[i];
        }
    }
    in = latent;
    for (auto w : config.mil_widths) {
        m.mil.push_back(make_dense(in, w, Activation::relu, rng));
        in = w;
    }
    m.score = make_dense(in, 1, Activation::sigmoid, rng);
    if (config.pooling == Pooling::attention) {
        DenseLayer v = make_dense(in, config.attention_dim, Activation::tanh, rng);
        DenseLayer w = make_dense(config.attention_dim, 1, Activation::linear, rng);
        m.attention = AttentionParams{std::move(v.weights), w.weights.row(0).transpose()};
    }
    return m;
}

AminnGrads AminnGrads::zeros_like(const AminnModel& model) {
    AminnGrads g;
    for (const auto& l : model.encoder) g.encoder.push_back(LayerGrads::zeros_like(l));
    for (const auto& l : model.decoder) g.decoder.push_back(LayerGrads::zeros_like(l));
    for (const auto& l : model.mil) g.mil.push_back(LayerGrads::zeros_like(l));
    g.score = LayerGrads::zeros_like(model.score);
    if (model.attention) {
        g.attention = AttentionGrads{Eigen::MatrixXd::Zero(model.attention->V.rows(), model.attention->V.cols()),
                                     Eigen::VectorXd::Zero(model.attention->w.size())};
    }
    return g;
}

AminnGrads& AminnGrads::operator+=(const AminnGrads& o) {
    for (std::size_t i = 0; i < encoder.size(); ++i) encoder[i] += o.encoder[i];
    for (std::size_t i = 0; i < decoder.size(); ++i) decoder[i] += o.decoder[i];
    for (std::size_t i = 0; i < mil.size(); ++i) mil[i] += o.mil[i];
    score += o.score;
    if (attention && o.attention) {
        attention->V += o.attention->V;
        attention->w += o.attention->w;
    }
    return *this;
}

AminnGrads& AminnGrads::operator*=(double scale) {
    for (auto& g : encoder) g *= scale;
    for (auto& g : decoder) g *= scale;
    for (auto& g : mil) g *= scale;
    score *= scale;
    if (attention) {
        attention->V *= scale;
        attention->w *= scale;
    }
    return *this;
}

std::vector<ConstParamBlock> AminnGrads::blocks() const {
    std::vector<ConstParamBlock> out;
    auto add = [&](std::string name, const auto& tensor) { out.push_back({std::move(name), flat_view(tensor)}); };
    for_each_layer_block(encoder, "encoder", add);
    for_each_layer_block(decoder, "decoder", add);
    for_each_layer_block(mil, "mil", add);
    add("score.weight", score.weights);
    add("score.bias", score.biases);
    if (attention) {
        add("attention.V", attention->V);
        add("attention.w", attention->w);
    }
    return out;
}

double pool(std::span<const double> scores, Pooling method, double lse_r,
            std::span<const double> attention_weights) {
    if (scores.empty()) throw InputError("pool: empty score list");
    const Eigen::Map<const Eigen::VectorXd> s(scores.data(), static_cast<Eigen::Index>(scores.size()));
    Eigen::VectorXd a;
    if (method == Pooling::attention) {
        if (scores.size() == 1) {
            a = Eigen::VectorXd::Ones(1);
        } else {
            if (attention_weights.size() != scores.size()) {
                throw InputError("pool: attention pooling needs one weight per score");
            }
            a = Eigen::Map<const Eigen::VectorXd>(attention_weights.data(), s.size());
            if ((a.array() < 0.0).any() || std::abs(a.sum() - 1.0) > 1e-9) {
                throw InputError("pool: attention weights must be nonnegative and sum to 1");
            }
        }
    } else if (!attention_weights.empty()) {
        throw InputError("pool: attention weights supplied for non-attention pooling");
    }
    return pool_with_grad(s, method, lse_r, a).p;
}

Eigen::VectorXd attention_weights(const Eigen::MatrixXd& hidden, const AttentionParams& params) {
    if (hidden.cols() < 1) throw InputError("attention_weights: empty bag");
    if (hidden.rows() != params.V.cols()) throw InputError("attention_weights: hidden width mismatch");
    const Eigen::MatrixXd t = (params.V * hidden).array().tanh().matrix();
    return softmax(t.transpose() * params.w);
}

BagForward forward_bag(const AminnModel& model, const Eigen::MatrixXd& bag_features) {
    if (bag_features.rows() < 1) throw InputError("forward_bag: bag has no instances");
    if (bag_features.cols() != model.config.input_dim) {
        throw InputError("forward_bag: expected " + std::to_string(model.config.input_dim) +
                         " features per instance, got " + std::to_string(bag_features.cols()));
    }
    BagForward f;
    f.signature = 0xcbf29ce484222325ULL;
    Eigen::MatrixXd x = bag_features.transpose();
    for (const auto& layer : model.encoder) {
        f.encoder.push_back(dense_forward(layer, x));
        hash_relu_pattern(f.signature, layer, f.encoder.back());
        x = f.encoder.back().output;
    }
    for (const auto& layer : model.decoder) {
        f.decoder.push_back(dense_forward(layer, f.decoder.empty() ? f.latent() : f.decoder.back().output));
        hash_relu_pattern(f.signature, layer, f.decoder.back());
    }
    x = f.latent();
    for (const auto& layer : model.mil) {
        f.mil.push_back(dense_forward(layer, x));
        hash_relu_pattern(f.signature, layer, f.mil.back());
        x = f.mil.back().output;
    }
    f.score = dense_forward(model.score, x);
    f.scores = f.score.output.row(0).transpose();
    if (model.attention) {
        f.attention_hidden = (model.attention->V * x).array().tanh().matrix();
        f.attention_weights = softmax(f.attention_hidden.transpose() * model.attention->w);
    }
    const PoolGrad pg = pool_with_grad(f.scores, model.config.pooling, model.config.lse_r, f.attention_weights);
    f.probability = pg.p;
    if (pg.argmax >= 0 && f.scores.size() > 1) hash_value(f.signature, static_cast<std::uint64_t>(pg.argmax));
    return f;
}

BagLoss loss_and_grads(const AminnModel& model, const Eigen::MatrixXd& bag_features, int label) {
    const BagForward f = forward_bag(model, bag_features);
    const Eigen::Index k = f.instance_count();
    BagLoss out;
    out.grads = AminnGrads::zeros_like(model);
    out.probability = f.probability;
    out.signature = f.signature;

    Eigen::MatrixXd d_latent = Eigen::MatrixXd::Zero(model.config.latent_dim(), k);

    if (!model.decoder.empty()) {
        const MseLoss mse = mse_loss(f.decoder.back().output, bag_features.transpose());
        out.reconstruction = mse.loss;
        Eigen::MatrixXd up = mse.grad;
        for (std::size_t i = model.decoder.size(); i-- > 0;) {
            DenseBackward b = dense_backward(model.decoder[i], f.decoder[i], up);
            out.grads.decoder[i] = std::move(b.params);
            up = std::move(b.input_grad);
        }
        d_latent += up;
    }

    const BceLoss bce = bce_loss(f.probability, label);
    out.bce = bce.loss;
    out.total = out.reconstruction + model.config.alpha * out.bce;
    if (!std::isfinite(out.total)) throw NumericError("loss_and_grads: non-finite loss");

    const double dp = model.config.alpha * bce.grad;
    const PoolGrad pg = pool_with_grad(f.scores, model.config.pooling, model.config.lse_r, f.attention_weights);

    const Eigen::MatrixXd d_scores = (dp * pg.d_scores).transpose();  // 1 x k
    DenseBackward sb = dense_backward(model.score, f.score, d_scores);
    out.grads.score = std::move(sb.params);
    Eigen::MatrixXd d_hidden = std::move(sb.input_grad);

    if (model.attention) {
        const Eigen::MatrixXd& hidden = f.mil.back().output;
        const Eigen::RowVectorXd d_logits = (dp * pg.d_attention).transpose();
        const Eigen::MatrixXd d_t = model.attention->w * d_logits;  // att_dim x k
        const Eigen::MatrixXd d_pre = (d_t.array() * (1.0 - f.attention_hidden.array().square())).matrix();
        out.grads.attention->V = d_pre * hidden.transpose();
        out.grads.attention->w = f.attention_hidden * d_logits.transpose();
        d_hidden += model.attention->V.transpose() * d_pre;
    }

    for (std::size_t i = model.mil.size(); i-- > 0;) {
        DenseBackward b = dense_backward(model.mil[i], f.mil[i], d_hidden);
        out.grads.mil[i] = std::move(b.params);
        d_hidden = std::move(b.input_grad);
    }
    d_latent += d_hidden;
    out.latent_grad = d_latent;

    Eigen::MatrixXd up = d_latent;
    for (std::size_t i = model.encoder.size(); i-- > 0;) {
        DenseBackward b = dense_backward(model.encoder[i], f.encoder[i], up);
        out.grads.encoder[i] = std::move(b.params);
        up = std::move(b.input_grad);
    }
    return out;
}

double predict_bag(const AminnModel& model, const Eigen::MatrixXd& bag_features) {
    return forward_bag(model, bag_features).probability;
}

void to_json(nlohmann::json& j, const AminnConfig& c) {
    j = nlohmann::json{{"input_dim", c.input_dim},
                       {"encoder_widths", c.encoder_widths},
                       {"decoder_widths", c.input_dim > 0 ? c.decoder_widths() : std::vector<Eigen::Index>{}},
                       {"mil_widths", c.mil_widths},
                       {"pooling", to_string(c.pooling)},
                       {"lse_r", c.lse_r},
                       {"attention_dim", c.attention_dim},
                       {"alpha", c.alpha},
                       {"autoencoder", c.autoencoder}};
}

void from_json(const nlohmann::json& j, AminnConfig& c) {
    c.input_dim = j.value("input_dim", c.input_dim);
    c.encoder_widths = j.value("encoder_widths", c.encoder_widths);
    c.mil_widths = j.value("mil_widths", c.mil_widths);
    if (j.contains("pooling")) c.pooling = parse_pooling(j.at("pooling").get<std::string>());
    c.lse_r = j.value("lse_r", c.lse_r);
    c.attention_dim = j.value("attention_dim", c.attention_dim);
    c.alpha = j.value("alpha", c.alpha);
    c.autoencoder = j.value("autoencoder", c.autoencoder);
}

void to_json(nlohmann::json& j, const AminnModel& m) {
    auto layers = [](const std::vector<DenseLayer>& ls) {
        nlohmann::json arr = nlohmann::json::array();
        for (const auto& l : ls) arr.push_back(l);
        return arr;
    };
    j = nlohmann::json{{"format", "aminn-checkpoint"},
                       {"version", kCheckpointVersion},
                       {"config", m.config},
                       {"encoder", layers(m.encoder)},
                       {"decoder", layers(m.decoder)},
                       {"mil", layers(m.mil)},
                       {"score", m.score}};
    if (m.attention) {
        DenseLayer v{m.attention->V, Eigen::VectorXd::Zero(m.attention->V.rows()), Activation::tanh};
        nlohmann::json vj = v;
        vj.erase("biases");
        j["attention"] = {{"V", vj}, {"w", std::vector<double>(m.attention->w.begin(), m.attention->w.end())}};
    }
}

void from_json(const nlohmann::json& j, AminnModel& m) {
    if (j.value("format", std::string()) != "aminn-checkpoint") throw InputError("not an aminn checkpoint");
    if (j.at("version").get<int>() != kCheckpointVersion) {
        throw InputError("unsupported checkpoint version " + j.at("version").dump());
    }
    m.config = j.at("config").get<AminnConfig>();
    m.encoder = j.at("encoder").get<std::vector<DenseLayer>>();
    m.decoder = j.at("decoder").get<std::vector<DenseLayer>>();
    m.mil = j.at("mil").get<std::vector<DenseLayer>>();
    m.score = j.at("score").get<DenseLayer>();
    m.attention.reset();
    if (j.contains("attention")) {
        nlohmann::json vj = j.at("attention").at("V");
        vj["biases"] = std::vector<double>(vj.at("out").get<std::size_t>(), 0.0);
        const DenseLayer v = vj.get<DenseLayer>();
        const auto w = j.at("attention").at("w").get<std::vector<double>>();
        m.attention = AttentionParams{v.weights, Eigen::Map<const Eigen::VectorXd>(w.data(), static_cast<Eigen::Index>(w.size()))};
    }
    // Shapes must agree with the stored config.
    const AminnModel expected = build_model(m.config, 0);
    const auto a = expected.parameters();
    const auto b = m.parameters();
    if (a.size() != b.size()) throw InputError("checkpoint: layer structure does not match its config");
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (a[i].name != b[i].name || a[i].values.size() != b[i].values.size()) {
            throw InputError("checkpoint: block " + b[i].name + " does not match its config");
        }
    }
}

void save_checkpoint(const std::filesystem::path& path, const AminnModel& model) {
    const nlohmann::json j = model;
    csv::write_text_file(path, j.dump(1) + "\n");
}

AminnModel load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open checkpoint " + path.string());
    try {
        return nlohmann::json::parse(in).get<AminnModel>();
    } catch (const nlohmann::json::exception& e) {
        throw InputError("checkpoint " + path.string() + ": " + e.what());
    }
}

std::uint64_t parameter_fingerprint(const AminnModel& model) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& block : model.parameters()) {
        for (double v : block.values) hash_value(h, std::bit_cast<std::uint64_t>(v));
    }
    return h;
}

}  // namespace aminn
