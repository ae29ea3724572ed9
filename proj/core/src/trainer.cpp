#include "aminn/trainer.hpp"

#include <algorithm>
#include <atomic>
#include <bit>
#include <cmath>
#include <exception>
#include <iomanip>
#include <mutex>
#include <numeric>
#include <sstream>
#include <thread>

#include <nlohmann/json.hpp>

#include "aminn/error.hpp"
#include "aminn/metrics.hpp"
#include "aminn/random.hpp"

namespace aminn {
namespace {

constexpr double kZ95 = 1.96;

void check_both_classes(const std::vector<Bag>& bags, const std::string& what) {
    if (bags.empty()) throw InputError(what + ": no bags");
    const auto pos = std::count_if(bags.begin(), bags.end(), [](const Bag& b) { return b.label == 1; });
    if (pos == 0 || pos == static_cast<long>(bags.size())) {
        throw InputError(what + ": training set contains a single class");
    }
}

std::vector<Bag> gather(const std::vector<Bag>& bags, const std::vector<std::size_t>& idx) {
    std::vector<Bag> out;
    out.reserve(idx.size());
    for (auto i : idx) out.push_back(bags[i]);
    return out;
}

// Runs fn(task) for task in [0, count) on up to `threads` workers. The
// first exception thrown by any task is rethrown after all workers join.
template <typename Fn>
void parallel_for(std::size_t count, int threads, Fn&& fn) {
    const std::size_t workers = std::min<std::size_t>(count, static_cast<std::size_t>(std::max(1, threads)));
    if (workers <= 1) {
        for (std::size_t t = 0; t < count; ++t) fn(t);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::mutex error_mutex;
    {
        std::vector<std::jthread> pool;
        for (std::size_t w = 0; w < workers; ++w) {
            pool.emplace_back([&] {
                for (std::size_t t = next++; t < count; t = next++) {
                    try {
                        fn(t);
                    } catch (...) {
                        std::lock_guard lock(error_mutex);
                        if (!error) error = std::current_exception();
                        next = count;
                    }
                }
            });
        }
    }
    if (error) std::rethrow_exception(error);
}

struct FoldTask {
    int repeat = 0;
    int fold = 0;
};

std::vector<FoldTask> fold_tasks(const TrainConfig& config) {
    std::vector<FoldTask> tasks;
    for (int r = 0; r < config.repeats; ++r) {
        for (int f = 0; f < config.folds; ++f) tasks.push_back({r, f});
    }
    return tasks;
}

std::uint64_t fold_seed(const TrainConfig& config, const FoldTask& t) {
    return derive_seed(config.seed, 0xF01D, static_cast<std::uint64_t>(t.repeat), static_cast<std::uint64_t>(t.fold));
}

MetricSummary summarize(std::span<const double> values) {
    if (values.size() >= 2) return aggregate_repeats(values);
    MetricSummary s;
    s.mean = s.ci_low = s.ci_high = values.empty() ? 0.0 : values[0];
    return s;
}

// Fills metrics, consensus and counts from oof. Every oof entry must be set.
void finish_report(CvReport& report, const TrainConfig& config) {
    const std::size_t n = report.patient_ids.size();
    report.prediction_count.assign(n, 0);
    report.consensus.assign(n, 0.0);
    for (const auto& row : report.oof) {
        report.repeat_auc.push_back(roc_auc(row, report.labels));
        report.repeat_accuracy.push_back(accuracy(row, report.labels));
        for (std::size_t i = 0; i < n; ++i) {
            if (!std::isnan(row[i])) ++report.prediction_count[i];
        }
    }
    for (std::size_t i = 0; i < n; ++i) {
        std::vector<double> values;
        for (const auto& row : report.oof) values.push_back(row[i]);
        report.consensus[i] = config.consensus == Consensus::mean
                                  ? std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size())
                                  : median_of(values);
    }
    report.auc = summarize(report.repeat_auc);
    report.accuracy = summarize(report.repeat_accuracy);
}

CvReport empty_report(const std::vector<Bag>& bags, const TrainConfig& config, std::string name) {
    CvReport report;
    report.model_name = std::move(name);
    for (const auto& b : bags) {
        report.patient_ids.push_back(b.patient_id);
        report.labels.push_back(b.label);
    }
    report.oof.assign(static_cast<std::size_t>(config.repeats),
                      std::vector<double>(bags.size(), std::numeric_limits<double>::quiet_NaN()));
    const auto tasks = static_cast<std::size_t>(config.repeats * config.folds);
    report.model_fingerprints.assign(tasks, 0);
    report.final_train_loss.assign(tasks, 0.0);
    return report;
}

std::string fmt2(double v) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(2) << v;
    return os.str();
}

}  // namespace

std::string AblationFlags::label() const {
    std::string parts;
    auto add = [&](bool on, const char* name) {
        if (!on) return;
        if (!parts.empty()) parts += "+";
        parts += name;
    };
    add(multi, "multi");
    add(log, "log");
    add(ae, "ae");
    return "AMINN_" + (parts.empty() ? std::string("baseline") : parts);
}

std::vector<AblationFlags> AblationFlags::all_combinations() {
    std::vector<AblationFlags> out;
    for (bool multi : {false, true}) {
        out.push_back({multi, false, false});
        out.push_back({multi, true, false});
        out.push_back({multi, false, true});
        out.push_back({multi, true, true});
    }
    return out;
}

void TrainConfig::validate() const {
    if (epochs < 1) throw InputError("epochs must be >= 1");
    if (folds < 2) throw InputError("folds must be >= 2");
    if (repeats < 1) throw InputError("repeats must be >= 1");
    if (!(lr > 0.0)) throw InputError("learning rate must be positive");
    if (bags_per_step < 1) throw InputError("bags_per_step must be >= 1");
    if (threads < 1) throw InputError("threads must be >= 1");
    if (!(norm_epsilon > 0.0)) throw InputError("normalization epsilon must be positive");
}

NormOptions TrainConfig::norm_options() const {
    return {ablation.log ? NormScheme::twostep : NormScheme::zscore, std_mode, norm_epsilon};
}

std::vector<Bag> select_instances(const std::vector<Bag>& bags, const std::vector<std::string>& feature_names,
                                  const TrainConfig& config) {
    if (config.ablation.multi) return bags;
    const auto idx = static_cast<Eigen::Index>(feature_index(feature_names, config.volume_feature));
    std::vector<Bag> out;
    out.reserve(bags.size());
    for (const auto& b : bags) out.push_back(select_largest_lesion(b, idx));
    return out;
}

Eigen::MatrixXd stack_instances(const std::vector<Bag>& bags) {
    Eigen::Index rows = 0;
    for (const auto& b : bags) rows += b.size();
    const Eigen::Index cols = bags.empty() ? 0 : bags.front().feature_count();
    Eigen::MatrixXd out(rows, cols);
    Eigen::Index r = 0;
    for (const auto& b : bags) {
        if (b.feature_count() != cols) throw InputError("bags have inconsistent feature counts");
        out.middleRows(r, b.size()) = b.instances;
        r += b.size();
    }
    return out;
}

Eigen::MatrixXd prepare_bag(const NormalizerState& normalizer, const Bag& bag) {
    return rescale_unit_interval(normalizer, transform(normalizer, bag.instances));
}

FoldModel train_fold(const std::vector<Bag>& train_bags, const std::vector<std::string>& feature_names,
                     const TrainConfig& config, std::uint64_t seed, const NormalizerState* normalizer) {
    config.validate();
    check_both_classes(train_bags, "train_fold");

    FoldModel out;
    out.normalizer = normalizer ? *normalizer
                                : fit_normalizer(stack_instances(train_bags), config.norm_options(), feature_names);
    std::vector<Eigen::MatrixXd> inputs;
    inputs.reserve(train_bags.size());
    for (const auto& b : train_bags) inputs.push_back(prepare_bag(out.normalizer, b));

    AminnConfig mc = config.model;
    mc.input_dim = out.normalizer.output_dim();
    mc.autoencoder = config.ablation.ae;
    out.model = build_model(mc, derive_seed(seed, 1));

    const std::vector<ParamBlock> params = out.model.parameters();
    AdamState adam = AdamState::for_blocks(params, {config.lr, config.beta1, config.beta2, config.adam_eps});
    Rng rng(derive_seed(seed, 2));

    const double nb = static_cast<double>(train_bags.size());
    auto record = [&](double total, double recon, double bce) {
        out.curve.total.push_back(total / nb);
        out.curve.reconstruction.push_back(recon / nb);
        out.curve.bce.push_back(bce / nb);
    };
    {
        double total = 0, recon = 0, bce = 0;
        for (std::size_t i = 0; i < inputs.size(); ++i) {
            const BagLoss l = loss_and_grads(out.model, inputs[i], train_bags[i].label);
            total += l.total;
            recon += l.reconstruction;
            bce += l.bce;
        }
        record(total, recon, bce);
    }

    std::vector<std::size_t> order(train_bags.size());
    std::iota(order.begin(), order.end(), 0);
    AminnGrads accumulated = AminnGrads::zeros_like(out.model);
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        double total = 0, recon = 0, bce = 0;
        int pending = 0;
        for (std::size_t pos = 0; pos < order.size(); ++pos) {
            const std::size_t i = order[pos];
            BagLoss l = loss_and_grads(out.model, inputs[i], train_bags[i].label);
            total += l.total;
            recon += l.reconstruction;
            bce += l.bce;
            if (config.bags_per_step == 1) {
                adam_step(adam, params, l.grads.blocks());
                continue;
            }
            accumulated += l.grads;
            if (++pending == config.bags_per_step || pos + 1 == order.size()) {
                accumulated *= 1.0 / pending;
                adam_step(adam, params, accumulated.blocks());
                accumulated *= 0.0;
                pending = 0;
            }
        }
        record(total, recon, bce);
    }
    return out;
}

double predict_patient(const FoldModel& fold, const Bag& bag) {
    return predict_bag(fold.model, prepare_bag(fold.normalizer, bag));
}

MetricSummary aggregate_repeats(std::span<const double> values) {
    if (values.size() < 2) throw InputError("aggregate_repeats needs at least 2 repeats");
    const double r = static_cast<double>(values.size());
    MetricSummary s;
    s.mean = std::accumulate(values.begin(), values.end(), 0.0) / r;
    double ss = 0.0;
    for (double v : values) ss += (v - s.mean) * (v - s.mean);
    s.std = std::sqrt(ss / (r - 1.0));
    const double half = kZ95 * s.std / std::sqrt(r);
    s.ci_low = s.mean - half;
    s.ci_high = s.mean + half;
    return s;
}

CvReport run_cv(const std::vector<Bag>& bags, const std::vector<std::string>& feature_names,
                const TrainConfig& config) {
    config.validate();
    const SplitPlan plan = stratified_kfold(bags, config.folds, config.repeats, config.seed);
    const std::vector<Bag> selected = select_instances(bags, feature_names, config);

    std::optional<NormalizerState> shared;
    if (config.normalize_on_all) {
        shared = fit_normalizer(stack_instances(selected), config.norm_options(), feature_names);
    }

    CvReport report = empty_report(bags, config,
                                   config.ablation.label() + "(" + std::string(to_string(config.model.pooling)) + ")");
    const auto tasks = fold_tasks(config);
    parallel_for(tasks.size(), config.threads, [&](std::size_t t) {
        const FoldTask& task = tasks[t];
        const auto train = gather(selected, plan.train_indices(task.repeat, task.fold));
        const FoldModel fm = train_fold(train, feature_names, config, fold_seed(config, task),
                                        shared ? &*shared : nullptr);
        auto& row = report.oof[static_cast<std::size_t>(task.repeat)];
        for (auto i : plan.test_indices(task.repeat, task.fold)) row[i] = predict_patient(fm, selected[i]);
        report.model_fingerprints[t] = parameter_fingerprint(fm.model);
        report.final_train_loss[t] = fm.curve.total.back();
    });
    report.models_trained = static_cast<int>(tasks.size());
    finish_report(report, config);
    return report;
}

CvReport logistic_baseline(const std::vector<Bag>& bags, const std::vector<std::string>& feature_names,
                           const TrainConfig& config, const LogisticOptions& options) {
    config.validate();
    const SplitPlan plan = stratified_kfold(bags, config.folds, config.repeats, config.seed);
    TrainConfig largest = config;
    largest.ablation.multi = false;
    const std::vector<Bag> selected = select_instances(bags, feature_names, largest);

    std::optional<NormalizerState> shared;
    if (config.normalize_on_all) {
        shared = fit_normalizer(stack_instances(selected), config.norm_options(), feature_names);
    }

    CvReport report = empty_report(bags, config, config.ablation.log ? "LogisticRegression_log" : "LogisticRegression");
    const auto tasks = fold_tasks(config);
    parallel_for(tasks.size(), config.threads, [&](std::size_t t) {
        const FoldTask& task = tasks[t];
        const auto train = gather(selected, plan.train_indices(task.repeat, task.fold));
        check_both_classes(train, "logistic_baseline");
        const NormalizerState norm =
            shared ? *shared : fit_normalizer(stack_instances(train), config.norm_options(), feature_names);
        const Eigen::MatrixXd x = transform(norm, stack_instances(train));
        std::vector<int> y;
        for (const auto& b : train) y.push_back(b.label);
        const LogisticModel model = fit_logistic(x, y, options);
        auto& row = report.oof[static_cast<std::size_t>(task.repeat)];
        for (auto i : plan.test_indices(task.repeat, task.fold)) {
            row[i] = model.predict(transform(norm, selected[i].instances).row(0));
        }
        std::uint64_t h = 0xcbf29ce484222325ULL;
        for (double w : model.weights) hash_value(h, std::bit_cast<std::uint64_t>(w));
        hash_value(h, std::bit_cast<std::uint64_t>(model.bias));
        report.model_fingerprints[t] = h;
    });
    report.models_trained = static_cast<int>(tasks.size());
    finish_report(report, config);
    return report;
}

std::vector<int> median_dichotomize(std::span<const double> probabilities) {
    if (probabilities.size() < 2) throw InputError("median_dichotomize needs at least 2 patients");
    const double med = median_of(std::vector<double>(probabilities.begin(), probabilities.end()));
    std::vector<int> out;
    out.reserve(probabilities.size());
    for (double p : probabilities) out.push_back(p > med ? 1 : 0);
    return out;
}

std::vector<ComparisonRow> run_ablation(const std::vector<Bag>& bags, const std::vector<std::string>& feature_names,
                                        const TrainConfig& config, const LogisticOptions& logistic) {
    std::vector<ComparisonRow> rows;
    for (bool log : {false, true}) {
        TrainConfig c = config;
        c.ablation = {false, log, false};
        CvReport r = logistic_baseline(bags, feature_names, c, logistic);
        rows.push_back({r.model_name, std::move(r)});
    }
    for (const auto& flags : AblationFlags::all_combinations()) {
        TrainConfig c = config;
        c.ablation = flags;
        rows.push_back({flags.label(), run_cv(bags, feature_names, c)});
    }
    return rows;
}

std::vector<ComparisonRow> run_pooling_comparison(const std::vector<Bag>& bags,
                                                  const std::vector<std::string>& feature_names,
                                                  const TrainConfig& config, std::span<const Pooling> poolings) {
    std::vector<ComparisonRow> rows;
    for (Pooling p : poolings) {
        TrainConfig c = config;
        c.model.pooling = p;
        rows.push_back({"AMINN " + std::string(to_string(p)), run_cv(bags, feature_names, c)});
    }
    return rows;
}

std::string render_comparison_table(std::span<const ComparisonRow> rows) {
    std::size_t w = 5;
    for (const auto& r : rows) w = std::max(w, r.name.size());
    std::ostringstream os;
    os << std::left << std::setw(static_cast<int>(w) + 2) << "Model" << std::setw(20) << "AUC (95%CI)"
       << "Accuracy\n";
    for (const auto& r : rows) {
        const auto& a = r.report.auc;
        const auto& c = r.report.accuracy;
        os << std::setw(static_cast<int>(w) + 2) << r.name << std::setw(20)
           << (fmt2(a.mean) + " (" + fmt2(a.ci_low) + "-" + fmt2(a.ci_high) + ")") << fmt2(c.mean)
           << " +/- " << fmt2(c.std) << "\n";
    }
    return os.str();
}

void to_json(nlohmann::json& j, const AblationFlags& f) {
    j = nlohmann::json{{"multi", f.multi}, {"log", f.log}, {"ae", f.ae}};
}

void from_json(const nlohmann::json& j, AblationFlags& f) {
    f.multi = j.value("multi", f.multi);
    f.log = j.value("log", f.log);
    f.ae = j.value("ae", f.ae);
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
    j = nlohmann::json{{"epochs", c.epochs},
                       {"lr", c.lr},
                       {"beta1", c.beta1},
                       {"beta2", c.beta2},
                       {"adam_eps", c.adam_eps},
                       {"folds", c.folds},
                       {"repeats", c.repeats},
                       {"seed", c.seed},
                       {"ablation", c.ablation},
                       {"model", c.model},
                       {"volume_feature", c.volume_feature},
                       {"normalize_on_all", c.normalize_on_all},
                       {"consensus", c.consensus == Consensus::mean ? "mean" : "median"},
                       {"std_mode", c.std_mode == StdMode::population ? "population" : "sample"},
                       {"norm_epsilon", c.norm_epsilon},
                       {"bags_per_step", c.bags_per_step},
                       {"threads", c.threads}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
    c.epochs = j.value("epochs", c.epochs);
    c.lr = j.value("lr", c.lr);
    c.beta1 = j.value("beta1", c.beta1);
    c.beta2 = j.value("beta2", c.beta2);
    c.adam_eps = j.value("adam_eps", c.adam_eps);
    c.folds = j.value("folds", c.folds);
    c.repeats = j.value("repeats", c.repeats);
    c.seed = j.value("seed", c.seed);
    if (j.contains("ablation")) j.at("ablation").get_to(c.ablation);
    if (j.contains("model")) j.at("model").get_to(c.model);
    c.volume_feature = j.value("volume_feature", c.volume_feature);
    c.normalize_on_all = j.value("normalize_on_all", c.normalize_on_all);
    if (j.contains("consensus")) {
        const auto s = j.at("consensus").get<std::string>();
        if (s != "mean" && s != "median") throw InputError("consensus must be mean or median");
        c.consensus = s == "mean" ? Consensus::mean : Consensus::median;
    }
    if (j.contains("std_mode")) {
        const auto s = j.at("std_mode").get<std::string>();
        if (s != "population" && s != "sample") throw InputError("std_mode must be population or sample");
        c.std_mode = s == "population" ? StdMode::population : StdMode::sample;
    }
    c.norm_epsilon = j.value("norm_epsilon", c.norm_epsilon);
    c.bags_per_step = j.value("bags_per_step", c.bags_per_step);
    c.threads = j.value("threads", c.threads);
}

void to_json(nlohmann::json& j, const MetricSummary& s) {
    j = nlohmann::json{{"mean", s.mean}, {"std", s.std}, {"ci95_low", s.ci_low}, {"ci95_high", s.ci_high}};
}

void to_json(nlohmann::json& j, const CvReport& r) {
    nlohmann::json fingerprints = nlohmann::json::array();
    for (auto f : r.model_fingerprints) {
        std::ostringstream os;
        os << std::hex << std::setw(16) << std::setfill('0') << f;
        fingerprints.push_back(os.str());
    }
    j = nlohmann::json{{"model", r.model_name},
                       {"auc", r.auc},
                       {"accuracy", r.accuracy},
                       {"repeat_auc", r.repeat_auc},
                       {"repeat_accuracy", r.repeat_accuracy},
                       {"models_trained", r.models_trained},
                       {"patient_ids", r.patient_ids},
                       {"labels", r.labels},
                       {"consensus", r.consensus},
                       {"prediction_count", r.prediction_count},
                       {"oof", r.oof},
                       {"model_fingerprints", fingerprints},
                       {"final_train_loss", r.final_train_loss}};
}

}  // namespace aminn
