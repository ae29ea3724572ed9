#include "aminn/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "aminn/csv.hpp"
#include "aminn/error.hpp"
#include "aminn/metrics.hpp"
#include "aminn/random.hpp"

namespace aminn {
namespace {

constexpr double kCensorWindowMonths = 72.0;
constexpr double kFollowUpMonths = 120.0;

std::string padded(char prefix, int value, int width) {
    std::string digits = std::to_string(value);
    if (static_cast<int>(digits.size()) < width) digits.insert(0, static_cast<std::size_t>(width) - digits.size(), '0');
    return prefix + digits;
}

int digits(int n) {
    int d = 1;
    while (n >= 10) {
        n /= 10;
        ++d;
    }
    return d;
}

}  // namespace

std::string_view to_string(LabelMechanism m) {
    switch (m) {
        case LabelMechanism::largest_only: return "largest_only";
        case LabelMechanism::aggregate_mean: return "aggregate_mean";
        case LabelMechanism::aggregate_max: return "aggregate_max";
    }
    return "aggregate_mean";
}

LabelMechanism parse_mechanism(std::string_view name) {
    if (name == "largest_only") return LabelMechanism::largest_only;
    if (name == "aggregate_mean") return LabelMechanism::aggregate_mean;
    if (name == "aggregate_max") return LabelMechanism::aggregate_max;
    throw InputError("unknown label mechanism '" + std::string(name) + "' (expected " +
                     std::string(kMechanismNames) + ")");
}

void SynthConfig::validate() const {
    if (n_patients < 10) throw InputError("n_patients must be >= 10");
    if (min_lesions < 1 || max_lesions < min_lesions) throw InputError("lesion range must satisfy 1 <= min <= max");
    if (n_features < 1) throw InputError("n_features must be >= 1");
    if (informative_features < 1 || informative_features > n_features) {
        throw InputError("informative_features must lie in [1, n_features]");
    }
    if (!(censor_rate >= 0.0 && censor_rate < 1.0)) throw InputError("censor_rate must lie in [0, 1)");
    if (!(feature_skew > 0.0)) throw InputError("feature_skew must be positive");
    if (!(baseline_hazard > 0.0)) throw InputError("baseline_hazard must be positive");
    if (!std::isfinite(effect_size)) throw InputError("effect_size must be finite");
}

double lesion_score(const SynthDataset& d, std::span<const double> raw) {
    const int m = d.config.informative_features;
    double sum = 0.0;
    for (int f = 0; f < m; ++f) {
        const auto& law = d.laws[static_cast<std::size_t>(f)];
        const double ratio = (raw[static_cast<std::size_t>(f)] - law.offset) / law.scale;
        sum += std::log(std::max(ratio, std::numeric_limits<double>::min())) / d.config.feature_skew;
    }
    return sum / std::sqrt(static_cast<double>(m));
}

double bag_risk(const SynthDataset& d, const Bag& bag, LabelMechanism mechanism) {
    auto score_of = [&](Eigen::Index j) {
        const Eigen::RowVectorXd row = bag.instances.row(j);
        return lesion_score(d, std::span<const double>(row.data(), static_cast<std::size_t>(row.size())));
    };
    double agg = 0.0;
    switch (mechanism) {
        case LabelMechanism::largest_only: {
            const Bag largest = select_largest_lesion(bag, 0);
            agg = lesion_score(d, std::span<const double>(largest.instances.data(),
                                                          static_cast<std::size_t>(largest.instances.size())));
            break;
        }
        case LabelMechanism::aggregate_mean: {
            for (Eigen::Index j = 0; j < bag.size(); ++j) agg += score_of(j);
            agg /= static_cast<double>(bag.size());
            break;
        }
        case LabelMechanism::aggregate_max: {
            agg = -std::numeric_limits<double>::infinity();
            for (Eigen::Index j = 0; j < bag.size(); ++j) agg = std::max(agg, score_of(j));
            break;
        }
    }
    return d.config.effect_size * agg;
}

SynthDataset generate(const SynthConfig& config) {
    config.validate();
    SynthDataset d;
    d.config = config;
    Rng rng(config.seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_real_distribution<double> unit(0.0, 1.0);

    d.lesions.feature_names.push_back("volume");
    d.laws.push_back({0.0, 2000.0});
    for (int f = 1; f < config.n_features; ++f) {
        d.lesions.feature_names.push_back(padded('f', f, 2));
        const double scale = std::pow(10.0, -1.0 + 3.0 * unit(rng));
        const double offset = f % 4 == 3 ? -scale * (0.5 + 1.5 * unit(rng)) : 0.0;
        d.laws.push_back({offset, scale});
    }

    std::uniform_int_distribution<int> lesion_count(config.min_lesions, config.max_lesions);
    const int pid_width = digits(config.n_patients);
    const int lid_width = std::max(2, digits(config.max_lesions));
    std::vector<Bag> bags;
    for (int i = 0; i < config.n_patients; ++i) {
        Bag bag;
        bag.patient_id = padded('P', i + 1, pid_width);
        const int k = lesion_count(rng);
        bag.instances.resize(k, config.n_features);
        for (int j = 0; j < k; ++j) {
            LesionRecord rec;
            rec.patient_id = bag.patient_id;
            rec.lesion_id = padded('L', j + 1, lid_width);
            for (int f = 0; f < config.n_features; ++f) {
                const auto& law = d.laws[static_cast<std::size_t>(f)];
                const double v = law.offset + law.scale * std::exp(config.feature_skew * normal(rng));
                rec.features.push_back(v);
                bag.instances(j, f) = v;
            }
            bag.lesion_ids.push_back(rec.lesion_id);
            d.lesions.records.push_back(std::move(rec));
        }
        bags.push_back(std::move(bag));
    }

    for (const auto& b : bags) d.true_risk.push_back(bag_risk(d, b, config.mechanism));
    const double mean_risk =
        std::accumulate(d.true_risk.begin(), d.true_risk.end(), 0.0) / static_cast<double>(d.true_risk.size());
    for (auto& r : d.true_risk) r -= mean_risk;

    int events = 0;
    int positives = 0;
    for (std::size_t i = 0; i < bags.size(); ++i) {
        const double hazard = config.baseline_hazard * std::exp(d.true_risk[i]);
        const double u_time = unit(rng);
        const double u_censor = unit(rng);
        const double u_window = unit(rng);
        const double t_event = config.stochastic_times ? -std::log1p(-u_time) / hazard : std::log(2.0) / hazard;
        const double t_censor = u_censor < config.censor_rate ? kCensorWindowMonths * (1.0 - u_window)
                                                              : kFollowUpMonths;
        PatientRecord p;
        p.patient_id = bags[i].patient_id;
        p.event = t_event <= t_censor ? 1 : 0;
        p.survival_months = std::min(t_event, t_censor);
        p.label = outcome_label(p.survival_months, p.event);
        events += p.event;
        positives += p.label;
        d.patients.push_back(std::move(p));
    }
    if (events == 0) throw InputError("degenerate synthetic config: every patient is censored");
    if (positives == 0 || positives == config.n_patients) {
        throw InputError("degenerate synthetic config: all labels equal (" + std::to_string(positives) + " positive)");
    }
    return d;
}

double oracle_auc(const SynthDataset& dataset) {
    std::vector<int> labels;
    for (const auto& p : dataset.patients) labels.push_back(p.label);
    return roc_auc(dataset.true_risk, labels);
}

double oracle_auc(const SynthDataset& dataset, const std::vector<Bag>& bags, LabelMechanism mechanism) {
    std::vector<double> risks;
    std::vector<int> labels;
    for (const auto& b : bags) {
        risks.push_back(bag_risk(dataset, b, mechanism));
        labels.push_back(b.label);
    }
    return roc_auc(risks, labels);
}

void write_truth(const std::filesystem::path& path, const SynthDataset& dataset) {
    std::string text = "patient_id,true_risk\n";
    for (std::size_t i = 0; i < dataset.patients.size(); ++i) {
        text += dataset.patients[i].patient_id + "," + csv::format_double(dataset.true_risk[i]) + "\n";
    }
    csv::write_text_file(path, text);
}

}  // namespace aminn
