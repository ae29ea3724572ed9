#include "aminn/cli.hpp"

#include <algorithm>
#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

#include <unistd.h>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "aminn/bagdata.hpp"
#include "aminn/csv.hpp"
#include "aminn/error.hpp"
#include "aminn/featnorm.hpp"
#include "aminn/metrics.hpp"
#include "aminn/random.hpp"
#include "aminn/survival.hpp"
#include "aminn/synthgen.hpp"
#include "aminn/trainer.hpp"

#ifndef AMINN_VERSION
#define AMINN_VERSION "dev"
#endif

namespace fs = std::filesystem;
using nlohmann::json;

namespace aminn {

void to_json(json& j, const SynthConfig& c) {
    j = json{{"n_patients", c.n_patients},
             {"min_lesions", c.min_lesions},
             {"max_lesions", c.max_lesions},
             {"n_features", c.n_features},
             {"informative_features", c.informative_features},
             {"mechanism", to_string(c.mechanism)},
             {"censor_rate", c.censor_rate},
             {"feature_skew", c.feature_skew},
             {"effect_size", c.effect_size},
             {"baseline_hazard", c.baseline_hazard},
             {"stochastic_times", c.stochastic_times},
             {"seed", c.seed}};
}

void from_json(const json& j, SynthConfig& c) {
    c.n_patients = j.value("n_patients", c.n_patients);
    c.min_lesions = j.value("min_lesions", c.min_lesions);
    c.max_lesions = j.value("max_lesions", c.max_lesions);
    c.n_features = j.value("n_features", c.n_features);
    c.informative_features = j.value("informative_features", c.informative_features);
    if (j.contains("mechanism")) c.mechanism = parse_mechanism(j.at("mechanism").get<std::string>());
    c.censor_rate = j.value("censor_rate", c.censor_rate);
    c.feature_skew = j.value("feature_skew", c.feature_skew);
    c.effect_size = j.value("effect_size", c.effect_size);
    c.baseline_hazard = j.value("baseline_hazard", c.baseline_hazard);
    c.stochastic_times = j.value("stochastic_times", c.stochastic_times);
    c.seed = j.value("seed", c.seed);
}

}  // namespace aminn

namespace aminn::cli {
namespace {

std::string utc_now() {
    const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    std::ostringstream os;
    os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
    return os.str();
}

// Registers options whose values, when given on the command line, override
// keys of the merged JSON config.
class Overrides {
public:
    template <typename T>
    CLI::Option* option(CLI::App* app, const std::string& flags, const std::string& pointer, T& var,
                        const std::string& description) {
        CLI::Option* o = app->add_option(flags, var, description);
        appliers_.push_back([o, pointer, &var](json& j) {
            if (o->count() > 0) j[json::json_pointer(pointer)] = var;
        });
        return o;
    }

    CLI::Option* flag(CLI::App* app, const std::string& flags, const std::string& pointer, bool& var,
                      const std::string& description) {
        CLI::Option* o = app->add_flag(flags, var, description);
        appliers_.push_back([o, pointer, &var](json& j) {
            if (o->count() > 0) j[json::json_pointer(pointer)] = var;
        });
        return o;
    }

    void apply(json& j) const {
        for (const auto& a : appliers_) a(j);
    }

private:
    std::vector<std::function<void(json&)>> appliers_;
};

json read_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open config " + path);
    try {
        json j = json::parse(in);
        if (!j.is_object()) throw InputError("config " + path + " must be a JSON object");
        return j;
    } catch (const json::exception& e) {
        throw InputError("config " + path + ": " + e.what());
    }
}

template <typename Config>
Config merge_config(const std::string& config_path, const Overrides& overrides, json& merged) {
    merged = Config{};
    if (!config_path.empty()) merged.merge_patch(read_json_file(config_path));
    overrides.apply(merged);
    try {
        return merged.get<Config>();
    } catch (const json::exception& e) {
        throw InputError(std::string("config: ") + e.what());
    }
}

struct Common {
    std::string config_path;
    std::uint64_t seed = 0;
    std::string out_dir;
    CLI::Option* seed_opt = nullptr;
};

void add_common(CLI::App* sub, Common& c) {
    sub->add_option("--config", c.config_path, "JSON config file; command-line flags win")->check(CLI::ExistingFile);
    c.seed_opt = sub->add_option("--seed", c.seed, "Random seed");
    sub->add_option("--out", c.out_dir, "Output directory")->required();
}

class Run {
public:
    Run(std::string command, std::vector<std::string> argv) : command_(std::move(command)), argv_(std::move(argv)) {
        started_ = utc_now();
    }

    void input(const std::string& path) { inputs_.push_back(path); }
    void output(const std::string& name, std::string contents) { outputs_.emplace_back(name, std::move(contents)); }

    // Writes every staged output plus manifest.json. Nothing touches the
    // output directory before this point.
    void commit(const std::string& out_dir, const json& config, std::uint64_t seed) {
        const fs::path dir(out_dir);
        std::error_code ec;
        fs::create_directories(dir, ec);
        if (ec || !fs::is_directory(dir)) throw InputError("cannot create output directory " + out_dir);
        json outputs = json::array();
        for (const auto& [name, contents] : outputs_) {
            const fs::path path = dir / name;
            const fs::path tmp = dir / (name + ".tmp");
            csv::write_text_file(tmp, contents);
            fs::rename(tmp, path, ec);
            if (ec) throw InputError("cannot write " + path.string());
            outputs.push_back({{"path", path.string()}, {"sha256", sha256_hex(contents)}});
        }
        json inputs = json::array();
        for (const auto& p : inputs_) inputs.push_back({{"path", p}, {"sha256", sha256_file(p)}});
        json manifest{{"tool", "aminn"},
                      {"version", AMINN_VERSION},
                      {"command", command_},
                      {"argv", argv_},
                      {"config", config},
                      {"seed", seed},
                      {"inputs", inputs},
                      {"outputs", outputs},
                      {"started_at", started_},
                      {"finished_at", utc_now()}};
        csv::write_text_file(dir / "manifest.json", manifest.dump(2) + "\n");
    }

private:
    std::string command_;
    std::vector<std::string> argv_;
    std::string started_;
    std::vector<std::string> inputs_;
    std::vector<std::pair<std::string, std::string>> outputs_;
};

struct LoadedData {
    std::vector<Bag> bags;
    std::vector<std::string> feature_names;
    std::vector<PatientRecord> patients;
    std::vector<std::string> excluded;
};

LoadedData load_data(const std::string& lesions_path, const std::string& patients_path, std::ostream& err) {
    LoadedData d;
    const LesionTable lesions = load_lesions(lesions_path);
    d.patients = load_patients(patients_path);
    BagAssembly a = assemble_bags(lesions, d.patients);
    d.bags = std::move(a.bags);
    d.excluded = std::move(a.excluded_patients);
    d.feature_names = lesions.feature_names;
    if (!d.excluded.empty()) {
        err << "warning: " << d.excluded.size() << " patient(s) without lesions excluded\n";
    }
    return d;
}

std::string predictions_csv(const CvReport& r) {
    std::string s = "patient_id,label,prob";
    for (std::size_t k = 0; k < r.oof.size(); ++k) s += ",repeat_" + std::to_string(k + 1);
    s += "\n";
    for (std::size_t i = 0; i < r.patient_ids.size(); ++i) {
        s += r.patient_ids[i] + "," + std::to_string(r.labels[i]) + "," + csv::format_double(r.consensus[i]);
        for (const auto& row : r.oof) s += "," + csv::format_double(row[i]);
        s += "\n";
    }
    return s;
}

std::string risk_csv(const CvReport& r) {
    const auto risk = median_dichotomize(r.consensus);
    std::string s = "patient_id,prob,risk\n";
    for (std::size_t i = 0; i < r.patient_ids.size(); ++i) {
        s += r.patient_ids[i] + "," + csv::format_double(r.consensus[i]) + "," + std::to_string(risk[i]) + "\n";
    }
    return s;
}

std::string roc_csv(const std::vector<std::pair<std::string, const CvReport*>>& reports) {
    std::string s = reports.size() > 1 ? "model,threshold,fpr,tpr\n" : "threshold,fpr,tpr\n";
    for (const auto& [name, r] : reports) {
        for (const auto& p : roc_curve(r->consensus, r->labels)) {
            if (reports.size() > 1) s += name + ",";
            s += csv::format_double(p.threshold) + "," + csv::format_double(p.fpr) + "," + csv::format_double(p.tpr) + "\n";
        }
    }
    return s;
}

std::vector<Pooling> parse_pooling_list(const std::vector<std::string>& names) {
    std::vector<Pooling> out;
    for (const auto& n : names) out.push_back(parse_pooling(n));
    if (out.empty()) out.push_back(Pooling::average);
    return out;
}

// Options shared by train and ablate.
struct TrainFlags {
    std::string lesions, patients;
    std::string pooling;
    std::vector<std::string> poolings;
    bool multi = true, log = true, ae = true;
    int epochs = 0, folds = 0, repeats = 0, threads = 1, bags_per_step = 1;
    double lr = 0, alpha = 1, lse_r = 10;
    std::string volume_feature, consensus;
    bool normalize_on_all = false;
    CLI::Option* multi_opt = nullptr;
    CLI::Option* log_opt = nullptr;
    CLI::Option* ae_opt = nullptr;
};

void add_train_flags(CLI::App* sub, TrainFlags& f, Overrides& ov, bool pooling_list) {
    sub->add_option("--lesions", f.lesions, "Lesion CSV: patient_id,lesion_id,<features...>")->required();
    sub->add_option("--patients", f.patients, "Patient CSV: patient_id,label,survival_months,event")->required();
    if (pooling_list) {
        sub->add_option("--pooling", f.poolings, "Comma-separated pooling list")->delimiter(',');
    } else {
        ov.option(sub, "--pooling", "/model/pooling", f.pooling, "Pooling: max, average, lse, attention");
    }
    f.multi_opt = ov.flag(sub, "--multi,!--no-multi", "/ablation/multi", f.multi, "Use all lesions (default) or the largest only");
    f.log_opt = ov.flag(sub, "--log,!--no-log", "/ablation/log", f.log, "Two-step normalization (default) or plain Z-score");
    f.ae_opt = ov.flag(sub, "--ae,!--no-ae", "/ablation/ae", f.ae, "Autoencoder branch on (default) or off");
    ov.option(sub, "--epochs", "/epochs", f.epochs, "Training epochs per fold");
    ov.option(sub, "--lr", "/lr", f.lr, "Adam learning rate");
    ov.option(sub, "--folds", "/folds", f.folds, "Cross-validation folds");
    ov.option(sub, "--repeats", "/repeats", f.repeats, "Cross-validation repeats");
    ov.option(sub, "--alpha", "/model/alpha", f.alpha, "BCE weight in the compound loss");
    ov.option(sub, "--lse-r", "/model/lse_r", f.lse_r, "Sharpness r of log-sum-exp pooling");
    ov.option(sub, "--volume-feature", "/volume_feature", f.volume_feature, "Feature column used to pick the largest lesion");
    ov.option(sub, "--consensus", "/consensus", f.consensus, "Cross-repeat combination: mean or median");
    ov.flag(sub, "--normalize-on-all", "/normalize_on_all", f.normalize_on_all,
            "Fit normalization on all patients instead of the training folds");
    ov.option(sub, "--bags-per-step", "/bags_per_step", f.bags_per_step, "Bags averaged per Adam step");
    ov.option(sub, "--threads", "/threads", f.threads, "Concurrent fold trainings");
}


TrainConfig train_config(const Common& c, const Overrides& ov, json& merged) {
    TrainConfig cfg = merge_config<TrainConfig>(c.config_path, ov, merged);
    if (c.seed_opt->count() > 0) {
        cfg.seed = c.seed;
        merged["seed"] = c.seed;
    }
    cfg.validate();
    merged = cfg;
    return cfg;
}

// Runs a writer that only knows how to target a path and returns what it wrote.
std::string render_via_file(const std::function<void(const fs::path&)>& writer) {
    static int counter = 0;
    const fs::path tmp = fs::temp_directory_path() /
                         ("aminn-" + std::to_string(::getpid()) + "-" + std::to_string(counter++) + ".csv");
    writer(tmp);
    std::ifstream in(tmp, std::ios::binary);
    std::ostringstream os;
    os << in.rdbuf();
    in.close();
    std::error_code ec;
    fs::remove(tmp, ec);
    return os.str();
}

int cmd_synth(const Common& c, const Overrides& ov, const std::vector<std::string>& argv, std::ostream& out) {
    json merged;
    SynthConfig cfg = merge_config<SynthConfig>(c.config_path, ov, merged);
    if (c.seed_opt->count() > 0) cfg.seed = c.seed;
    cfg.validate();
    merged = cfg;

    const SynthDataset data = generate(cfg);
    Run run("synth", argv);
    run.output("lesions.csv", render_via_file([&](const fs::path& p) { write_lesions(p, data.lesions); }));
    run.output("patients.csv", render_via_file([&](const fs::path& p) { write_patients(p, data.patients); }));
    run.output("truth.csv", render_via_file([&](const fs::path& p) { write_truth(p, data); }));
    run.commit(c.out_dir, merged, cfg.seed);

    int positives = 0;
    for (const auto& p : data.patients) positives += p.label;
    out << "wrote " << data.patients.size() << " patients (" << positives << " positive), "
        << data.lesions.records.size() << " lesions to " << c.out_dir << "\n";
    return kExitOk;
}

std::string model_name(const TrainConfig& cfg) {
    return cfg.ablation.label() + "_" + std::string(to_string(cfg.model.pooling));
}

int cmd_train(const Common& c, const TrainFlags& f, const Overrides& ov, bool save_model,
              const std::vector<std::string>& argv, std::ostream& out, std::ostream& err) {
    json merged;
    TrainConfig cfg = train_config(c, ov, merged);
    Run run("train", argv);
    run.input(f.lesions);
    run.input(f.patients);
    const LoadedData data = load_data(f.lesions, f.patients, err);

    CvReport report = run_cv(data.bags, data.feature_names, cfg);
    report.model_name = model_name(cfg);

    json j{{"config", merged},
           {"feature_names", data.feature_names},
           {"excluded_patients", data.excluded},
           {"report", report}};
    run.output("report.json", j.dump(2) + "\n");
    run.output("predictions.csv", predictions_csv(report));
    run.output("risk.csv", risk_csv(report));
    run.output("roc_points.csv", roc_csv({{report.model_name, &report}}));

    if (save_model) {
        const auto bags = select_instances(data.bags, data.feature_names, cfg);
        const FoldModel fm = train_fold(bags, data.feature_names, cfg, derive_seed(cfg.seed, 0xF1A1));
        run.output("model.json", json(fm.model).dump(2) + "\n");
        run.output("normalizer.json", json(fm.normalizer).dump(2) + "\n");
    }
    run.commit(c.out_dir, merged, cfg.seed);

    out << report.model_name << ": AUC " << report.auc.mean << " [" << report.auc.ci_low << ", "
        << report.auc.ci_high << "], accuracy " << report.accuracy.mean << " +- " << report.accuracy.std
        << " (" << report.models_trained << " models)\n";
    return kExitOk;
}

int cmd_ablate(const Common& c, const TrainFlags& f, const Overrides& ov, const std::vector<std::string>& argv,
               std::ostream& out, std::ostream& err) {
    json merged;
    TrainConfig cfg = train_config(c, ov, merged);
    const auto poolings = parse_pooling_list(f.poolings);
    const bool explicit_flags = f.multi_opt->count() + f.log_opt->count() + f.ae_opt->count() > 0;

    Run run("ablate", argv);
    run.input(f.lesions);
    run.input(f.patients);
    const LoadedData data = load_data(f.lesions, f.patients, err);

    std::vector<ComparisonRow> rows;
    json pooling_names = json::array();
    for (Pooling p : poolings) pooling_names.push_back(std::string(to_string(p)));
    if (explicit_flags) {
        rows = run_pooling_comparison(data.bags, data.feature_names, cfg, poolings);
    } else {
        for (Pooling p : poolings) {
            TrainConfig pc = cfg;
            pc.model.pooling = p;
            auto ladder = run_ablation(data.bags, data.feature_names, pc);
            if (poolings.size() > 1) {
                for (auto& r : ladder) r.name += "_" + std::string(to_string(p));
            }
            for (auto& r : ladder) rows.push_back(std::move(r));
        }
    }
    merged["poolings"] = pooling_names;
    merged["mode"] = explicit_flags ? "pooling" : "ablation";

    json reports = json::array();
    std::string predictions = "model,patient_id,label,prob\n";
    std::string risk = "model,patient_id,prob,risk\n";
    std::vector<std::pair<std::string, const CvReport*>> curves;
    for (const auto& row : rows) {
        json r = row.report;
        r["name"] = row.name;
        reports.push_back(std::move(r));
        const auto groups = median_dichotomize(row.report.consensus);
        for (std::size_t i = 0; i < row.report.patient_ids.size(); ++i) {
            const std::string p = csv::format_double(row.report.consensus[i]);
            predictions += row.name + "," + row.report.patient_ids[i] + "," +
                           std::to_string(row.report.labels[i]) + "," + p + "\n";
            risk += row.name + "," + row.report.patient_ids[i] + "," + p + "," + std::to_string(groups[i]) + "\n";
        }
        curves.emplace_back(row.name, &row.report);
    }
    const std::string table = render_comparison_table(rows);
    json j{{"config", merged}, {"feature_names", data.feature_names}, {"excluded_patients", data.excluded},
           {"rows", reports}};
    run.output("report.json", j.dump(2) + "\n");
    run.output("table.txt", table);
    run.output("predictions.csv", predictions);
    run.output("risk.csv", risk);
    run.output("roc_points.csv", roc_csv(curves));
    run.commit(c.out_dir, merged, cfg.seed);
    out << table;
    return kExitOk;
}

struct CoxFlags {
    std::string input, patients, ties = "efron";
    std::vector<std::string> scores;
    std::vector<std::string> columns;
};

// Joins score CSVs (patient_id,<columns...>) onto the patient table.
SurvivalData join_scores(const CoxFlags& f) {
    const auto patients = load_patients(f.patients);
    std::map<std::string, std::size_t> row_of;
    for (std::size_t i = 0; i < patients.size(); ++i) row_of[patients[i].patient_id] = i;

    std::vector<std::string> names;
    std::vector<std::vector<double>> columns;  // [column][patient]
    std::vector<std::vector<bool>> present;
    const std::set<std::string> wanted(f.columns.begin(), f.columns.end());
    for (const auto& path : f.scores) {
        const csv::Table t = csv::read(path);
        const std::size_t id_col = t.column("patient_id");
        for (std::size_t col = 0; col < t.header.size(); ++col) {
            if (col == id_col) continue;
            const std::string& name = t.header[col];
            if (!wanted.empty() && !wanted.contains(name)) continue;
            if (std::find(names.begin(), names.end(), name) != names.end()) {
                throw InputError("score column '" + name + "' appears in more than one file");
            }
            std::vector<double> values(patients.size(), 0.0);
            std::vector<bool> seen(patients.size(), false);
            for (std::size_t r = 0; r < t.rows.size(); ++r) {
                auto it = row_of.find(t.rows[r][id_col]);
                if (it == row_of.end()) continue;
                values[it->second] = csv::parse_double(t.rows[r][col], t, r, col);
                seen[it->second] = true;
            }
            names.push_back(name);
            columns.push_back(std::move(values));
            present.push_back(std::move(seen));
        }
    }
    for (const auto& w : wanted) {
        if (std::find(names.begin(), names.end(), w) == names.end()) {
            throw InputError("score column '" + w + "' not found");
        }
    }
    if (names.empty()) throw InputError("no score columns to analyse");

    SurvivalData d;
    d.covariate_names = names;
    std::vector<std::size_t> keep;
    for (std::size_t i = 0; i < patients.size(); ++i) {
        bool all = true;
        for (const auto& s : present) all = all && s[i];
        if (all) keep.push_back(i);
    }
    d.covariates.resize(static_cast<Eigen::Index>(keep.size()), static_cast<Eigen::Index>(names.size()));
    for (std::size_t r = 0; r < keep.size(); ++r) {
        const auto& p = patients[keep[r]];
        d.subject_ids.push_back(p.patient_id);
        d.times.push_back(p.survival_months);
        d.events.push_back(p.event);
        for (std::size_t k = 0; k < names.size(); ++k) {
            d.covariates(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(k)) = columns[k][keep[r]];
        }
    }
    return d;
}

int cmd_cox(const Common& c, const CoxFlags& f, const std::vector<std::string>& argv, std::ostream& out,
            std::ostream& err) {
    json merged;
    if (!c.config_path.empty()) merged = read_json_file(c.config_path);
    if (!merged.is_object()) merged = json::object();
    CoxFlags flags = f;
    if (flags.ties == "efron" && merged.contains("ties")) flags.ties = merged["ties"].get<std::string>();
    if (flags.ties != "efron" && flags.ties != "breslow") throw InputError("ties must be efron or breslow");
    merged["ties"] = flags.ties;

    Run run("cox", argv);
    SurvivalData data;
    if (!flags.input.empty()) {
        if (!flags.patients.empty() || !flags.scores.empty()) {
            throw InputError("--input cannot be combined with --patients/--scores");
        }
        run.input(flags.input);
        data = load_survival_csv(flags.input);
        if (!flags.columns.empty()) {
            std::vector<Eigen::Index> idx;
            for (const auto& name : flags.columns) {
                auto it = std::find(data.covariate_names.begin(), data.covariate_names.end(), name);
                if (it == data.covariate_names.end()) throw InputError("score column '" + name + "' not found");
                idx.push_back(it - data.covariate_names.begin());
            }
            data = data.select_columns(idx);
        }
        merged["input"] = flags.input;
    } else {
        if (flags.patients.empty() || flags.scores.empty()) {
            throw InputError("cox needs --input, or --patients together with --scores");
        }
        run.input(flags.patients);
        for (const auto& s : flags.scores) run.input(s);
        data = join_scores(flags);
        merged["patients"] = flags.patients;
        merged["scores"] = flags.scores;
    }
    merged["columns"] = data.covariate_names;

    CoxOptions options;
    options.ties = flags.ties == "efron" ? TieMethod::efron : TieMethod::breslow;
    const BiomarkerTable table = biomarker_table(data, options);
    const std::string text = render_biomarker_table(table);
    json j{{"config", merged}, {"n", data.size()}, {"table", table}};
    run.output("report.json", j.dump(2) + "\n");
    run.output("table.txt", text);
    run.commit(c.out_dir, merged, c.seed);

    for (const auto& row : table.univariate) {
        if (!row.fit) err << "warning: " << row.name << ": " << row.error << "\n";
    }
    if (!table.multivariable) err << "warning: multivariable fit: " << table.multivariable_error << "\n";
    out << text;
    return kExitOk;
}

struct NormalizeFlags {
    std::string lesions, scheme = "twostep", std_mode = "population";
    double epsilon = 1e-8;
    bool rescale = false;
};

int cmd_normalize(const Common& c, const NormalizeFlags& f, const std::vector<std::string>& argv,
                  std::ostream& out) {
    json merged;
    if (!c.config_path.empty()) merged = read_json_file(c.config_path);
    if (!merged.is_object()) merged = json::object();
    NormOptions options;
    options.scheme = parse_norm_scheme(f.scheme);
    if (f.std_mode != "population" && f.std_mode != "sample") {
        throw InputError("std-mode must be population or sample");
    }
    options.std_mode = f.std_mode == "population" ? StdMode::population : StdMode::sample;
    options.epsilon = f.epsilon;
    merged["scheme"] = f.scheme;
    merged["std_mode"] = f.std_mode;
    merged["epsilon"] = f.epsilon;
    merged["rescale"] = f.rescale;

    Run run("normalize", argv);
    run.input(f.lesions);
    const LesionTable table = load_lesions(f.lesions);
    if (table.records.empty()) throw InputError(f.lesions + ": no lesions");
    Eigen::MatrixXd raw(static_cast<Eigen::Index>(table.records.size()),
                        static_cast<Eigen::Index>(table.feature_names.size()));
    for (std::size_t i = 0; i < table.records.size(); ++i) {
        for (std::size_t k = 0; k < table.feature_names.size(); ++k) {
            raw(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = table.records[i].features[k];
        }
    }
    const NormalizerState state = fit_normalizer(raw, options, table.feature_names);
    Eigen::MatrixXd z = transform(state, raw);
    if (f.rescale) z = rescale_unit_interval(state, z);
    const auto kept = state.kept_feature_names();

    std::string normalized = "patient_id,lesion_id";
    for (const auto& n : kept) normalized += "," + n;
    normalized += "\n";
    for (std::size_t i = 0; i < table.records.size(); ++i) {
        normalized += table.records[i].patient_id + "," + table.records[i].lesion_id;
        for (Eigen::Index k = 0; k < z.cols(); ++k) {
            normalized += "," + csv::format_double(z(static_cast<Eigen::Index>(i), k));
        }
        normalized += "\n";
    }

    std::string skew = "feature,raw_skewness,normalized_skewness\n";
    Eigen::Index out_col = 0;
    for (std::size_t k = 0; k < table.feature_names.size(); ++k) {
        skew += table.feature_names[k];
        if (state.dropped[k] || raw.rows() < 3) {
            skew += ",,\n";
            if (!state.dropped[k]) ++out_col;
            continue;
        }
        skew += "," + csv::format_double(skewness(raw.col(static_cast<Eigen::Index>(k)))) + "," +
                csv::format_double(skewness(z.col(out_col++))) + "\n";
    }

    run.output("normalizer.json", json(state).dump(2) + "\n");
    run.output("normalized.csv", normalized);
    run.output("skewness.csv", skew);
    run.commit(c.out_dir, merged, c.seed);
    out << "normalized " << table.records.size() << " lesions, " << kept.size() << " features kept";
    if (const auto dropped = state.dropped_feature_names(); !dropped.empty()) {
        out << ", dropped constant:";
        for (const auto& d : dropped) out << " " << d;
    }
    out << "\n";
    return kExitOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Multiple-instance neural networks for lesion-level tabular features", "aminn"};
    app.require_subcommand(1);
    app.set_version_flag("--version", AMINN_VERSION);

    std::vector<std::string> argv{"aminn"};
    argv.insert(argv.end(), args.begin(), args.end());

    // synth
    CLI::App* synth = app.add_subcommand("synth", "Generate a synthetic multi-lesion cohort");
    Common synth_common;
    Overrides synth_ov;
    add_common(synth, synth_common);
    int n_patients = 0, min_lesions = 0, max_lesions = 0, n_features = 0, informative = 0;
    double censor = 0, skew = 0, effect = 0, hazard = 0;
    std::string mechanism;
    bool stochastic = true;
    synth_ov.option(synth, "--patients", "/n_patients", n_patients, "Number of patients");
    synth_ov.option(synth, "--min-lesions", "/min_lesions", min_lesions, "Minimum lesions per patient");
    synth_ov.option(synth, "--max-lesions", "/max_lesions", max_lesions, "Maximum lesions per patient");
    synth_ov.option(synth, "--features", "/n_features", n_features, "Feature count, volume included");
    synth_ov.option(synth, "--informative", "/informative_features", informative, "Informative feature count");
    synth_ov.option(synth, "--mechanism", "/mechanism", mechanism,
                    "Label mechanism: " + std::string(kMechanismNames))
        ->check(CLI::IsMember({"largest_only", "aggregate_mean", "aggregate_max"}));
    synth_ov.option(synth, "--censor-rate", "/censor_rate", censor, "Fraction of patients censored early");
    synth_ov.option(synth, "--skew", "/feature_skew", skew, "Log-normal sigma of raw features");
    synth_ov.option(synth, "--effect-size", "/effect_size", effect, "Log-hazard per unit lesion score");
    synth_ov.option(synth, "--baseline-hazard", "/baseline_hazard", hazard, "Monthly hazard at zero risk");
    synth_ov.flag(synth, "--stochastic-times,!--deterministic-times", "/stochastic_times", stochastic,
                  "Draw survival times (default) or use the median of each law");

    // train
    CLI::App* train = app.add_subcommand("train", "Cross-validate one AMINN configuration");
    Common train_common;
    Overrides train_ov;
    TrainFlags train_flags;
    bool save_model = false;
    add_common(train, train_common);
    add_train_flags(train, train_flags, train_ov, false);
    train->add_flag("--save-model", save_model, "Also fit on all patients and write model.json, normalizer.json");

    // ablate
    CLI::App* ablate = app.add_subcommand("ablate", "Ablation ladder or pooling comparison");
    Common ablate_common;
    Overrides ablate_ov;
    TrainFlags ablate_flags;
    add_common(ablate, ablate_common);
    add_train_flags(ablate, ablate_flags, ablate_ov, true);

    // cox
    CLI::App* cox = app.add_subcommand("cox", "Uni- and multivariable Cox regression of score columns");
    Common cox_common;
    CoxFlags cox_flags;
    add_common(cox, cox_common);
    cox->add_option("--input", cox_flags.input, "Survival CSV: patient_id,survival_months,event,<scores...>");
    cox->add_option("--patients", cox_flags.patients, "Patient CSV providing survival_months and event");
    cox->add_option("--scores", cox_flags.scores, "Score CSVs keyed by patient_id")->delimiter(',');
    cox->add_option("--score-columns", cox_flags.columns, "Restrict to these score columns")->delimiter(',');
    cox->add_option("--ties", cox_flags.ties, "Tie handling: efron or breslow")
        ->check(CLI::IsMember({"efron", "breslow"}));

    // normalize
    CLI::App* normalize = app.add_subcommand("normalize", "Fit and apply feature normalization");
    Common norm_common;
    NormalizeFlags norm_flags;
    add_common(normalize, norm_common);
    normalize->add_option("--lesions", norm_flags.lesions, "Lesion CSV")->required();
    normalize->add_option("--scheme", norm_flags.scheme, "twostep or zscore")
        ->check(CLI::IsMember({"twostep", "zscore"}));
    normalize->add_option("--std-mode", norm_flags.std_mode, "population or sample")
        ->check(CLI::IsMember({"population", "sample"}));
    normalize->add_option("--epsilon", norm_flags.epsilon, "Floor of the log argument");
    normalize->add_flag("--rescale", norm_flags.rescale, "Min-max rescale Z-scores into [0,1]");

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kExitOk;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return kExitOk;
    } catch (const CLI::CallForVersion&) {
        out << AMINN_VERSION << "\n";
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n";
        return kExitUsage;
    }

    try {
        if (*synth) return cmd_synth(synth_common, synth_ov, argv, out);
        if (*train) return cmd_train(train_common, train_flags, train_ov, save_model, argv, out, err);
        if (*ablate) return cmd_ablate(ablate_common, ablate_flags, ablate_ov, argv, out, err);
        if (*cox) return cmd_cox(cox_common, cox_flags, argv, out, err);
        if (*normalize) return cmd_normalize(norm_common, norm_flags, argv, out);
    } catch (const InputError& e) {
        err << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const NumericError& e) {
        err << "numeric failure: " << e.what() << "\n";
        return kExitFailure;
    } catch (const std::exception& e) {
        err << "internal error: " << e.what() << "\n";
        return kExitFailure;
    }
    return kExitUsage;
}

}  // namespace aminn::cli
