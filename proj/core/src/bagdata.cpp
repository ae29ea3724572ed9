#include "aminn/bagdata.hpp"

#include <algorithm>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <unordered_map>

#include "aminn/csv.hpp"
#include "aminn/error.hpp"
#include "aminn/random.hpp"

namespace aminn {
namespace {

int parse_binary(std::string_view cell, const csv::Table& table, std::size_t row, std::size_t col) {
    if (cell == "true" || cell == "TRUE" || cell == "True") return 1;
    if (cell == "false" || cell == "FALSE" || cell == "False") return 0;
    const double v = csv::parse_double(cell, table, row, col);
    if (v == 0.0) return 0;
    if (v == 1.0) return 1;
    throw InputError(table.source + ":" + std::to_string(table.line_numbers[row]) + ": column '" +
                     table.header[col] + "': expected 0 or 1, got '" + std::string(cell) + "'");
}

}  // namespace

int outcome_label(double survival_months, int event) {
    return (event == 1 && survival_months <= kLabelCutMonths) ? 1 : 0;
}

bool Bag::operator==(const Bag& other) const {
    return patient_id == other.patient_id && lesion_ids == other.lesion_ids &&
           label == other.label && instances.rows() == other.instances.rows() &&
           instances.cols() == other.instances.cols() && instances == other.instances;
}

LesionTable load_lesions(const std::filesystem::path& path) {
    const csv::Table table = csv::read(path);
    if (table.header.size() < 3 || table.header[0] != "patient_id" || table.header[1] != "lesion_id") {
        throw InputError(table.source +
                         ": header must be patient_id,lesion_id,<feature_1>,...,<feature_F>");
    }
    LesionTable out;
    out.feature_names.assign(table.header.begin() + 2, table.header.end());
    std::set<std::pair<std::string, std::string>> seen;
    out.records.reserve(table.rows.size());
    for (std::size_t r = 0; r < table.rows.size(); ++r) {
        const auto& cells = table.rows[r];
        LesionRecord rec;
        rec.patient_id = cells[0];
        rec.lesion_id = cells[1];
        if (rec.patient_id.empty() || rec.lesion_id.empty()) {
            throw InputError(table.source + ":" + std::to_string(table.line_numbers[r]) +
                             ": empty patient_id or lesion_id");
        }
        if (!seen.emplace(rec.patient_id, rec.lesion_id).second) {
            throw InputError(table.source + ":" + std::to_string(table.line_numbers[r]) +
                             ": duplicate lesion " + rec.patient_id + "/" + rec.lesion_id);
        }
        rec.features.reserve(out.feature_names.size());
        for (std::size_t c = 2; c < cells.size(); ++c) {
            rec.features.push_back(csv::parse_double(cells[c], table, r, c));
        }
        out.records.push_back(std::move(rec));
    }
    return out;
}

std::vector<PatientRecord> load_patients(const std::filesystem::path& path) {
    const csv::Table table = csv::read(path);
    const std::size_t c_id = table.column("patient_id");
    const std::size_t c_label = table.column("label");
    const std::size_t c_months = table.column("survival_months");
    const std::size_t c_event = table.column("event");

    std::vector<PatientRecord> out;
    std::set<std::string> ids;
    std::vector<std::string> inconsistent;
    for (std::size_t r = 0; r < table.rows.size(); ++r) {
        const auto& cells = table.rows[r];
        PatientRecord p;
        p.patient_id = cells[c_id];
        if (p.patient_id.empty()) {
            throw InputError(table.source + ":" + std::to_string(table.line_numbers[r]) +
                             ": empty patient_id");
        }
        if (!ids.insert(p.patient_id).second) {
            throw InputError(table.source + ":" + std::to_string(table.line_numbers[r]) +
                             ": duplicate patient_id '" + p.patient_id + "'");
        }
        p.label = parse_binary(cells[c_label], table, r, c_label);
        p.event = parse_binary(cells[c_event], table, r, c_event);
        p.survival_months = csv::parse_double(cells[c_months], table, r, c_months);
        if (p.survival_months < 0.0) {
            throw InputError(table.source + ":" + std::to_string(table.line_numbers[r]) +
                             ": negative survival_months");
        }
        if (p.label != outcome_label(p.survival_months, p.event)) {
            inconsistent.push_back(p.patient_id + " (line " + std::to_string(table.line_numbers[r]) +
                                   ")");
        }
        out.push_back(std::move(p));
    }
    if (!inconsistent.empty()) {
        std::ostringstream msg;
        msg << table.source << ": label inconsistent with survival_months/event under the "
            << kLabelCutMonths << "-month cut for:";
        for (const auto& s : inconsistent) msg << ' ' << s;
        throw InputError(msg.str());
    }
    return out;
}

void write_lesions(const std::filesystem::path& path, const LesionTable& table) {
    std::string text = "patient_id,lesion_id";
    for (const auto& name : table.feature_names) text += "," + name;
    text += "\n";
    for (const auto& rec : table.records) {
        text += rec.patient_id + "," + rec.lesion_id;
        for (double v : rec.features) text += "," + csv::format_double(v);
        text += "\n";
    }
    csv::write_text_file(path, text);
}

void write_patients(const std::filesystem::path& path, const std::vector<PatientRecord>& patients) {
    std::string text = "patient_id,label,survival_months,event\n";
    for (const auto& p : patients) {
        text += p.patient_id + "," + std::to_string(p.label) + "," +
                csv::format_double(p.survival_months) + "," + std::to_string(p.event) + "\n";
    }
    csv::write_text_file(path, text);
}

BagAssembly assemble_bags(const LesionTable& lesions, const std::vector<PatientRecord>& patients) {
    std::unordered_map<std::string, std::size_t> patient_index;
    for (std::size_t i = 0; i < patients.size(); ++i) patient_index.emplace(patients[i].patient_id, i);

    const std::size_t F = lesions.feature_names.size();
    std::vector<std::vector<const LesionRecord*>> grouped(patients.size());
    std::vector<std::string> orphans;
    for (const auto& rec : lesions.records) {
        if (rec.features.size() != F) {
            throw InputError("lesion " + rec.patient_id + "/" + rec.lesion_id + " has " +
                             std::to_string(rec.features.size()) + " features, expected " +
                             std::to_string(F));
        }
        const auto it = patient_index.find(rec.patient_id);
        if (it == patient_index.end()) {
            orphans.push_back(rec.patient_id + "/" + rec.lesion_id);
            continue;
        }
        grouped[it->second].push_back(&rec);
    }
    if (!orphans.empty()) {
        std::string msg = "lesions reference unknown patients:";
        for (const auto& o : orphans) msg += " " + o;
        throw InputError(msg);
    }

    BagAssembly out;
    for (std::size_t i = 0; i < patients.size(); ++i) {
        auto& recs = grouped[i];
        if (recs.empty()) {
            out.excluded_patients.push_back(patients[i].patient_id);
            continue;
        }
        std::sort(recs.begin(), recs.end(),
                  [](const LesionRecord* a, const LesionRecord* b) { return a->lesion_id < b->lesion_id; });
        Bag bag;
        bag.patient_id = patients[i].patient_id;
        bag.label = patients[i].label;
        bag.instances.resize(static_cast<Eigen::Index>(recs.size()), static_cast<Eigen::Index>(F));
        for (std::size_t j = 0; j < recs.size(); ++j) {
            bag.lesion_ids.push_back(recs[j]->lesion_id);
            for (std::size_t f = 0; f < F; ++f) {
                bag.instances(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(f)) =
                    recs[j]->features[f];
            }
        }
        out.bags.push_back(std::move(bag));
    }
    return out;
}

LesionTable lesion_table_from_bags(const std::vector<Bag>& bags,
                                   const std::vector<std::string>& feature_names) {
    LesionTable table;
    table.feature_names = feature_names;
    for (const auto& bag : bags) {
        for (Eigen::Index j = 0; j < bag.size(); ++j) {
            LesionRecord rec;
            rec.patient_id = bag.patient_id;
            rec.lesion_id = bag.lesion_ids[static_cast<std::size_t>(j)];
            rec.features.assign(bag.instances.row(j).begin(), bag.instances.row(j).end());
            table.records.push_back(std::move(rec));
        }
    }
    return table;
}

Bag select_largest_lesion(const Bag& bag, Eigen::Index volume_feature_index) {
    if (volume_feature_index < 0 || volume_feature_index >= bag.feature_count()) {
        throw InputError("volume feature index " + std::to_string(volume_feature_index) +
                         " out of range for " + std::to_string(bag.feature_count()) + " features");
    }
    if (bag.size() == 0) throw InputError("bag " + bag.patient_id + " is empty");
    Eigen::Index best = 0;
    for (Eigen::Index j = 1; j < bag.size(); ++j) {
        const double v = bag.instances(j, volume_feature_index);
        const double b = bag.instances(best, volume_feature_index);
        const auto& id = bag.lesion_ids[static_cast<std::size_t>(j)];
        const auto& best_id = bag.lesion_ids[static_cast<std::size_t>(best)];
        if (v > b || (v == b && id < best_id)) best = j;
    }
    Bag out;
    out.patient_id = bag.patient_id;
    out.label = bag.label;
    out.lesion_ids = {bag.lesion_ids[static_cast<std::size_t>(best)]};
    out.instances = bag.instances.row(best);
    return out;
}

std::size_t feature_index(const std::vector<std::string>& feature_names, const std::string& name) {
    const auto it = std::find(feature_names.begin(), feature_names.end(), name);
    if (it == feature_names.end()) throw InputError("no feature column named '" + name + "'");
    return static_cast<std::size_t>(it - feature_names.begin());
}

int SplitPlan::fold_of(int repeat, const std::string& patient_id) const {
    const auto it = std::find(patient_ids.begin(), patient_ids.end(), patient_id);
    if (it == patient_ids.end()) throw InputError("unknown patient '" + patient_id + "'");
    return assignments.at(static_cast<std::size_t>(repeat))[static_cast<std::size_t>(it - patient_ids.begin())];
}

std::vector<std::size_t> SplitPlan::test_indices(int repeat, int fold) const {
    std::vector<std::size_t> out;
    const auto& a = assignments.at(static_cast<std::size_t>(repeat));
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (a[i] == fold) out.push_back(i);
    }
    return out;
}

std::vector<std::size_t> SplitPlan::train_indices(int repeat, int fold) const {
    std::vector<std::size_t> out;
    const auto& a = assignments.at(static_cast<std::size_t>(repeat));
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (a[i] != fold) out.push_back(i);
    }
    return out;
}

SplitPlan stratified_kfold(const std::vector<int>& labels, const std::vector<std::string>& ids,
                           int folds, int repeats, std::uint64_t seed) {
    if (folds < 2) throw InputError("folds must be >= 2");
    if (repeats < 1) throw InputError("repeats must be >= 1");
    if (labels.size() != ids.size()) throw InputError("labels and ids differ in length");

    std::vector<std::size_t> positives, negatives;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        (labels[i] == 1 ? positives : negatives).push_back(i);
    }
    if (positives.size() < static_cast<std::size_t>(folds) ||
        negatives.size() < static_cast<std::size_t>(folds)) {
        throw InputError("stratified " + std::to_string(folds) + "-fold split needs at least " +
                         std::to_string(folds) + " members per class; have " +
                         std::to_string(positives.size()) + " positive, " +
                         std::to_string(negatives.size()) + " negative");
    }

    SplitPlan plan;
    plan.repeats = repeats;
    plan.folds = folds;
    plan.seed = seed;
    plan.patient_ids = ids;
    for (int r = 0; r < repeats; ++r) {
        Rng rng(derive_seed(seed, 0x5117, static_cast<std::uint64_t>(r)));
        std::vector<int> assignment(labels.size(), -1);
        std::size_t dealt = 0;
        for (auto* cls : {&positives, &negatives}) {
            std::vector<std::size_t> order = *cls;
            std::shuffle(order.begin(), order.end(), rng);
            for (std::size_t idx : order) {
                assignment[idx] = static_cast<int>(dealt % static_cast<std::size_t>(folds));
                ++dealt;
            }
        }
        plan.assignments.push_back(std::move(assignment));
    }
    return plan;
}

SplitPlan stratified_kfold(const std::vector<Bag>& bags, int folds, int repeats, std::uint64_t seed) {
    std::vector<int> labels;
    std::vector<std::string> ids;
    for (const auto& b : bags) {
        labels.push_back(b.label);
        ids.push_back(b.patient_id);
    }
    return stratified_kfold(labels, ids, folds, repeats, seed);
}

}  // namespace aminn
