#include "aminn/survival.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <numeric>
#include <sstream>

#include <nlohmann/json.hpp>

#include "aminn/csv.hpp"
#include "aminn/error.hpp"
#include "aminn/metrics.hpp"

namespace aminn {
namespace {

constexpr double kZ95 = 1.96;

void validate(const SurvivalData& d) {
    const auto n = static_cast<std::size_t>(d.size());
    if (d.events.size() != n || static_cast<std::size_t>(d.covariates.rows()) != n) {
        throw InputError("survival data: times, events and covariates differ in length");
    }
    if (static_cast<Eigen::Index>(d.covariate_names.size()) != d.covariates.cols()) {
        throw InputError("survival data: covariate names do not match covariate columns");
    }
    if (d.covariates.cols() < 1) throw InputError("survival data: no covariates");
    if (static_cast<Eigen::Index>(n) <= d.covariates.cols()) {
        throw InputError("cox_fit needs more subjects than covariates");
    }
    int events = 0;
    for (std::size_t i = 0; i < n; ++i) {
        if (!(d.times[i] > 0.0) || !std::isfinite(d.times[i])) {
            throw InputError("survival times must be positive and finite");
        }
        if (d.events[i] != 0 && d.events[i] != 1) throw InputError("events must be 0 or 1");
        events += d.events[i];
    }
    if (events == 0) throw InputError("survival data has no events");
    if (!d.covariates.allFinite()) throw InputError("covariates contain non-finite values");
}

Eigen::MatrixXd centered(const Eigen::MatrixXd& x) {
    return x.rowwise() - x.colwise().mean();
}

void check_rank(const Eigen::MatrixXd& xc, const std::vector<std::string>& names) {
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(xc);
    qr.setThreshold(1e-10);
    if (qr.rank() < xc.cols()) {
        std::string list;
        for (const auto& n : names) list += (list.empty() ? "" : ", ") + n;
        throw RankDeficiencyError("covariates are collinear or constant (rank " + std::to_string(qr.rank()) +
                                  " < " + std::to_string(xc.cols()) + "): " + list);
    }
}

CoxDerivatives derivatives(const Eigen::MatrixXd& x, const std::vector<double>& times,
                           const std::vector<int>& events, const Eigen::VectorXd& beta, TieMethod ties) {
    const Eigen::Index n = x.rows();
    const Eigen::Index p = x.cols();
    const Eigen::VectorXd eta = x * beta;
    const double eta_max = eta.maxCoeff();
    // Scaling every e^eta by a common factor leaves the likelihood unchanged
    // apart from the sum of eta terms, which use unscaled eta.
    const Eigen::VectorXd w = (eta.array() - eta_max).exp().matrix();

    std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    std::sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) {
        return times[static_cast<std::size_t>(a)] > times[static_cast<std::size_t>(b)];
    });

    CoxDerivatives out;
    out.gradient = Eigen::VectorXd::Zero(p);
    out.hessian = Eigen::MatrixXd::Zero(p, p);
    double s0 = 0.0;
    Eigen::VectorXd s1 = Eigen::VectorXd::Zero(p);
    Eigen::MatrixXd s2 = Eigen::MatrixXd::Zero(p, p);

    for (std::size_t i = 0; i < order.size();) {
        const double t = times[static_cast<std::size_t>(order[i])];
        std::size_t j = i;
        double d0 = 0.0;
        Eigen::VectorXd d1 = Eigen::VectorXd::Zero(p);
        Eigen::MatrixXd d2 = Eigen::MatrixXd::Zero(p, p);
        int d = 0;
        while (j < order.size() && times[static_cast<std::size_t>(order[j])] == t) {
            const Eigen::Index s = order[j];
            const Eigen::VectorXd xs = x.row(s).transpose();
            const double ws = w(s);
            s0 += ws;
            s1 += ws * xs;
            s2 += ws * xs * xs.transpose();
            if (events[static_cast<std::size_t>(s)] == 1) {
                ++d;
                d0 += ws;
                d1 += ws * xs;
                d2 += ws * xs * xs.transpose();
                out.log_likelihood += eta(s);
                out.gradient += xs;
            }
            ++j;
        }
        for (int l = 0; l < d; ++l) {
            const double f = ties == TieMethod::efron ? static_cast<double>(l) / d : 0.0;
            const double den = s0 - f * d0;
            const Eigen::VectorXd num1 = s1 - f * d1;
            const Eigen::MatrixXd num2 = s2 - f * d2;
            out.log_likelihood -= std::log(den) + eta_max;
            out.gradient -= num1 / den;
            out.hessian -= num2 / den - num1 * num1.transpose() / (den * den);
        }
        i = j;
    }
    return out;
}

std::string format_fixed(double v, int digits) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(digits) << v;
    return os.str();
}

std::string format_ratio(double v) {
    if (v != 0.0 && (v >= 1e4 || v < 1e-2)) {
        std::ostringstream os;
        os << std::scientific << std::setprecision(1) << v;
        return os.str();
    }
    return format_fixed(v, 2);
}

std::string format_p(double p) {
    if (p < 0.001) return "<0.001";
    return format_fixed(p, 3);
}

}  // namespace

std::string_view to_string(TieMethod ties) { return ties == TieMethod::efron ? "efron" : "breslow"; }

SurvivalData SurvivalData::select_columns(std::span<const Eigen::Index> columns) const {
    SurvivalData out;
    out.subject_ids = subject_ids;
    out.times = times;
    out.events = events;
    out.covariates.resize(covariates.rows(), static_cast<Eigen::Index>(columns.size()));
    for (std::size_t c = 0; c < columns.size(); ++c) {
        out.covariates.col(static_cast<Eigen::Index>(c)) = covariates.col(columns[c]);
        out.covariate_names.push_back(covariate_names.at(static_cast<std::size_t>(columns[c])));
    }
    return out;
}

SurvivalData load_survival_csv(const std::string& path) {
    const csv::Table table = csv::read(path);
    const std::size_t c_id = table.column("patient_id");
    const std::size_t c_time = table.column("survival_months");
    const std::size_t c_event = table.column("event");
    std::vector<std::size_t> score_cols;
    SurvivalData d;
    for (std::size_t c = 0; c < table.header.size(); ++c) {
        if (c == c_id || c == c_time || c == c_event) continue;
        score_cols.push_back(c);
        d.covariate_names.push_back(table.header[c]);
    }
    if (score_cols.empty()) throw InputError(table.source + ": no score columns");
    d.covariates.resize(static_cast<Eigen::Index>(table.rows.size()), static_cast<Eigen::Index>(score_cols.size()));
    for (std::size_t r = 0; r < table.rows.size(); ++r) {
        d.subject_ids.push_back(table.rows[r][c_id]);
        d.times.push_back(csv::parse_double(table.rows[r][c_time], table, r, c_time));
        const double e = csv::parse_double(table.rows[r][c_event], table, r, c_event);
        if (e != 0.0 && e != 1.0) {
            throw InputError(table.source + ":" + std::to_string(table.line_numbers[r]) + ": event must be 0 or 1");
        }
        d.events.push_back(static_cast<int>(e));
        for (std::size_t k = 0; k < score_cols.size(); ++k) {
            d.covariates(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(k)) =
                csv::parse_double(table.rows[r][score_cols[k]], table, r, score_cols[k]);
        }
    }
    return d;
}

CoxDerivatives cox_partial_likelihood(const SurvivalData& data, const Eigen::VectorXd& beta, TieMethod ties) {
    if (beta.size() != data.covariates.cols()) throw InputError("beta length does not match covariates");
    return derivatives(data.covariates, data.times, data.events, beta, ties);
}

double wald_p_value(double z) {
    return std::max(std::erfc(std::abs(z) / std::sqrt(2.0)), std::numeric_limits<double>::min());
}

CoxFit cox_fit(const SurvivalData& data, const CoxOptions& options) {
    validate(data);
    const Eigen::MatrixXd x = centered(data.covariates);
    check_rank(x, data.covariate_names);
    const Eigen::Index p = x.cols();

    CoxFit fit;
    fit.names = data.covariate_names;
    Eigen::VectorXd beta = Eigen::VectorXd::Zero(p);
    CoxDerivatives cur = derivatives(x, data.times, data.events, beta, options.ties);
    fit.log_likelihood_trace.push_back(cur.log_likelihood);

    for (int it = 0; it < options.max_iterations; ++it) {
        const Eigen::MatrixXd info = -cur.hessian;
        Eigen::LDLT<Eigen::MatrixXd> ldlt(info);
        if (ldlt.info() != Eigen::Success || !ldlt.isPositive()) {
            throw NumericError("cox_fit: information matrix is not positive definite");
        }
        const Eigen::VectorXd step = ldlt.solve(cur.gradient);
        if (cur.gradient.norm() < options.gradient_tolerance &&
            step.norm() < 1e-6 * (1.0 + beta.norm())) {
            fit.converged = true;
            break;
        }
        double scale = 1.0;
        Eigen::VectorXd next = beta + step;
        CoxDerivatives cand = derivatives(x, data.times, data.events, next, options.ties);
        const double slack = 1e-12 * std::max(1.0, std::abs(cur.log_likelihood));
        int halvings = 0;
        while (!(cand.log_likelihood >= cur.log_likelihood - slack) && halvings < options.max_step_halvings) {
            scale *= 0.5;
            next = beta + scale * step;
            cand = derivatives(x, data.times, data.events, next, options.ties);
            ++halvings;
        }
        if (!(cand.log_likelihood >= cur.log_likelihood - slack)) break;  // no ascent possible
        beta = next;
        cur = std::move(cand);
        fit.iterations = it + 1;
        fit.log_likelihood_trace.push_back(cur.log_likelihood);
        if (beta.cwiseAbs().maxCoeff() > options.divergence_bound) {
            Eigen::Index worst = 0;
            beta.cwiseAbs().maxCoeff(&worst);
            throw SeparationError("cox_fit: coefficient for '" + data.covariate_names[static_cast<std::size_t>(worst)] +
                                  "' diverged past |beta| > " + format_fixed(options.divergence_bound, 0) +
                                  " (monotone likelihood / separation)");
        }
    }
    if (!fit.converged && cur.gradient.norm() < options.gradient_tolerance) fit.converged = true;

    const Eigen::MatrixXd info = -cur.hessian;
    Eigen::LDLT<Eigen::MatrixXd> ldlt(info);
    if (ldlt.info() != Eigen::Success || !ldlt.isPositive()) {
        throw SeparationError("cox_fit: information matrix vanished at the optimum (monotone likelihood / separation)");
    }
    const Eigen::MatrixXd cov = ldlt.solve(Eigen::MatrixXd::Identity(p, p));

    fit.beta = beta;
    fit.std_error = cov.diagonal().cwiseSqrt();
    // A monotone likelihood can flatten into underflow before beta reaches the
    // divergence bound; the information then collapses and the standardized
    // standard error explodes.
    for (Eigen::Index k = 0; k < p; ++k) {
        const double sd = std::sqrt(x.col(k).squaredNorm() / static_cast<double>(x.rows()));
        if (!(fit.std_error(k) * sd <= options.divergence_bound)) {
            throw SeparationError("cox_fit: coefficient for '" + data.covariate_names[static_cast<std::size_t>(k)] +
                                  "' is unbounded (standardized SE > " + format_fixed(options.divergence_bound, 0) +
                                  "; monotone likelihood / separation)");
        }
    }
    fit.hazard_ratio = beta.array().exp();
    fit.hr_lower = (beta.array() - kZ95 * fit.std_error.array()).exp();
    fit.hr_upper = (beta.array() + kZ95 * fit.std_error.array()).exp();
    fit.z = beta.array() / fit.std_error.array();
    fit.p_value.resize(p);
    for (Eigen::Index k = 0; k < p; ++k) fit.p_value(k) = wald_p_value(fit.z(k));
    fit.log_likelihood = cur.log_likelihood;
    fit.gradient_norm = cur.gradient.norm();
    const Eigen::VectorXd lp = data.covariates * beta;
    fit.concordance = concordance_index(data.times, data.events, std::span<const double>(lp.data(), static_cast<std::size_t>(lp.size())));
    return fit;
}

double concordance_index(std::span<const double> times, std::span<const int> events,
                         std::span<const double> risks) {
    const std::size_t n = times.size();
    if (events.size() != n || risks.size() != n) throw InputError("concordance_index: length mismatch");
    double concordant = 0.0;
    std::size_t comparable = 0;
    for (std::size_t i = 0; i < n; ++i) {
        if (events[i] != 1) continue;
        for (std::size_t j = 0; j < n; ++j) {
            if (!(times[i] < times[j])) continue;
            ++comparable;
            if (risks[i] > risks[j]) {
                concordant += 1.0;
            } else if (risks[i] == risks[j]) {
                concordant += 0.5;
            }
        }
    }
    if (comparable == 0) throw InputError("concordance_index: no comparable pairs");
    return concordant / static_cast<double>(comparable);
}

std::vector<double> bh_correct(std::span<const double> p_values) {
    const std::size_t m = p_values.size();
    for (double p : p_values) {
        if (!(p > 0.0 && p <= 1.0)) throw InputError("bh_correct: p-values must lie in (0,1]");
    }
    std::vector<std::size_t> order(m);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return p_values[a] < p_values[b]; });
    std::vector<double> q(m);
    double running = 1.0;
    for (std::size_t r = m; r-- > 0;) {
        const std::size_t idx = order[r];
        running = std::min(running, p_values[idx] * (static_cast<double>(m) / static_cast<double>(r + 1)));
        q[idx] = running;
    }
    return q;
}

BiomarkerTable biomarker_table(const SurvivalData& data, const CoxOptions& options) {
    BiomarkerTable table;
    std::vector<double> p_ok;
    std::vector<std::size_t> rows_ok;
    for (Eigen::Index c = 0; c < data.covariates.cols(); ++c) {
        BiomarkerRow row;
        row.name = data.covariate_names.at(static_cast<std::size_t>(c));
        try {
            const Eigen::Index cols[] = {c};
            row.fit = cox_fit(data.select_columns(cols), options);
            p_ok.push_back(row.fit->p_value(0));
            rows_ok.push_back(table.univariate.size());
        } catch (const std::exception& e) {
            row.error = e.what();
        }
        table.univariate.push_back(std::move(row));
    }
    const std::vector<double> q = bh_correct(p_ok);
    for (std::size_t i = 0; i < rows_ok.size(); ++i) table.univariate[rows_ok[i]].q_value = q[i];

    try {
        table.multivariable = cox_fit(data, options);
        const auto& pv = table.multivariable->p_value;
        table.multivariable_q = bh_correct(std::span<const double>(pv.data(), static_cast<std::size_t>(pv.size())));
    } catch (const std::exception& e) {
        table.multivariable_error = e.what();
    }
    return table;
}

std::string render_biomarker_table(const BiomarkerTable& table) {
    auto hr = [](const CoxFit& f, Eigen::Index k) {
        return format_ratio(f.hazard_ratio(k)) + " (" + format_ratio(f.hr_lower(k)) + "-" +
               format_ratio(f.hr_upper(k)) + ") ";
    };
    std::size_t name_w = 6;
    for (const auto& r : table.univariate) name_w = std::max(name_w, r.name.size());

    std::ostringstream os;
    os << std::left << std::setw(static_cast<int>(name_w)) << "Method" << "  "
       << std::setw(24) << "Uni HR (95%CI)" << std::setw(9) << "C-index" << std::setw(8) << "p"
       << std::setw(8) << "q" << "| " << std::setw(24) << "Multi HR (95%CI)" << std::setw(8) << "p"
       << std::setw(8) << "q" << "\n";
    for (std::size_t i = 0; i < table.univariate.size(); ++i) {
        const auto& r = table.univariate[i];
        os << std::setw(static_cast<int>(name_w)) << r.name << "  ";
        if (r.fit) {
            os << std::setw(24) << hr(*r.fit, 0) << std::setw(9) << format_fixed(r.fit->concordance, 2)
               << std::setw(8) << format_p(r.fit->p_value(0)) << std::setw(8)
               << (r.q_value ? format_p(*r.q_value) : "-");
        } else {
            os << std::setw(49) << ("error: " + r.error).substr(0, 48);
        }
        os << "| ";
        if (table.multivariable) {
            const auto k = static_cast<Eigen::Index>(i);
            os << std::setw(24) << hr(*table.multivariable, k) << std::setw(8)
               << format_p(table.multivariable->p_value(k)) << std::setw(8) << format_p(table.multivariable_q[i]);
        } else {
            os << "-";
        }
        os << "\n";
    }
    if (table.multivariable) {
        os << "Multivariable C-index: " << format_fixed(table.multivariable->concordance, 2) << "\n";
    } else {
        os << "Multivariable fit failed: " << table.multivariable_error << "\n";
    }
    return os.str();
}

void to_json(nlohmann::json& j, const CoxFit& f) {
    auto vec = [](const Eigen::VectorXd& v) { return std::vector<double>(v.begin(), v.end()); };
    j = nlohmann::json{{"covariates", f.names},
                       {"beta", vec(f.beta)},
                       {"std_error", vec(f.std_error)},
                       {"hazard_ratio", vec(f.hazard_ratio)},
                       {"hr_ci95_lower", vec(f.hr_lower)},
                       {"hr_ci95_upper", vec(f.hr_upper)},
                       {"z", vec(f.z)},
                       {"p_value", vec(f.p_value)},
                       {"log_likelihood", f.log_likelihood},
                       {"c_index", f.concordance},
                       {"iterations", f.iterations},
                       {"gradient_norm", f.gradient_norm},
                       {"converged", f.converged}};
}

void to_json(nlohmann::json& j, const BiomarkerTable& t) {
    nlohmann::json uni = nlohmann::json::array();
    for (const auto& r : t.univariate) {
        nlohmann::json row{{"name", r.name}};
        if (r.fit) {
            row["fit"] = *r.fit;
            row["q_value"] = *r.q_value;
        } else {
            row["error"] = r.error;
        }
        uni.push_back(std::move(row));
    }
    j = nlohmann::json{{"univariate", uni}};
    if (t.multivariable) {
        j["multivariable"] = {{"fit", *t.multivariable}, {"q_values", t.multivariable_q}};
    } else {
        j["multivariable"] = {{"error", t.multivariable_error}};
    }
}

}  // namespace aminn
