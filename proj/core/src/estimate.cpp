#include "nrba/estimate.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <regex>

#include "nrba/csv.hpp"
#include "nrba/parallel.hpp"
#include "nrba/pool.hpp"

namespace nrba {

namespace {

struct MethodInfo {
    Method method;
    const char* tag;
};

constexpr MethodInfo kMethods[] = {
    {Method::CCA, "CCA"},
    {Method::ACA, "ACA"},
    {Method::CcaBaseW, "CCA-base-w"},
    {Method::AcaBaseW, "ACA-base-w"},
    {Method::CcaAttrW, "CCA-attr-w"},
    {Method::AcaAttrW, "ACA-attr-w"},
    {Method::AcaSeqAttrW, "ACA-seq-attr-w"},
    {Method::MiSeq, "MI-seq"},
    {Method::ML, "ML"},
    {Method::WML, "w-ML"},
    {Method::GEE, "GEE"},
    {Method::WGEE, "w-GEE"},
    {Method::MiOffset, "MI-offset"},
};

constexpr double kZ = 1.959963984540054;
const double kInf = std::numeric_limits<double>::infinity();

}  // namespace

const char* to_string(Method m) {
    for (const auto& i : kMethods)
        if (i.method == m) return i.tag;
    return "?";
}

std::vector<std::string> method_tags() {
    std::vector<std::string> out;
    for (const auto& i : kMethods) out.emplace_back(i.tag);
    return out;
}

Method parse_method(const std::string& tag) {
    for (const auto& i : kMethods)
        if (tag == i.tag) return i.method;
    std::string valid;
    for (const auto& t : method_tags()) valid += (valid.empty() ? "" : ", ") + t;
    throw ConfigError("unknown method '" + tag + "' (valid: " + valid + ")");
}

bool produces_means(Method m) {
    switch (m) {
        case Method::ML:
        case Method::WML:
        case Method::GEE:
        case Method::WGEE:
            return false;
        default:
            return true;
    }
}

bool produces_coefficients(Method m) {
    switch (m) {
        case Method::ML:
        case Method::WML:
        case Method::GEE:
        case Method::WGEE:
        case Method::MiSeq:
        case Method::MiOffset:
            return true;
        default:
            return false;
    }
}

bool needs_imputations(Method m) { return m == Method::MiSeq || m == Method::MiOffset; }

std::optional<Provenance> needed_weights(Method m) {
    switch (m) {
        case Method::CcaAttrW:
            return Provenance::CcaAttr;
        case Method::AcaAttrW:
            return Provenance::AcaAttr;
        case Method::AcaSeqAttrW:
        case Method::WML:
        case Method::WGEE:
            return Provenance::AcaSeqAttr;
        default:
            return std::nullopt;
    }
}

std::string EstimateRow::label() const {
    if (method != Method::MiOffset) return to_string(method);
    return std::string("MI-offset(") + csv::format_double(k) + ")";
}

std::string EstimateRow::key() const {
    if (wave < 0) return "coef:" + estimand;
    std::string s = estimand + ":w" + std::to_string(wave);
    if (!group.empty()) s += ":" + group + "=" + level;
    return s;
}

std::vector<const EstimateRow*> EstimateTable::select(Method m, const std::string& estimand) const {
    std::vector<const EstimateRow*> out;
    for (const auto& r : rows)
        if (r.method == m && r.key() == estimand) out.push_back(&r);
    return out;
}

namespace {

const WeightSet* find_weights(const std::vector<WeightSet>& sets, Provenance p, int wave) {
    for (const auto& s : sets)
        if (s.provenance == p && (wave < 0 || s.wave == wave)) return &s;
    return nullptr;
}

struct Sample {
    std::vector<std::size_t> units;
    std::vector<double> weights;
};

Sample from_set(const WeightSet& s) { return {s.units, s.weights}; }

Sample unweighted(const PanelDataset& data, bool complete, int wave) {
    Sample s;
    for (std::size_t i = 0; i < data.n_units(); ++i) {
        bool in = true;
        if (complete) {
            for (int t = 0; t <= data.last_wave() && in; ++t) in = data.responded(i, t);
        } else {
            in = data.responded(i, wave);
        }
        if (in) {
            s.units.push_back(i);
            s.weights.push_back(1.0);
        }
    }
    return s;
}

struct Domain {
    std::string group, level;
    std::size_t var = 0;
    double code = 0;
};

std::vector<Domain> domains(const PanelDataset& data, const std::vector<std::string>& subgroups) {
    std::vector<Domain> out{{}};
    for (const auto& g : subgroups) {
        auto idx = data.schema().find(g);
        if (!idx) throw ConfigError("unknown subgroup variable '" + g + "'");
        const auto& v = data.schema().variables[*idx];
        if (v.role != Role::Invariant || !is_categorical(v.kind))
            throw ConfigError("subgroup variable '" + g + "' must be a categorical invariant");
        for (std::size_t l = 0; l < v.levels.size(); ++l) out.push_back({g, v.levels[l], *idx, static_cast<double>(l)});
    }
    return out;
}

/// Weighted mean of Y_t over a sample restricted to a domain.
std::optional<Estimate> domain_mean(const PanelDataset& data, const Sample& s, int wave, const Domain& d,
                                    const std::vector<std::size_t>& clusters, std::vector<std::string>& warnings,
                                    const std::string& label) {
    std::vector<double> y, w;
    std::vector<std::size_t> c;
    for (std::size_t k = 0; k < s.units.size(); ++k) {
        std::size_t i = s.units[k];
        if (!d.group.empty() && data.value(i, d.var, 0) != d.code) continue;
        double v = data.outcome(i, wave);
        if (is_missing(v)) throw DataError(label + ": unit '" + data.unit_ids()[i] + "' has no outcome at wave " + std::to_string(wave));
        y.push_back(v);
        w.push_back(s.weights[k]);
        c.push_back(clusters[i]);
    }
    try {
        return weighted_mean(y, w, c);
    } catch (const Error& e) {
        std::string where = d.group.empty() ? "" : " for " + d.group + "=" + d.level;
        warnings.push_back(label + ": no estimate at wave " + std::to_string(wave) + where + " (" + e.what() + ")");
        return std::nullopt;
    }
}

EstimateRow mean_row(Method m, int wave, const Domain& d, const Estimate& e) {
    EstimateRow r;
    r.method = m;
    r.estimand = "mean";
    r.wave = wave;
    r.group = d.group;
    r.level = d.level;
    r.est = e.est;
    r.se = e.se;
    r.lower = e.est - kZ * e.se;
    r.upper = e.est + kZ * e.se;
    r.df = kInf;
    r.n = e.n;
    r.se_type = "linearization";
    return r;
}

/// Per-wave sample for a weighting method.
Sample method_sample(Method m, const EstimateInputs& in, int wave) {
    const PanelDataset& data = *in.data;
    auto need = [&](Provenance p, int t) -> const WeightSet& {
        const WeightSet* s = find_weights(in.weights, p, t);
        if (!s)
            throw ConfigError(std::string(to_string(m)) + " needs " + to_string(p) + " weights" +
                              (t >= 0 ? " for wave " + std::to_string(t) : std::string()) + " (run the weights stage)");
        return *s;
    };
    switch (m) {
        case Method::CCA:
            return unweighted(data, true, wave);
        case Method::ACA:
            return unweighted(data, false, wave);
        case Method::CcaBaseW:
            return from_set(base_weights(data, wave, true));
        case Method::AcaBaseW:
            return from_set(base_weights(data, wave));
        case Method::CcaAttrW:
            return from_set(need(Provenance::CcaAttr, -1));
        case Method::AcaAttrW:
            return wave == 0 ? from_set(base_weights(data, 0)) : from_set(need(Provenance::AcaAttr, wave));
        case Method::AcaSeqAttrW:
            return wave == 0 ? from_set(base_weights(data, 0)) : from_set(need(Provenance::AcaSeqAttr, wave));
        default:
            throw ConfigError(std::string(to_string(m)) + " is not a weighting method");
    }
}

std::vector<EstimateRow> weighted_means(Method m, const EstimateInputs& in, const std::vector<Domain>& doms,
                                        std::vector<std::string>& warnings) {
    const PanelDataset& data = *in.data;
    auto clusters = data.cluster_codes();
    std::vector<EstimateRow> rows;
    for (const auto& d : doms)
        for (int t = 0; t <= data.last_wave(); ++t) {
            Sample s = method_sample(m, in, t);
            if (auto e = domain_mean(data, s, t, d, clusters, warnings, to_string(m))) rows.push_back(mean_row(m, t, d, *e));
        }
    return rows;
}

EstimateRow pooled_row(Method m, double k, const std::string& estimand, int wave, const Domain& d,
                       const std::vector<double>& est, const std::vector<double>& var, std::size_t n) {
    auto p = pool(est, var);
    EstimateRow r;
    r.method = m;
    r.k = k;
    r.estimand = estimand;
    r.wave = wave;
    r.group = d.group;
    r.level = d.level;
    r.est = p.qbar;
    r.se = p.se;
    r.lower = p.lower;
    r.upper = p.upper;
    r.df = p.df;
    r.n = n;
    r.se_type = "rubin";
    return r;
}

std::vector<EstimateRow> mi_rows(Method m, const ImputationSet& set, const EstimateRequest& req,
                                 const std::vector<Domain>& doms, std::vector<std::string>& warnings) {
    if (set.m() < 2) throw ConfigError(std::string(to_string(m)) + " needs at least 2 imputations");
    double k = 0.0;
    for (double v : set.offsets)
        if (v != 0.0) {
            k = v;
            break;
        }
    std::vector<EstimateRow> rows;
    const PanelDataset& first = set.copies.front();
    auto clusters = first.cluster_codes();
    const std::string label = m == Method::MiOffset ? "MI-offset(" + csv::format_double(k) + ")" : to_string(m);
    for (const auto& d : doms)
        for (int t = 0; t <= first.last_wave(); ++t) {
            std::vector<double> est, var;
            std::size_t n = 0;
            for (const auto& copy : set.copies) {
                Sample s = from_set(base_weights(copy, t));
                auto e = domain_mean(copy, s, t, d, clusters, warnings, label);
                if (!e) break;
                est.push_back(e->est);
                var.push_back(e->se * e->se);
                n = e->n;
            }
            if (est.size() == set.m()) rows.push_back(pooled_row(m, k, "mean", t, d, est, var, n));
        }

    std::vector<std::string> terms;
    std::vector<std::vector<double>> est, var;
    std::size_t n = 0;
    for (const auto& copy : set.copies) {
        auto design = build_design(copy, req.formula, RowSet::All);
        auto fit = fit_mixed(design.x, design.y, design.unit, {}, req.mixed);
        if (terms.empty()) terms = fit.terms;
        if (fit.terms != terms) throw NumericalError(label + ": analysis model terms differ across imputations");
        std::vector<double> e(fit.coef.data(), fit.coef.data() + fit.coef.size()), v;
        for (Eigen::Index j = 0; j < fit.coef.size(); ++j) v.push_back(fit.cov(j, j));
        est.push_back(std::move(e));
        var.push_back(std::move(v));
        n = design.rows();
    }
    for (std::size_t j = 0; j < terms.size(); ++j) {
        std::vector<double> ej, vj;
        for (std::size_t c = 0; c < est.size(); ++c) {
            ej.push_back(est[c][j]);
            vj.push_back(var[c][j]);
        }
        rows.push_back(pooled_row(m, k, terms[j], -1, Domain{}, ej, vj, n));
    }
    return rows;
}

std::vector<EstimateRow> coefficient_rows(Method m, const std::vector<std::string>& terms, const Eigen::VectorXd& coef,
                                          const Eigen::MatrixXd& cov, std::size_t n, const char* se_type) {
    std::vector<EstimateRow> rows;
    for (std::size_t j = 0; j < terms.size(); ++j) {
        EstimateRow r;
        r.method = m;
        r.estimand = terms[j];
        const auto jj = static_cast<Eigen::Index>(j);
        r.est = coef(jj);
        r.se = std::sqrt(cov(jj, jj));
        r.lower = r.est - kZ * r.se;
        r.upper = r.est + kZ * r.se;
        r.df = kInf;
        r.n = n;
        r.se_type = se_type;
        rows.push_back(std::move(r));
    }
    return rows;
}

std::vector<EstimateRow> model_rows(Method m, const EstimateInputs& in, const EstimateRequest& req,
                                    std::vector<std::string>& warnings) {
    Warnings local;
    auto design = build_design(*in.data, req.formula, RowSet::Available, &local);
    std::vector<double> w;
    if (m == Method::WML || m == Method::WGEE) w = observation_weights(design, *in.data, in.weights);
    std::vector<EstimateRow> rows;
    if (m == Method::ML || m == Method::WML) {
        auto fit = fit_mixed(design.x, design.y, design.unit, w, req.mixed);
        if (fit.boundary) local.push_back("random-intercept variance estimated at zero");
        rows = coefficient_rows(m, fit.terms, fit.coef, fit.cov, design.rows(), fit.weighted ? "sandwich" : "model");
    } else {
        auto fit = fit_gee(design.x, design.y, design.unit, design.wave, w, req.gee, &local);
        rows = coefficient_rows(m, fit.terms, fit.coef, fit.cov, design.rows(), "sandwich");
    }
    for (auto& s : local) warnings.push_back(std::string(to_string(m)) + ": " + s);
    return rows;
}

}  // namespace

std::vector<double> observation_weights(const LongDesign& design, const PanelDataset& data,
                                        const std::vector<WeightSet>& weights) {
    std::map<std::pair<int, std::size_t>, double> lookup;
    auto add = [&](const WeightSet& s) {
        for (std::size_t k = 0; k < s.units.size(); ++k) lookup[{s.wave, s.units[k]}] = s.weights[k];
    };
    add(base_weights(data, 0));
    for (int t = 1; t <= data.last_wave(); ++t) {
        const WeightSet* s = find_weights(weights, Provenance::AcaSeqAttr, t);
        if (!s) throw ConfigError("weighted models need ACA-seq-attr-w weights for wave " + std::to_string(t) +
                                  " (run the weights stage)");
        add(*s);
    }
    std::vector<double> w(design.rows());
    for (std::size_t r = 0; r < design.rows(); ++r) {
        auto it = lookup.find({design.wave[r], design.unit[r]});
        if (it == lookup.end())
            throw DataError("no sequential weight for unit '" + data.unit_ids()[design.unit[r]] + "' at wave " +
                            std::to_string(design.wave[r]));
        w[r] = it->second;
    }
    return w;
}

EstimateTable estimate_table(const EstimateInputs& in, const EstimateRequest& req) {
    if (!in.data) throw ConfigError("estimate_table needs a dataset");
    if (req.methods.empty()) throw ConfigError("no methods selected");
    req.formula.validate(in.data->schema());
    std::vector<Method> methods = req.methods;
    std::stable_sort(methods.begin(), methods.end());
    methods.erase(std::unique(methods.begin(), methods.end()), methods.end());
    for (Method m : methods) {
        if (m == Method::MiSeq && !in.mi) throw ConfigError("MI-seq needs imputations (run the impute stage)");
        if (m == Method::MiOffset && in.offset_sets.empty())
            throw ConfigError("MI-offset needs offset imputations (run the sensitivity stage)");
    }
    auto doms = domains(*in.data, req.subgroups);

    // one task per method, plus one per offset set
    struct Task {
        Method m;
        const ImputationSet* set = nullptr;
    };
    std::vector<Task> tasks;
    for (Method m : methods) {
        if (m == Method::MiOffset)
            for (const auto* s : in.offset_sets) tasks.push_back({m, s});
        else
            tasks.push_back({m, m == Method::MiSeq ? in.mi : nullptr});
    }
    std::vector<std::vector<EstimateRow>> out(tasks.size());
    std::vector<std::vector<std::string>> warns(tasks.size());
    parallel_for(tasks.size(), req.threads, [&](std::size_t i) {
        const Task& task = tasks[i];
        auto& rows = out[i];
        if (task.set) {
            rows = mi_rows(task.m, *task.set, req, doms, warns[i]);
            return;
        }
        if (produces_means(task.m)) rows = weighted_means(task.m, in, doms, warns[i]);
        if (produces_coefficients(task.m)) {
            auto c = model_rows(task.m, in, req, warns[i]);
            rows.insert(rows.end(), c.begin(), c.end());
        }
    });
    EstimateTable t;
    for (std::size_t i = 0; i < tasks.size(); ++i) {
        t.rows.insert(t.rows.end(), out[i].begin(), out[i].end());
        t.warnings.insert(t.warnings.end(), warns[i].begin(), warns[i].end());
    }
    return t;
}

namespace {

std::ofstream open_out(const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write " + path);
    return out;
}

std::vector<std::string> interval(const EstimateRow& r) {
    return {csv::format_double(r.est), csv::format_double(r.se), csv::format_double(r.lower), csv::format_double(r.upper)};
}

}  // namespace

void write_estimates_csv(const EstimateTable& t, const std::string& path) {
    auto out = open_out(path);
    csv::write_row(out, {"method", "estimand", "est", "se", "lower", "upper"});
    for (const auto& r : t.rows) {
        std::vector<std::string> f{r.label(), r.key()};
        auto iv = interval(r);
        f.insert(f.end(), iv.begin(), iv.end());
        csv::write_row(out, f);
    }
}

void write_coefficients_csv(const EstimateTable& t, const std::string& path) {
    static const std::regex wave_re(R"(wave\[(\d+)\])"), group_re(R"(race\[([^\]]*)\])");
    auto out = open_out(path);
    csv::write_row(out, {"method", "term", "wave", "group", "est", "se", "lower", "upper"});
    for (const auto& r : t.rows) {
        if (r.wave >= 0) continue;
        std::smatch m;
        std::string wave, group;
        if (std::regex_search(r.estimand, m, wave_re)) wave = m[1];
        if (std::regex_search(r.estimand, m, group_re)) group = m[1];
        std::vector<std::string> f{r.label(), r.estimand, wave, group};
        auto iv = interval(r);
        f.insert(f.end(), iv.begin(), iv.end());
        csv::write_row(out, f);
    }
}

void write_subgroup_means_csv(const EstimateTable& t, const std::string& path) {
    auto out = open_out(path);
    csv::write_row(out, {"method", "wave", "group", "level", "est", "se", "lower", "upper"});
    for (const auto& r : t.rows) {
        if (r.wave < 0) continue;
        std::vector<std::string> f{r.label(), std::to_string(r.wave), r.group.empty() ? "overall" : r.group, r.level};
        auto iv = interval(r);
        f.insert(f.end(), iv.begin(), iv.end());
        csv::write_row(out, f);
    }
}

}  // namespace nrba
