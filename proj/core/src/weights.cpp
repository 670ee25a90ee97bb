#include "nrba/weights.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>

#include <nlohmann/json.hpp>

#include "nrba/auc.hpp"
#include "nrba/csv.hpp"
#include "nrba/parallel.hpp"
#include "nrba/rng.hpp"

namespace nrba {

const char* to_string(Provenance p) {
    switch (p) {
        case Provenance::Base: return "base";
        case Provenance::CcaAttr: return "CCA-attr";
        case Provenance::AcaAttr: return "ACA-attr";
        case Provenance::AcaSeqAttr: return "ACA-seq-attr";
    }
    return "?";
}

PropensitySpec PropensitySpec::from_json(const nlohmann::json& j) {
    PropensitySpec s;
    try {
        if (j.contains("model")) {
            auto m = j.at("model").get<std::string>();
            if (m == "logistic")
                s.kind = Kind::Logistic;
            else if (m == "tree")
                s.kind = Kind::Tree;
            else
                throw ConfigError("propensity.model must be 'logistic' or 'tree', got '" + m + "'");
        }
        if (j.contains("stepwise")) s.stepwise = j.at("stepwise").get<bool>();
        if (j.contains("criterion")) s.criterion = parse_criterion(j.at("criterion").get<std::string>());
        if (j.contains("predictors")) s.predictors.variables = j.at("predictors").get<std::vector<std::string>>();
        if (j.contains("include_base_weight")) s.predictors.include_base_weight = j.at("include_base_weight").get<bool>();
        if (j.contains("clip")) {
            auto c = j.at("clip").get<std::vector<double>>();
            if (c.size() != 2) throw ConfigError("propensity.clip must be [lo, hi]");
            s.clip_lo = c[0];
            s.clip_hi = c[1];
        }
        if (j.contains("tree")) {
            const auto& t = j.at("tree");
            if (t.contains("mode")) {
                auto m = t.at("mode").get<std::string>();
                if (m == "conditional")
                    s.tree.mode = TreeMode::Conditional;
                else if (m == "cart")
                    s.tree.mode = TreeMode::Cart;
                else
                    throw ConfigError("propensity.tree.mode must be 'conditional' or 'cart'");
            }
            if (t.contains("min_leaf")) s.tree.min_leaf = t.at("min_leaf").get<std::size_t>();
            if (t.contains("max_depth")) s.tree.max_depth = t.at("max_depth").get<int>();
            if (t.contains("alpha")) s.tree.alpha = t.at("alpha").get<double>();
            if (t.contains("cp")) s.tree.cp = t.at("cp").get<double>();
            if (t.contains("smoothing")) s.tree.smoothing = t.at("smoothing").get<double>();
        }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("propensity: ") + e.what());
    }
    if (!(s.clip_lo > 0.0 && s.clip_lo < s.clip_hi && s.clip_hi <= 1.0))
        throw ConfigError("propensity.clip must satisfy 0 < lo < hi <= 1");
    return s;
}

nlohmann::json PropensitySpec::to_json() const {
    nlohmann::json j{{"model", kind == Kind::Logistic ? "logistic" : "tree"},
                     {"stepwise", stepwise},
                     {"criterion", nrba::to_string(criterion)},
                     {"predictors", predictors.variables},
                     {"include_base_weight", predictors.include_base_weight},
                     {"clip", {clip_lo, clip_hi}}};
    j["tree"] = {{"mode", tree.mode == TreeMode::Conditional ? "conditional" : "cart"},
                 {"min_leaf", tree.min_leaf},
                 {"max_depth", tree.max_depth},
                 {"alpha", tree.alpha},
                 {"cp", tree.cp},
                 {"smoothing", tree.smoothing}};
    return j;
}

nlohmann::json PropensityFit::to_json() const {
    nlohmann::json j{{"model", kind == PropensitySpec::Kind::Logistic ? "logistic" : "tree"},
                     {"n_fit", n_fit},
                     {"n_respond", n_respond},
                     {"clipped", clipped},
                     {"degenerate", degenerate},
                     {"selected", selected},
                     {"dropped_aliased", dropped}};
    if (std::isfinite(auc)) j["auc"] = auc;
    if (glm) j["fit"] = fit_to_json(*glm);
    if (tree) j["tree"] = tree_to_json(*tree);
    return j;
}

PropensityFit fit_propensity(const Frame& predictors, std::span<const double> response, const PropensitySpec& spec,
                             Warnings* warnings) {
    PropensityFit out;
    out.kind = spec.kind;
    out.n_fit = response.size();
    for (double r : response) out.n_respond += r == 1.0;
    if (out.n_respond == 0) throw DataError("propensity model: empty respondent set");
    if (out.n_respond == out.n_fit) {
        out.degenerate = true;
        out.propensity.assign(out.n_fit, 1.0);
        out.auc = std::numeric_limits<double>::quiet_NaN();
        return out;
    }
    Eigen::VectorXd y = Eigen::Map<const Eigen::VectorXd>(response.data(), static_cast<Eigen::Index>(response.size()));
    Eigen::VectorXd p;
    if (spec.kind == PropensitySpec::Kind::Tree) {
        out.tree = fit_propensity_tree(predictors, y, spec.tree);
        p = out.tree->predict(predictors);
        for (const auto& nd : out.tree->nodes)
            if (!nd.leaf() && std::find(out.selected.begin(), out.selected.end(),
                                        out.tree->predictors[static_cast<std::size_t>(nd.variable)]) == out.selected.end())
                out.selected.push_back(out.tree->predictors[static_cast<std::size_t>(nd.variable)]);
    } else {
        DesignMatrix d = encode(predictors);
        out.dropped = drop_aliased(d);
        if (!out.dropped.empty()) {
            std::string cols;
            for (const auto& c : out.dropped) cols += (cols.empty() ? "" : ", ") + c;
            warn(warnings, "propensity model: dropped aliased columns " + cols);
        }
        if (spec.stepwise) {
            std::vector<std::size_t> scope(d.blocks.size());
            std::iota(scope.begin(), scope.end(), 0);
            StepwiseOptions opt;
            opt.criterion = spec.criterion;
            StepwiseResult r = stepwise_select(d, y, Family::Binomial, {}, scope, opt);
            for (std::size_t b : r.selected) out.selected.push_back(d.blocks[b].source);
            Eigen::MatrixXd x = select_blocks(d, r.selected).x;
            p = (x * r.fit.coef).unaryExpr([](double e) { return logistic(e); });
            out.glm = std::move(r.fit);
        } else {
            GlmFit fit = fit_glm(d, y, Family::Binomial);
            for (const auto& b : d.blocks) out.selected.push_back(b.source);
            p = (d.x * fit.coef).unaryExpr([](double e) { return logistic(e); });
            out.glm = std::move(fit);
        }
    }
    std::vector<double> raw(p.data(), p.data() + p.size());
    out.auc = auc(raw, response);
    out.propensity.resize(raw.size());
    for (std::size_t i = 0; i < raw.size(); ++i) {
        double c = std::clamp(raw[i], spec.clip_lo, spec.clip_hi);
        out.clipped += c != raw[i];
        out.propensity[i] = c;
    }
    if (out.clipped > 0)
        warn(warnings, "propensity model: " + std::to_string(out.clipped) + " propensities clipped to [" +
                           csv::format_double(spec.clip_lo) + ", " + csv::format_double(spec.clip_hi) + "]");
    return out;
}

double WeightSet::sum() const { return std::accumulate(weights.begin(), weights.end(), 0.0); }

namespace {

void scale_to_count(WeightSet& w) {
    w.target_sum = static_cast<double>(w.units.size());
    double s = std::accumulate(w.unscaled.begin(), w.unscaled.end(), 0.0);
    w.weights.resize(w.unscaled.size());
    for (std::size_t k = 0; k < w.unscaled.size(); ++k) w.weights[k] = w.unscaled[k] * (w.target_sum / s);
}

void check_wave(const PanelDataset& data, int wave) {
    if (wave < 0 || wave > data.last_wave())
        throw ConfigError("wave " + std::to_string(wave) + " is outside 0.." + std::to_string(data.last_wave()));
}

bool responded_all(const PanelDataset& data, std::size_t i) {
    for (int t = 0; t <= data.last_wave(); ++t)
        if (!data.responded(i, t)) return false;
    return true;
}

std::vector<double> response_vector(const PanelDataset& data, std::span<const std::size_t> units, int wave) {
    std::vector<double> r;
    r.reserve(units.size());
    for (std::size_t i : units) r.push_back(data.responded(i, wave) ? 1.0 : 0.0);
    return r;
}

}  // namespace

WeightSet base_weights(const PanelDataset& data, int wave, bool complete_cases) {
    check_wave(data, wave);
    WeightSet w;
    w.wave = complete_cases ? data.last_wave() : wave;
    w.provenance = Provenance::Base;
    for (std::size_t i = 0; i < data.n_units(); ++i) {
        bool in = complete_cases ? responded_all(data, i) : data.responded(i, wave);
        if (!in) continue;
        w.units.push_back(i);
        w.unscaled.push_back(data.base_weights()[i]);
    }
    if (w.units.empty()) throw DataError("no respondents at wave " + std::to_string(wave));
    scale_to_count(w);
    return w;
}

WeightSet baseline_weights(const PanelDataset& data, int wave, const PropensitySpec& spec, Warnings* warnings) {
    check_wave(data, wave);
    if (wave < 1) throw ConfigError("attrition weights need a follow-up wave (t >= 1)");
    auto units = all_units(data);
    Frame f = history_frame(data, units, 0, spec.predictors);
    auto r = response_vector(data, units, wave);
    Warnings local;
    PropensityFit fit = fit_propensity(f, r, spec, &local);
    for (auto& m : local) warn(warnings, "wave " + std::to_string(wave) + " ACA-attr " + m);
    WeightSet w;
    w.wave = wave;
    w.provenance = Provenance::AcaAttr;
    w.clip_lo = spec.clip_lo;
    w.clip_hi = spec.clip_hi;
    for (std::size_t k = 0; k < units.size(); ++k) {
        if (r[k] != 1.0) continue;
        w.units.push_back(units[k]);
        w.unscaled.push_back(data.base_weights()[units[k]] / fit.propensity[k]);
    }
    w.models.push_back(std::move(fit));
    scale_to_count(w);
    return w;
}

WeightSet cca_weights(const PanelDataset& data, const PropensitySpec& spec, Warnings* warnings) {
    auto units = all_units(data);
    Frame f = history_frame(data, units, 0, spec.predictors);
    std::vector<double> r;
    for (std::size_t i : units) r.push_back(responded_all(data, i) ? 1.0 : 0.0);
    Warnings local;
    PropensityFit fit = fit_propensity(f, r, spec, &local);
    for (auto& m : local) warn(warnings, "CCA-attr " + m);
    WeightSet w;
    w.wave = data.last_wave();
    w.provenance = Provenance::CcaAttr;
    w.clip_lo = spec.clip_lo;
    w.clip_hi = spec.clip_hi;
    for (std::size_t k = 0; k < units.size(); ++k) {
        if (r[k] != 1.0) continue;
        w.units.push_back(units[k]);
        w.unscaled.push_back(data.base_weights()[units[k]] / fit.propensity[k]);
    }
    w.models.push_back(std::move(fit));
    scale_to_count(w);
    return w;
}

std::vector<WeightSet> sequential_weights(const PanelDataset& data, const PropensitySpec& spec, Warnings* warnings) {
    if (!data.is_monotone())
        throw DataError("sequential weights need a monotone pattern; run monotonize (drop or impute mode) first");
    std::vector<double> chain(data.base_weights().begin(), data.base_weights().end());
    std::vector<WeightSet> out;
    for (int t = 1; t <= data.last_wave(); ++t) {
        auto units = units_where(data, [&](std::size_t i) { return data.responded(i, t - 1); });
        Frame f = history_frame(data, units, t - 1, spec.predictors);
        auto r = response_vector(data, units, t);
        Warnings local;
        PropensityFit fit = fit_propensity(f, r, spec, &local);
        for (auto& m : local) warn(warnings, "wave " + std::to_string(t) + " ACA-seq-attr " + m);
        WeightSet w;
        w.wave = t;
        w.provenance = Provenance::AcaSeqAttr;
        w.clip_lo = spec.clip_lo;
        w.clip_hi = spec.clip_hi;
        for (std::size_t k = 0; k < units.size(); ++k) {
            if (r[k] != 1.0) continue;
            chain[units[k]] /= fit.propensity[k];
            w.units.push_back(units[k]);
            w.unscaled.push_back(chain[units[k]]);
        }
        w.models.push_back(std::move(fit));
        scale_to_count(w);
        out.push_back(std::move(w));
    }
    return out;
}

double quantile(std::vector<double> v, double q) {
    if (v.empty()) throw DataError("quantile of an empty set");
    if (!(q >= 0.0 && q <= 1.0)) throw ConfigError("quantile level must lie in [0,1]");
    std::sort(v.begin(), v.end());
    const double h = (static_cast<double>(v.size()) - 1.0) * q;
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const std::size_t hi = std::min(lo + 1, v.size() - 1);
    return v[lo] + (h - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

WeightSet trim_weights(const WeightSet& w, double q) {
    if (!(q > 0.0 && q <= 1.0)) throw ConfigError("trim quantile must lie in (0,1]");
    WeightSet out = w;
    TrimRecord rec;
    rec.quantile = q;
    rec.cap = quantile(w.weights, q);
    const double total = w.sum();
    double capped_sum = 0.0;
    for (double& x : out.weights) {
        if (x > rec.cap) {
            x = rec.cap;
            ++rec.trimmed;
        }
        capped_sum += x;
    }
    if (rec.trimmed > 0)
        for (double& x : out.weights) x *= total / capped_sum;
    out.trim = rec;
    return out;
}

WeightDiagnostics weight_diagnostics(std::span<const double> w, std::span<const double> outcome, std::string label) {
    if (w.empty()) throw DataError("weight diagnostics of an empty weight set");
    if (!outcome.empty() && outcome.size() != w.size()) throw DataError("outcome and weights differ in length");
    WeightDiagnostics d;
    d.label = std::move(label);
    d.n = w.size();
    std::vector<double> v(w.begin(), w.end());
    d.min = *std::min_element(v.begin(), v.end());
    d.max = *std::max_element(v.begin(), v.end());
    d.q1 = quantile(v, 0.25);
    d.median = quantile(v, 0.5);
    d.q3 = quantile(v, 0.75);
    const double n = static_cast<double>(v.size());
    d.mean = std::accumulate(v.begin(), v.end(), 0.0) / n;
    double ss = 0.0;
    if (d.max > d.min)
        for (double x : v) ss += (x - d.mean) * (x - d.mean);
    d.sd = v.size() > 1 ? std::sqrt(ss / (n - 1.0)) : 0.0;
    d.loss = d.sd * d.sd / (d.mean * d.mean);
    d.design_effect = 1.0 + d.loss;
    if (!outcome.empty()) {
        std::vector<std::size_t> order(v.size());
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
        for (int g = 0; g < 5; ++g) {
            QuintileSummary qs;
            qs.group = g + 1;
            std::vector<double> ys;
            for (std::size_t k = 0; k < order.size(); ++k) {
                if (static_cast<int>(k * 5 / order.size()) != g) continue;
                double wk = v[order[k]];
                if (ys.empty()) qs.weight_min = qs.weight_max = wk;
                qs.weight_min = std::min(qs.weight_min, wk);
                qs.weight_max = std::max(qs.weight_max, wk);
                ys.push_back(outcome[order[k]]);
            }
            qs.n = ys.size();
            if (!ys.empty()) {
                qs.outcome_mean = std::accumulate(ys.begin(), ys.end(), 0.0) / static_cast<double>(ys.size());
                double s2 = 0.0;
                for (double y : ys) s2 += (y - qs.outcome_mean) * (y - qs.outcome_mean);
                qs.outcome_sd = ys.size() > 1 ? std::sqrt(s2 / static_cast<double>(ys.size() - 1)) : 0.0;
            }
            d.quintiles.push_back(qs);
        }
    }
    return d;
}

Estimate weighted_mean(std::span<const double> y, std::span<const double> w, std::span<const std::size_t> cluster) {
    if (y.size() != w.size() || y.size() != cluster.size())
        throw DataError("weighted_mean: outcome, weights and clusters differ in length");
    double sw = 0.0, swy = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) {
        sw += w[i];
        swy += w[i] * y[i];
    }
    if (!(sw > 0.0)) throw DataError("weighted_mean: weights must have a positive sum");
    Estimate e;
    e.n = y.size();
    e.est = swy / sw;
    std::map<std::size_t, double> u;
    for (std::size_t i = 0; i < y.size(); ++i) u[cluster[i]] += w[i] * (y[i] - e.est) / sw;
    const double c = static_cast<double>(u.size());
    if (u.size() < 2) throw DataError("weighted_mean: variance needs at least two clusters");
    double ubar = 0.0;
    for (const auto& [k, v] : u) ubar += v / c;
    double ss = 0.0;
    for (const auto& [k, v] : u) ss += (v - ubar) * (v - ubar);
    e.se = std::sqrt(c / (c - 1.0) * ss);
    e.lower = e.est - 1.96 * e.se;
    e.upper = e.est + 1.96 * e.se;
    return e;
}

BootstrapResult bootstrap_se(const std::function<double(std::span<const std::size_t>)>& estimator,
                             std::span<const std::size_t> cluster, std::size_t replicates, std::uint64_t seed,
                             unsigned threads) {
    if (replicates < 50) throw ConfigError("bootstrap needs at least 50 replicates");
    std::map<std::size_t, std::vector<std::size_t>> members;
    for (std::size_t i = 0; i < cluster.size(); ++i) members[cluster[i]].push_back(i);
    std::vector<const std::vector<std::size_t>*> groups;
    for (const auto& [k, v] : members) groups.push_back(&v);
    if (groups.size() < 2) throw DataError("bootstrap needs at least two clusters");

    std::vector<double> values(replicates, std::numeric_limits<double>::quiet_NaN());
    std::vector<std::string> errors(replicates);
    parallel_for(replicates, threads, [&](std::size_t b) {
        Rng rng = make_rng(seed, {tag(Stream::Bootstrap), b});
        std::vector<std::size_t> units;
        units.reserve(cluster.size());
        for (std::size_t k = 0; k < groups.size(); ++k) {
            const auto& g = *groups[uniform_index(rng, groups.size())];
            units.insert(units.end(), g.begin(), g.end());
        }
        try {
            values[b] = estimator(units);
            if (!std::isfinite(values[b])) errors[b] = "non-finite estimate";
        } catch (const std::exception& e) {
            errors[b] = e.what();
        }
    });
    BootstrapResult res;
    for (std::size_t b = 0; b < replicates; ++b) {
        if (errors[b].empty())
            res.replicates.push_back(values[b]);
        else
            res.failures.push_back("replicate " + std::to_string(b) + ": " + errors[b]);
    }
    if (static_cast<double>(res.failures.size()) > 0.05 * static_cast<double>(replicates)) {
        std::string msg = "bootstrap: " + std::to_string(res.failures.size()) + " of " + std::to_string(replicates) +
                          " replicates failed";
        for (std::size_t k = 0; k < std::min<std::size_t>(5, res.failures.size()); ++k) msg += "\n  " + res.failures[k];
        throw NumericalError(msg);
    }
    const double m = static_cast<double>(res.replicates.size());
    double mean = std::accumulate(res.replicates.begin(), res.replicates.end(), 0.0) / m;
    double ss = 0.0;
    for (double v : res.replicates) ss += (v - mean) * (v - mean);
    res.se = m > 1 ? std::sqrt(ss / (m - 1.0)) : 0.0;
    return res;
}

void write_weights_csv(const PanelDataset& data, const std::vector<WeightSet>& sets, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write " + path);
    csv::write_row(out, {"unit_id", "wave", "weight", "unscaled", "provenance"});
    for (const auto& s : sets)
        for (std::size_t k = 0; k < s.units.size(); ++k)
            csv::write_row(out, {data.unit_ids()[s.units[k]], std::to_string(s.wave), csv::format_double(s.weights[k]),
                                 csv::format_double(s.unscaled[k]), to_string(s.provenance)});
}

void write_diagnostics_csv(const std::vector<WeightDiagnostics>& rows, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write " + path);
    csv::write_row(out, {"weight", "min", "q1", "median", "q3", "max", "mean", "sd", "loss", "design_effect", "n"});
    for (const auto& d : rows)
        csv::write_row(out, {d.label, csv::format_double(d.min), csv::format_double(d.q1), csv::format_double(d.median),
                             csv::format_double(d.q3), csv::format_double(d.max), csv::format_double(d.mean),
                             csv::format_double(d.sd), csv::format_double(d.loss), csv::format_double(d.design_effect),
                             std::to_string(d.n)});
}

void write_quintiles_csv(const std::vector<WeightDiagnostics>& rows, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write " + path);
    csv::write_row(out, {"weight", "quintile", "n", "weight_min", "weight_max", "outcome_mean", "outcome_sd"});
    for (const auto& d : rows)
        for (const auto& q : d.quintiles)
            csv::write_row(out, {d.label, std::to_string(q.group), std::to_string(q.n), csv::format_double(q.weight_min),
                                 csv::format_double(q.weight_max), csv::format_double(q.outcome_mean),
                                 csv::format_double(q.outcome_sd)});
}

}  // namespace nrba
