#include "nrba/impute.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <optional>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "nrba/design.hpp"
#include "nrba/frames.hpp"
#include "nrba/glm.hpp"
#include "nrba/parallel.hpp"
#include "nrba/tree.hpp"

namespace nrba {

const char* to_string(ImputeMethod m) {
    switch (m) {
        case ImputeMethod::Logistic: return "logistic";
        case ImputeMethod::Multinomial: return "multinomial";
        case ImputeMethod::Ordinal: return "ordinal";
        case ImputeMethod::Tree: return "tree";
        case ImputeMethod::Pmm: return "pmm";
        case ImputeMethod::Normal: return "normal";
    }
    return "?";
}

ImputeMethod parse_impute_method(const std::string& s) {
    for (auto m : {ImputeMethod::Logistic, ImputeMethod::Multinomial, ImputeMethod::Ordinal, ImputeMethod::Tree,
                   ImputeMethod::Pmm, ImputeMethod::Normal})
        if (s == to_string(m)) return m;
    throw ConfigError("unknown imputation method '" + s + "' (expected logistic, multinomial, ordinal, tree pmm or normal)");
}

ImputeMethod default_method(const VariableSpec& v) {
    switch (v.kind) {
        case VarKind::Binary: return ImputeMethod::Logistic;
        case VarKind::Nominal: return ImputeMethod::Multinomial;
        case VarKind::Ordinal: return ImputeMethod::Ordinal;
        case VarKind::Numeric: return v.role == Role::Outcome ? ImputeMethod::Pmm : ImputeMethod::Tree;
    }
    return ImputeMethod::Pmm;
}

ImputeMethod ImputerSpec::method_for(const VariableSpec& v) const {
    auto it = methods.find(v.name);
    return it == methods.end() ? default_method(v) : it->second;
}

namespace {

bool method_fits(ImputeMethod m, VarKind k) {
    switch (m) {
        case ImputeMethod::Logistic: return k == VarKind::Binary;
        case ImputeMethod::Multinomial: return k == VarKind::Nominal || k == VarKind::Binary;
        case ImputeMethod::Ordinal: return k == VarKind::Ordinal || k == VarKind::Binary;
        case ImputeMethod::Tree:
        case ImputeMethod::Pmm:
        case ImputeMethod::Normal: return k == VarKind::Numeric;
    }
    return false;
}

}  // namespace

void ImputerSpec::validate(const Schema& schema) const {
    std::vector<std::string> errors;
    for (const auto& [name, m] : methods) {
        auto idx = schema.find(name);
        if (!idx) {
            errors.push_back("imputation method given for unknown variable '" + name + "'");
            continue;
        }
        const auto& v = schema.variables[*idx];
        if (v.role != Role::Invariant && v.role != Role::Covariate && v.role != Role::Outcome)
            errors.push_back("variable '" + name + "' is not imputable");
        else if (!method_fits(m, v.kind))
            errors.push_back(std::string("method ") + to_string(m) + " does not fit " + to_string(v.kind) +
                             " variable '" + name + "'");
    }
    for (const auto& p : predictors)
        if (!schema.find(p)) errors.push_back("unknown imputation predictor '" + p + "'");
    if (pmm_k < 1) errors.push_back("pmm_k must be at least 1");
    if (iterations < 1) errors.push_back("iterations must be at least 1");
    if (ridge < 0) errors.push_back("ridge must be non-negative");
    if (tree_min_leaf < 1) errors.push_back("tree_min_leaf must be at least 1");
    if (!offset_group.empty()) {
        auto idx = schema.find(offset_group);
        if (!idx)
            errors.push_back("unknown offset_group '" + offset_group + "'");
        else if (schema.variables[*idx].role != Role::Invariant || !is_categorical(schema.variables[*idx].kind))
            errors.push_back("offset_group '" + offset_group + "' must be a categorical invariant");
    }
    if (errors.empty()) return;
    std::string msg = "invalid imputer spec:";
    for (const auto& e : errors) msg += "\n  - " + e;
    throw ConfigError(msg);
}

ImputerSpec ImputerSpec::from_json(const nlohmann::json& j) {
    ImputerSpec s;
    try {
        if (j.contains("methods"))
            for (const auto& [k, v] : j.at("methods").items()) s.methods[k] = parse_impute_method(v.get<std::string>());
        if (j.contains("predictors")) s.predictors = j.at("predictors").get<std::vector<std::string>>();
        if (j.contains("pmm_k")) s.pmm_k = j.at("pmm_k").get<std::size_t>();
        if (j.contains("iterations")) s.iterations = j.at("iterations").get<int>();
        if (j.contains("ridge")) s.ridge = j.at("ridge").get<double>();
        if (j.contains("tree_min_leaf")) s.tree_min_leaf = j.at("tree_min_leaf").get<std::size_t>();
        if (j.contains("tree_cp")) s.tree_cp = j.at("tree_cp").get<double>();
        if (j.contains("offset_group")) s.offset_group = j.at("offset_group").get<std::string>();
        if (j.contains("offset_min_group")) s.offset_min_group = j.at("offset_min_group").get<std::size_t>();
        if (j.contains("fill_intermittent")) s.fill_intermittent = j.at("fill_intermittent").get<bool>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("imputation: ") + e.what());
    }
    return s;
}

nlohmann::json ImputerSpec::to_json() const {
    nlohmann::json j;
    j["methods"] = nlohmann::json::object();
    for (const auto& [k, v] : methods) j["methods"][k] = to_string(v);
    j["predictors"] = predictors;
    j["pmm_k"] = pmm_k;
    j["iterations"] = iterations;
    j["ridge"] = ridge;
    j["tree_min_leaf"] = tree_min_leaf;
    j["tree_cp"] = tree_cp;
    j["offset_group"] = offset_group;
    j["offset_min_group"] = offset_min_group;
    j["fill_intermittent"] = fill_intermittent;
    return j;
}

nlohmann::json ImputationSet::manifest() const {
    nlohmann::json j;
    j["seed"] = seed;
    j["m"] = copies.size();
    j["iterations"] = spec.iterations;
    j["offsets"] = offsets;
    j["spec"] = spec.to_json();
    auto& s = j["sigma"] = nlohmann::json::array();
    for (const auto& e : sigmas)
        s.push_back({{"copy", e.copy + 1}, {"wave", e.wave}, {"group", e.group}, {"n", e.n}, {"sigma", e.sigma},
                     {"pooled", e.pooled}});
    j["warnings"] = warnings;
    return j;
}

// ---------------------------------------------------------------------------
// PMM

std::vector<std::vector<std::size_t>> pmm_donor_sets(std::span<const double> donor_pred,
                                                     std::span<const double> target_pred, std::size_t k) {
    const std::size_t nd = donor_pred.size();
    if (nd == 0) throw DataError("predictive mean matching needs a non-empty donor pool");
    k = std::max<std::size_t>(1, std::min(k, nd));
    std::vector<std::size_t> order(nd);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return donor_pred[a] < donor_pred[b]; });
    std::vector<double> sorted(nd);
    for (std::size_t r = 0; r < nd; ++r) sorted[r] = donor_pred[order[r]];

    std::vector<std::vector<std::size_t>> out;
    out.reserve(target_pred.size());
    std::vector<std::pair<double, std::size_t>> cand;
    for (double t : target_pred) {
        // the k nearest form a contiguous window of the sorted predictions
        auto pos = static_cast<std::size_t>(std::lower_bound(sorted.begin(), sorted.end(), t) - sorted.begin());
        std::size_t lo = pos, hi = pos;  // window [lo, hi)
        while (hi - lo < k) {
            if (lo == 0)
                ++hi;
            else if (hi == nd)
                --lo;
            else if (t - sorted[lo - 1] <= sorted[hi] - t)
                --lo;
            else
                ++hi;
        }
        double dk = 0.0;
        for (std::size_t r = lo; r < hi; ++r) dk = std::max(dk, std::abs(sorted[r] - t));
        // extend over ties at the k-th distance, then break them by donor position
        while (lo > 0 && std::abs(sorted[lo - 1] - t) <= dk) --lo;
        while (hi < nd && std::abs(sorted[hi] - t) <= dk) ++hi;
        cand.clear();
        for (std::size_t r = lo; r < hi; ++r) cand.emplace_back(std::abs(sorted[r] - t), order[r]);
        std::sort(cand.begin(), cand.end());
        std::vector<std::size_t> set;
        for (std::size_t r = 0; r < k; ++r) set.push_back(cand[r].second);
        out.push_back(std::move(set));
    }
    return out;
}

std::vector<double> pmm_draw(std::span<const double> donor_pred, std::span<const double> donor_values,
                             std::span<const double> target_pred, std::size_t k, Rng& rng, Warnings* warnings) {
    if (donor_pred.size() != donor_values.size()) throw DataError("donor predictions and values differ in length");
    if (k < 1) throw ConfigError("PMM needs k >= 1");
    if (donor_pred.size() < k)
        warn(warnings, "PMM donor pool of " + std::to_string(donor_pred.size()) + " is smaller than k = " +
                           std::to_string(k) + "; using the full pool");
    auto sets = pmm_donor_sets(donor_pred, target_pred, k);
    std::vector<double> out(sets.size());
    for (std::size_t i = 0; i < sets.size(); ++i) out[i] = donor_values[sets[i][uniform_index(rng, sets[i].size())]];
    return out;
}

namespace {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

template <class F>
auto with_context(const std::string& ctx, F&& f) -> decltype(f()) {
    try {
        return f();
    } catch (const ConvergenceError& e) {
        throw ConvergenceError(ctx + ": " + e.what(), e.trace());
    } catch (const SeparationError& e) {
        throw SeparationError(ctx + ": " + e.what(), e.columns());
    } catch (const SingularError& e) {
        throw SingularError(ctx + ": " + e.what(), e.columns());
    } catch (const NumericalError& e) {
        throw NumericalError(ctx + ": " + e.what());
    } catch (const DataError& e) {
        throw DataError(ctx + ": " + e.what());
    } catch (const ConfigError& e) {
        throw ConfigError(ctx + ": " + e.what());
    }
}

struct Cell {
    std::size_t var;
    int wave;
};

Frame cells_frame(const PanelDataset& d, std::span<const std::size_t> units, const std::vector<Cell>& cells) {
    Frame f;
    for (const auto& c : cells) f.columns.push_back(panel_column(d, units, c.var, c.wave));
    if (f.columns.empty()) f.columns.push_back(Column{"(const)", VarKind::Numeric, {}, std::vector<double>(units.size(), 1.0)});
    return f;
}

Frame take_rows(const Frame& f, std::span<const std::size_t> rows) {
    Frame out;
    for (const auto& c : f.columns) {
        Column nc{c.name, c.kind, c.levels, {}};
        nc.values.reserve(rows.size());
        for (auto r : rows) nc.values.push_back(c.values[r]);
        out.columns.push_back(std::move(nc));
    }
    return out;
}

std::vector<std::size_t> bootstrap_rows(std::size_t n, Rng& rng) {
    std::vector<std::size_t> rows(n);
    for (auto& r : rows) r = uniform_index(rng, n);
    return rows;
}

/// Symmetric square root factor of a covariance matrix (negative eigenvalues floored at zero).
MatrixXd cov_factor(const MatrixXd& cov) {
    Eigen::SelfAdjointEigenSolver<MatrixXd> es(cov);
    VectorXd s = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
    return es.eigenvectors() * s.asDiagonal();
}

struct OutcomeRegression {
    GlmFit fit;
    MatrixXd x;
    double rss = 0.0;
};

OutcomeRegression fit_regression(const Frame& donors, const std::vector<double>& y, double ridge) {
    OutcomeRegression r;
    DesignMatrix d = encode(donors, true);
    drop_aliased(d);
    VectorXd yv = Eigen::Map<const VectorXd>(y.data(), static_cast<Index>(y.size()));
    GlmOptions opt;
    opt.ridge = ridge;
    r.fit = fit_glm(d, yv, Family::Gaussian, {}, opt);
    r.x = std::move(d.x);
    r.rss = (yv - r.x * r.fit.coef).squaredNorm();
    return r;
}

struct ParameterDraw {
    VectorXd beta;
    double sigma = 0.0;
};

/// Posterior draw under a flat prior: sigma*^2 = RSS / chi2(n - p), beta* ~ N(beta_hat, sigma*^2 (X'X)^-1).
ParameterDraw draw_parameters(const OutcomeRegression& reg, Rng& rng) {
    const auto n = static_cast<double>(reg.x.rows());
    const auto p = static_cast<double>(reg.x.cols());
    const double nu = std::max(1.0, n - p);
    double sigma_star = std::sqrt(reg.rss / std::chi_squared_distribution<double>(nu)(rng));
    // unit-dispersion inverse information: (X'X + ridge)^-1
    const double disp = reg.fit.dispersion;
    MatrixXd unit_cov = (disp > 0 && std::isfinite(disp)) ? MatrixXd(reg.fit.cov / disp) : MatrixXd::Zero(reg.fit.cov.rows(), reg.fit.cov.cols());
    VectorXd z(reg.fit.coef.size());
    for (Index j = 0; j < z.size(); ++j) z(j) = std_normal(rng);
    return {reg.fit.coef + sigma_star * (cov_factor(unit_cov) * z), sigma_star};
}

std::vector<double> draw_pmm(const OutcomeRegression& reg, const std::vector<double>& y, const Frame& targets,
                             const ImputerSpec& spec, Rng& rng, Warnings* warnings) {
    ParameterDraw par = draw_parameters(reg, rng);
    VectorXd donor_pred = reg.x * reg.fit.coef;
    MatrixXd xt = apply_coding(reg.fit.blocks, reg.fit.intercept, targets, true);
    VectorXd target_pred = xt * par.beta;
    return pmm_draw(std::span<const double>(donor_pred.data(), static_cast<std::size_t>(donor_pred.size())), y,
                    std::span<const double>(target_pred.data(), static_cast<std::size_t>(target_pred.size())),
                    spec.pmm_k, rng, warnings);
}

std::vector<double> draw_normal(const OutcomeRegression& reg, const Frame& targets, Rng& rng) {
    ParameterDraw par = draw_parameters(reg, rng);
    VectorXd mean = apply_coding(reg.fit.blocks, reg.fit.intercept, targets, true) * par.beta;
    std::vector<double> out(static_cast<std::size_t>(mean.size()));
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = mean(static_cast<Index>(i)) + par.sigma * std_normal(rng);
    return out;
}

std::vector<double> draw_tree(const Frame& donors, const std::vector<double>& y, const Frame& targets,
                              const ImputerSpec& spec, Rng& rng) {
    auto rows = bootstrap_rows(y.size(), rng);
    Frame boot = take_rows(donors, rows);
    VectorXd yb(static_cast<Index>(rows.size()));
    for (std::size_t k = 0; k < rows.size(); ++k) yb(static_cast<Index>(k)) = y[rows[k]];
    TreeOptions opt;
    opt.mode = TreeMode::Cart;
    opt.min_leaf = spec.tree_min_leaf;
    opt.cp = spec.tree_cp;
    opt.max_depth = 30;
    opt.binary_response = false;
    PropensityTree tree = fit_propensity_tree(boot, yb, opt);
    auto leaves = tree.route(targets);
    std::vector<double> out(leaves.size());
    for (std::size_t i = 0; i < leaves.size(); ++i) {
        const auto& pool = tree.nodes[static_cast<std::size_t>(leaves[i])].donors;
        out[i] = pool[uniform_index(rng, pool.size())];
    }
    return out;
}

/// Bootstrap the donors, fit the category model, draw a level code per target.
std::vector<double> draw_categorical(ImputeMethod method, const Frame& donors, const std::vector<double>& y,
                                     const Frame& targets, const ImputerSpec& spec, Rng& rng) {
    auto rows = bootstrap_rows(y.size(), rng);
    std::vector<double> present;
    for (auto r : rows) present.push_back(y[r]);
    std::sort(present.begin(), present.end());
    present.erase(std::unique(present.begin(), present.end()), present.end());
    const std::size_t nt = targets.rows();
    std::vector<double> out(nt);
    if (present.size() == 1) {
        std::fill(out.begin(), out.end(), present[0]);
        return out;
    }
    Frame boot = take_rows(donors, rows);
    VectorXd yb(static_cast<Index>(rows.size()));
    for (std::size_t k = 0; k < rows.size(); ++k)
        yb(static_cast<Index>(k)) =
            static_cast<double>(std::lower_bound(present.begin(), present.end(), y[rows[k]]) - present.begin());
    DesignMatrix d = encode(boot, true);
    drop_aliased(d);
    GlmOptions opt;
    opt.ridge = spec.ridge;
    opt.check_separation = false;
    opt.n_classes = present.size();
    Family fam = method == ImputeMethod::Ordinal ? Family::Ordinal
                 : present.size() == 2           ? Family::Binomial
                                                 : Family::Multinomial;
    GlmFit fit = fit_glm(d, yb, fam, {}, opt);
    MatrixXd prob = fit.class_probabilities(apply_coding(fit.blocks, fit.intercept, targets, true));
    for (std::size_t i = 0; i < nt; ++i) {
        double u = uniform01(rng), cum = 0.0;
        Index pick = prob.cols() - 1;
        for (Index c = 0; c < prob.cols(); ++c) {
            cum += prob(static_cast<Index>(i), c);
            if (u < cum) {
                pick = c;
                break;
            }
        }
        out[i] = present[static_cast<std::size_t>(pick)];
    }
    return out;
}

std::vector<double> draw_values(ImputeMethod method, const Frame& donors, const std::vector<double>& y,
                                const Frame& targets, const ImputerSpec& spec, Rng& rng, Warnings* warnings,
                                const OutcomeRegression* reg = nullptr) {
    switch (method) {
        case ImputeMethod::Pmm: {
            if (reg) return draw_pmm(*reg, y, targets, spec, rng, warnings);
            OutcomeRegression r = fit_regression(donors, y, spec.ridge);
            return draw_pmm(r, y, targets, spec, rng, warnings);
        }
        case ImputeMethod::Normal: {
            if (reg) return draw_normal(*reg, targets, rng);
            return draw_normal(fit_regression(donors, y, spec.ridge), targets, rng);
        }
        case ImputeMethod::Tree: return draw_tree(donors, y, targets, spec, rng);
        default: return draw_categorical(method, donors, y, targets, spec, rng);
    }
}

bool wanted(const ImputerSpec& spec, const VariableSpec& v) {
    return spec.predictors.empty() || std::find(spec.predictors.begin(), spec.predictors.end(), v.name) != spec.predictors.end();
}

std::string ctx(const VariableSpec& v, int wave) {
    return "imputing '" + v.name + "' at wave " + std::to_string(wave);
}

/// Invariants, then (X_s, Y_s) for s < through, filtered by the spec.
std::vector<Cell> history_cells(const Schema& schema, const ImputerSpec& spec, int through) {
    std::vector<Cell> cells;
    for (std::size_t v = 0; v < schema.variables.size(); ++v)
        if (schema.variables[v].role == Role::Invariant && wanted(spec, schema.variables[v])) cells.push_back({v, 0});
    for (int s = 0; s < through; ++s) {
        for (std::size_t v = 0; v < schema.variables.size(); ++v)
            if (schema.variables[v].role == Role::Covariate && wanted(spec, schema.variables[v])) cells.push_back({v, s});
        if (wanted(spec, schema.variables[schema.outcome_index()])) cells.push_back({schema.outcome_index(), s});
    }
    return cells;
}

struct OffsetPlan {
    std::vector<double> k;        ///< per wave 1..T
    std::optional<std::size_t> group;
    std::vector<int> dropout;     ///< per unit: wave of permanent dropout, or -1
};

/// Wave-by-wave draws of (X_t, Y_t) for target nonrespondents.
template <class Target>
void sequential_pass(PanelDataset& copy, const PanelDataset& source, const ImputerSpec& spec, std::uint64_t seed,
                     std::size_t copy_id, const OffsetPlan* offsets, Target is_target, std::vector<SigmaEntry>* sigmas,
                     Warnings* warnings) {
    const Schema& schema = source.schema();
    const std::size_t vy = schema.outcome_index();
    auto covs = schema.indices_with_role(Role::Covariate);
    for (int t = 1; t <= source.last_wave(); ++t) {
        auto donors = units_where(source, [&](std::size_t i) { return source.responded(i, t); });
        auto targets = units_where(source, [&](std::size_t i) { return !source.responded(i, t) && is_target(i, t); });
        if (targets.empty()) continue;
        if (donors.empty()) throw DataError("no respondents at wave " + std::to_string(t) + " to impute from");

        std::vector<Cell> base = history_cells(schema, spec, t);
        // covariates by ascending missingness among the targets' wave
        std::vector<std::pair<std::size_t, std::size_t>> order;
        for (auto v : covs) {
            std::size_t miss = 0;
            for (std::size_t i = 0; i < copy.n_units(); ++i) miss += is_missing(copy.value(i, v, t));
            order.emplace_back(miss, v);
        }
        std::stable_sort(order.begin(), order.end(), [](auto a, auto b) { return a.first < b.first; });
        std::vector<Cell> current;
        for (const auto& [miss, v] : order) {
            const auto& var = schema.variables[v];
            auto tv = units_where(copy, [&](std::size_t i) {
                return !source.responded(i, t) && is_target(i, t) && is_missing(copy.value(i, v, t));
            });
            if (!tv.empty()) {
                std::vector<std::size_t> dv;
                std::vector<double> y;
                for (auto i : donors)
                    if (!is_missing(copy.value(i, v, t))) {
                        dv.push_back(i);
                        y.push_back(copy.value(i, v, t));
                    }
                if (dv.empty()) throw DataError(ctx(var, t) + ": no observed values among respondents");
                std::vector<Cell> cells = base;
                cells.insert(cells.end(), current.begin(), current.end());
                Rng rng = make_rng(seed, {tag(Stream::Imputation), copy_id, static_cast<std::uint64_t>(t), v});
                auto vals = with_context(ctx(var, t), [&] {
                    return draw_values(spec.method_for(var), cells_frame(copy, dv, cells), y, cells_frame(copy, tv, cells),
                                       spec, rng, warnings);
                });
                for (std::size_t k = 0; k < tv.size(); ++k) copy.set_value(tv[k], v, t, vals[k]);
            }
            if (wanted(spec, var)) current.push_back({v, t});
        }

        const auto& yvar = schema.variables[vy];
        std::vector<Cell> cells = base;
        cells.insert(cells.end(), current.begin(), current.end());
        std::vector<double> y;
        for (auto i : donors) y.push_back(copy.outcome(i, t));
        Frame fd = cells_frame(copy, donors, cells), ft = cells_frame(copy, targets, cells);
        const ImputeMethod method = spec.method_for(yvar);
        const double k = offsets ? offsets->k[static_cast<std::size_t>(t - 1)] : 0.0;
        Rng rng = make_rng(seed, {tag(Stream::Imputation), copy_id, static_cast<std::uint64_t>(t), vy});
        std::vector<double> vals = with_context(ctx(yvar, t), [&] {
            std::optional<OutcomeRegression> reg;
            if (method == ImputeMethod::Pmm || method == ImputeMethod::Normal || k != 0.0) reg = fit_regression(fd, y, spec.ridge);
            auto drawn = draw_values(method, fd, y, ft, spec, rng, warnings, reg ? &*reg : nullptr);
            if (k == 0.0) return drawn;

            // residual SD of the respondent regression, by group
            VectorXd resid = Eigen::Map<const VectorXd>(y.data(), static_cast<Index>(y.size())) - reg->x * reg->fit.coef;
            auto sd_of = [](const std::vector<double>& r) {
                double m = std::accumulate(r.begin(), r.end(), 0.0) / static_cast<double>(r.size()), s = 0.0;
                for (double v : r) s += (v - m) * (v - m);
                return r.size() > 1 ? std::sqrt(s / static_cast<double>(r.size() - 1)) : 0.0;
            };
            std::vector<double> all(resid.data(), resid.data() + resid.size());
            const double pooled = sd_of(all);
            const std::vector<std::string> labels =
                offsets->group ? schema.variables[*offsets->group].levels : std::vector<std::string>{"(all)"};
            std::vector<std::vector<double>> by(labels.size());
            auto group_of = [&](std::size_t i) {
                return offsets->group ? static_cast<std::size_t>(copy.value(i, *offsets->group, 0)) : 0;
            };
            for (std::size_t d = 0; d < donors.size(); ++d) by[group_of(donors[d])].push_back(resid(static_cast<Index>(d)));
            std::vector<double> sigma(labels.size(), pooled);
            std::vector<char> needed(labels.size(), 0);
            for (auto i : targets)
                if (offsets->dropout[i] == t) needed[group_of(i)] = 1;
            for (std::size_t g = 0; g < labels.size(); ++g) {
                bool fallback = by[g].size() < spec.offset_min_group;
                if (!fallback) sigma[g] = sd_of(by[g]);
                if (fallback && needed[g])
                    warn(warnings, "offset group '" + labels[g] + "' has " + std::to_string(by[g].size()) +
                                       " respondents at wave " + std::to_string(t) + "; using the pooled residual SD");
                if (sigmas) sigmas->push_back({copy_id, t, labels[g], by[g].size(), sigma[g], fallback});
            }
            for (std::size_t j = 0; j < targets.size(); ++j)
                if (offsets->dropout[targets[j]] == t) drawn[j] = apply_offset(drawn[j], k, sigma[group_of(targets[j])]);
            return drawn;
        });
        for (std::size_t j = 0; j < targets.size(); ++j) copy.set_value(targets[j], vy, t, vals[j]);
    }
}

}  // namespace

PanelDataset impute_item_nonresponse(const PanelDataset& data, const ImputerSpec& spec, Rng& rng, Warnings* warnings) {
    const Schema& schema = data.schema();
    spec.validate(schema);
    PanelDataset copy = data;
    const std::size_t vy = schema.outcome_index();
    for (int t = 0; t <= data.last_wave(); ++t) {
        auto rows = units_where(data, [&](std::size_t i) { return data.responded(i, t); });
        if (rows.empty()) continue;
        struct Item {
            std::size_t var;
            int wave;
            std::vector<std::size_t> observed, missing;
        };
        std::vector<Item> chain;
        for (std::size_t v = 0; v < schema.variables.size(); ++v) {
            const auto& var = schema.variables[v];
            bool eligible = var.role == Role::Covariate || (t == 0 && var.role == Role::Invariant);
            if (!eligible) continue;
            int w = var.role == Role::Invariant ? 0 : t;
            Item it{v, w, {}, {}};
            for (auto i : rows) (is_missing(copy.value(i, v, w)) ? it.missing : it.observed).push_back(i);
            if (it.missing.empty()) continue;
            if (it.observed.empty())
                throw DataError("variable '" + var.name + "' is missing for every respondent at wave " + std::to_string(t));
            chain.push_back(std::move(it));
        }
        if (chain.empty()) continue;
        std::stable_sort(chain.begin(), chain.end(), [](const Item& a, const Item& b) { return a.missing.size() < b.missing.size(); });

        auto in_chain = [&](std::size_t v) {
            return std::any_of(chain.begin(), chain.end(), [&](const Item& it) { return it.var == v; });
        };
        auto complete = [&](std::size_t v, int w) {
            for (auto i : rows)
                if (is_missing(copy.value(i, v, w))) return false;
            return true;
        };
        std::vector<Cell> fixed;
        for (std::size_t v = 0; v < schema.variables.size(); ++v) {
            const auto& var = schema.variables[v];
            if (var.role == Role::Invariant && wanted(spec, var) && !in_chain(v) && complete(v, 0)) fixed.push_back({v, 0});
        }
        for (int s = 0; s <= t; ++s) {
            for (std::size_t v = 0; v < schema.variables.size(); ++v) {
                const auto& var = schema.variables[v];
                if (var.role != Role::Covariate || !wanted(spec, var)) continue;
                if (s == t && in_chain(v)) continue;
                if (complete(v, s)) fixed.push_back({v, s});
            }
            if (wanted(spec, schema.variables[vy]) && complete(vy, s)) fixed.push_back({vy, s});
        }

        for (const auto& it : chain)
            for (auto i : it.missing)
                copy.set_value(i, it.var, it.wave, copy.value(it.observed[uniform_index(rng, it.observed.size())], it.var, it.wave));

        const int passes = chain.size() == 1 ? 1 : spec.iterations;
        for (int pass = 0; pass < passes; ++pass) {
            for (const auto& it : chain) {
                const auto& var = schema.variables[it.var];
                std::vector<Cell> cells = fixed;
                for (const auto& other : chain)
                    if (other.var != it.var && wanted(spec, schema.variables[other.var])) cells.push_back({other.var, other.wave});
                std::vector<double> y;
                for (auto i : it.observed) y.push_back(copy.value(i, it.var, it.wave));
                auto vals = with_context(ctx(var, t), [&] {
                    return draw_values(spec.method_for(var), cells_frame(copy, it.observed, cells), y,
                                       cells_frame(copy, it.missing, cells), spec, rng, warnings);
                });
                for (std::size_t k = 0; k < it.missing.size(); ++k) copy.set_value(it.missing[k], it.var, it.wave, vals[k]);
            }
        }
    }
    return copy;
}

ImputationSet sequential_mi(const PanelDataset& data, const ImputerSpec& spec, std::size_t m, std::uint64_t seed,
                            std::span<const double> offsets, unsigned threads) {
    const Schema& schema = data.schema();
    spec.validate(schema);
    if (m < 1) throw ConfigError("number of imputations m must be at least 1");
    for (std::size_t i = 0; i < data.n_units(); ++i)
        if (!data.responded(i, 0))
            throw DataError("unit '" + data.unit_ids()[i] + "' is missing the baseline outcome; sequential imputation needs a complete baseline");
    if (!data.is_monotone() && !spec.fill_intermittent)
        throw DataError("sequential imputation needs a monotone pattern; monotonize first or set fill_intermittent");
    const auto T = static_cast<std::size_t>(data.last_wave());

    OffsetPlan plan;
    if (offsets.empty())
        plan.k.assign(T, 0.0);
    else if (offsets.size() == 1)
        plan.k.assign(T, offsets[0]);
    else if (offsets.size() == T)
        plan.k.assign(offsets.begin(), offsets.end());
    else
        throw ConfigError("offset schedule needs 1 or " + std::to_string(T) + " values, got " + std::to_string(offsets.size()));
    if (!spec.offset_group.empty()) plan.group = schema.index_of(spec.offset_group);
    plan.dropout.assign(data.n_units(), -1);
    for (std::size_t i = 0; i < data.n_units(); ++i) {
        int last = -1;
        for (int t = 0; t <= data.last_wave(); ++t)
            if (data.responded(i, t)) last = t;
        if (last < data.last_wave()) plan.dropout[i] = last + 1;
    }
    const bool shifted = std::any_of(plan.k.begin(), plan.k.end(), [](double k) { return k != 0.0; });

    ImputationSet set;
    set.spec = spec;
    set.seed = seed;
    set.offsets = plan.k;
    set.copies.resize(m);
    std::vector<std::vector<SigmaEntry>> sig(m);
    std::vector<Warnings> warns(m);
    parallel_for(m, threads, [&](std::size_t j) {
        Rng irng = make_rng(seed, {tag(Stream::ItemImputation), j});
        PanelDataset copy = impute_item_nonresponse(data, spec, irng, &warns[j]);
        sequential_pass(copy, data, spec, seed, j, shifted ? &plan : nullptr, [](std::size_t, int) { return true; },
                        &sig[j], &warns[j]);
        set.copies[j] = std::move(copy);
    });
    for (std::size_t j = 0; j < m; ++j) {
        set.sigmas.insert(set.sigmas.end(), sig[j].begin(), sig[j].end());
        set.warnings.insert(set.warnings.end(), warns[j].begin(), warns[j].end());
    }
    return set;
}

PanelDataset monotonize_by_imputation(const PanelDataset& data, const ImputerSpec& spec, std::uint64_t seed,
                                      Warnings* warnings) {
    Rng irng = make_rng(seed, {tag(Stream::ItemImputation), 0});
    PanelDataset copy = impute_item_nonresponse(data, spec, irng, warnings);
    std::vector<int> last(data.n_units(), -1);
    for (std::size_t i = 0; i < data.n_units(); ++i)
        for (int t = 0; t <= data.last_wave(); ++t)
            if (data.responded(i, t)) last[i] = t;
    sequential_pass(copy, data, spec, seed, 0, nullptr, [&](std::size_t i, int t) { return t < last[i]; }, nullptr,
                    warnings);
    return copy;
}

void write_imputations(const ImputationSet& set, const std::string& dir, const std::string& prefix) {
    std::filesystem::create_directories(dir);
    for (std::size_t j = 0; j < set.copies.size(); ++j)
        write_panel(set.copies[j], (std::filesystem::path(dir) / (prefix + "_" + std::to_string(j + 1) + ".csv")).string());
    std::ofstream out(std::filesystem::path(dir) / (prefix + "_manifest.json"), std::ios::binary);
    if (!out) throw DataError("cannot write the imputation manifest in " + dir);
    out << set.manifest().dump(2) << "\n";
}

}  // namespace nrba
