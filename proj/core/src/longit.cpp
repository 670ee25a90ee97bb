#include "nrba/longit.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <nlohmann/json.hpp>

namespace nrba {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

struct Factor {
    enum Kind { Wave, Raw, Std, StdSq } kind = Raw;
    std::string text;
    std::size_t var = 0;
};

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::size_t start = 0;
    for (;;) {
        auto pos = s.find(sep, start);
        out.push_back(s.substr(start, pos - start));
        if (pos == std::string::npos) return out;
        start = pos + 1;
    }
}

Factor parse_factor(const std::string& text, const Schema& schema) {
    Factor f;
    f.text = text;
    if (text == "wave") {
        f.kind = Factor::Wave;
        return f;
    }
    std::string name = text;
    if (text.rfind("std(", 0) == 0) {
        auto close = text.find(')');
        if (close == std::string::npos) throw ConfigError("malformed term '" + text + "'");
        name = text.substr(4, close - 4);
        std::string rest = text.substr(close + 1);
        if (rest.empty())
            f.kind = Factor::Std;
        else if (rest == "^2")
            f.kind = Factor::StdSq;
        else
            throw ConfigError("malformed term '" + text + "' (only std(x) and std(x)^2 are supported)");
    }
    auto idx = schema.find(name);
    if (!idx) throw ConfigError("formula term '" + text + "' names unknown variable '" + name + "'");
    const auto& v = schema.variables[*idx];
    if (v.role != Role::Invariant && v.role != Role::Covariate)
        throw ConfigError("formula term '" + text + "' must use an invariant or covariate variable");
    if (f.kind != Factor::Raw && v.kind != VarKind::Numeric)
        throw ConfigError("std() needs a numeric variable, '" + name + "' is " + to_string(v.kind));
    f.var = *idx;
    return f;
}

struct ColumnSet {
    std::vector<std::string> labels;
    std::vector<std::vector<double>> values;
};

}  // namespace

void AnalysisFormula::validate(const Schema& schema) const {
    if (!outcome.empty()) {
        auto idx = schema.find(outcome);
        if (!idx || schema.variables[*idx].role != Role::Outcome)
            throw ConfigError("formula outcome '" + outcome + "' is not the schema outcome");
    }
    std::vector<std::string> mains;
    for (const auto& t : terms)
        if (t.find(':') == std::string::npos) {
            parse_factor(t, schema);
            mains.push_back(t);
        }
    for (const auto& t : terms) {
        if (t.find(':') == std::string::npos) continue;
        for (const auto& f : split(t, ':')) {
            parse_factor(f, schema);
            if (std::find(mains.begin(), mains.end(), f) == mains.end())
                throw ConfigError("interaction '" + t + "' references '" + f + "', which is not a main effect");
        }
    }
    for (const auto& [var, level] : reference) {
        if (var == "wave") continue;
        auto idx = schema.find(var);
        if (!idx) throw ConfigError("reference given for unknown variable '" + var + "'");
        const auto& lv = schema.variables[*idx].levels;
        if (std::find(lv.begin(), lv.end(), level) == lv.end())
            throw ConfigError("reference level '" + level + "' is not a level of '" + var + "'");
    }
}

AnalysisFormula AnalysisFormula::from_json(const nlohmann::json& j) {
    AnalysisFormula f;
    try {
        if (j.contains("outcome")) f.outcome = j.at("outcome").get<std::string>();
        f.terms = j.at("terms").get<std::vector<std::string>>();
        if (j.contains("reference")) f.reference = j.at("reference").get<std::map<std::string, std::string>>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("formula: ") + e.what());
    }
    return f;
}

nlohmann::json AnalysisFormula::to_json() const {
    return {{"outcome", outcome}, {"terms", terms}, {"reference", reference}};
}

AnalysisFormula default_formula() {
    AnalysisFormula f;
    f.terms = {"std(age)", "std(age)^2", "sex", "race", "pov", "pnw", "sty", "wave", "wave:race"};
    return f;
}

LongDesign build_design(const PanelDataset& data, const AnalysisFormula& formula, RowSet rowset, Warnings* warnings) {
    const Schema& schema = data.schema();
    formula.validate(schema);
    const std::size_t vy = schema.outcome_index();

    // variables the formula touches
    std::vector<std::size_t> used;
    for (const auto& t : formula.terms)
        for (const auto& ft : split(t, ':')) {
            Factor f = parse_factor(ft, schema);
            if (f.kind != Factor::Wave && std::find(used.begin(), used.end(), f.var) == used.end()) used.push_back(f.var);
        }
    auto row_ok = [&](std::size_t i, int t) {
        if (is_missing(data.outcome(i, t))) return false;
        for (auto v : used)
            if (is_missing(data.value(i, v, t))) return false;
        return true;
    };

    LongDesign d;
    for (std::size_t i = 0; i < data.n_units(); ++i) {
        switch (rowset) {
            case RowSet::Available:
                for (int t = 0; t <= data.last_wave(); ++t)
                    if (row_ok(i, t)) {
                        d.unit.push_back(i);
                        d.wave.push_back(t);
                    }
                break;
            case RowSet::Complete: {
                bool all = true;
                for (int t = 0; t <= data.last_wave() && all; ++t) all = row_ok(i, t);
                if (all)
                    for (int t = 0; t <= data.last_wave(); ++t) {
                        d.unit.push_back(i);
                        d.wave.push_back(t);
                    }
                break;
            }
            case RowSet::All:
                for (int t = 0; t <= data.last_wave(); ++t) {
                    if (!row_ok(i, t))
                        throw DataError("unit '" + data.unit_ids()[i] + "' has missing analysis variables at wave " +
                                        std::to_string(t));
                    d.unit.push_back(i);
                    d.wave.push_back(t);
                }
                break;
        }
    }
    const std::size_t n = d.unit.size();
    if (n == 0) throw DataError("no rows available for the analysis model");
    d.y.resize(static_cast<Index>(n));
    for (std::size_t r = 0; r < n; ++r) d.y(static_cast<Index>(r)) = data.value(d.unit[r], vy, d.wave[r]);

    auto raw = [&](std::size_t v, std::size_t r) { return data.value(d.unit[r], v, d.wave[r]); };
    auto std_constants = [&](std::size_t v) {
        const std::string& name = schema.variables[v].name;
        auto it = d.scaling.find(name);
        if (it != d.scaling.end()) return it->second;
        double m = 0.0, s = 0.0;
        for (std::size_t r = 0; r < n; ++r) m += raw(v, r);
        m /= static_cast<double>(n);
        for (std::size_t r = 0; r < n; ++r) s += (raw(v, r) - m) * (raw(v, r) - m);
        s = n > 1 ? std::sqrt(s / static_cast<double>(n - 1)) : 0.0;
        if (s == 0.0) s = 1.0;
        return d.scaling[name] = {m, s};
    };

    auto factor_columns = [&](const Factor& f) {
        ColumnSet cs;
        auto add_levels = [&](const std::vector<std::string>& levels, const std::string& prefix, const std::string& ref_key,
                              auto code_of) {
            std::size_t ref = 0;
            auto it = formula.reference.find(ref_key);
            if (it != formula.reference.end()) {
                auto pos = std::find(levels.begin(), levels.end(), it->second);
                if (pos == levels.end()) throw ConfigError("reference '" + it->second + "' is not a level of '" + ref_key + "'");
                ref = static_cast<std::size_t>(pos - levels.begin());
            }
            for (std::size_t l = 0; l < levels.size(); ++l) {
                if (l == ref) continue;
                cs.labels.push_back(prefix + "[" + levels[l] + "]");
                std::vector<double> col(n);
                for (std::size_t r = 0; r < n; ++r) col[r] = code_of(r) == l ? 1.0 : 0.0;
                cs.values.push_back(std::move(col));
            }
        };
        if (f.kind == Factor::Wave) {
            std::vector<std::string> levels;
            for (int t = 0; t <= data.last_wave(); ++t) levels.push_back(std::to_string(t));
            add_levels(levels, "wave", "wave", [&](std::size_t r) { return static_cast<std::size_t>(d.wave[r]); });
            return cs;
        }
        const auto& var = schema.variables[f.var];
        if (f.kind == Factor::Raw && is_categorical(var.kind)) {
            add_levels(var.levels, var.name, var.name, [&](std::size_t r) { return static_cast<std::size_t>(raw(f.var, r)); });
            return cs;
        }
        std::vector<double> col(n);
        if (f.kind == Factor::Raw) {
            for (std::size_t r = 0; r < n; ++r) col[r] = raw(f.var, r);
        } else {
            auto [m, s] = std_constants(f.var);
            for (std::size_t r = 0; r < n; ++r) {
                double z = (raw(f.var, r) - m) / s;
                col[r] = f.kind == Factor::StdSq ? z * z : z;
            }
        }
        cs.labels.push_back(f.text);
        cs.values.push_back(std::move(col));
        return cs;
    };

    ColumnSet all;
    all.labels.push_back("(Intercept)");
    all.values.emplace_back(n, 1.0);
    for (const auto& t : formula.terms) {
        auto parts = split(t, ':');
        ColumnSet cs = factor_columns(parse_factor(parts[0], schema));
        for (std::size_t k = 1; k < parts.size(); ++k) {
            ColumnSet rhs = factor_columns(parse_factor(parts[k], schema)), prod;
            for (std::size_t a = 0; a < cs.labels.size(); ++a)
                for (std::size_t b = 0; b < rhs.labels.size(); ++b) {
                    prod.labels.push_back(cs.labels[a] + ":" + rhs.labels[b]);
                    std::vector<double> col(n);
                    for (std::size_t r = 0; r < n; ++r) col[r] = cs.values[a][r] * rhs.values[b][r];
                    prod.values.push_back(std::move(col));
                }
            cs = std::move(prod);
        }
        all.labels.insert(all.labels.end(), cs.labels.begin(), cs.labels.end());
        all.values.insert(all.values.end(), cs.values.begin(), cs.values.end());
    }

    std::vector<std::size_t> keep;
    for (std::size_t c = 0; c < all.labels.size(); ++c) {
        bool empty = std::all_of(all.values[c].begin(), all.values[c].end(), [](double v) { return v == 0.0; });
        if (empty) {
            d.dropped.push_back(all.labels[c]);
            warn(warnings, "analysis model: dropped empty column '" + all.labels[c] + "'");
        } else {
            keep.push_back(c);
        }
    }
    MatrixXd x(static_cast<Index>(n), static_cast<Index>(keep.size()));
    std::vector<std::string> labels;
    for (std::size_t k = 0; k < keep.size(); ++k) {
        for (std::size_t r = 0; r < n; ++r) x(static_cast<Index>(r), static_cast<Index>(k)) = all.values[keep[k]][r];
        labels.push_back(all.labels[keep[k]]);
    }
    d.x.x = std::move(x);
    d.x.labels = std::move(labels);
    d.x.intercept = true;
    auto aliased = drop_aliased(d.x);
    for (const auto& a : aliased) {
        d.dropped.push_back(a);
        warn(warnings, "analysis model: dropped aliased column '" + a + "'");
    }
    return d;
}

// ---------------------------------------------------------------------------
// Mixed model

namespace {

struct UnitBlocks {
    std::vector<std::vector<Index>> rows;
};

UnitBlocks group_rows(std::span<const std::size_t> unit) {
    UnitBlocks b;
    std::map<std::size_t, std::size_t> slot;
    for (std::size_t r = 0; r < unit.size(); ++r) {
        auto [it, fresh] = slot.emplace(unit[r], b.rows.size());
        if (fresh) b.rows.emplace_back();
        b.rows[it->second].push_back(static_cast<Index>(r));
    }
    return b;
}

VectorXd weights_or_ones(std::span<const double> w, Index n) {
    if (w.empty()) return VectorXd::Ones(n);
    if (static_cast<Index>(w.size()) != n) throw DataError("weights length does not match the rows");
    VectorXd v(n);
    for (Index i = 0; i < n; ++i) {
        if (!(w[static_cast<std::size_t>(i)] > 0.0) || !std::isfinite(w[static_cast<std::size_t>(i)]))
            throw DataError("observation weights must be positive and finite");
        v(i) = w[static_cast<std::size_t>(i)];
    }
    return v;
}

struct UnitStats {
    MatrixXd G;  // X' D_w X
    VectorXd g;  // X' w
    VectorXd h;  // X' D_w y
    double s = 0, q = 0, W = 0;
};

struct Profile {
    std::vector<UnitStats> units;
    MatrixXd G;
    VectorXd h;
    double Nw = 0, ywy = 0;
    Index p = 0;
    bool reml = false;

    struct Eval {
        double loglik;
        VectorXd beta;
        double sigma2;
        MatrixXd M;
    };

    Eval evaluate(double gamma) const {
        MatrixXd M = G;
        VectorXd b = h;
        double logdet_v = 0.0;
        for (const auto& u : units) {
            double c = gamma / (1.0 + u.W * gamma);
            M.noalias() -= c * u.g * u.g.transpose();
            b -= c * u.s * u.g;
            logdet_v += std::log1p(u.W * gamma);
        }
        Eigen::LDLT<MatrixXd> ldlt(M);
        if (ldlt.info() != Eigen::Success) throw SingularError("singular mixed-model normal equations", {});
        VectorXd beta = ldlt.solve(b);
        double Q = ywy - 2.0 * beta.dot(h) + beta.dot(G * beta);
        for (const auto& u : units) {
            double c = gamma / (1.0 + u.W * gamma);
            double e = u.s - u.g.dot(beta);
            Q -= c * e * e;
        }
        Q = std::max(Q, 0.0);
        const double df = reml ? Nw - static_cast<double>(p) : Nw;
        if (df <= 0 || Q <= 0) throw NumericalError("mixed model has no residual degrees of freedom");
        double s2 = Q / df;
        double ll = -0.5 * (df * std::log(2.0 * M_PI * s2) + df + logdet_v);
        if (reml) {
            ll -= 0.5 * ldlt.vectorD().array().log().sum();
        }
        return {ll, std::move(beta), s2, std::move(M)};
    }
};

}  // namespace

MixedFit fit_mixed(const DesignMatrix& x, const VectorXd& y, std::span<const std::size_t> unit,
                   std::span<const double> weights, const MixedOptions& opt) {
    const Index n = x.x.rows(), p = x.x.cols();
    if (y.size() != n || static_cast<Index>(unit.size()) != n) throw DataError("mixed model inputs differ in length");
    VectorXd w = weights_or_ones(weights, n);
    if (opt.weight_power != 1.0) w = w.array().pow(opt.weight_power).matrix();
    UnitBlocks blocks = group_rows(unit);
    std::size_t multi = 0;
    for (const auto& r : blocks.rows) multi += r.size() >= 2;
    if (multi < 2) throw DataError("mixed model needs at least 2 units with 2 or more observations");
    auto collinear = collinear_columns(x.x, x.labels);
    if (!collinear.empty()) throw SingularError("mixed model design is rank deficient", collinear);

    Profile prof;
    prof.p = p;
    prof.reml = opt.reml;
    prof.G = MatrixXd::Zero(p, p);
    prof.h = VectorXd::Zero(p);
    for (const auto& rows : blocks.rows) {
        UnitStats u;
        MatrixXd xi = x.x(rows, Eigen::all);
        VectorXd yi = y(rows), wi = w(rows);
        u.G = xi.transpose() * wi.asDiagonal() * xi;
        u.g = xi.transpose() * wi;
        u.h = xi.transpose() * (wi.array() * yi.array()).matrix();
        u.s = wi.dot(yi);
        u.q = (wi.array() * yi.array().square()).sum();
        u.W = wi.sum();
        prof.G += u.G;
        prof.h += u.h;
        prof.ywy += u.q;
        prof.Nw += u.W;
        prof.units.push_back(std::move(u));
    }

    MixedFit fit;
    fit.terms = x.labels;
    fit.weighted = !weights.empty();
    fit.n_obs = static_cast<std::size_t>(n);
    fit.n_units = blocks.rows.size();

    double gamma = 0.0;
    Profile::Eval best = prof.evaluate(0.0);
    fit.trace.push_back(best.loglik);
    if (!opt.zero_variance) {
        // coarse grid on log(gamma), then golden section around the best point
        std::vector<double> grid;
        for (int k = -12; k <= 8; ++k) grid.push_back(static_cast<double>(k));
        std::vector<double> ll(grid.size());
        std::size_t kbest = 0;
        for (std::size_t k = 0; k < grid.size(); ++k) {
            ll[k] = prof.evaluate(std::exp(grid[k])).loglik;
            if (ll[k] > ll[kbest]) kbest = k;
        }
        if (ll[kbest] > best.loglik) {
            double a = grid[kbest == 0 ? 0 : kbest - 1], b = grid[std::min(kbest + 1, grid.size() - 1)];
            const double phi = 0.5 * (std::sqrt(5.0) - 1.0);
            double c = b - phi * (b - a), dd = a + phi * (b - a);
            double fc = prof.evaluate(std::exp(c)).loglik, fd = prof.evaluate(std::exp(dd)).loglik;
            double theta = grid[kbest], fbest = ll[kbest];
            fit.trace.push_back(std::max(fbest, fit.trace.back()));
            bool converged = false;
            for (int it = 0; it < opt.max_iter; ++it) {
                if (fc >= fd) {
                    b = dd;
                    dd = c;
                    fd = fc;
                    c = b - phi * (b - a);
                    fc = prof.evaluate(std::exp(c)).loglik;
                } else {
                    a = c;
                    c = dd;
                    fc = fd;
                    dd = a + phi * (b - a);
                    fd = prof.evaluate(std::exp(dd)).loglik;
                }
                double prev = fbest;
                if (fc > fbest) {
                    fbest = fc;
                    theta = c;
                }
                if (fd > fbest) {
                    fbest = fd;
                    theta = dd;
                }
                fit.trace.push_back(fbest);
                fit.iterations = it + 1;
                if (std::abs(fbest - prev) <= opt.tol * std::abs(fbest) && (b - a) < 1e-9) {
                    converged = true;
                    break;
                }
            }
            if (!converged) throw ConvergenceError("mixed model variance search did not converge", fit.trace);
            gamma = std::exp(theta);
            best = prof.evaluate(gamma);
        }
    }
    fit.boundary = gamma == 0.0;
    fit.coef = best.beta;
    fit.sigma2 = best.sigma2;
    fit.sigma2_u = gamma * best.sigma2;
    fit.loglik = best.loglik;

    Eigen::LDLT<MatrixXd> ldlt(best.M);
    MatrixXd Minv = ldlt.solve(MatrixXd::Identity(p, p));
    if (!fit.weighted) {
        fit.cov = best.sigma2 * Minv;
    } else {
        MatrixXd meat = MatrixXd::Zero(p, p);
        for (std::size_t k = 0; k < blocks.rows.size(); ++k) {
            const auto& rows = blocks.rows[k];
            const auto& u = prof.units[k];
            MatrixXd xi = x.x(rows, Eigen::all);
            VectorXd ri = y(rows) - xi * fit.coef, wi = w(rows);
            double c = gamma / (1.0 + u.W * gamma);
            VectorXd score = xi.transpose() * (wi.array() * ri.array()).matrix() - c * wi.dot(ri) * u.g;
            meat.noalias() += score * score.transpose();
        }
        fit.cov = Minv * meat * Minv;
    }
    fit.cov = (0.5 * (fit.cov + fit.cov.transpose())).eval();
    return fit;
}

// ---------------------------------------------------------------------------
// GEE

GeeFit fit_gee(const DesignMatrix& x, const VectorXd& y, std::span<const std::size_t> unit, std::span<const int> wave,
               std::span<const double> weights, const GeeOptions& opt, Warnings* warnings) {
    const Index n = x.x.rows(), p = x.x.cols();
    if (y.size() != n || static_cast<Index>(unit.size()) != n || static_cast<Index>(wave.size()) != n)
        throw DataError("GEE inputs differ in length");
    VectorXd w = weights_or_ones(weights, n);
    auto collinear = collinear_columns(x.x, x.labels);
    if (!collinear.empty()) throw SingularError("GEE design is rank deficient", collinear);
    UnitBlocks blocks = group_rows(unit);
    for (auto& rows : blocks.rows) {
        std::stable_sort(rows.begin(), rows.end(), [&](Index a, Index b) { return wave[static_cast<std::size_t>(a)] < wave[static_cast<std::size_t>(b)]; });
        for (std::size_t k = 1; k < rows.size(); ++k)
            if (wave[static_cast<std::size_t>(rows[k])] == wave[static_cast<std::size_t>(rows[k - 1])])
                throw DataError("GEE: a unit has two rows for the same wave");
    }

    GeeFit fit;
    fit.terms = x.labels;
    fit.working = opt.working;
    fit.weighted = !weights.empty();
    fit.n_obs = static_cast<std::size_t>(n);
    fit.n_units = blocks.rows.size();

    auto corr_inverse = [&](const std::vector<Index>& rows, double rho) {
        const Index m = static_cast<Index>(rows.size());
        MatrixXd R(m, m);
        for (Index a = 0; a < m; ++a)
            for (Index b = 0; b < m; ++b) {
                int lag = std::abs(wave[static_cast<std::size_t>(rows[static_cast<std::size_t>(a)])] -
                                   wave[static_cast<std::size_t>(rows[static_cast<std::size_t>(b)])]);
                R(a, b) = std::pow(rho, lag);
            }
        return MatrixXd(R.ldlt().solve(MatrixXd::Identity(m, m)));
    };
    auto solve_beta = [&](double rho, MatrixXd& B) {
        B = MatrixXd::Zero(p, p);
        VectorXd b = VectorXd::Zero(p);
        for (const auto& rows : blocks.rows) {
            MatrixXd xi = x.x(rows, Eigen::all);
            VectorXd wi = w(rows);
            MatrixXd a = rho == 0.0 ? MatrixXd(xi.transpose() * wi.asDiagonal())
                                    : MatrixXd(xi.transpose() * corr_inverse(rows, rho) * wi.asDiagonal());
            B.noalias() += a * xi;
            b.noalias() += a * y(rows);
        }
        Eigen::FullPivLU<MatrixXd> lu(B);
        if (!lu.isInvertible()) throw SingularError("singular GEE estimating equations", x.labels);
        return VectorXd(lu.solve(b));
    };

    MatrixXd B;
    VectorXd beta = solve_beta(0.0, B);
    double rho = 0.0;
    fit.iterations = 1;
    if (opt.working == WorkingCorrelation::Ar1) {
        bool converged = false;
        for (int it = 0; it < opt.max_iter; ++it) {
            VectorXd e = y - x.x * beta;
            double phi = e.squaredNorm() / static_cast<double>(n);
            double cross = 0.0;
            std::size_t pairs = 0;
            for (const auto& rows : blocks.rows)
                for (std::size_t k = 1; k < rows.size(); ++k)
                    if (wave[static_cast<std::size_t>(rows[k])] - wave[static_cast<std::size_t>(rows[k - 1])] == 1) {
                        cross += e(rows[k]) * e(rows[k - 1]);
                        ++pairs;
                    }
            rho = (pairs > 0 && phi > 0) ? cross / (static_cast<double>(pairs) * phi) : 0.0;
            if (std::abs(rho) >= 0.99) {
                if (!fit.rho_clipped)
                    warn(warnings, "GEE: lag-1 correlation estimate " + std::to_string(rho) + " clipped to +/-0.99");
                fit.rho_clipped = true;
                rho = std::copysign(0.99, rho);
            }
            VectorXd next = solve_beta(rho, B);
            double change = (next - beta).cwiseAbs().maxCoeff();
            double scale = 1.0 + next.cwiseAbs().maxCoeff();
            beta = std::move(next);
            fit.iterations = it + 2;
            if (change <= opt.tol * scale) {
                converged = true;
                break;
            }
        }
        if (!converged) throw ConvergenceError("GEE did not converge", {});
    }
    fit.coef = beta;
    fit.rho = rho;
    VectorXd e = y - x.x * beta;
    fit.scale = e.squaredNorm() / static_cast<double>(n);

    MatrixXd meat = MatrixXd::Zero(p, p);
    for (const auto& rows : blocks.rows) {
        MatrixXd xi = x.x(rows, Eigen::all);
        VectorXd wi = w(rows);
        VectorXd u = rho == 0.0 ? VectorXd(xi.transpose() * (wi.array() * e(rows).array()).matrix())
                                : VectorXd(xi.transpose() * corr_inverse(rows, rho) * (wi.array() * e(rows).array()).matrix());
        meat.noalias() += u * u.transpose();
    }
    MatrixXd Binv = B.fullPivLu().inverse();
    fit.cov = Binv * meat * Binv.transpose();
    fit.cov = (0.5 * (fit.cov + fit.cov.transpose())).eval();
    return fit;
}

nlohmann::json mixed_to_json(const MixedFit& f) {
    nlohmann::json j;
    j["terms"] = f.terms;
    j["coef"] = std::vector<double>(f.coef.data(), f.coef.data() + f.coef.size());
    std::vector<double> se;
    for (Index k = 0; k < f.coef.size(); ++k) se.push_back(std::sqrt(f.cov(k, k)));
    j["se"] = se;
    j["sigma2_u"] = f.sigma2_u;
    j["sigma2"] = f.sigma2;
    j["loglik"] = f.loglik;
    j["boundary"] = f.boundary;
    j["weighted"] = f.weighted;
    j["n_obs"] = f.n_obs;
    j["n_units"] = f.n_units;
    j["iterations"] = f.iterations;
    return j;
}

nlohmann::json gee_to_json(const GeeFit& f) {
    nlohmann::json j;
    j["terms"] = f.terms;
    j["coef"] = std::vector<double>(f.coef.data(), f.coef.data() + f.coef.size());
    std::vector<double> se;
    for (Index k = 0; k < f.coef.size(); ++k) se.push_back(std::sqrt(f.cov(k, k)));
    j["se"] = se;
    j["working"] = f.working == WorkingCorrelation::Ar1 ? "ar1" : "independence";
    j["rho"] = f.rho;
    j["rho_clipped"] = f.rho_clipped;
    j["scale"] = f.scale;
    j["weighted"] = f.weighted;
    j["iterations"] = f.iterations;
    j["n_obs"] = f.n_obs;
    j["n_units"] = f.n_units;
    return j;
}

}  // namespace nrba
