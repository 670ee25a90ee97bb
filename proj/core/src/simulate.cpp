#include "nrba/simulate.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

#include <nlohmann/json.hpp>

#include "nrba/parallel.hpp"
#include "nrba/rng.hpp"

namespace nrba {

const char* to_string(Mechanism m) {
    switch (m) {
        case Mechanism::MCAR: return "MCAR";
        case Mechanism::MAR: return "MAR";
        case Mechanism::MNAR: return "MNAR";
    }
    return "?";
}

namespace {

Mechanism parse_mechanism(const std::string& s) {
    if (s == "MCAR") return Mechanism::MCAR;
    if (s == "MAR") return Mechanism::MAR;
    if (s == "MNAR") return Mechanism::MNAR;
    throw ConfigError("dropout.mechanism: unknown value '" + s + "' (expected MCAR, MAR or MNAR)");
}

template <class T>
void get_if(const nlohmann::json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

double logit(double p) { return std::log(p / (1.0 - p)); }

std::vector<double> pov_distribution(const CohortScenario& s, int wave) {
    std::vector<double> pi = s.pov_probs;
    const std::size_t L = pi.size();
    const double move = L > 1 ? (1.0 - s.pov_stay) / static_cast<double>(L - 1) : 0.0;
    for (int t = 0; t < wave; ++t) {
        std::vector<double> next(L, 0.0);
        for (std::size_t a = 0; a < L; ++a)
            for (std::size_t b = 0; b < L; ++b) next[b] += pi[a] * (a == b ? s.pov_stay : move);
        pi = next;
    }
    return pi;
}

std::size_t draw_category(Rng& rng, const std::vector<double>& probs) {
    double u = uniform01(rng), c = 0.0;
    for (std::size_t k = 0; k < probs.size(); ++k) {
        c += probs[k];
        if (u < c) return k;
    }
    return probs.size() - 1;
}

const std::vector<std::string> kPovLevels{"above", "near", "below"};

}  // namespace

void CohortScenario::validate() const {
    std::vector<std::string> bad;
    auto prob = [&](double p, const std::string& name) {
        if (!(p >= 0.0 && p <= 1.0)) bad.push_back(name + " must lie in [0,1]");
    };
    auto probs = [&](const std::vector<double>& v, const std::string& name) {
        if (v.empty()) bad.push_back(name + " must be non-empty");
        double s = 0.0;
        for (double p : v) {
            prob(p, name);
            s += p;
        }
        if (std::abs(s - 1.0) > 1e-9) bad.push_back(name + " must sum to 1");
    };
    if (n == 0) bad.push_back("n must be positive");
    if (last_wave < 1) bad.push_back("last_wave must be at least 1");
    if (clusters == 0) bad.push_back("clusters must be positive");
    prob(sex_p, "sex_p");
    probs(race_probs, "race_probs");
    if (race_levels.size() != race_probs.size()) bad.push_back("race_levels and race_probs differ in length");
    probs(pov_probs, "pov_probs");
    if (pov_probs.size() != kPovLevels.size()) bad.push_back("pov_probs must have 3 entries");
    prob(pov_stay, "pov_stay");
    if (!(age_sd >= 0)) bad.push_back("age_sd must be >= 0");
    if (!(pnw_a > 0 && pnw_b > 0)) bad.push_back("pnw_a and pnw_b must be positive");
    prob(sty_p, "sty_p");
    if (!(base_weight_cv >= 0)) bad.push_back("base_weight_cv must be >= 0");
    prob(intermittent_rate, "intermittent_rate");
    prob(item_missing_rate, "item_missing_rate");
    const std::size_t G = race_probs.size();
    const auto& g = growth;
    if (!g.wave_effects.empty() && g.wave_effects.size() != static_cast<std::size_t>(last_wave + 1))
        bad.push_back("growth.wave_effects must have last_wave+1 entries");
    if (g.race_effects.size() != G) bad.push_back("growth.race_effects must have one entry per race level");
    if (g.race_slopes.size() != G) bad.push_back("growth.race_slopes must have one entry per race level");
    if (g.race_residual_scale.size() != G) bad.push_back("growth.race_residual_scale must have one entry per race level");
    for (double v : g.race_residual_scale)
        if (!(v > 0)) bad.push_back("growth.race_residual_scale entries must be positive");
    if (g.pov_effects.size() != kPovLevels.size()) bad.push_back("growth.pov_effects must have 3 entries");
    if (!(g.intercept_sd >= 0)) bad.push_back("growth.intercept_sd must be >= 0");
    if (!(g.residual_sd > 0)) bad.push_back("growth.residual_sd must be > 0");
    if (!(g.ar1 > -1 && g.ar1 < 1)) bad.push_back("growth.ar1 must lie in (-1,1)");
    const auto& d = dropout;
    if (d.rates.size() != static_cast<std::size_t>(std::max(last_wave, 0))) bad.push_back("dropout.rates must have last_wave entries");
    for (double r : d.rates) prob(r, "dropout.rates");
    if (d.race_coef.size() != G) bad.push_back("dropout.race_coef must have one entry per race level");
    if (d.mechanism == Mechanism::MCAR &&
        (d.sex_coef != 0 || d.lag_coef != 0 || d.delta != 0 ||
         std::any_of(d.race_coef.begin(), d.race_coef.end(), [](double c) { return c != 0; })))
        bad.push_back("MCAR dropout takes no covariate coefficients");
    if (d.mechanism != Mechanism::MNAR && (d.delta != 0 || d.shift != 0))
        bad.push_back("dropout.delta and dropout.shift require the MNAR mechanism");
    if (d.shift != 0 && g.ar1 != 0) bad.push_back("dropout.shift requires growth.ar1 = 0");
    if (!bad.empty()) {
        std::string msg = "invalid scenario:";
        for (const auto& b : bad) msg += "\n  - " + b;
        throw ConfigError(msg);
    }
}

CohortScenario CohortScenario::from_json(const nlohmann::json& j) {
    CohortScenario s;
    try {
        get_if(j, "n", s.n);
        get_if(j, "last_wave", s.last_wave);
        get_if(j, "clusters", s.clusters);
        get_if(j, "seed", s.seed);
        get_if(j, "covariates", s.covariates);
        get_if(j, "sex_p", s.sex_p);
        get_if(j, "race_levels", s.race_levels);
        get_if(j, "race_probs", s.race_probs);
        get_if(j, "pov_probs", s.pov_probs);
        get_if(j, "pov_stay", s.pov_stay);
        get_if(j, "age_mean", s.age_mean);
        get_if(j, "age_sd", s.age_sd);
        get_if(j, "pnw_a", s.pnw_a);
        get_if(j, "pnw_b", s.pnw_b);
        get_if(j, "sty_p", s.sty_p);
        get_if(j, "base_weight_cv", s.base_weight_cv);
        get_if(j, "intermittent_rate", s.intermittent_rate);
        get_if(j, "item_missing_rate", s.item_missing_rate);
        if (j.contains("growth")) {
            const auto& g = j.at("growth");
            auto& o = s.growth;
            get_if(g, "intercept", o.intercept);
            get_if(g, "wave_effects", o.wave_effects);
            get_if(g, "sex_effect", o.sex_effect);
            get_if(g, "race_effects", o.race_effects);
            get_if(g, "race_slopes", o.race_slopes);
            get_if(g, "age_effect", o.age_effect);
            get_if(g, "pov_effects", o.pov_effects);
            get_if(g, "pnw_effect", o.pnw_effect);
            get_if(g, "sty_effect", o.sty_effect);
            get_if(g, "intercept_sd", o.intercept_sd);
            get_if(g, "residual_sd", o.residual_sd);
            get_if(g, "ar1", o.ar1);
            get_if(g, "race_residual_scale", o.race_residual_scale);
        }
        if (j.contains("dropout")) {
            const auto& d = j.at("dropout");
            auto& o = s.dropout;
            if (d.contains("mechanism")) o.mechanism = parse_mechanism(d.at("mechanism").get<std::string>());
            get_if(d, "rates", o.rates);
            get_if(d, "race_coef", o.race_coef);
            get_if(d, "sex_coef", o.sex_coef);
            get_if(d, "lag_coef", o.lag_coef);
            get_if(d, "delta", o.delta);
            get_if(d, "shift", o.shift);
        }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("scenario: ") + e.what());
    }
    if (s.dropout.rates.empty() && s.last_wave >= 1) s.dropout.rates.assign(static_cast<std::size_t>(s.last_wave), 0.0);
    s.validate();
    return s;
}

CohortScenario CohortScenario::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open scenario file " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("scenario " + path + ": " + e.what());
    }
    return from_json(j);
}

nlohmann::json CohortScenario::to_json() const {
    const auto& g = growth;
    const auto& d = dropout;
    return {
        {"n", n}, {"last_wave", last_wave}, {"clusters", clusters}, {"seed", seed}, {"covariates", covariates},
        {"sex_p", sex_p}, {"race_levels", race_levels}, {"race_probs", race_probs}, {"pov_probs", pov_probs},
        {"pov_stay", pov_stay}, {"age_mean", age_mean}, {"age_sd", age_sd}, {"pnw_a", pnw_a}, {"pnw_b", pnw_b},
        {"sty_p", sty_p}, {"base_weight_cv", base_weight_cv}, {"intermittent_rate", intermittent_rate},
        {"item_missing_rate", item_missing_rate},
        {"growth",
         {{"intercept", g.intercept}, {"wave_effects", g.wave_effects}, {"sex_effect", g.sex_effect},
          {"race_effects", g.race_effects}, {"race_slopes", g.race_slopes}, {"age_effect", g.age_effect},
          {"pov_effects", g.pov_effects}, {"pnw_effect", g.pnw_effect}, {"sty_effect", g.sty_effect},
          {"intercept_sd", g.intercept_sd}, {"residual_sd", g.residual_sd}, {"ar1", g.ar1},
          {"race_residual_scale", g.race_residual_scale}}},
        {"dropout",
         {{"mechanism", nrba::to_string(d.mechanism)}, {"rates", d.rates}, {"race_coef", d.race_coef},
          {"sex_coef", d.sex_coef}, {"lag_coef", d.lag_coef}, {"delta", d.delta}, {"shift", d.shift}}},
    };
}

namespace {

double wave_effect(const CohortScenario& s, int t) {
    return s.growth.wave_effects.empty() ? 8.0 * t : s.growth.wave_effects[static_cast<std::size_t>(t)];
}

}  // namespace

std::vector<double> CohortScenario::analytic_means() const {
    std::vector<double> out;
    const auto& g = growth;
    for (int t = 0; t <= last_wave; ++t) {
        double m = g.intercept + wave_effect(*this, t) + g.sex_effect * sex_p;
        for (std::size_t r = 0; r < race_probs.size(); ++r) m += race_probs[r] * (g.race_effects[r] + g.race_slopes[r] * t);
        if (covariates) {
            auto pi = pov_distribution(*this, t);
            for (std::size_t k = 0; k < pi.size(); ++k) m += pi[k] * g.pov_effects[k];
            m += g.pnw_effect * pnw_a / (pnw_a + pnw_b) + g.sty_effect * sty_p;
        }
        out.push_back(m);
    }
    return out;
}

double CohortScenario::marginal_sd() const {
    return std::sqrt(growth.intercept_sd * growth.intercept_sd + growth.residual_sd * growth.residual_sd);
}

double CohortScenario::conditional_sd(std::size_t group, int wave) const {
    const double se = growth.residual_sd * growth.race_residual_scale.at(group);
    const double tau2 = growth.intercept_sd * growth.intercept_sd;
    double v = 0.0;
    if (tau2 > 0.0) v = 1.0 / (1.0 / tau2 + static_cast<double>(wave) / (se * se));
    return std::sqrt(se * se + v);
}

Schema cohort_schema(const CohortScenario& s) {
    Schema sc;
    sc.last_wave = s.last_wave;
    sc.variables.push_back({"id", VarKind::Numeric, Role::Id, {}});
    sc.variables.push_back({"school", VarKind::Numeric, Role::Cluster, {}});
    sc.variables.push_back({"basew", VarKind::Numeric, Role::BaseWeight, {}});
    sc.variables.push_back({"sex", VarKind::Binary, Role::Invariant, {"0", "1"}});
    sc.variables.push_back({"race", VarKind::Nominal, Role::Invariant, s.race_levels});
    if (s.covariates) {
        sc.variables.push_back({"age", VarKind::Numeric, Role::Covariate, {}});
        sc.variables.push_back({"pov", VarKind::Ordinal, Role::Covariate, kPovLevels});
        sc.variables.push_back({"pnw", VarKind::Numeric, Role::Covariate, {}});
        sc.variables.push_back({"sty", VarKind::Binary, Role::Covariate, {"0", "1"}});
    }
    sc.variables.push_back({"y", VarKind::Numeric, Role::Outcome, {}});
    sc.validate();
    return sc;
}

SimulationResult simulate_cohort(const CohortScenario& s, unsigned threads) {
    s.validate();
    const Schema schema = cohort_schema(s);
    const int T = s.last_wave;
    const std::size_t W = static_cast<std::size_t>(T + 1);
    const auto& g = s.growth;
    const auto& d = s.dropout;

    const std::size_t v_sex = schema.index_of("sex"), v_race = schema.index_of("race"), v_y = schema.index_of("y");
    std::size_t v_age = 0, v_pov = 0, v_pnw = 0, v_sty = 0;
    if (s.covariates) {
        v_age = schema.index_of("age");
        v_pov = schema.index_of("pov");
        v_pnw = schema.index_of("pnw");
        v_sty = schema.index_of("sty");
    }

    // school-level covariates per (cluster, wave)
    std::vector<std::vector<double>> pnw(s.clusters, std::vector<double>(W)), sty(s.clusters, std::vector<double>(W));
    if (s.covariates) {
        for (std::size_t c = 0; c < s.clusters; ++c) {
            Rng rng = make_rng(s.seed, {tag(Stream::Cluster), c});
            std::gamma_distribution<double> ga(s.pnw_a, 1.0), gb(s.pnw_b, 1.0);
            for (std::size_t t = 0; t < W; ++t) {
                double a = ga(rng), b = gb(rng);
                pnw[c][t] = a / (a + b);
                sty[c][t] = uniform01(rng) < s.sty_p ? 1.0 : 0.0;
            }
        }
    }

    const std::vector<double> means = s.analytic_means();
    const double msd = s.marginal_sd();
    const double ln_sd = std::sqrt(std::log1p(s.base_weight_cv * s.base_weight_cv));

    PanelDataset complete(schema, s.n, T);
    PanelDataset observed(schema, s.n, T);
    std::vector<int> dropout_wave(s.n, T + 1);

    parallel_for(s.n, threads, [&](std::size_t i) {
        Rng rng = make_rng(s.seed, {tag(Stream::Covariates), i});
        const std::size_t cluster = uniform_index(rng, s.clusters);
        const double bw = s.base_weight_cv > 0 ? std::exp(ln_sd * std_normal(rng) - 0.5 * ln_sd * ln_sd) : 1.0;
        const double sex = uniform01(rng) < s.sex_p ? 1.0 : 0.0;
        const std::size_t race = draw_category(rng, s.race_probs);
        const double zage = std_normal(rng);
        std::vector<double> pov(W);
        pov[0] = static_cast<double>(draw_category(rng, s.pov_probs));
        for (std::size_t t = 1; t < W; ++t) {
            if (uniform01(rng) < s.pov_stay) {
                pov[t] = pov[t - 1];
            } else {
                // move to one of the other levels uniformly
                std::size_t k = uniform_index(rng, kPovLevels.size() - 1);
                if (k >= static_cast<std::size_t>(pov[t - 1])) ++k;
                pov[t] = static_cast<double>(k);
            }
        }
        const double se = g.residual_sd * g.race_residual_scale[race];
        double b = g.intercept_sd * std_normal(rng);
        std::vector<double> e(W);
        e[0] = se * std_normal(rng);
        for (std::size_t t = 1; t < W; ++t)
            e[t] = g.ar1 * e[t - 1] + std::sqrt(1.0 - g.ar1 * g.ar1) * se * std_normal(rng);

        std::vector<double> mu(W);
        for (std::size_t t = 0; t < W; ++t) {
            const int ti = static_cast<int>(t);
            mu[t] = g.intercept + wave_effect(s, ti) + g.sex_effect * sex + g.race_effects[race] + g.race_slopes[race] * ti;
            if (s.covariates) {
                mu[t] += g.age_effect * zage + g.pov_effects[static_cast<std::size_t>(pov[t])] +
                         g.pnw_effect * pnw[cluster][t] + g.sty_effect * sty[cluster][t];
            }
        }
        std::vector<double> y(W);
        for (std::size_t t = 0; t < W; ++t) y[t] = mu[t] + b + e[t];

        // sequential dropout
        Rng drng = make_rng(s.seed, {tag(Stream::Dropout), i});
        int drop = T + 1;
        for (int t = 1; t <= T; ++t) {
            const double u = uniform01(drng);
            const double rate = d.rates[static_cast<std::size_t>(t - 1)];
            double h;
            if (rate <= 0.0) {
                h = 0.0;
            } else if (rate >= 1.0) {
                h = 1.0;
            } else {
                double eta = logit(rate);
                if (d.mechanism != Mechanism::MCAR) {
                    eta += d.race_coef[race] + d.sex_coef * sex +
                           d.lag_coef * (y[static_cast<std::size_t>(t - 1)] - means[static_cast<std::size_t>(t - 1)]) / msd;
                }
                if (d.mechanism == Mechanism::MNAR) eta += d.delta * e[static_cast<std::size_t>(t)] / g.residual_sd;
                h = 1.0 / (1.0 + std::exp(-eta));
            }
            if (u < h) {
                drop = t;
                break;
            }
        }

        // pattern-mixture shift at the dropout wave, later waves redrawn given the shifted history
        if (drop <= T && d.shift != 0.0) {
            Rng srng = make_rng(s.seed, {tag(Stream::Shift), i});
            const auto td = static_cast<std::size_t>(drop);
            y[td] += d.shift * s.conditional_sd(race, drop);
            const double tau2 = g.intercept_sd * g.intercept_sd;
            double bnew = 0.0;
            if (tau2 > 0.0) {
                double v = 1.0 / (1.0 / tau2 + static_cast<double>(td + 1) / (se * se));
                double sr = 0.0;
                for (std::size_t t = 0; t <= td; ++t) sr += y[t] - mu[t];
                bnew = v * sr / (se * se) + std::sqrt(v) * std_normal(srng);
            }
            for (std::size_t t = td + 1; t < W; ++t) y[t] = mu[t] + bnew + se * std_normal(srng);
        }

        // intermittent return after dropout
        int returns = -1;
        if (drop < T && s.intermittent_rate > 0.0) {
            Rng irng = make_rng(s.seed, {tag(Stream::Intermittent), i});
            if (uniform01(irng) < s.intermittent_rate)
                returns = drop + 1 + static_cast<int>(uniform_index(irng, static_cast<std::size_t>(T - drop)));
        }

        for (PanelDataset* ds : {&complete, &observed}) {
            ds->set_unit_id(i, std::to_string(i + 1));
            ds->set_cluster(i, "s" + std::to_string(cluster + 1));
            ds->set_base_weight(i, bw);
            ds->set_value(i, v_sex, 0, sex);
            ds->set_value(i, v_race, 0, static_cast<double>(race));
        }
        Rng mrng = make_rng(s.seed, {tag(Stream::ItemMissing), i});
        for (std::size_t t = 0; t < W; ++t) {
            const int ti = static_cast<int>(t);
            const bool present = ti < drop || ti == returns;
            complete.set_value(i, v_y, ti, y[t]);
            observed.set_value(i, v_y, ti, present ? y[t] : kMissing);
            if (!s.covariates) continue;
            const double age = s.age_mean + s.age_sd * zage + static_cast<double>(t);
            const std::pair<std::size_t, double> xs[] = {
                {v_age, age}, {v_pov, pov[t]}, {v_pnw, pnw[cluster][t]}, {v_sty, sty[cluster][t]}};
            for (const auto& [v, val] : xs) {
                complete.set_value(i, v, ti, val);
                double o = present ? val : kMissing;
                if (present && s.item_missing_rate > 0.0 && uniform01(mrng) < s.item_missing_rate) o = kMissing;
                observed.set_value(i, v, ti, o);
            }
        }
        dropout_wave[i] = drop;
    });

    SimulationResult r;
    r.truth.analytic_means = means;
    for (int t = 0; t <= T; ++t) {
        double sum = 0.0, wsum = 0.0, sw = 0.0;
        for (std::size_t i = 0; i < s.n; ++i) {
            double y = complete.outcome(i, t), w = complete.base_weights()[i];
            sum += y;
            wsum += w * y;
            sw += w;
        }
        r.truth.complete_means.push_back(sum / static_cast<double>(s.n));
        r.truth.complete_weighted_means.push_back(wsum / sw);
    }
    r.truth.dropout_wave = std::move(dropout_wave);
    r.truth.complete = std::move(complete);
    r.data = std::move(observed);
    return r;
}

nlohmann::json TruthRecord::to_json() const {
    return {{"analytic_means", analytic_means},
            {"complete_means", complete_means},
            {"complete_weighted_means", complete_weighted_means},
            {"dropout_wave", dropout_wave}};
}

}  // namespace nrba
