#include <doctest.h>

#include <numeric>
#include <random>
#include <sstream>

#include <nlohmann/json.hpp>

#include "nrba/simulate.hpp"
#include "nrba/weights.hpp"
#include "oracles.hpp"

using namespace nrba;

namespace {

Schema strata_schema() {
    return Schema::from_json(nlohmann::json::parse(R"({
      "variables": [
        {"name": "id", "role": "id"},
        {"name": "c", "role": "cluster"},
        {"name": "w", "role": "base_weight"},
        {"name": "stratum", "role": "invariant", "kind": "nominal", "levels": ["A", "B"]},
        {"name": "one", "role": "invariant", "kind": "nominal", "levels": ["all"]},
        {"name": "y", "role": "outcome"}
      ]})"));
}

/// Rows: stratum, base weight, pattern of outcome observedness.
PanelDataset strata_data(const std::vector<std::tuple<std::string, double, std::string>>& rows) {
    const std::size_t W = std::get<2>(rows.front()).size();
    std::ostringstream s;
    s << "id,c,w,stratum,one";
    for (std::size_t t = 0; t < W; ++t) s << ",y_w" << t;
    s << "\n";
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const auto& [st, w, pat] = rows[i];
        s << "u" << i << ",c" << i << "," << w << "," << st << ",all";
        for (std::size_t t = 0; t < W; ++t) s << "," << (pat[t] == '1' ? std::to_string(1.0 + static_cast<double>(i % 7)) : "");
        s << "\n";
    }
    return parse_panel(s.str(), strata_schema());
}

std::vector<double> mean_one_weights(std::size_t n, double sd) {
    // half at 1+a, half at 1-a (n even) has mean 1 and sample SD a*sqrt(n/(n-1))
    const double a = sd * std::sqrt((static_cast<double>(n) - 1.0) / static_cast<double>(n));
    std::vector<double> w(n);
    for (std::size_t i = 0; i < n; ++i) w[i] = i % 2 ? 1.0 + a : 1.0 - a;
    return w;
}

PropensitySpec intercept_only() {
    PropensitySpec s;
    s.predictors.variables = {"one"};
    s.predictors.include_base_weight = false;
    return s;
}

}  // namespace

TEST_CASE("no dropout gives scaled base weights") {
    std::vector<std::tuple<std::string, double, std::string>> rows;
    for (int i = 0; i < 30; ++i) rows.emplace_back(i % 2 ? "A" : "B", 1.0 + i, "111");
    auto d = strata_data(rows);
    auto w = baseline_weights(d, 2, PropensitySpec{});
    auto b = base_weights(d, 2);
    REQUIRE(w.weights.size() == 30);
    CHECK(w.models[0].degenerate);
    for (std::size_t k = 0; k < 30; ++k) CHECK(w.weights[k] == doctest::Approx(b.weights[k]).epsilon(1e-14));
    CHECK(w.sum() == doctest::Approx(30.0).epsilon(1e-12));
}

TEST_CASE("cell response rates give inverse-rate weights") {
    std::vector<std::tuple<std::string, double, std::string>> rows;
    for (int i = 0; i < 20; ++i) rows.emplace_back("A", 1.0, i % 2 ? "11" : "10");
    for (int i = 0; i < 20; ++i) rows.emplace_back("B", 1.0, "11");
    auto d = strata_data(rows);
    PropensitySpec spec;
    spec.kind = PropensitySpec::Kind::Tree;
    spec.tree.smoothing = 0.0;
    spec.clip_hi = 1.0;
    spec.predictors.variables = {"stratum"};
    spec.predictors.include_base_weight = false;
    auto w = baseline_weights(d, 1, spec);
    REQUIRE(w.units.size() == 30);
    for (std::size_t k = 0; k < w.units.size(); ++k) {
        bool a = w.units[k] < 20;
        CHECK(w.unscaled[k] == doctest::Approx(a ? 2.0 : 1.0).epsilon(1e-14));
    }
    CHECK(std::abs(w.sum() - 30.0) < 1e-9);
}

TEST_CASE("sequential weights multiply conditional inverse propensities") {
    // wave 1: 8 of 10 respond; wave 2: 4 of those 8
    std::vector<std::tuple<std::string, double, std::string>> rows;
    for (int i = 0; i < 10; ++i) rows.emplace_back("A", 2.0, i < 4 ? "111" : (i < 8 ? "110" : "100"));
    auto d = strata_data(rows);
    auto seq = sequential_weights(d, intercept_only());
    REQUIRE(seq.size() == 2);
    for (double u : seq[1].unscaled) CHECK(u == doctest::Approx(5.0).epsilon(1e-9));
    CHECK(std::abs(seq[1].sum() - 4.0) < 1e-9);
    CHECK(std::abs(seq[0].sum() - 8.0) < 1e-9);

    SUBCASE("telescoping") {
        CohortScenario s;
        s.n = 600;
        s.seed = 3;
        s.dropout.mechanism = Mechanism::MAR;
        s.dropout.rates = {0.1, 0.1, 0.1, 0.1, 0.1};
        s.dropout.lag_coef = -0.6;
        auto sim = simulate_cohort(s);
        PropensitySpec spec;
        spec.stepwise = false;
        spec.predictors.variables = {"race", "y"};
        auto sw = sequential_weights(sim.data, spec);
        std::vector<double> prod(sim.data.n_units(), 1.0), inv(sim.data.n_units(), 1.0);
        for (const auto& ws : sw) {
            const auto& p = ws.models[0].propensity;
            auto fit_units = units_where(sim.data, [&](std::size_t i) { return sim.data.responded(i, ws.wave - 1); });
            for (std::size_t k = 0; k < fit_units.size(); ++k) {
                prod[fit_units[k]] *= p[k];
                inv[fit_units[k]] *= 1.0 / p[k];
            }
            for (std::size_t k = 0; k < ws.units.size(); ++k) {
                std::size_t i = ws.units[k];
                double direct = sim.data.base_weights()[i] / prod[i];
                CHECK(std::abs(ws.unscaled[k] - direct) <= 1e-12 * direct);
                CHECK(std::abs(sim.data.base_weights()[i] * inv[i] - direct) <= 1e-12 * direct);
            }
        }
    }
}

TEST_CASE("single follow-up: sequential equals baseline") {
    CohortScenario s;
    s.n = 400;
    s.last_wave = 1;
    s.growth.wave_effects = {0, 5};
    s.dropout.mechanism = Mechanism::MAR;
    s.dropout.rates = {0.3};
    s.dropout.race_coef = {0, 0.5, 0.5, 0, 0};
    s.dropout.lag_coef = -0.5;
    auto sim = simulate_cohort(s);
    PropensitySpec spec;
    auto a = baseline_weights(sim.data, 1, spec);
    auto b = sequential_weights(sim.data, spec);
    REQUIRE(b.size() == 1);
    CHECK(a.units == b[0].units);
    CHECK(a.weights == b[0].weights);
}

TEST_CASE("non-monotone input is rejected") {
    auto d = strata_data({{"A", 1.0, "101"}, {"B", 1.0, "111"}});
    CHECK_THROWS_WITH_AS(sequential_weights(d, intercept_only()), doctest::Contains("monotonize"), DataError);
}

TEST_CASE("trimming") {
    WeightSet w;
    w.weights = {1, 1, 1, 1, 10};
    w.units = {0, 1, 2, 3, 4};
    auto t = trim_weights(w, 0.8);
    const double cap = oracle::quantile7({1, 1, 1, 1, 10}, 0.8);
    CHECK(cap == doctest::Approx(2.8));
    REQUIRE(t.trim);
    CHECK(t.trim->cap == cap);
    CHECK(t.trim->trimmed == 1);
    CHECK(t.sum() == doctest::Approx(14.0).epsilon(1e-14));
    CHECK(t.weights[4] == doctest::Approx(2.8 * 14.0 / 6.8));
    CHECK(t.weights[0] == doctest::Approx(14.0 / 6.8));

    auto same = trim_weights(w, 1.0);
    CHECK(same.weights == w.weights);

    std::mt19937_64 rng(5);
    std::lognormal_distribution<double> ln(0.0, 0.8);
    std::uniform_real_distribution<double> uq(0.5, 0.99);
    for (int rep = 0; rep < 200; ++rep) {
        WeightSet r;
        for (int i = 0; i < 40; ++i) r.weights.push_back(ln(rng));
        double q = uq(rng);
        auto tr = trim_weights(r, q);
        CHECK(*std::max_element(tr.weights.begin(), tr.weights.end()) <=
              *std::max_element(r.weights.begin(), r.weights.end()) * (1 + 1e-12));
        CHECK(weight_diagnostics(tr.weights).loss <= weight_diagnostics(r.weights).loss + 1e-12);
        CHECK(tr.sum() == doctest::Approx(r.sum()).epsilon(1e-12));
    }
}

TEST_CASE("weight diagnostics") {
    auto d53 = weight_diagnostics(mean_one_weights(14730, 0.53));
    CHECK(d53.mean == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(d53.sd == doctest::Approx(0.53).epsilon(1e-12));
    CHECK(d53.loss == doctest::Approx(0.2809).epsilon(1e-10));
    CHECK(std::round(d53.loss * 100) == 28);
    auto d63 = weight_diagnostics(mean_one_weights(10200, 0.63));
    CHECK(std::round(d63.loss * 100) == 40);

    std::vector<double> c(17, 0.3);
    auto dc = weight_diagnostics(c);
    CHECK(dc.loss == 0.0);
    CHECK(dc.design_effect == 1.0);

    std::vector<double> y(100), w(100);
    for (int i = 0; i < 100; ++i) {
        w[static_cast<std::size_t>(i)] = 1 + i % 10;
        y[static_cast<std::size_t>(i)] = i;
    }
    auto dq = weight_diagnostics(w, y, "x");
    CHECK(dq.design_effect > 1.0);
    REQUIRE(dq.quintiles.size() == 5);
    std::size_t total = 0;
    for (const auto& q : dq.quintiles) total += q.n;
    CHECK(total == 100);
    CHECK(dq.quintiles[0].weight_max <= dq.quintiles[1].weight_min);
}

TEST_CASE("weighted mean and linearization") {
    std::vector<std::size_t> own{0, 1};
    auto e = weighted_mean(std::vector<double>{0, 4}, std::vector<double>{1, 3}, own);
    CHECK(e.est == 3.0);

    std::mt19937_64 rng(7);
    std::normal_distribution<double> z;
    std::vector<double> y(40), ones(40, 1.0);
    std::vector<std::size_t> cl(40);
    for (std::size_t i = 0; i < 40; ++i) {
        y[i] = 5 + z(rng);
        cl[i] = i;
    }
    auto eq = weighted_mean(y, ones, cl);
    double m = std::accumulate(y.begin(), y.end(), 0.0) / 40, s2 = 0;
    for (double v : y) s2 += (v - m) * (v - m) / 39;
    CHECK(std::abs(eq.se - std::sqrt(s2 / 40)) < 1e-12);
    CHECK(eq.upper - eq.est == doctest::Approx(1.96 * eq.se));

    std::vector<double> y30(30), w30(30);
    std::vector<std::size_t> c30(30);
    std::vector<int> c30i(30);
    std::uniform_real_distribution<double> u(0.5, 3);
    for (std::size_t i = 0; i < 30; ++i) {
        y30[i] = z(rng);
        w30[i] = u(rng);
        c30[i] = i / 2;
        c30i[i] = static_cast<int>(i / 2);
    }
    auto e30 = weighted_mean(y30, w30, c30);
    CHECK(std::abs(e30.se - oracle::linearized_se(y30, w30, c30i)) < 1e-12);

    std::vector<double> w7 = w30;
    for (double& v : w7) v *= 7.3;
    CHECK(std::abs(weighted_mean(y30, w7, c30).est - e30.est) < 1e-12);

    std::vector<std::size_t> one(30, 4);
    CHECK_THROWS_AS(weighted_mean(y30, w30, one), DataError);
}

TEST_CASE("cluster bootstrap") {
    const std::size_t n = 500;
    std::mt19937_64 rng(8);
    std::normal_distribution<double> z;
    std::vector<double> y(n);
    std::vector<std::size_t> cl(n);
    for (std::size_t i = 0; i < n; ++i) {
        y[i] = z(rng);
        cl[i] = i;
    }
    auto mean_of = [&](const std::vector<double>& v) {
        return [&v](std::span<const std::size_t> units) {
            double s = 0;
            for (auto i : units) s += v[i];
            return s / static_cast<double>(units.size());
        };
    };
    auto b1 = bootstrap_se(mean_of(y), cl, 500, 42);
    auto b2 = bootstrap_se(mean_of(y), cl, 500, 42, 4);
    CHECK(b1.se == b2.se);
    CHECK(b1.replicates == b2.replicates);
    std::vector<double> ones(n, 1.0);
    double taylor = weighted_mean(y, ones, cl).se;
    CHECK(std::abs(b1.se / taylor - 1.0) < 0.15);

    std::vector<double> c(n, 3.25);
    CHECK(bootstrap_se(mean_of(c), cl, 60, 1).se < 1e-14);

    CHECK_THROWS_AS(bootstrap_se(mean_of(y), cl, 10, 1), ConfigError);
    auto flaky = [&](std::span<const std::size_t> units) -> double {
        if (units[0] % 5 == 0) throw NumericalError("boom");
        return 0.0;
    };
    CHECK_THROWS_WITH_AS(bootstrap_se(flaky, cl, 100, 3), doctest::Contains("replicates failed"), NumericalError);
}

TEST_CASE("baseline weights remove MAR bias in a baseline covariate") {
    // dropout depends on race; the wave-3 respondent share of race level 1 is biased
    // unweighted and unbiased after weighting
    const int reps = 100;
    std::vector<double> bias_w, bias_u;
    for (int r = 0; r < reps; ++r) {
        CohortScenario s;
        s.n = 1000;
        s.seed = 500 + static_cast<std::uint64_t>(r);
        s.covariates = false;
        s.base_weight_cv = 0;
        s.dropout.mechanism = Mechanism::MAR;
        s.dropout.rates = {0.15, 0.1, 0.1, 0.1, 0.1};
        s.dropout.race_coef = {0.0, 1.0, 0.6, 0.0, 0.0};
        auto sim = simulate_cohort(s);
        const auto& d = sim.data;
        std::size_t race = d.schema().index_of("race");
        double full = 0;
        for (std::size_t i = 0; i < d.n_units(); ++i) full += d.value(i, race) == 1 ? 1.0 : 0.0;
        full /= static_cast<double>(d.n_units());
        PropensitySpec spec;
        spec.stepwise = false;
        spec.predictors.variables = {"race", "sex"};
        spec.predictors.include_base_weight = false;
        auto w = baseline_weights(d, 3, spec);
        double sw = 0, swy = 0, su = 0;
        for (std::size_t k = 0; k < w.units.size(); ++k) {
            double yk = d.value(w.units[k], race) == 1 ? 1.0 : 0.0;
            sw += w.weights[k];
            swy += w.weights[k] * yk;
            su += yk;
        }
        bias_w.push_back(swy / sw - full);
        bias_u.push_back(su / static_cast<double>(w.units.size()) - full);
    }
    auto summary = [&](const std::vector<double>& b) {
        double m = std::accumulate(b.begin(), b.end(), 0.0) / reps, v = 0;
        for (double x : b) v += (x - m) * (x - m) / (reps - 1);
        return std::pair{m, std::sqrt(v / reps)};
    };
    auto [mw, sew] = summary(bias_w);
    auto [mu, seu] = summary(bias_u);
    CHECK(std::abs(mw) < 3 * sew);
    CHECK(std::abs(mu) > 3 * seu);
}
