#include <doctest.h>

#include <cmath>
#include <numeric>

#include <nlohmann/json.hpp>

#include "nrba/simulate.hpp"

using namespace nrba;

namespace {

CohortScenario mar(std::size_t n, std::uint64_t seed) {
    CohortScenario s;
    s.n = n;
    s.seed = seed;
    s.dropout.mechanism = Mechanism::MAR;
    s.dropout.rates = {0.12, 0.08, 0.07, 0.06, 0.06};
    s.dropout.race_coef = {0.0, 0.4, 0.3, -0.2, 0.1};
    s.dropout.lag_coef = -0.5;
    return s;
}

}  // namespace

TEST_CASE("zero-rate MCAR gives complete data") {
    CohortScenario s;
    s.n = 200;
    s.dropout.rates.assign(5, 0.0);
    auto r = simulate_cohort(s);
    for (std::size_t i = 0; i < s.n; ++i)
        for (int t = 0; t <= s.last_wave; ++t) CHECK(r.data.responded(i, t));
    CHECK(r.data == r.truth.complete);
}

TEST_CASE("simulated dropout is monotone and replayable") {
    auto s = mar(300, 5);
    auto a = simulate_cohort(s);
    auto b = simulate_cohort(s, 4);
    CHECK(a.data.is_monotone());
    CHECK(panel_to_csv(a.data) == panel_to_csv(b.data));
    CHECK(panel_to_csv(a.truth.complete) == panel_to_csv(b.truth.complete));
    std::size_t dropped = 0;
    for (int w : a.truth.dropout_wave) dropped += w <= s.last_wave;
    CHECK(dropped > 0);
}

TEST_CASE("MNAR with zero delta coincides with MAR") {
    auto s = mar(400, 9);
    auto m = s;
    m.dropout.mechanism = Mechanism::MNAR;
    m.dropout.delta = 0.0;
    CHECK(simulate_cohort(s).data == simulate_cohort(m).data);
    m.dropout.delta = -1.0;
    CHECK_FALSE(simulate_cohort(s).data == simulate_cohort(m).data);
}

TEST_CASE("complete-data mean of the last wave matches the analytic mean") {
    // 200 seeds at n=2000; the MC SE of the average is the SD of per-seed means / sqrt(200)
    const int reps = 200;
    std::vector<double> m;
    CohortScenario s = mar(2000, 0);
    const double truth = s.analytic_means().back();
    for (int r = 0; r < reps; ++r) {
        s.seed = 1000 + static_cast<std::uint64_t>(r);
        m.push_back(simulate_cohort(s).truth.complete_means.back());
    }
    double mean = std::accumulate(m.begin(), m.end(), 0.0) / reps;
    double var = 0;
    for (double v : m) var += (v - mean) * (v - mean) / (reps - 1);
    double mcse = std::sqrt(var / reps);
    CHECK(std::abs(mean - truth) < 3 * mcse);
}

TEST_CASE("pattern-mixture shift moves the dropout wave outcome") {
    CohortScenario s = mar(500, 3);
    s.covariates = false;
    s.dropout.mechanism = Mechanism::MNAR;
    auto base = simulate_cohort(s);
    s.dropout.shift = -1.2;
    auto shifted = simulate_cohort(s);
    CHECK(base.data == shifted.data);
    std::size_t checked = 0;
    for (std::size_t i = 0; i < s.n; ++i) {
        int d = base.truth.dropout_wave[i];
        if (d > s.last_wave) continue;
        std::size_t g = static_cast<std::size_t>(base.data.value(i, base.data.schema().index_of("race")));
        double diff = shifted.truth.complete.outcome(i, d) - base.truth.complete.outcome(i, d);
        CHECK(diff == doctest::Approx(-1.2 * s.conditional_sd(g, d)).epsilon(1e-12));
        ++checked;
    }
    CHECK(checked > 0);
}

TEST_CASE("scenario validation enumerates problems") {
    auto j = mar(10, 1).to_json();
    j["dropout"]["rates"] = {0.1, 1.5};
    j["sex_p"] = 2.0;
    try {
        CohortScenario::from_json(j);
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        std::string w = e.what();
        CHECK(w.find("sex_p") != std::string::npos);
        CHECK(w.find("dropout.rates") != std::string::npos);
    }
    auto round = CohortScenario::from_json(mar(10, 1).to_json());
    CHECK(round.to_json() == mar(10, 1).to_json());
}

TEST_CASE("intermittent returns and item holes") {
    CohortScenario s = mar(400, 4);
    s.intermittent_rate = 0.5;
    s.item_missing_rate = 0.05;
    auto r = simulate_cohort(s);
    CHECK_FALSE(r.data.is_monotone());
}
