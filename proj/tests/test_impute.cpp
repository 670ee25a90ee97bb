#include <doctest.h>

#include <algorithm>
#include <array>
#include <numeric>
#include <random>
#include <sstream>

#include <nlohmann/json.hpp>

#include "nrba/impute.hpp"
#include "nrba/pool.hpp"
#include "nrba/simulate.hpp"
#include "oracles.hpp"

using namespace nrba;

namespace {

CohortScenario small_mar(std::uint64_t seed, std::size_t n = 50) {
    CohortScenario s;
    s.n = n;
    s.clusters = 10;
    s.seed = seed;
    s.dropout.mechanism = Mechanism::MAR;
    s.dropout.rates = {0.1, 0.1, 0.1, 0.1, 0.1};
    s.dropout.race_coef = {0, 0.5, 0.3, 0, 0};
    s.dropout.lag_coef = -0.5;
    return s;
}

void check_preserved(const PanelDataset& src, const PanelDataset& copy) {
    const auto& schema = src.schema();
    REQUIRE(copy.n_units() == src.n_units());
    std::size_t mismatched = 0, remaining = 0;
    for (std::size_t v = 0; v < schema.variables.size(); ++v) {
        const auto& var = schema.variables[v];
        if (var.role != Role::Invariant && var.role != Role::Covariate && var.role != Role::Outcome) continue;
        const int W = var.time_varying() ? src.n_waves() : 1;
        for (std::size_t i = 0; i < src.n_units(); ++i)
            for (int t = 0; t < W; ++t) {
                double a = src.value(i, v, t), b = copy.value(i, v, t);
                if (!is_missing(a) && a != b) ++mismatched;
                if (is_missing(b)) ++remaining;
            }
    }
    CHECK(mismatched == 0);
    CHECK(remaining == 0);
}

std::string csv_cell(double v) {
    std::ostringstream o;
    o.precision(17);
    o << v;
    return o.str();
}

Schema item_schema() {
    return Schema::from_json(nlohmann::json::parse(R"({
      "variables": [
        {"name": "id", "role": "id"},
        {"name": "c", "role": "cluster"},
        {"name": "w", "role": "base_weight"},
        {"name": "a", "role": "covariate", "kind": "binary"},
        {"name": "b", "role": "covariate", "kind": "binary"},
        {"name": "x", "role": "covariate"},
        {"name": "y", "role": "outcome"}
      ]})"));
}

PanelDataset item_data(const std::vector<std::array<double, 4>>& rows) {
    std::ostringstream s;
    s << "id,c,w,a_w0,b_w0,x_w0,y_w0,a_w1,b_w1,x_w1,y_w1\n";
    auto cell = [](double v) { return is_missing(v) ? std::string() : csv_cell(v); };
    for (std::size_t i = 0; i < rows.size(); ++i)
        s << i << ",c" << i % 7 << ",1," << cell(rows[i][0]) << "," << cell(rows[i][1]) << "," << cell(rows[i][2]) << ","
          << cell(rows[i][3]) << ",1,1,0,1\n";
    return parse_panel(s.str(), item_schema());
}

}  // namespace

TEST_CASE("pooling") {
    std::vector<double> q{1, 2, 3, 4, 5}, zero(5, 0.0);
    auto p = pool(q, zero);
    CHECK(p.qbar == 3.0);
    CHECK(p.between == doctest::Approx(2.5).epsilon(1e-15));
    CHECK(p.total == doctest::Approx(3.0).epsilon(1e-15));

    std::vector<double> same(4, 7.0), u{0.1, 0.2, 0.3, 0.4};
    auto ps = pool(same, u);
    CHECK(ps.between == 0.0);
    CHECK(ps.total == ps.within);
    CHECK(std::isinf(ps.df));
    CHECK(ps.upper - ps.qbar == doctest::Approx(1.959963984540054 * std::sqrt(0.25)));

    std::mt19937_64 rng(3);
    std::normal_distribution<double> z;
    std::uniform_real_distribution<double> uv(0.1, 2.0);
    for (int rep = 0; rep < 30; ++rep) {
        std::vector<double> e(5), v(5);
        for (int j = 0; j < 5; ++j) {
            e[static_cast<std::size_t>(j)] = 10 + z(rng);
            v[static_cast<std::size_t>(j)] = uv(rng);
        }
        auto a = pool(e, v);
        auto o = oracle::rubin(e, v);
        CHECK(std::abs(a.qbar - o.qbar) < 1e-12);
        CHECK(std::abs(a.within - o.w) < 1e-12);
        CHECK(std::abs(a.between - o.b) < 1e-12);
        CHECK(std::abs(a.total - o.t) < 1e-12);
        CHECK(std::abs(a.df - o.df) <= 1e-12 * o.df);
        CHECK(a.total >= a.within);

        std::vector<double> pe = e, pv = v;
        std::reverse(pe.begin(), pe.end());
        std::reverse(pv.begin(), pv.end());
        CHECK(std::abs(pool(pe, pv).total - a.total) < 1e-12);
        std::vector<double> se = e;
        for (double& x : se) x *= 3.0;
        auto sc = pool(se, v);
        CHECK(std::abs(sc.qbar - 3.0 * a.qbar) < 1e-12);
        CHECK(std::abs(sc.between - 9.0 * a.between) < 1e-10);
    }
    std::vector<double> one{1.0};
    CHECK_THROWS_AS(pool(one, one), ConfigError);
}

TEST_CASE("offset arithmetic") {
    CHECK(apply_offset(53.25, 0.0, 10.0) == 53.25);
    CHECK(apply_offset(50.0, -1.2, 10.0) == doctest::Approx(38.0).epsilon(1e-15));
}

TEST_CASE("predictive mean matching") {
    std::vector<double> dp{1.0, 4.0, 2.0, 8.0}, dv{10, 40, 20, 80};
    Rng rng(1);
    auto one = pmm_draw(dp, dv, std::vector<double>{3.9, 1.2, 100.0}, 1, rng);
    CHECK(one == std::vector<double>{40, 10, 80});

    std::vector<double> cv(4, 6.5);
    auto c = pmm_draw(dp, cv, std::vector<double>{0.0, 5.0, 9.0}, 3, rng);
    CHECK(std::all_of(c.begin(), c.end(), [](double v) { return v == 6.5; }));

    Warnings w;
    auto small = pmm_draw(dp, dv, std::vector<double>{2.5}, 10, rng, &w);
    CHECK(w.size() == 1);
    CHECK(std::find(dv.begin(), dv.end(), small[0]) != dv.end());

    // brute-force nearest-k with ties broken by donor position
    std::mt19937_64 g(9);
    std::uniform_int_distribution<int> ui(0, 6);
    for (int rep = 0; rep < 200; ++rep) {
        std::vector<double> donors(10), targets(10);
        for (auto& d : donors) d = ui(g) * 0.5;
        for (auto& t : targets) t = ui(g) * 0.5 + 0.25 * (ui(g) % 2);
        for (std::size_t k : {1u, 3u, 5u}) {
            auto sets = pmm_donor_sets(donors, targets, k);
            for (std::size_t t = 0; t < targets.size(); ++t) {
                std::vector<std::pair<double, std::size_t>> all;
                for (std::size_t d = 0; d < donors.size(); ++d) all.emplace_back(std::abs(donors[d] - targets[t]), d);
                std::sort(all.begin(), all.end());
                std::vector<std::size_t> expect;
                for (std::size_t r = 0; r < k; ++r) expect.push_back(all[r].second);
                CHECK(sets[t] == expect);
            }
        }
    }

    std::uniform_real_distribution<double> u(-5, 5);
    for (int rep = 0; rep < 50; ++rep) {
        std::vector<double> p(30), v(30), t(20);
        for (auto& x : p) x = u(g);
        for (auto& x : v) x = u(g) * 3;
        for (auto& x : t) x = u(g) * 4;
        auto d = pmm_draw(p, v, t, 5, rng);
        double lo = *std::min_element(v.begin(), v.end()), hi = *std::max_element(v.begin(), v.end());
        for (double x : d) CHECK((x >= lo && x <= hi));
    }
}

TEST_CASE("item nonresponse") {
    ImputerSpec spec;
    SUBCASE("no missing cells is the identity") {
        auto d = item_data({{0, 1, 2.0, 5.0}, {1, 0, 3.0, 6.0}, {1, 1, 1.5, 4.0}});
        Rng rng(4);
        CHECK(impute_item_nonresponse(d, spec, rng) == d);
    }
    SUBCASE("deterministic relation is reproduced") {
        std::mt19937_64 g(2);
        std::normal_distribution<double> z;
        std::vector<std::array<double, 4>> rows;
        for (int i = 0; i < 60; ++i) {
            double a = i % 2;
            rows.push_back({a, a, z(g), 10 + z(g)});
        }
        rows[7][1] = kMissing;  // b equals a
        auto d = item_data(rows);
        const auto vb = d.schema().index_of("b");
        int match = 0;
        for (int r = 0; r < 100; ++r) {
            Rng rng(static_cast<std::uint64_t>(100 + r));
            auto c = impute_item_nonresponse(d, spec, rng);
            match += c.value(7, vb, 0) == 1.0;
        }
        CHECK(match >= 95);
    }
    SUBCASE("MCAR holes in a numeric column") {
        const int reps = 100;
        std::vector<double> diff;
        for (int r = 0; r < reps; ++r) {
            std::mt19937_64 g(static_cast<std::uint64_t>(700 + r));
            std::normal_distribution<double> z;
            std::bernoulli_distribution hole(0.05);
            std::vector<std::array<double, 4>> rows;
            double full = 0;
            for (int i = 0; i < 200; ++i) {
                double a = static_cast<double>(g() % 2), x = 2 + a + z(g), y = 3 * x + z(g);
                full += x / 200;
                rows.push_back({a, static_cast<double>(g() % 2), hole(g) ? kMissing : x, y});
            }
            auto d = item_data(rows);
            spec.iterations = 5;
            Rng rng(static_cast<std::uint64_t>(r));
            auto c = impute_item_nonresponse(d, spec, rng);
            const auto vx = d.schema().index_of("x");
            double m = 0;
            for (std::size_t i = 0; i < c.n_units(); ++i) m += c.value(i, vx, 0) / 200;
            diff.push_back(m - full);
        }
        double mean = std::accumulate(diff.begin(), diff.end(), 0.0) / reps, v = 0;
        for (double x : diff) v += (x - mean) * (x - mean) / (reps - 1);
        CHECK(std::abs(mean) < 3 * std::sqrt(v / reps));
    }
    SUBCASE("variable missing for everyone") {
        auto d = item_data({{0, kMissing, 2.0, 5.0}, {1, kMissing, 3.0, 6.0}});
        Rng rng(4);
        CHECK_THROWS_WITH_AS(impute_item_nonresponse(d, spec, rng), doctest::Contains("'b'"), DataError);
    }
}

TEST_CASE("sequential multiple imputation") {
    auto s = small_mar(11);
    s.item_missing_rate = 0.05;
    auto sim = simulate_cohort(s);
    ImputerSpec spec;
    spec.iterations = 3;
    auto set = sequential_mi(sim.data, spec, 5, 77);
    REQUIRE(set.m() == 5);
    for (const auto& c : set.copies) check_preserved(sim.data, c);
    CHECK(set.copies[0] != set.copies[1]);

    auto again = sequential_mi(sim.data, spec, 5, 77, {}, 4);
    for (std::size_t j = 0; j < 5; ++j) CHECK(again.copies[j] == set.copies[j]);

    std::vector<double> zeros(5, 0.0);
    auto zero = sequential_mi(sim.data, spec, 5, 77, zeros);
    for (std::size_t j = 0; j < 5; ++j) CHECK(zero.copies[j] == set.copies[j]);
    CHECK(zero.sigmas.empty());

    SUBCASE("unknown method kind") {
        ImputerSpec bad;
        bad.methods["race"] = ImputeMethod::Pmm;
        CHECK_THROWS_AS(sequential_mi(sim.data, bad, 2, 1), ConfigError);
    }
}

TEST_CASE("non-monotone input") {
    auto s = small_mar(12);
    s.intermittent_rate = 0.5;
    s.covariates = false;
    auto sim = simulate_cohort(s);
    REQUIRE_FALSE(sim.data.is_monotone());
    ImputerSpec spec;
    CHECK_THROWS_WITH_AS(sequential_mi(sim.data, spec, 2, 1), doctest::Contains("monotone"), DataError);
    auto filled = monotonize_by_imputation(sim.data, spec, 5);
    CHECK(filled.is_monotone());
    for (std::size_t i = 0; i < sim.data.n_units(); ++i)
        for (int t = 0; t <= sim.data.last_wave(); ++t)
            if (sim.data.responded(i, t)) CHECK(filled.outcome(i, t) == sim.data.outcome(i, t));
    spec.fill_intermittent = true;
    auto set = sequential_mi(sim.data, spec, 2, 1);
    for (const auto& c : set.copies) check_preserved(sim.data, c);
}

TEST_CASE("offsets shift dropout-wave draws by exactly k sigma") {
    auto s = small_mar(13, 300);
    s.covariates = false;
    auto sim = simulate_cohort(s);
    ImputerSpec spec;
    spec.offset_group = "race";
    auto a = sequential_mi(sim.data, spec, 2, 5, std::vector<double>{-0.8});
    auto b = sequential_mi(sim.data, spec, 2, 5, std::vector<double>{-1.2});
    auto mar = sequential_mi(sim.data, spec, 2, 5);
    REQUIRE(a.sigmas.size() == b.sigmas.size());
    const auto vr = sim.data.schema().index_of("race");
    std::size_t checked = 0;
    for (std::size_t j = 0; j < 2; ++j) {
        for (std::size_t i = 0; i < sim.data.n_units(); ++i) {
            int t = sim.data.last_consecutive_wave(i) + 1;
            if (t > sim.data.last_wave()) continue;
            const auto& level = sim.data.schema().variables[vr].levels[static_cast<std::size_t>(sim.data.value(i, vr))];
            auto it = std::find_if(a.sigmas.begin(), a.sigmas.end(),
                                   [&](const SigmaEntry& e) { return e.copy == j && e.wave == t && e.group == level; });
            REQUIRE(it != a.sigmas.end());
            double ya = a.copies[j].outcome(i, t), yb = b.copies[j].outcome(i, t), ym = mar.copies[j].outcome(i, t);
            CHECK(yb < ya);
            CHECK(std::abs((ya - yb) - 0.4 * it->sigma) < 1e-9 * (1 + std::abs(ya)));
            CHECK(std::abs((ya - ym) + 0.8 * it->sigma) < 1e-9 * (1 + std::abs(ya)));
            ++checked;
        }
    }
    CHECK(checked > 50);
    for (std::size_t k = 0; k < a.sigmas.size(); ++k) CHECK(a.sigmas[k].sigma == b.sigmas[k].sigma);
}

TEST_CASE("MAR sequential imputation recovers the final-wave mean") {
    const int reps = 200;
    std::vector<double> bias, cond_bias, cc_bias;
    for (int r = 0; r < reps; ++r) {
        CohortScenario s;
        s.n = 2000;
        s.last_wave = 3;
        s.covariates = false;
        s.seed = 9000 + static_cast<std::uint64_t>(r);
        s.dropout.mechanism = Mechanism::MAR;
        s.dropout.rates = {0.12, 0.12, 0.12};
        s.dropout.lag_coef = -0.8;
        auto sim = simulate_cohort(s);
        ImputerSpec spec;
        auto set = sequential_mi(sim.data, spec, 5, s.seed);
        std::vector<double> est, var;
        for (const auto& c : set.copies) {
            double m = 0, ss = 0;
            const double n = static_cast<double>(c.n_units());
            for (std::size_t i = 0; i < c.n_units(); ++i) m += c.outcome(i, 3) / n;
            for (std::size_t i = 0; i < c.n_units(); ++i) ss += (c.outcome(i, 3) - m) * (c.outcome(i, 3) - m) / (n - 1);
            est.push_back(m);
            var.push_back(ss / n);
        }
        const double q = pool(est, var).qbar;
        bias.push_back(q - sim.truth.analytic_means[3]);
        cond_bias.push_back(q - sim.truth.complete_means[3]);
        double cc = 0;
        std::size_t nc = 0;
        for (std::size_t i = 0; i < sim.data.n_units(); ++i)
            if (sim.data.responded(i, 3)) {
                cc += sim.data.outcome(i, 3);
                ++nc;
            }
        cc_bias.push_back(cc / static_cast<double>(nc) - sim.truth.analytic_means[3]);
    }
    auto stats = [&](const std::vector<double>& b) {
        double m = std::accumulate(b.begin(), b.end(), 0.0) / reps, v = 0;
        for (double x : b) v += (x - m) * (x - m) / (reps - 1);
        return std::pair{m, std::sqrt(v / reps)};
    };
    auto [mb, se] = stats(bias);
    auto [cb, cse] = stats(cc_bias);
    auto [db, dse] = stats(cond_bias);
    MESSAGE("MI bias " << mb << " (MC SE " << se << "), vs complete data " << db << " (" << dse
                       << "), complete-case bias " << cb << " (" << cse << ")");
    CHECK(std::abs(mb) < 3 * se);
    CHECK(std::abs(cb) > 3 * cse);
}
