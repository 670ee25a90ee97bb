#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "nrba/csv.hpp"
#include "nrba/estimate.hpp"
#include "nrba/pool.hpp"
#include "nrba/simulate.hpp"

using namespace nrba;

namespace {

CohortScenario scenario(std::size_t n, std::uint64_t seed, bool dropout) {
    CohortScenario s;
    s.n = n;
    s.seed = seed;
    s.clusters = 40;
    if (dropout) {
        s.dropout.mechanism = Mechanism::MAR;
        s.dropout.rates = {0.10, 0.08, 0.08, 0.08, 0.08};
        s.dropout.lag_coef = -0.8;
    } else {
        s.dropout.rates.assign(5, 0.0);
    }
    return s;
}

std::vector<WeightSet> all_weights(const PanelDataset& d) {
    PropensitySpec spec;
    spec.stepwise = false;
    spec.predictors.variables = {"sex", "y"};
    std::vector<WeightSet> w;
    for (int t = 1; t <= d.last_wave(); ++t) w.push_back(baseline_weights(d, t, spec));
    w.push_back(cca_weights(d, spec));
    for (auto& s : sequential_weights(d, spec)) w.push_back(std::move(s));
    return w;
}

ImputerSpec fast_imputer() {
    ImputerSpec s;
    s.methods["y"] = ImputeMethod::Normal;
    s.methods["age"] = ImputeMethod::Normal;
    s.methods["pnw"] = ImputeMethod::Normal;
    return s;
}

const EstimateRow& only(const EstimateTable& t, Method m, const std::string& key, double k = 0.0) {
    const EstimateRow* hit = nullptr;
    for (const auto& r : t.rows)
        if (r.method == m && r.key() == key && r.k == k) {
            REQUIRE(hit == nullptr);
            hit = &r;
        }
    REQUIRE(hit != nullptr);
    return *hit;
}

}  // namespace

TEST_CASE("method tags") {
    for (const auto& t : method_tags()) CHECK(to_string(parse_method(t)) == t);
    CHECK(method_tags().size() == 13);
    try {
        parse_method("IPW");
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        std::string msg = e.what();
        CHECK(msg.find("'IPW'") != std::string::npos);
        CHECK(msg.find("ACA-seq-attr-w") != std::string::npos);
        CHECK(msg.find("MI-offset") != std::string::npos);
    }
}

TEST_CASE("complete data collapses every method within its family") {
    auto s = scenario(150, 3, false);
    s.base_weight_cv = 0.0;
    auto sim = simulate_cohort(s);
    const auto& d = sim.data;
    auto weights = all_weights(d);
    auto mi = sequential_mi(d, fast_imputer(), 2, 9);

    EstimateInputs in;
    in.data = &d;
    in.weights = weights;
    in.mi = &mi;
    EstimateRequest req;
    for (const auto& t : method_tags())
        if (t != "MI-offset") req.methods.push_back(parse_method(t));
    req.subgroups = {"race"};
    auto table = estimate_table(in, req);

    std::vector<Method> mean_methods{Method::CCA,      Method::ACA,      Method::CcaBaseW,    Method::AcaBaseW,
                                     Method::CcaAttrW, Method::AcaAttrW, Method::AcaSeqAttrW, Method::MiSeq};
    for (int t = 0; t <= 5; ++t) {
        std::string key = "mean:w" + std::to_string(t);
        const double ref = only(table, Method::CCA, key).est;
        for (Method m : mean_methods) CHECK(only(table, m, key).est == doctest::Approx(ref).epsilon(1e-8));
        std::string sub = key + ":race=Hispanic";
        const double sref = only(table, Method::CCA, sub).est;
        for (Method m : mean_methods) CHECK(only(table, m, sub).est == doctest::Approx(sref).epsilon(1e-8));
    }
    std::size_t n_terms = 0;
    for (const auto& r : table.rows) {
        if (r.method != Method::ML) continue;
        ++n_terms;
        const std::string key = r.key();
        CHECK(only(table, Method::WML, key).est == doctest::Approx(r.est).epsilon(1e-8));
        CHECK(only(table, Method::MiSeq, key).est == doctest::Approx(r.est).epsilon(1e-8));
        CHECK(only(table, Method::WGEE, key).est == doctest::Approx(only(table, Method::GEE, key).est).epsilon(1e-8));
    }
    CHECK(n_terms == 37);

    const auto& mi_row = only(table, Method::MiSeq, "mean:w2");
    CHECK(mi_row.se_type == "rubin");
    CHECK(std::isinf(mi_row.df));
    CHECK(only(table, Method::WGEE, "coef:wave[2]").se_type == "sandwich");
    CHECK(only(table, Method::ML, "coef:wave[2]").se_type == "model");

    // ordered by method
    for (std::size_t k = 1; k < table.rows.size(); ++k) CHECK(table.rows[k - 1].method <= table.rows[k].method);
}

TEST_CASE("MAR data: offsets order the pooled means and k = 0 reproduces MI-seq") {
    auto sim = simulate_cohort(scenario(300, 4, true));
    const auto& d = sim.data;
    auto spec = fast_imputer();
    auto mar = sequential_mi(d, spec, 3, 17);
    const double zero[] = {0.0};
    auto k0 = sequential_mi(d, spec, 3, 17, zero);
    std::vector<ImputationSet> sets;
    for (double k : {-0.8, -1.2, -1.6}) {
        const double ks[] = {k};
        sets.push_back(sequential_mi(d, spec, 3, 17, ks));
    }
    EstimateInputs in;
    in.data = &d;
    in.mi = &mar;
    for (const auto& s : sets) in.offset_sets.push_back(&s);
    EstimateRequest req;
    req.methods = {Method::MiOffset, Method::MiSeq};
    auto table = estimate_table(in, req);

    for (int t = 1; t <= 5; ++t) {
        const std::string key = "mean:w" + std::to_string(t);
        double a = only(table, Method::MiOffset, key, -0.8).est, b = only(table, Method::MiOffset, key, -1.2).est,
               c = only(table, Method::MiOffset, key, -1.6).est;
        CHECK(only(table, Method::MiSeq, key).est > a);
        CHECK(a > b);
        CHECK(b > c);
    }
    CHECK(table.rows.front().method == Method::MiSeq);
    CHECK(table.rows.back().label() == "MI-offset(-1.6)");

    EstimateInputs in0 = in;
    in0.offset_sets = {&k0};
    auto t0 = estimate_table(in0, req);
    std::vector<const EstimateRow*> seq, off;
    for (const auto& r : t0.rows) (r.method == Method::MiSeq ? seq : off).push_back(&r);
    REQUIRE(seq.size() == off.size());
    for (std::size_t k = 0; k < seq.size(); ++k) {
        CHECK(seq[k]->key() == off[k]->key());
        CHECK(seq[k]->est == off[k]->est);
        CHECK(seq[k]->se == off[k]->se);
    }

    SUBCASE("pooled wave contrasts are the pooled per-copy contrasts") {
        std::vector<double> diff;
        for (const auto& copy : mar.copies) {
            auto des = build_design(copy, default_formula(), RowSet::All);
            auto fit = fit_mixed(des.x, des.y, des.unit);
            auto at = [&](const std::string& term) {
                auto it = std::find(fit.terms.begin(), fit.terms.end(), term);
                REQUIRE(it != fit.terms.end());
                return fit.coef(it - fit.terms.begin());
            };
            diff.push_back(at("wave[5]") - at("wave[4]"));
        }
        double mean = (diff[0] + diff[1] + diff[2]) / 3.0;
        double pooled = only(table, Method::MiSeq, "coef:wave[5]").est - only(table, Method::MiSeq, "coef:wave[4]").est;
        CHECK(pooled == doctest::Approx(mean).epsilon(1e-10));
    }
}

TEST_CASE("estimate_table prerequisites") {
    auto sim = simulate_cohort(scenario(120, 5, true));
    EstimateInputs in;
    in.data = &sim.data;
    EstimateRequest req;
    CHECK_THROWS_WITH_AS(estimate_table(in, req), "no methods selected", ConfigError);
    req.methods = {Method::AcaSeqAttrW};
    CHECK_THROWS_WITH_AS(estimate_table(in, req), doctest::Contains("weights stage"), ConfigError);
    req.methods = {Method::WML};
    CHECK_THROWS_WITH_AS(estimate_table(in, req), doctest::Contains("weights stage"), ConfigError);
    req.methods = {Method::MiSeq};
    CHECK_THROWS_WITH_AS(estimate_table(in, req), doctest::Contains("impute stage"), ConfigError);
    req.methods = {Method::MiOffset};
    CHECK_THROWS_WITH_AS(estimate_table(in, req), doctest::Contains("sensitivity stage"), ConfigError);
    req.methods = {Method::CCA};
    req.subgroups = {"age"};
    CHECK_THROWS_AS(estimate_table(in, req), ConfigError);
}

TEST_CASE("weighted models and output files") {
    auto sim = simulate_cohort(scenario(250, 6, true));
    const auto& d = sim.data;
    EstimateInputs in;
    in.data = &d;
    in.weights = all_weights(d);
    EstimateRequest req;
    req.methods = {Method::WGEE, Method::CCA, Method::ACA, Method::AcaSeqAttrW, Method::WML, Method::GEE};
    req.subgroups = {"race"};
    auto t1 = estimate_table(in, req);
    req.threads = 4;
    auto t4 = estimate_table(in, req);
    REQUIRE(t1.rows.size() == t4.rows.size());
    for (std::size_t k = 0; k < t1.rows.size(); ++k) {
        CHECK(t1.rows[k].key() == t4.rows[k].key());
        CHECK(t1.rows[k].est == t4.rows[k].est);
        CHECK(t1.rows[k].se == t4.rows[k].se);
    }
    CHECK(t1.rows.front().method == Method::CCA);
    for (const auto& r : t1.rows) {
        CHECK(r.se > 0);
        CHECK(r.lower < r.est);
        CHECK(r.upper > r.est);
    }
    // CCA keeps fewer units at wave 0 than ACA
    CHECK(only(t1, Method::CCA, "mean:w0").n < only(t1, Method::ACA, "mean:w0").n);

    auto dir = std::filesystem::temp_directory_path() / "nrba_estimate_test";
    std::filesystem::create_directories(dir);
    write_estimates_csv(t1, (dir / "est.csv").string());
    write_coefficients_csv(t1, (dir / "coef.csv").string());
    write_subgroup_means_csv(t1, (dir / "sub.csv").string());
    auto est = csv::read_file((dir / "est.csv").string());
    CHECK(est.header == std::vector<std::string>{"method", "estimand", "est", "se", "lower", "upper"});
    CHECK(est.rows.size() == t1.rows.size());
    auto coef = csv::read_file((dir / "coef.csv").string());
    bool saw = false;
    for (const auto& r : coef.rows)
        if (r[1] == "wave[3]:race[Asian]") {
            CHECK(r[2] == "3");
            CHECK(r[3] == "Asian");
            saw = true;
        }
    CHECK(saw);
    auto sub = csv::read_file((dir / "sub.csv").string());
    std::size_t overall = 0;
    for (const auto& r : sub.rows) overall += r[2] == "overall";
    CHECK(overall == 3 * 6);
    std::filesystem::remove_all(dir);
}
