#include <doctest.h>

#include <random>

#include "nrba/auc.hpp"
#include "nrba/glm.hpp"
#include "nrba/stepwise.hpp"
#include "oracles.hpp"

using namespace nrba;

namespace {

struct Instance {
    Frame frame;
    DesignMatrix d;
    oracle::Mat rows;  // with intercept
    oracle::Vec w;
};

Instance random_instance(std::mt19937_64& rng, std::size_t n, std::size_t p, bool weighted) {
    std::normal_distribution<double> z;
    std::uniform_real_distribution<double> u(0.5, 2.0);
    Instance inst;
    for (std::size_t j = 0; j < p; ++j) {
        Column c{"x" + std::to_string(j + 1), VarKind::Numeric, {}, {}};
        for (std::size_t i = 0; i < n; ++i) c.values.push_back(z(rng));
        inst.frame.columns.push_back(std::move(c));
    }
    inst.d = encode(inst.frame);
    for (std::size_t i = 0; i < n; ++i) {
        oracle::Vec r{1.0};
        for (std::size_t j = 0; j < p; ++j) r.push_back(inst.frame.columns[j].values[i]);
        inst.rows.push_back(r);
        inst.w.push_back(weighted ? u(rng) : 1.0);
    }
    return inst;
}

Eigen::VectorXd to_eigen(const oracle::Vec& v) { return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size())); }

double max_diff(const Eigen::VectorXd& a, const oracle::Vec& b) {
    REQUIRE(static_cast<std::size_t>(a.size()) == b.size());
    double m = 0;
    for (std::size_t i = 0; i < b.size(); ++i) m = std::max(m, std::abs(a(static_cast<Eigen::Index>(i)) - b[i]));
    return m;
}

}  // namespace

TEST_CASE("intercept-only binomial with half ones") {
    Frame f;
    DesignMatrix d = encode(f);
    d.x = Eigen::MatrixXd::Ones(10, 1);
    Eigen::VectorXd y(10);
    y << 1, 0, 1, 0, 1, 0, 1, 0, 1, 0;
    GlmFit fit = fit_glm(d, y, Family::Binomial);
    CHECK(std::abs(fit.coef(0)) < 1e-12);
    CHECK(fit.class_probabilities(d.x)(0, 1) == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(fit.convergence.converged);
}

TEST_CASE("binomial fits match a direct Newton oracle") {
    std::mt19937_64 rng(11);
    for (int rep = 0; rep < 20; ++rep) {
        std::size_t n = 40 + static_cast<std::size_t>(rep % 3) * 10, p = 1 + static_cast<std::size_t>(rep % 3);
        Instance inst = random_instance(rng, n, p, rep % 2 == 1);
        oracle::Vec y;
        std::bernoulli_distribution coin(0.5);
        for (std::size_t i = 0; i < n; ++i) {
            double eta = 0.3 + 0.8 * inst.rows[i][1];
            y.push_back(std::bernoulli_distribution(oracle::sigmoid(eta))(rng) ? 1.0 : 0.0);
        }
        oracle::Binomial ob{inst.rows, y, inst.w};
        auto ref = oracle::newton_maximize([&](auto& b) { return ob.ll(b); }, [&](auto& b) { return ob.grad(b); },
                                           oracle::Vec(p + 1, 0.0));
        GlmFit fit = fit_glm(inst.d, to_eigen(y), Family::Binomial, inst.w);
        CHECK(max_diff(fit.coef, ref) < 1e-6);
        CHECK(fit.loglik == doctest::Approx(ob.ll(ref)).epsilon(1e-10));
    }
}

TEST_CASE("multinomial fits match a direct Newton oracle") {
    std::mt19937_64 rng(12);
    for (int rep = 0; rep < 20; ++rep) {
        std::size_t n = 60, p = 1 + static_cast<std::size_t>(rep % 2), K = 3;
        Instance inst = random_instance(rng, n, p, rep % 2 == 0);
        oracle::Vec y;
        for (std::size_t i = 0; i < n; ++i) {
            double e1 = 0.2 + 0.6 * inst.rows[i][1], e2 = -0.1 - 0.5 * inst.rows[i][1];
            double s = 1 + std::exp(e1) + std::exp(e2);
            std::discrete_distribution<int> dd({1 / s, std::exp(e1) / s, std::exp(e2) / s});
            y.push_back(dd(rng));
        }
        oracle::Multinomial om{inst.rows, y, inst.w, K};
        auto ref = oracle::newton_maximize([&](auto& b) { return om.ll(b); }, [&](auto& b) { return om.grad(b); },
                                           oracle::Vec((K - 1) * (p + 1), 0.0));
        GlmFit fit = fit_glm(inst.d, to_eigen(y), Family::Multinomial, inst.w);
        CHECK(max_diff(fit.coef, ref) < 1e-6);
        CHECK(fit.terms.front() == "1:(Intercept)");
    }
}

TEST_CASE("ordinal fits match a direct Newton oracle") {
    std::mt19937_64 rng(13);
    for (int rep = 0; rep < 20; ++rep) {
        std::size_t n = 60, p = 1 + static_cast<std::size_t>(rep % 3), K = 3 + static_cast<std::size_t>(rep % 2);
        Instance inst = random_instance(rng, n, p, rep % 2 == 1);
        oracle::Vec y;
        std::uniform_real_distribution<double> u(0, 1);
        oracle::Mat xs;
        for (std::size_t i = 0; i < n; ++i) {
            double latent = 0.7 * inst.rows[i][1];
            double uu = u(rng);
            latent += std::log(uu / (1 - uu));
            int k = latent < -0.5 ? 0 : (latent < 0.6 ? 1 : (K == 3 || latent < 1.5 ? 2 : 3));
            y.push_back(k);
            xs.emplace_back(inst.rows[i].begin() + 1, inst.rows[i].end());
        }
        oracle::Ordinal oo{xs, y, inst.w, K};
        oracle::Vec start(K - 1 + p, 0.0);
        for (std::size_t j = 0; j + 1 < K; ++j) start[j] = -1.0 + static_cast<double>(j);
        auto ref = oracle::newton_maximize([&](auto& b) { return oo.ll(b); }, [&](auto& b) { return oo.grad(b); }, start);
        GlmFit fit = fit_glm(inst.d, to_eigen(y), Family::Ordinal, inst.w);
        CHECK(max_diff(fit.coef, ref) < 1e-6);
        CHECK(fit.terms.front() == "cut:1");
    }
}

TEST_CASE("gaussian fit equals the weighted normal equations") {
    std::mt19937_64 rng(14);
    for (int rep = 0; rep < 20; ++rep) {
        std::size_t n = 30 + static_cast<std::size_t>(rep), p = 1 + static_cast<std::size_t>(rep % 4);
        Instance inst = random_instance(rng, n, p, true);
        oracle::Vec y;
        std::normal_distribution<double> z;
        for (std::size_t i = 0; i < n; ++i) y.push_back(1.0 + 2.0 * inst.rows[i][1] + z(rng));
        GlmFit fit = fit_glm(inst.d, to_eigen(y), Family::Gaussian, inst.w);
        CHECK(max_diff(fit.coef, oracle::wls(inst.rows, y, inst.w)) < 1e-10);
    }
}

TEST_CASE("integer weights equal case replication") {
    std::mt19937_64 rng(15);
    Instance inst = random_instance(rng, 40, 2, false);
    oracle::Vec y;
    for (std::size_t i = 0; i < 40; ++i) y.push_back(i % 3 == 0 || inst.rows[i][1] > 0.5 ? 1.0 : 0.0);
    std::vector<double> w(40);
    Frame big = inst.frame;
    for (auto& c : big.columns) c.values.clear();
    oracle::Vec ybig;
    for (std::size_t i = 0; i < 40; ++i) {
        w[i] = 1.0 + static_cast<double>(i % 3);
        for (int k = 0; k < static_cast<int>(w[i]); ++k) {
            for (std::size_t j = 0; j < big.columns.size(); ++j) big.columns[j].values.push_back(inst.frame.columns[j].values[i]);
            ybig.push_back(y[i]);
        }
    }
    for (Family fam : {Family::Binomial, Family::Gaussian}) {
        GlmFit a = fit_glm(inst.d, to_eigen(y), fam, w);
        GlmFit b = fit_glm(encode(big), to_eigen(ybig), fam);
        CHECK((a.coef - b.coef).cwiseAbs().maxCoeff() < 1e-9);
    }
}

TEST_CASE("affine rescaling of a predictor leaves probabilities unchanged") {
    std::mt19937_64 rng(16);
    Instance inst = random_instance(rng, 60, 2, false);
    oracle::Vec y;
    for (std::size_t i = 0; i < 60; ++i) y.push_back(std::bernoulli_distribution(oracle::sigmoid(inst.rows[i][1]))(rng));
    GlmFit a = fit_glm(inst.d, to_eigen(y), Family::Binomial);
    Frame scaled = inst.frame;
    for (double& v : scaled.columns[0].values) v = 3.0 * v + 7.0;
    GlmFit b = fit_glm(encode(scaled), to_eigen(y), Family::Binomial);
    CHECK(b.coef(1) == doctest::Approx(a.coef(1) / 3.0).epsilon(1e-9));
    CHECK((predict(a, inst.frame) - predict(b, scaled)).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("ordinal with two classes equals binomial logit") {
    std::mt19937_64 rng(17);
    Instance inst = random_instance(rng, 60, 3, true);
    oracle::Vec y;
    for (std::size_t i = 0; i < 60; ++i) y.push_back(std::bernoulli_distribution(oracle::sigmoid(0.5 - inst.rows[i][2]))(rng));
    GlmFit ord = fit_glm(inst.d, to_eigen(y), Family::Ordinal, inst.w);
    GlmFit bin = fit_glm(inst.d, to_eigen(y), Family::Binomial, inst.w);
    CHECK(std::abs(ord.coef(0) + bin.coef(0)) < 1e-8);
    for (Eigen::Index j = 1; j < bin.coef.size(); ++j) CHECK(std::abs(ord.coef(j) - bin.coef(j)) < 1e-8);
    CHECK(ord.loglik == doctest::Approx(bin.loglik).epsilon(1e-10));
}

TEST_CASE("covariance is symmetric positive semidefinite") {
    std::mt19937_64 rng(18);
    Instance inst = random_instance(rng, 50, 3, true);
    oracle::Vec y;
    for (std::size_t i = 0; i < 50; ++i) y.push_back(i % 2);
    GlmFit fit = fit_glm(inst.d, to_eigen(y), Family::Binomial, inst.w);
    CHECK((fit.cov - fit.cov.transpose()).cwiseAbs().maxCoeff() == 0.0);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(fit.cov);
    CHECK(es.eigenvalues().minCoeff() >= 0.0);
    CHECK(fit.convergence.step_norm < GlmOptions{}.tol);
}

TEST_CASE("separation raises an error naming the column") {
    Frame f;
    f.columns.push_back({"x", VarKind::Numeric, {}, {-3, -2, -1, -0.5, 0.5, 1, 2, 3}});
    f.columns.push_back({"noise", VarKind::Numeric, {}, {0.1, -0.2, 0.3, 0.1, -0.1, 0.2, -0.3, 0.0}});
    Eigen::VectorXd y(8);
    y << 0, 0, 0, 0, 1, 1, 1, 1;
    try {
        fit_glm(encode(f), y, Family::Binomial);
        FAIL("expected separation");
    } catch (const SeparationError& e) {
        REQUIRE(!e.columns().empty());
        CHECK(e.columns().front() == "x");
    }
}

TEST_CASE("collinear columns raise a singular error naming them") {
    Frame f;
    f.columns.push_back({"a", VarKind::Numeric, {}, {1, 2, 3, 4, 5, 6}});
    f.columns.push_back({"b", VarKind::Numeric, {}, {2, 4, 6, 8, 10, 12}});
    Eigen::VectorXd y(6);
    y << 0, 1, 0, 1, 1, 0;
    try {
        fit_glm(encode(f), y, Family::Binomial);
        FAIL("expected singular");
    } catch (const SingularError& e) {
        CHECK(e.columns() == std::vector<std::string>{"b"});
    }
}

TEST_CASE("non-convergence carries the log-likelihood trace") {
    std::mt19937_64 rng(19);
    Instance inst = random_instance(rng, 40, 2, false);
    oracle::Vec y;
    for (std::size_t i = 0; i < 40; ++i) y.push_back(inst.rows[i][1] + 0.5 * inst.rows[i][2] > 0 ? (i % 7 ? 1.0 : 0.0) : (i % 5 ? 0.0 : 1.0));
    GlmOptions opt;
    opt.max_iter = 1;
    try {
        fit_glm(inst.d, to_eigen(y), Family::Binomial, {}, opt);
        FAIL("expected non-convergence");
    } catch (const ConvergenceError& e) {
        CHECK(e.trace().size() == 2);
    }
}

TEST_CASE("predict on new data") {
    Frame f;
    f.columns.push_back({"x", VarKind::Numeric, {}, {0, 1, 2, 3, 0.2, 1.5}});
    Eigen::VectorXd y(6);
    y << 0, 1, 0, 1, 1, 0;
    GlmFit fit = fit_glm(encode(f), y, Family::Binomial);
    fit.coef << -1.0, 2.0;
    Frame nd;
    nd.columns.push_back({"x", VarKind::Numeric, {}, {0.5}});
    CHECK(predict(fit, nd)(0) == doctest::Approx(0.5).epsilon(1e-15));

    Frame g;
    g.columns.push_back({"race", VarKind::Nominal, {"a", "b"}, {0, 1, 1, 0, 1, 0}});
    GlmFit fg = fit_glm(encode(g), y, Family::Binomial);
    Frame bad;
    bad.columns.push_back({"race", VarKind::Nominal, {"a", "b", "zz"}, {2}});
    CHECK_THROWS_WITH_AS(predict(fg, bad), doctest::Contains("zz"), DataError);
}

TEST_CASE("stepwise selection") {
    std::mt19937_64 rng(20);
    Instance inst = random_instance(rng, 400, 4, false);
    oracle::Vec y;
    for (std::size_t i = 0; i < 400; ++i) y.push_back(std::bernoulli_distribution(oracle::sigmoid(1.5 * inst.rows[i][3]))(rng));

    SUBCASE("strong block is selected") {
        auto r = stepwise_select(inst.d, to_eigen(y), Family::Binomial, {}, {0, 1, 2, 3});
        CHECK(std::find(r.selected.begin(), r.selected.end(), 2u) != r.selected.end());
    }
    SUBCASE("empty scope returns the base model") {
        auto r = stepwise_select(inst.d, to_eigen(y), Family::Binomial, {}, {});
        GlmFit full = fit_glm(inst.d, to_eigen(y), Family::Binomial);
        CHECK(r.selected.empty());
        CHECK((r.fit.coef - full.coef).cwiseAbs().maxCoeff() == 0.0);
    }
    SUBCASE("forcing every block reproduces the full fit") {
        StepwiseOptions opt;
        opt.start = {0, 1, 2, 3};
        opt.max_steps = 0;
        auto r = stepwise_select(inst.d, to_eigen(y), Family::Binomial, {}, {0, 1, 2, 3}, opt);
        GlmFit full = fit_glm(inst.d, to_eigen(y), Family::Binomial);
        CHECK((r.fit.coef - full.coef).cwiseAbs().maxCoeff() == 0.0);
    }
}

TEST_CASE("stepwise with BIC keeps pure noise out") {
    std::mt19937_64 rng(21);
    int null_models = 0;
    for (int rep = 0; rep < 100; ++rep) {
        Instance inst = random_instance(rng, 1000, 4, false);
        oracle::Vec y;
        for (std::size_t i = 0; i < 1000; ++i) y.push_back(std::bernoulli_distribution(0.6)(rng));
        StepwiseOptions opt;
        opt.criterion = Criterion::BIC;
        auto r = stepwise_select(inst.d, to_eigen(y), Family::Binomial, {}, {0, 1, 2, 3}, opt);
        null_models += r.selected.empty();
    }
    CHECK(null_models >= 95);
}

TEST_CASE("auc") {
    std::vector<double> l{0, 0, 1, 1};
    CHECK(auc(std::vector<double>{0.1, 0.2, 0.8, 0.9}, l) == 1.0);
    CHECK(auc(std::vector<double>{1, 1, 1, 1}, l) == 0.5);
    CHECK_THROWS_AS(auc(std::vector<double>{1, 2}, std::vector<double>{1, 1}), DataError);

    std::mt19937_64 rng(22);
    std::uniform_int_distribution<int> coarse(0, 5);
    for (int rep = 0; rep < 50; ++rep) {
        std::size_t n = 12 + static_cast<std::size_t>(rep);
        std::vector<double> s(n), lab(n);
        for (std::size_t i = 0; i < n; ++i) {
            s[i] = coarse(rng);
            lab[i] = i % 3 == 0 ? 1 : static_cast<double>(coarse(rng) > 3);
        }
        CHECK(auc(s, lab) == oracle::auc_pairs(s, lab));
        std::vector<double> t(n);
        for (std::size_t i = 0; i < n; ++i) t[i] = std::exp(s[i]) * 10 - 3;
        CHECK(auc(t, lab) == auc(s, lab));
    }
}
