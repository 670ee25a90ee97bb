#include "nrba/glm.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <limits>
#include <sstream>

#include <nlohmann/json.hpp>

#include "nrba/csv.hpp"

namespace nrba {

const char* to_string(Family f) {
    switch (f) {
        case Family::Binomial: return "binomial-logit";
        case Family::Multinomial: return "multinomial-logit";
        case Family::Ordinal: return "ordinal-proportional-odds";
        case Family::Gaussian: return "gaussian-identity";
    }
    return "?";
}

double GlmFit::bic() const {
    return -2.0 * loglik + std::log(static_cast<double>(n_obs)) * static_cast<double>(n_params());
}

namespace {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

double softplus(double eta) { return eta > 0 ? eta + std::log1p(std::exp(-eta)) : std::log1p(std::exp(eta)); }

double logistic_density(double z) {
    double p = logistic(z);
    return p * (1.0 - p);
}

double max_abs(const VectorXd& v) { return v.size() ? v.cwiseAbs().maxCoeff() : 0.0; }

struct Problem {
    std::function<double(const VectorXd&)> loglik;
    /// fills score and expected information at the parameter
    std::function<void(const VectorXd&, VectorXd&, MatrixXd&)> derivs;
    /// optional divergence check after each accepted step
    std::function<void(const VectorXd&)> after_step;
};

ConvergenceRecord newton(const Problem& prob, VectorXd& phi, const GlmOptions& opt) {
    ConvergenceRecord rec;
    double ll = prob.loglik(phi);
    rec.loglik_trace.push_back(ll);
    VectorXd score;
    MatrixXd info;
    for (int it = 1; it <= opt.max_iter; ++it) {
        prob.derivs(phi, score, info);
        Eigen::LLT<MatrixXd> llt(info);
        VectorXd delta;
        if (llt.info() == Eigen::Success) {
            delta = llt.solve(score);
        } else {
            Eigen::LDLT<MatrixXd> ldlt(info);
            if (ldlt.info() != Eigen::Success || !ldlt.isPositive())
                throw SingularError("information matrix is not positive definite", {});
            delta = ldlt.solve(score);
        }
        if (!delta.allFinite()) throw SingularError("information matrix is singular", {});
        double step = 1.0;
        VectorXd next = phi + delta;
        double ll_next = prob.loglik(next);
        for (int h = 0; h < 40 && !(std::isfinite(ll_next) && ll_next >= ll - 1e-10 * (1.0 + std::abs(ll))); ++h) {
            step *= 0.5;
            next = phi + step * delta;
            ll_next = prob.loglik(next);
        }
        if (!std::isfinite(ll_next)) {
            throw ConvergenceError("log-likelihood became non-finite at iteration " + std::to_string(it),
                                   rec.loglik_trace);
        }
        double step_norm = max_abs(step * delta) / std::max(1.0, max_abs(next));
        phi = next;
        ll = ll_next;
        rec.loglik_trace.push_back(ll);
        rec.iterations = it;
        rec.step_norm = step_norm;
        if (prob.after_step) prob.after_step(phi);
        if (step_norm < opt.tol) {
            rec.converged = true;
            return rec;
        }
    }
    std::ostringstream msg;
    msg << "no convergence after " << opt.max_iter << " iterations (last relative step " << rec.step_norm << ")";
    throw ConvergenceError(msg.str(), rec.loglik_trace);
}

VectorXd weights_or_ones(std::span<const double> w, Index n) {
    if (w.empty()) return VectorXd::Ones(n);
    if (static_cast<Index>(w.size()) != n) throw DataError("case weights length does not match the design");
    VectorXd out(n);
    for (Index i = 0; i < n; ++i) {
        if (!(w[static_cast<std::size_t>(i)] > 0.0) || !std::isfinite(w[static_cast<std::size_t>(i)]))
            throw DataError("case weights must be positive and finite");
        out(i) = w[static_cast<std::size_t>(i)];
    }
    return out;
}

void check_rank(const MatrixXd& x, const VectorXd& w, const std::vector<std::string>& labels) {
    MatrixXd xw = x.array().colwise() * w.array().sqrt();
    auto bad = collinear_columns(xw, labels);
    if (!bad.empty()) {
        std::string names;
        for (const auto& b : bad) names += (names.empty() ? "" : ", ") + b;
        throw SingularError("singular information matrix; collinear columns: " + names, bad);
    }
}

/// Columns whose contribution dominates the most extreme linear predictor.
std::vector<std::string> separation_culprits(const MatrixXd& x, const VectorXd& beta,
                                             const std::vector<std::string>& labels, bool intercept) {
    VectorXd eta = x * beta;
    Index worst = 0;
    eta.cwiseAbs().maxCoeff(&worst);
    std::vector<std::pair<double, std::size_t>> contrib;
    for (Index j = intercept ? 1 : 0; j < x.cols(); ++j)
        contrib.emplace_back(std::abs(x(worst, j) * beta(j)), static_cast<std::size_t>(j));
    std::sort(contrib.begin(), contrib.end(), [](auto& a, auto& b) { return a.first > b.first; });
    std::vector<std::string> out;
    for (const auto& [c, j] : contrib)
        if (out.empty() || c >= 0.25 * contrib.front().first) out.push_back(labels[j]);
    if (out.empty() && intercept) out.push_back(labels[0]);
    return out;
}

[[noreturn]] void throw_separation(const MatrixXd& x, const VectorXd& beta, const std::vector<std::string>& labels,
                                   bool intercept) {
    auto cols = separation_culprits(x, beta, labels, intercept);
    std::string names;
    for (const auto& c : cols) names += (names.empty() ? "" : ", ") + c;
    throw SeparationError("complete or quasi-complete separation detected; divergent columns: " + names, cols);
}

MatrixXd ridge_matrix(Index p, bool intercept, double ridge) {
    MatrixXd r = MatrixXd::Identity(p, p) * ridge;
    if (intercept && p > 0) r(0, 0) = 0.0;
    return r;
}

// ---------------------------------------------------------------------------

GlmFit fit_gaussian(const DesignMatrix& d, const VectorXd& y, const VectorXd& w, const GlmOptions& opt) {
    const MatrixXd& x = d.x;
    const Index n = x.rows(), p = x.cols();
    if (opt.ridge == 0.0) check_rank(x, w, d.labels);
    MatrixXd xtwx = x.transpose() * w.asDiagonal() * x + ridge_matrix(p, d.intercept, opt.ridge);
    VectorXd xtwy = x.transpose() * (w.array() * y.array()).matrix();
    Eigen::LDLT<MatrixXd> ldlt(xtwx);
    if (ldlt.info() != Eigen::Success) throw SingularError("singular normal equations", d.labels);
    GlmFit fit;
    fit.coef = ldlt.solve(xtwy);
    VectorXd r = y - x * fit.coef;
    double rss = (w.array() * r.array().square()).sum();
    double sw = w.sum();
    double df = sw - static_cast<double>(p);
    fit.dispersion = df > 0 ? rss / df : std::numeric_limits<double>::quiet_NaN();
    double s2_ml = rss / sw;
    fit.loglik = -0.5 * sw * (std::log(2.0 * M_PI * s2_ml) + 1.0);
    fit.cov = ldlt.solve(MatrixXd::Identity(p, p)) * fit.dispersion;
    fit.convergence = {true, 1, 0.0, {fit.loglik}};
    fit.terms = d.labels;
    (void)n;
    return fit;
}

GlmFit fit_binomial(const DesignMatrix& d, const VectorXd& y, const VectorXd& w, const GlmOptions& opt) {
    const MatrixXd& x = d.x;
    const Index p = x.cols();
    for (Index i = 0; i < y.size(); ++i)
        if (y(i) != 0.0 && y(i) != 1.0) throw DataError("binomial response must be 0/1");
    if (opt.ridge == 0.0) check_rank(x, w, d.labels);
    const MatrixXd pen = ridge_matrix(p, d.intercept, opt.ridge);

    Problem prob;
    prob.loglik = [&](const VectorXd& b) {
        VectorXd eta = x * b;
        double ll = 0.0;
        for (Index i = 0; i < eta.size(); ++i) ll += w(i) * (y(i) * eta(i) - softplus(eta(i)));
        return ll - 0.5 * b.dot(pen * b);
    };
    prob.derivs = [&](const VectorXd& b, VectorXd& score, MatrixXd& info) {
        VectorXd eta = x * b;
        VectorXd mu = eta.unaryExpr([](double e) { return logistic(e); });
        VectorXd v = (w.array() * mu.array() * (1.0 - mu.array())).matrix();
        score = x.transpose() * (w.array() * (y - mu).array()).matrix() - pen * b;
        info = x.transpose() * v.asDiagonal() * x + pen;
    };
    if (opt.check_separation) {
        prob.after_step = [&](const VectorXd& b) {
            if (max_abs(x * b) > opt.separation_eta) throw_separation(x, b, d.labels, d.intercept);
        };
    }

    VectorXd beta = VectorXd::Zero(p);
    if (d.intercept && p > 0) {
        double ybar = (w.array() * y.array()).sum() / w.sum();
        if (ybar > 0.0 && ybar < 1.0) beta(0) = std::log(ybar / (1.0 - ybar));
    }
    GlmFit fit;
    fit.convergence = newton(prob, beta, opt);
    fit.coef = beta;
    VectorXd score;
    MatrixXd info;
    prob.derivs(beta, score, info);
    fit.cov = info.ldlt().solve(MatrixXd::Identity(p, p));
    fit.loglik = prob.loglik(beta) + 0.5 * beta.dot(pen * beta);
    fit.terms = d.labels;
    return fit;
}

GlmFit fit_multinomial(const DesignMatrix& d, const VectorXd& y, const VectorXd& w, std::size_t K,
                       const GlmOptions& opt) {
    const MatrixXd& x = d.x;
    const Index n = x.rows(), p = x.cols();
    const Index q = static_cast<Index>(K - 1);
    if (opt.ridge == 0.0) check_rank(x, w, d.labels);
    MatrixXd pen = MatrixXd::Zero(q * p, q * p);
    for (Index k = 0; k < q; ++k) pen.block(k * p, k * p, p, p) = ridge_matrix(p, d.intercept, opt.ridge);

    std::vector<Index> cls(static_cast<std::size_t>(n));
    for (Index i = 0; i < n; ++i) cls[static_cast<std::size_t>(i)] = static_cast<Index>(y(i));

    auto probs = [&](const VectorXd& b) {
        MatrixXd eta(n, q + 1);
        eta.col(0).setZero();
        for (Index k = 0; k < q; ++k) eta.col(k + 1) = x * b.segment(k * p, p);
        MatrixXd pr(n, q + 1);
        for (Index i = 0; i < n; ++i) {
            double m = eta.row(i).maxCoeff();
            double s = 0.0;
            for (Index k = 0; k <= q; ++k) s += std::exp(eta(i, k) - m);
            for (Index k = 0; k <= q; ++k) pr(i, k) = std::exp(eta(i, k) - m) / s;
        }
        return std::pair{eta, pr};
    };

    Problem prob;
    prob.loglik = [&](const VectorXd& b) {
        auto [eta, pr] = probs(b);
        double ll = 0.0;
        for (Index i = 0; i < n; ++i) {
            double m = eta.row(i).maxCoeff();
            double lse = m + std::log((eta.row(i).array() - m).exp().sum());
            ll += w(i) * (eta(i, cls[static_cast<std::size_t>(i)]) - lse);
        }
        return ll - 0.5 * b.dot(pen * b);
    };
    prob.derivs = [&](const VectorXd& b, VectorXd& score, MatrixXd& info) {
        auto [eta, pr] = probs(b);
        score = VectorXd::Zero(q * p);
        info = MatrixXd::Zero(q * p, q * p);
        for (Index k = 0; k < q; ++k) {
            VectorXd resid(n);
            for (Index i = 0; i < n; ++i)
                resid(i) = w(i) * ((cls[static_cast<std::size_t>(i)] == k + 1 ? 1.0 : 0.0) - pr(i, k + 1));
            score.segment(k * p, p) = x.transpose() * resid;
            for (Index l = k; l < q; ++l) {
                VectorXd v(n);
                for (Index i = 0; i < n; ++i)
                    v(i) = w(i) * pr(i, k + 1) * ((k == l ? 1.0 : 0.0) - pr(i, l + 1));
                MatrixXd blk = x.transpose() * v.asDiagonal() * x;
                info.block(k * p, l * p, p, p) = blk;
                if (l != k) info.block(l * p, k * p, p, p) = blk.transpose();
            }
        }
        score -= pen * b;
        info += pen;
    };
    if (opt.check_separation) {
        prob.after_step = [&](const VectorXd& b) {
            for (Index k = 0; k < q; ++k) {
                VectorXd bk = b.segment(k * p, p);
                if (max_abs(x * bk) > opt.separation_eta) throw_separation(x, bk, d.labels, d.intercept);
            }
        };
    }

    VectorXd beta = VectorXd::Zero(q * p);
    if (d.intercept) {
        std::vector<double> freq(K, 0.0);
        for (Index i = 0; i < n; ++i) freq[static_cast<std::size_t>(cls[static_cast<std::size_t>(i)])] += w(i);
        for (Index k = 0; k < q; ++k)
            if (freq[static_cast<std::size_t>(k + 1)] > 0 && freq[0] > 0)
                beta(k * p) = std::log(freq[static_cast<std::size_t>(k + 1)] / freq[0]);
    }
    GlmFit fit;
    fit.convergence = newton(prob, beta, opt);
    fit.coef = beta;
    VectorXd score;
    MatrixXd info;
    prob.derivs(beta, score, info);
    fit.cov = info.ldlt().solve(MatrixXd::Identity(q * p, q * p));
    fit.loglik = prob.loglik(beta) + 0.5 * beta.dot(pen * beta);
    for (Index k = 0; k < q; ++k)
        for (const auto& l : d.labels) fit.terms.push_back(std::to_string(k + 1) + ":" + l);
    return fit;
}

GlmFit fit_ordinal(const DesignMatrix& d_in, const VectorXd& y, const VectorXd& w, std::size_t K,
                   const GlmOptions& opt) {
    // cutpoints absorb the intercept
    DesignMatrix d = d_in;
    if (d.intercept) {
        DesignMatrix no_int = d;
        no_int.x = d.x.rightCols(d.x.cols() - 1);
        no_int.labels.erase(no_int.labels.begin());
        for (auto& b : no_int.blocks) b.first -= 1;
        no_int.intercept = false;
        d = std::move(no_int);
    }
    const MatrixXd& x = d.x;
    const Index n = x.rows(), p = x.cols();
    const Index q = static_cast<Index>(K - 1);
    if (opt.ridge == 0.0 && p > 0) check_rank(x, w, d.labels);
    std::vector<Index> cls(static_cast<std::size_t>(n));
    for (Index i = 0; i < n; ++i) cls[static_cast<std::size_t>(i)] = static_cast<Index>(y(i));

    auto cutpoints = [&](const VectorXd& a) {
        VectorXd th(q);
        th(0) = a(0);
        for (Index j = 1; j < q; ++j) th(j) = th(j - 1) + std::exp(a(j));
        return th;
    };
    // category probabilities and their gradients w.r.t. (theta, beta)
    auto cell = [&](const VectorXd& th, double eta, Index k, double& pk, double& ulo, double& uhi) {
        double Fhi = k < q ? logistic(th(k) - eta) : 1.0;
        double Flo = k > 0 ? logistic(th(k - 1) - eta) : 0.0;
        uhi = k < q ? logistic_density(th(k) - eta) : 0.0;
        ulo = k > 0 ? logistic_density(th(k - 1) - eta) : 0.0;
        pk = Fhi - Flo;
        if (pk <= 0.0) {
            // upper tail: use complementary form for accuracy
            double Shi = k < q ? logistic(eta - th(k)) : 0.0;
            double Slo = k > 0 ? logistic(eta - th(k - 1)) : 1.0;
            pk = Slo - Shi;
        }
    };
    // information and score in the natural (theta, beta) parameterization
    auto natural_derivs = [&](const VectorXd& th, const VectorXd& beta, VectorXd& score, MatrixXd& info) {
        const Index m = q + p;
        score = VectorXd::Zero(m);
        info = MatrixXd::Zero(m, m);
        VectorXd eta = p > 0 ? VectorXd(x * beta) : VectorXd::Zero(n);
        VectorXd g(m);
        for (Index i = 0; i < n; ++i) {
            for (Index k = 0; k <= q; ++k) {
                double pk, ulo, uhi;
                cell(th, eta(i), k, pk, ulo, uhi);
                g.setZero();
                if (k < q) g(k) += uhi;
                if (k > 0) g(k - 1) -= ulo;
                if (p > 0) g.tail(p) = -x.row(i).transpose() * (uhi - ulo);
                pk = std::max(pk, 1e-300);
                info.noalias() += (w(i) / pk) * g * g.transpose();
                if (k == cls[static_cast<std::size_t>(i)]) score += (w(i) / pk) * g;
            }
        }
        if (p > 0) {
            score.tail(p) -= opt.ridge * beta;
            info.bottomRightCorner(p, p).diagonal().array() += opt.ridge;
        }
    };
    auto jacobian = [&](const VectorXd& a) {
        MatrixXd J = MatrixXd::Zero(q + p, q + p);
        for (Index j = 0; j < q; ++j) {
            J(j, 0) = 1.0;
            for (Index m = 1; m <= j; ++m) J(j, m) = std::exp(a(m));
        }
        if (p > 0) J.bottomRightCorner(p, p).setIdentity();
        return J;
    };

    Problem prob;
    prob.loglik = [&](const VectorXd& phi) {
        VectorXd th = cutpoints(phi.head(q));
        VectorXd beta = phi.tail(p);
        VectorXd eta = p > 0 ? VectorXd(x * beta) : VectorXd::Zero(n);
        double ll = 0.0;
        for (Index i = 0; i < n; ++i) {
            double pk, ulo, uhi;
            cell(th, eta(i), cls[static_cast<std::size_t>(i)], pk, ulo, uhi);
            if (!(pk > 0.0)) return -std::numeric_limits<double>::infinity();
            ll += w(i) * std::log(pk);
        }
        return ll - 0.5 * opt.ridge * beta.squaredNorm();
    };
    prob.derivs = [&](const VectorXd& phi, VectorXd& score, MatrixXd& info) {
        VectorXd s;
        MatrixXd I;
        natural_derivs(cutpoints(phi.head(q)), phi.tail(p), s, I);
        MatrixXd J = jacobian(phi.head(q));
        score = J.transpose() * s;
        info = J.transpose() * I * J;
    };

    // start from the marginal cumulative proportions
    VectorXd phi = VectorXd::Zero(q + p);
    {
        std::vector<double> freq(K, 0.0);
        for (Index i = 0; i < n; ++i) freq[static_cast<std::size_t>(cls[static_cast<std::size_t>(i)])] += w(i);
        double total = w.sum(), cum = 0.0;
        VectorXd th(q);
        for (Index j = 0; j < q; ++j) {
            cum += freq[static_cast<std::size_t>(j)];
            double c = std::clamp(cum / total, 1e-4, 1.0 - 1e-4);
            th(j) = std::log(c / (1.0 - c));
            if (j > 0 && th(j) <= th(j - 1) + 1e-3) th(j) = th(j - 1) + 1e-3;
        }
        phi(0) = th(0);
        for (Index j = 1; j < q; ++j) phi(j) = std::log(th(j) - th(j - 1));
    }
    GlmFit fit;
    fit.convergence = newton(prob, phi, opt);
    VectorXd th = cutpoints(phi.head(q));
    fit.coef.resize(q + p);
    fit.coef << th, phi.tail(p);
    VectorXd s;
    MatrixXd I;
    natural_derivs(th, phi.tail(p), s, I);
    fit.cov = I.ldlt().solve(MatrixXd::Identity(q + p, q + p));
    fit.loglik = prob.loglik(phi) + 0.5 * opt.ridge * phi.tail(p).squaredNorm();
    for (Index j = 0; j < q; ++j) fit.terms.push_back("cut:" + std::to_string(j + 1));
    for (const auto& l : d.labels) fit.terms.push_back(l);
    fit.blocks = d.blocks;
    fit.intercept = false;
    fit.columns = d.labels;
    return fit;
}

}  // namespace

GlmFit fit_glm(const DesignMatrix& x, const Eigen::VectorXd& y, Family family, std::span<const double> weights,
               const GlmOptions& options) {
    const Index n = x.x.rows();
    if (y.size() != n) throw DataError("response length does not match the design");
    if (n == 0) throw DataError("cannot fit a model to zero rows");
    if (!y.allFinite()) throw DataError("response has missing values");
    VectorXd w = weights_or_ones(weights, n);

    std::size_t K = 2;
    if (family == Family::Multinomial || family == Family::Ordinal) {
        double ymax = y.maxCoeff(), ymin = y.minCoeff();
        if (ymin < 0 || y.unaryExpr([](double v) { return v - std::floor(v); }).cwiseAbs().maxCoeff() > 0)
            throw DataError("category response must hold non-negative integer codes");
        K = options.n_classes ? options.n_classes : static_cast<std::size_t>(ymax) + 1;
        if (static_cast<std::size_t>(ymax) >= K) throw DataError("category code exceeds the number of classes");
        if (K < 2) throw DataError("category response needs at least two classes");
        std::vector<double> count(K, 0.0);
        for (Index i = 0; i < n; ++i) count[static_cast<std::size_t>(y(i))] += 1;
        for (std::size_t k = 0; k < K; ++k)
            if (count[k] == 0) throw DataError("category " + std::to_string(k) + " has no observations");
    }

    GlmFit fit;
    switch (family) {
        case Family::Gaussian: fit = fit_gaussian(x, y, w, options); break;
        case Family::Binomial: fit = fit_binomial(x, y, w, options); break;
        case Family::Multinomial: fit = fit_multinomial(x, y, w, K, options); break;
        case Family::Ordinal: fit = fit_ordinal(x, y, w, K, options); break;
    }
    fit.family = family;
    fit.n_classes = family == Family::Gaussian ? 0 : K;
    fit.n_obs = static_cast<std::size_t>(n);
    fit.sum_weights = w.sum();
    if (family != Family::Ordinal) {
        fit.blocks = x.blocks;
        fit.intercept = x.intercept;
        fit.columns = x.labels;
    }
    // symmetrize against round-off
    fit.cov = (0.5 * (fit.cov + fit.cov.transpose())).eval();
    return fit;
}

Eigen::VectorXd GlmFit::linear_predictor(const Eigen::MatrixXd& x) const {
    if (family == Family::Multinomial || family == Family::Ordinal)
        throw ConfigError("linear_predictor is defined for binomial and gaussian fits only");
    return x * coef;
}

Eigen::MatrixXd GlmFit::class_probabilities(const Eigen::MatrixXd& x) const {
    const Index n = x.rows();
    const Index p = x.cols();
    switch (family) {
        case Family::Gaussian: throw ConfigError("class probabilities are undefined for the gaussian family");
        case Family::Binomial: {
            MatrixXd pr(n, 2);
            VectorXd eta = x * coef;
            for (Index i = 0; i < n; ++i) {
                pr(i, 1) = logistic(eta(i));
                pr(i, 0) = 1.0 - pr(i, 1);
            }
            return pr;
        }
        case Family::Multinomial: {
            const Index q = static_cast<Index>(n_classes - 1);
            MatrixXd eta(n, q + 1);
            eta.col(0).setZero();
            for (Index k = 0; k < q; ++k) eta.col(k + 1) = x * coef.segment(k * p, p);
            MatrixXd pr(n, q + 1);
            for (Index i = 0; i < n; ++i) {
                double m = eta.row(i).maxCoeff();
                pr.row(i) = (eta.row(i).array() - m).exp();
                pr.row(i) /= pr.row(i).sum();
            }
            return pr;
        }
        case Family::Ordinal: {
            const Index q = static_cast<Index>(n_classes - 1);
            VectorXd th = coef.head(q);
            VectorXd eta = p > 0 ? VectorXd(x * coef.tail(p)) : VectorXd::Zero(n);
            MatrixXd pr(n, q + 1);
            for (Index i = 0; i < n; ++i) {
                double prev = 0.0;
                for (Index k = 0; k < q; ++k) {
                    double F = logistic(th(k) - eta(i));
                    pr(i, k) = std::max(0.0, F - prev);
                    prev = std::max(prev, F);
                }
                pr(i, q) = std::max(0.0, 1.0 - prev);
            }
            return pr;
        }
    }
    return {};
}

Eigen::VectorXd predict(const GlmFit& fit, const Frame& newdata) {
    Eigen::MatrixXd x = apply_coding(fit.blocks, fit.intercept, newdata);
    switch (fit.family) {
        case Family::Gaussian: return x * fit.coef;
        case Family::Binomial: return (x * fit.coef).unaryExpr([](double e) { return logistic(e); });
        default: throw ConfigError("predict returns a single probability; use predict_proba for multi-class fits");
    }
}

Eigen::MatrixXd predict_proba(const GlmFit& fit, const Frame& newdata) {
    return fit.class_probabilities(apply_coding(fit.blocks, fit.intercept, newdata));
}

void write_fit_csv(const GlmFit& fit, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write " + path);
    csv::write_row(out, {"term", "estimate", "se"});
    for (Index j = 0; j < fit.coef.size(); ++j)
        csv::write_row(out, {fit.terms[static_cast<std::size_t>(j)], csv::format_double(fit.coef(j)),
                             csv::format_double(std::sqrt(std::max(0.0, fit.cov(j, j))))});
}

nlohmann::json fit_to_json(const GlmFit& fit) {
    nlohmann::json j;
    j["family"] = to_string(fit.family);
    j["n_obs"] = fit.n_obs;
    j["loglik"] = fit.loglik;
    j["aic"] = fit.aic();
    j["converged"] = fit.convergence.converged;
    j["iterations"] = fit.convergence.iterations;
    auto terms = nlohmann::json::array();
    for (Index k = 0; k < fit.coef.size(); ++k)
        terms.push_back({{"term", fit.terms[static_cast<std::size_t>(k)]},
                         {"estimate", fit.coef(k)},
                         {"se", std::sqrt(std::max(0.0, fit.cov(k, k)))}});
    j["terms"] = std::move(terms);
    return j;
}

}  // namespace nrba
