#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json_fwd.hpp>

#include "nrba/design.hpp"

namespace nrba {

enum class Family {
    Binomial,     ///< logit link, y in {0,1}
    Multinomial,  ///< baseline-category logit, first class is the reference
    Ordinal,      ///< proportional odds, P(y <= j) = F(cut_j - x'b)
    Gaussian,     ///< identity link
};

const char* to_string(Family f);

struct GlmOptions {
    double tol = 1e-8;  ///< relative max-norm of the parameter step
    int max_iter = 100;
    /// Quadratic penalty on non-intercept coefficients. Zero gives plain ML.
    double ridge = 0.0;
    /// Raise SeparationError when |eta| exceeds separation_eta on any case.
    bool check_separation = true;
    double separation_eta = 30.0;
    /// Number of classes for multinomial/ordinal; inferred from y when zero.
    std::size_t n_classes = 0;
};

struct ConvergenceRecord {
    bool converged = false;
    int iterations = 0;
    double step_norm = 0.0;
    std::vector<double> loglik_trace;
};

struct GlmFit {
    Family family = Family::Binomial;
    /// Parameter labels aligned with `coef`.
    /// Multinomial: class-major blocks "k:<column>" for classes 1..K-1.
    /// Ordinal: cutpoints "cut:<j>" first, then slopes (no intercept).
    std::vector<std::string> terms;
    Eigen::VectorXd coef;
    Eigen::MatrixXd cov;  ///< inverse expected information at the optimum
    std::size_t n_classes = 2;
    double loglik = 0.0;
    double dispersion = 1.0;  ///< gaussian residual variance (df-corrected)
    std::size_t n_obs = 0;
    double sum_weights = 0.0;
    ConvergenceRecord convergence;

    // coding needed to predict on new frames
    std::vector<CodingBlock> blocks;
    bool intercept = false;
    std::vector<std::string> columns;  ///< design columns the fit used

    std::size_t n_params() const { return static_cast<std::size_t>(coef.size()) + (family == Family::Gaussian ? 1 : 0); }
    double aic() const { return -2.0 * loglik + 2.0 * static_cast<double>(n_params()); }
    double bic() const;

    /// x * coef for binomial/gaussian (x laid out like the fitted design).
    Eigen::VectorXd linear_predictor(const Eigen::MatrixXd& x) const;
    /// Class probabilities, one row per case (binomial gives two columns).
    Eigen::MatrixXd class_probabilities(const Eigen::MatrixXd& x) const;
};

/// Fits a GLM by Fisher scoring / Newton-Raphson (closed-form weighted least
/// squares for the gaussian family). `weights` are positive case weights; an
/// empty span means unit weights.
///
/// Throws ConvergenceError (with the log-likelihood trace), SeparationError
/// (naming the columns driving the divergent linear predictor) or
/// SingularError (naming collinear columns).
GlmFit fit_glm(const DesignMatrix& x, const Eigen::VectorXd& y, Family family, std::span<const double> weights = {},
               const GlmOptions& options = {});

/// Fitted response probability P(y = 1) for binomial fits, mean for gaussian.
/// Multinomial and ordinal fits need predict_proba.
Eigen::VectorXd predict(const GlmFit& fit, const Frame& newdata);
Eigen::MatrixXd predict_proba(const GlmFit& fit, const Frame& newdata);

/// Fit summaries: one row per parameter.
void write_fit_csv(const GlmFit& fit, const std::string& path);
nlohmann::json fit_to_json(const GlmFit& fit);

inline double logistic(double eta) {
    return eta >= 0 ? 1.0 / (1.0 + std::exp(-eta)) : std::exp(eta) / (1.0 + std::exp(eta));
}

}  // namespace nrba
