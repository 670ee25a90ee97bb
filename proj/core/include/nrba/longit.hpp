#pragma once

#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json_fwd.hpp>

#include "nrba/design.hpp"
#include "nrba/panel.hpp"

namespace nrba {

/// Fixed-effect terms of the analysis model. Term syntax:
///   `x`        main effect (dummies for categorical variables, raw value for numeric)
///   `std(x)`   numeric x standardized over the included rows
///   `std(x)^2` square of the standardized value
///   `wave`     wave indicators against the reference wave
///   `a:b`      products of the columns of two main effects
struct AnalysisFormula {
    std::string outcome;  ///< empty means the schema outcome
    std::vector<std::string> terms;
    /// Reference level label per categorical variable (and "wave"); default is the first level.
    std::map<std::string, std::string> reference;

    /// Throws ConfigError on unknown variables or interactions without their main effects.
    void validate(const Schema& schema) const;
    static AnalysisFormula from_json(const nlohmann::json& j);
    nlohmann::json to_json() const;
};

/// Growth-curve terms for the cohort schema: standardized age and its square,
/// sex, race, poverty, school percent non-white, school type, wave and wave:race.
AnalysisFormula default_formula();

enum class RowSet {
    Available,  ///< rows with R_t = 1 and every formula variable observed
    Complete,   ///< all rows of units observed at every wave
    All,        ///< every (unit, wave); the data must be complete
};

struct LongDesign {
    DesignMatrix x;
    Eigen::VectorXd y;
    std::vector<std::size_t> unit;  ///< dataset unit index per row
    std::vector<int> wave;
    /// Standardization constants per std() variable: (mean, sd).
    std::map<std::string, std::pair<double, double>> scaling;
    std::vector<std::string> dropped;  ///< columns removed as empty or aliased

    std::size_t rows() const { return unit.size(); }
};

/// Long-format design for the analysis model. Rows are ordered by unit, then wave.
/// Empty or aliased columns are dropped with a warning.
LongDesign build_design(const PanelDataset& data, const AnalysisFormula& formula, RowSet rows = RowSet::Available,
                        Warnings* warnings = nullptr);

struct MixedOptions {
    bool reml = false;
    /// Pin the random-intercept variance at zero (independence model).
    bool zero_variance = false;
    double tol = 1e-10;  ///< relative log-likelihood change
    int max_iter = 200;
    /// Observation weights enter raised to this power.
    double weight_power = 1.0;
};

struct MixedFit {
    std::vector<std::string> terms;
    Eigen::VectorXd coef;
    /// Model-based for unweighted fits, unit-clustered sandwich for weighted fits.
    Eigen::MatrixXd cov;
    double sigma2_u = 0.0;  ///< random-intercept variance
    double sigma2 = 0.0;    ///< residual variance
    double loglik = 0.0;    ///< (pseudo-, restricted) log-likelihood at the optimum
    bool boundary = false;  ///< random-intercept variance pinned at zero
    bool weighted = false;
    std::size_t n_obs = 0;
    std::size_t n_units = 0;
    int iterations = 0;
    /// Best profile log-likelihood after each optimizer step.
    std::vector<double> trace;
};

/// Random-intercept linear mixed model by ML (or REML), profiled over the
/// variance ratio. Optional observation weights give the pseudo-likelihood in
/// which each observation's conditional density is raised to its weight.
MixedFit fit_mixed(const DesignMatrix& x, const Eigen::VectorXd& y, std::span<const std::size_t> unit,
                   std::span<const double> weights = {}, const MixedOptions& options = {});

enum class WorkingCorrelation { Independence, Ar1 };

struct GeeOptions {
    WorkingCorrelation working = WorkingCorrelation::Ar1;
    double tol = 1e-8;
    int max_iter = 100;
};

struct GeeFit {
    std::vector<std::string> terms;
    Eigen::VectorXd coef;
    Eigen::MatrixXd cov;  ///< robust sandwich
    WorkingCorrelation working = WorkingCorrelation::Ar1;
    double rho = 0.0;
    double scale = 0.0;
    bool weighted = false;
    bool rho_clipped = false;
    int iterations = 0;
    std::size_t n_obs = 0;
    std::size_t n_units = 0;
};

/// Gaussian GEE with identity link. AR(1) correlation is rho^|wave gap|; rho is the
/// lag-1 moment estimate over consecutive observed waves within units.
GeeFit fit_gee(const DesignMatrix& x, const Eigen::VectorXd& y, std::span<const std::size_t> unit,
               std::span<const int> wave, std::span<const double> weights = {}, const GeeOptions& options = {},
               Warnings* warnings = nullptr);

nlohmann::json mixed_to_json(const MixedFit& fit);
nlohmann::json gee_to_json(const GeeFit& fit);

}  // namespace nrba
