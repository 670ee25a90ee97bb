#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "nrba/panel.hpp"

namespace nrba {

enum class Mechanism { MCAR, MAR, MNAR };

const char* to_string(Mechanism m);

/// Random-intercept growth model for the outcome:
///   Y_it = intercept + wave_effects[t] + sex_effect*sex + race_effects[g] + race_slopes[g]*t
///          + age_effect*zage_i + pov_effects[pov_it] + pnw_effect*pnw_it + sty_effect*sty_it
///          + b_i + e_it,  b_i ~ N(0, intercept_sd^2),  e_it AR(1) with SD residual_sd*race_residual_scale[g].
struct GrowthModel {
    double intercept = 50.0;
    std::vector<double> wave_effects;  ///< length T+1; default 8*t
    double sex_effect = 1.0;
    std::vector<double> race_effects{0.0, -4.0, -3.0, 2.0, -1.0};
    std::vector<double> race_slopes{0.0, -0.5, 0.3, 0.2, 0.0};
    double age_effect = 1.5;
    std::vector<double> pov_effects{0.0, -2.0, -4.0};
    double pnw_effect = -3.0;
    double sty_effect = 1.0;
    double intercept_sd = 6.0;
    double residual_sd = 5.0;
    double ar1 = 0.0;
    std::vector<double> race_residual_scale{1.0, 1.0, 1.0, 1.0, 1.0};
};

/// Wave-by-wave logistic dropout hazard among units still present:
///   logit h_t = logit(rates[t-1]) + race_coef[g] + sex_coef*sex
///               + lag_coef*(Y_{t-1} - mean_{t-1})/sd_marginal + delta*e_it/residual_sd
/// MCAR uses only the rate. For MNAR, `shift` additionally moves the outcome
/// at the dropout wave by shift*sd_cond(g,t), the residual SD of Y_t given the
/// unit's history within race group g; later waves are redrawn from the model
/// conditional on the shifted value.
struct DropoutModel {
    Mechanism mechanism = Mechanism::MCAR;
    std::vector<double> rates;  ///< length T
    std::vector<double> race_coef{0.0, 0.0, 0.0, 0.0, 0.0};
    double sex_coef = 0.0;
    double lag_coef = 0.0;
    double delta = 0.0;
    double shift = 0.0;
};

struct CohortScenario {
    std::size_t n = 500;
    int last_wave = 5;
    std::size_t clusters = 50;
    std::uint64_t seed = 1;
    bool covariates = true;
    double sex_p = 0.5;
    std::vector<std::string> race_levels{"White", "Black", "Hispanic", "Asian", "Other"};
    std::vector<double> race_probs{0.5, 0.14, 0.24, 0.07, 0.05};
    std::vector<double> pov_probs{0.6, 0.25, 0.15};
    double pov_stay = 0.85;
    double age_mean = 5.6;
    double age_sd = 0.35;
    double pnw_a = 2.0, pnw_b = 5.0;  ///< Beta shape of the school percent-non-white
    double sty_p = 0.3;
    double base_weight_cv = 0.5;  ///< coefficient of variation of lognormal base weights; 0 gives constant 1
    double intermittent_rate = 0.0;  ///< probability a dropout returns at one later wave
    double item_missing_rate = 0.0;  ///< per-cell probability for covariates in responding waves
    GrowthModel growth;
    DropoutModel dropout;

    /// Throws ConfigError listing every invalid field.
    void validate() const;
    static CohortScenario from_json(const nlohmann::json& j);
    static CohortScenario load(const std::string& path);
    nlohmann::json to_json() const;

    /// Expected outcome mean at each wave under the growth model (no dropout).
    std::vector<double> analytic_means() const;
    /// SD of b_i + e_it; scales the lagged outcome in the dropout hazard.
    double marginal_sd() const;
    /// SD of Y_t given Y_0..Y_{t-1} and covariates within race group g.
    double conditional_sd(std::size_t group, int wave) const;
};

struct TruthRecord {
    std::vector<double> analytic_means;
    std::vector<double> complete_means;  ///< unweighted means of the complete data per wave
    std::vector<double> complete_weighted_means;  ///< base-weighted
    PanelDataset complete;
    std::vector<int> dropout_wave;  ///< first wave with R = 0, T+1 if none
    nlohmann::json to_json() const;
};

struct SimulationResult {
    PanelDataset data;
    TruthRecord truth;
};

Schema cohort_schema(const CohortScenario& s);

/// Pure function of the scenario (including its seed); thread count does not
/// change the output.
SimulationResult simulate_cohort(const CohortScenario& s, unsigned threads = 1);

}  // namespace nrba
