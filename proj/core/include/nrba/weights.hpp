#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "nrba/frames.hpp"
#include "nrba/glm.hpp"
#include "nrba/panel.hpp"
#include "nrba/stepwise.hpp"
#include "nrba/tree.hpp"

namespace nrba {

enum class Provenance { Base, CcaAttr, AcaAttr, AcaSeqAttr };

const char* to_string(Provenance p);

struct PropensitySpec {
    enum class Kind { Logistic, Tree };
    Kind kind = Kind::Logistic;
    bool stepwise = true;
    Criterion criterion = Criterion::AIC;
    TreeOptions tree;
    HistoryOptions predictors{{}, true, false};
    double clip_lo = 0.02;
    double clip_hi = 0.98;

    static PropensitySpec from_json(const nlohmann::json& j);
    nlohmann::json to_json() const;
};

struct PropensityFit {
    PropensitySpec::Kind kind = PropensitySpec::Kind::Logistic;
    std::optional<GlmFit> glm;
    std::optional<PropensityTree> tree;
    std::vector<std::string> selected;  ///< stepwise: chosen predictors
    std::vector<std::string> dropped;   ///< aliased design columns removed before fitting
    std::vector<double> propensity;     ///< clipped, one per fitted unit
    std::size_t n_fit = 0;
    std::size_t n_respond = 0;
    std::size_t clipped = 0;
    double auc = 0.5;
    bool degenerate = false;  ///< everyone responded; propensity fixed at 1

    nlohmann::json to_json() const;
};

/// Fits Pr(R = 1 | predictors) and returns clipped fitted propensities.
PropensityFit fit_propensity(const Frame& predictors, std::span<const double> response, const PropensitySpec& spec,
                             Warnings* warnings = nullptr);

struct TrimRecord {
    double quantile = 1.0;
    double cap = 0.0;
    std::size_t trimmed = 0;
};

struct WeightSet {
    int wave = 0;
    Provenance provenance = Provenance::Base;
    std::vector<std::size_t> units;  ///< respondents carrying a weight
    std::vector<double> weights;     ///< final (scaled, possibly trimmed)
    std::vector<double> unscaled;    ///< before scaling
    double target_sum = 0.0;
    std::optional<TrimRecord> trim;
    double clip_lo = 0.0, clip_hi = 1.0;
    std::vector<PropensityFit> models;  ///< models that produced this wave's factor

    double sum() const;
};

/// Base weights of the wave-t respondents scaled to n_t. With `complete_cases`
/// the set is restricted to units responding at every wave.
WeightSet base_weights(const PanelDataset& data, int wave, bool complete_cases = false);

/// Inverse propensity of R_t on baseline information, times the base weight.
WeightSet baseline_weights(const PanelDataset& data, int wave, const PropensitySpec& spec, Warnings* warnings = nullptr);

/// Inverse propensity of responding at every wave 1..T on baseline information.
WeightSet cca_weights(const PanelDataset& data, const PropensitySpec& spec, Warnings* warnings = nullptr);

/// Sequential weights for waves 1..T: the wave-t factor is the inverse of
/// Pr(R_t = 1 | R_{t-1} = 1, history through t-1). Throws DataError on
/// non-monotone input.
std::vector<WeightSet> sequential_weights(const PanelDataset& data, const PropensitySpec& spec,
                                          Warnings* warnings = nullptr);

/// Caps weights at their type-7 q-quantile, then rescales to the original sum.
WeightSet trim_weights(const WeightSet& w, double q);

/// Type-7 quantile (linear interpolation between order statistics).
double quantile(std::vector<double> values, double q);

struct QuintileSummary {
    int group = 0;  ///< 1..5 from lightest to heaviest
    std::size_t n = 0;
    double weight_min = 0, weight_max = 0;
    double outcome_mean = 0, outcome_sd = 0;
};

struct WeightDiagnostics {
    std::string label;
    std::size_t n = 0;
    double min = 0, q1 = 0, median = 0, q3 = 0, max = 0;
    double mean = 0, sd = 0;
    double loss = 0;           ///< var(w) / mean(w)^2
    double design_effect = 1;  ///< 1 + loss
    std::vector<QuintileSummary> quintiles;
};

WeightDiagnostics weight_diagnostics(std::span<const double> w, std::span<const double> outcome = {},
                                     std::string label = {});

struct Estimate {
    double est = 0, se = 0, lower = 0, upper = 0;
    std::size_t n = 0;
};

/// Ratio mean with linearization variance over clusters; CI uses 1.96.
Estimate weighted_mean(std::span<const double> y, std::span<const double> w, std::span<const std::size_t> cluster);

struct BootstrapResult {
    double se = 0;
    std::vector<double> replicates;  ///< successful replicates in replicate order
    std::vector<std::string> failures;
};

/// Cluster bootstrap: each replicate resamples clusters with replacement and
/// passes the resulting unit index list (duplicates allowed) to `estimator`.
/// Throws NumericalError when more than 5% of replicates fail.
BootstrapResult bootstrap_se(const std::function<double(std::span<const std::size_t>)>& estimator,
                             std::span<const std::size_t> cluster, std::size_t replicates, std::uint64_t seed,
                             unsigned threads = 1);

void write_weights_csv(const PanelDataset& data, const std::vector<WeightSet>& sets, const std::string& path);
void write_diagnostics_csv(const std::vector<WeightDiagnostics>& rows, const std::string& path);
void write_quintiles_csv(const std::vector<WeightDiagnostics>& rows, const std::string& path);

}  // namespace nrba
