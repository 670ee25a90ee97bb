#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "nrba/impute.hpp"
#include "nrba/longit.hpp"
#include "nrba/weights.hpp"

namespace nrba {

/// Adjustment approaches compared by the toolkit.
enum class Method {
    CCA,
    ACA,
    CcaBaseW,
    AcaBaseW,
    CcaAttrW,
    AcaAttrW,
    AcaSeqAttrW,
    MiSeq,
    ML,
    WML,
    GEE,
    WGEE,
    MiOffset,
};

const char* to_string(Method m);
/// Throws ConfigError listing the valid tags.
Method parse_method(const std::string& tag);
std::vector<std::string> method_tags();

/// Mean methods produce per-wave (and subgroup) means; model methods produce
/// analysis-model coefficients. The MI methods produce both.
bool produces_means(Method m);
bool produces_coefficients(Method m);
bool needs_imputations(Method m);
/// Weight provenance a method reads, if any.
std::optional<Provenance> needed_weights(Method m);

struct EstimateRow {
    Method method = Method::CCA;
    double k = 0.0;  ///< offset for MI-offset rows
    std::string estimand;  ///< "mean" or a model term
    int wave = -1;         ///< mean rows; -1 for coefficients
    std::string group;     ///< subgroup variable, empty overall
    std::string level;
    double est = 0, se = 0, lower = 0, upper = 0;
    double df = 0;  ///< infinity for normal-theory intervals
    std::size_t n = 0;
    std::string se_type;  ///< linearization, model, sandwich or rubin

    /// Method tag, with the offset for MI-offset rows.
    std::string label() const;
    /// Estimand with wave and subgroup, e.g. "mean:w3:race=Black" or "coef:wave[3]".
    std::string key() const;
};

struct EstimateTable {
    std::vector<EstimateRow> rows;
    std::vector<std::string> warnings;

    std::vector<const EstimateRow*> select(Method m, const std::string& estimand) const;
};

struct EstimateInputs {
    const PanelDataset* data = nullptr;
    /// Attrition weights of any provenance; looked up by (provenance, wave).
    std::vector<WeightSet> weights;
    const ImputationSet* mi = nullptr;
    /// One set per offset schedule; each is labelled by its first nonzero k.
    std::vector<const ImputationSet*> offset_sets;
};

struct EstimateRequest {
    std::vector<Method> methods;
    /// Categorical invariants for subgroup means.
    std::vector<std::string> subgroups;
    AnalysisFormula formula = default_formula();
    MixedOptions mixed;
    GeeOptions gee;
    unsigned threads = 1;
};

/// One row per (method, estimand). Rows are ordered by method, then by offset
/// in input order, then by estimand. Throws ConfigError when a method's inputs
/// are missing.
EstimateTable estimate_table(const EstimateInputs& inputs, const EstimateRequest& request);

/// Observation weights for the analysis-model rows: base weights at wave 0,
/// sequential weights at later waves. Throws DataError for rows without a weight.
std::vector<double> observation_weights(const LongDesign& design, const PanelDataset& data,
                                        const std::vector<WeightSet>& weights);

/// Columns: method, estimand, est, se, lower, upper.
void write_estimates_csv(const EstimateTable& t, const std::string& path);
/// Coefficient rows with wave and race parsed from the term: method, term, wave, group, est, se, lower, upper.
void write_coefficients_csv(const EstimateTable& t, const std::string& path);
/// Subgroup-by-wave means: method, wave, group, level, est, se, lower, upper.
void write_subgroup_means_csv(const EstimateTable& t, const std::string& path);

}  // namespace nrba
