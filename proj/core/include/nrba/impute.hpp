#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "nrba/panel.hpp"
#include "nrba/rng.hpp"

namespace nrba {

enum class ImputeMethod {
    Logistic,     ///< binary
    Multinomial,  ///< nominal
    Ordinal,      ///< proportional odds
    Tree,         ///< bootstrap CART with a random leaf donor (numeric)
    Pmm,          ///< predictive mean matching (numeric)
    Normal,       ///< Bayesian linear regression draw (numeric)
};

const char* to_string(ImputeMethod m);
ImputeMethod parse_impute_method(const std::string& s);

/// Default method for a variable: binary -> logistic, nominal -> multinomial,
/// ordinal -> ordinal, numeric covariate -> tree, outcome -> pmm.
ImputeMethod default_method(const VariableSpec& v);

struct ImputerSpec {
    /// Overrides of the default method, by variable name.
    std::map<std::string, ImputeMethod> methods;
    /// Variables (Z, X, Y) usable as predictors; empty means all.
    std::vector<std::string> predictors;
    std::size_t pmm_k = 5;
    /// Chained-equation passes within a wave for item nonresponse.
    int iterations = 15;
    /// Ridge added to every imputation model fit.
    double ridge = 1e-3;
    std::size_t tree_min_leaf = 5;
    double tree_cp = 1e-4;
    /// Categorical invariant stratifying the residual SDs of the offset; empty pools all units.
    std::string offset_group;
    std::size_t offset_min_group = 10;
    /// Fill intermittent gaps during the sequential pass instead of rejecting non-monotone input.
    bool fill_intermittent = false;

    ImputeMethod method_for(const VariableSpec& v) const;
    /// Throws ConfigError on unknown variables or methods that do not fit a kind.
    void validate(const Schema& schema) const;

    static ImputerSpec from_json(const nlohmann::json& j);
    nlohmann::json to_json() const;
};

/// Residual SD used by the offset for one copy, wave and group.
struct SigmaEntry {
    std::size_t copy = 0;
    int wave = 0;
    std::string group;
    std::size_t n = 0;  ///< respondents in the group
    double sigma = 0.0;
    bool pooled = false;  ///< fell back to the pooled SD
};

struct ImputationSet {
    std::vector<PanelDataset> copies;
    ImputerSpec spec;
    std::uint64_t seed = 0;
    /// k_t for waves 1..T (index t-1); all zero under MAR.
    std::vector<double> offsets;
    std::vector<SigmaEntry> sigmas;
    std::vector<std::string> warnings;

    std::size_t m() const { return copies.size(); }
    nlohmann::json manifest() const;
};

/// Chained-equations imputation of covariate cells missing in responding waves.
/// Visits incomplete variables by ascending missingness (ties in declaration
/// order), `spec.iterations` passes per wave. Returns one completed copy.
PanelDataset impute_item_nonresponse(const PanelDataset& data, const ImputerSpec& spec, Rng& rng,
                                     Warnings* warnings = nullptr);

/// Sequential wave-by-wave multiple imputation of (X_t, Y_t) for nonrespondents.
/// `offsets` holds k_t for waves 1..T; a single value applies to every wave and
/// an empty span means MAR. Copies are independent substreams of `seed`.
ImputationSet sequential_mi(const PanelDataset& data, const ImputerSpec& spec, std::size_t m, std::uint64_t seed,
                            std::span<const double> offsets = {}, unsigned threads = 1);

/// Single stochastic fill of intermittent gaps (waves missed by units that
/// respond later), in wave order. The result is monotone.
PanelDataset monotonize_by_imputation(const PanelDataset& data, const ImputerSpec& spec, std::uint64_t seed,
                                      Warnings* warnings = nullptr);

inline double apply_offset(double draw, double k, double sigma) { return k == 0.0 ? draw : draw + k * sigma; }

/// For each target, the k donors with the nearest predicted means; ties by donor
/// position. Uses the whole pool when it is smaller than k.
std::vector<std::vector<std::size_t>> pmm_donor_sets(std::span<const double> donor_pred,
                                                     std::span<const double> target_pred, std::size_t k);

/// Copies one uniformly chosen donor value from each target's donor set.
std::vector<double> pmm_draw(std::span<const double> donor_pred, std::span<const double> donor_values,
                             std::span<const double> target_pred, std::size_t k, Rng& rng,
                             Warnings* warnings = nullptr);

/// m CSV copies named `<prefix>_<j>.csv` (j = 1..m) plus `<prefix>_manifest.json`.
void write_imputations(const ImputationSet& set, const std::string& dir, const std::string& prefix = "imputed");

}  // namespace nrba
