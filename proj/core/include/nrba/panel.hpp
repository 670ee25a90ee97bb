#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "nrba/error.hpp"

namespace nrba {

enum class VarKind { Numeric, Binary, Nominal, Ordinal };

enum class Role {
    Id,          ///< unit identifier
    Cluster,     ///< variance cluster id
    BaseWeight,  ///< sampling (base) weight
    Invariant,   ///< time-invariant covariate Z
    Covariate,   ///< time-varying covariate X_t
    Outcome,     ///< key survey outcome Y_t
};

const char* to_string(VarKind kind);
const char* to_string(Role role);
VarKind parse_kind(const std::string& s);
Role parse_role(const std::string& s);

inline bool is_categorical(VarKind k) { return k == VarKind::Nominal || k == VarKind::Ordinal || k == VarKind::Binary; }

inline constexpr double kMissing = std::numeric_limits<double>::quiet_NaN();

inline bool is_missing(double v) { return std::isnan(v); }

struct VariableSpec {
    std::string name;
    VarKind kind = VarKind::Numeric;
    Role role = Role::Invariant;
    /// Level labels for categorical kinds; the first level is the reference.
    /// Binary variables default to {"0", "1"}.
    std::vector<std::string> levels;

    bool time_varying() const { return role == Role::Covariate || role == Role::Outcome; }
};

struct Schema {
    std::vector<VariableSpec> variables;
    /// Cell strings treated as missing. The empty string is always missing.
    std::vector<std::string> missing_tokens{"NA"};
    /// Last wave index T; inferred from the CSV header when negative.
    int last_wave = -1;

    /// Throws ConfigError when the invariants do not hold.
    void validate() const;

    std::size_t index_of(const std::string& name) const;  ///< throws ConfigError if absent
    std::optional<std::size_t> find(const std::string& name) const;
    std::size_t outcome_index() const;
    std::size_t id_index() const;
    std::size_t cluster_index() const;
    std::size_t base_weight_index() const;
    std::vector<std::size_t> indices_with_role(Role role) const;

    static Schema from_json(const nlohmann::json& j);
    static Schema load(const std::string& path);
    nlohmann::json to_json() const;
};

/// Wide-format longitudinal table: units x waves 0..T x variables.
///
/// Response R_it is defined as observedness of the outcome Y_it. Categorical
/// cells hold level codes (0-based) as doubles; NaN marks a missing cell.
class PanelDataset {
public:
    PanelDataset() = default;
    PanelDataset(Schema schema, std::size_t n_units, int last_wave);

    const Schema& schema() const { return schema_; }
    std::size_t n_units() const { return ids_.size(); }
    int last_wave() const { return last_wave_; }
    int n_waves() const { return last_wave_ + 1; }

    const std::vector<std::string>& unit_ids() const { return ids_; }
    const std::vector<std::string>& cluster_ids() const { return clusters_; }
    std::span<const double> base_weights() const { return base_weights_; }
    /// Dense 0-based cluster index per unit, in order of first appearance.
    std::vector<std::size_t> cluster_codes() const;

    double value(std::size_t unit, std::size_t var, int wave = 0) const {
        const auto& col = cells_[var];
        return schema_.variables[var].time_varying() ? col[unit * n_waves() + wave] : col[unit];
    }
    void set_value(std::size_t unit, std::size_t var, int wave, double v) {
        auto& col = cells_[var];
        if (schema_.variables[var].time_varying())
            col[unit * n_waves() + wave] = v;
        else
            col[unit] = v;
    }
    double outcome(std::size_t unit, int wave) const { return value(unit, outcome_, wave); }
    bool responded(std::size_t unit, int wave) const { return !is_missing(outcome(unit, wave)); }

    void set_unit_id(std::size_t unit, std::string id) { ids_[unit] = std::move(id); }
    void set_cluster(std::size_t unit, std::string id) { clusters_[unit] = std::move(id); }
    void set_base_weight(std::size_t unit, double w) { base_weights_[unit] = w; }

    /// True when every unit's response vector is non-increasing in wave.
    bool is_monotone() const;
    /// Last wave a unit responded at before its first nonresponse (T if none).
    int last_consecutive_wave(std::size_t unit) const;
    /// Count of units with R_t = 1.
    std::size_t respondents(int wave) const;

    /// New dataset holding the given units (duplicates allowed) in order.
    /// Duplicated units get a "#k" suffix on their id so ids stay unique.
    PanelDataset subset(std::span<const std::size_t> units) const;

    bool operator==(const PanelDataset& other) const;

private:
    Schema schema_;
    int last_wave_ = 0;
    std::size_t outcome_ = 0;
    std::vector<std::string> ids_;
    std::vector<std::string> clusters_;
    std::vector<double> base_weights_;
    std::vector<std::vector<double>> cells_;  // per schema variable
};

/// Column name for a variable at a wave in the wide layout.
std::string wide_column(const VariableSpec& var, int wave);

/// Reads a wide CSV (time-varying columns named `<var>_w<t>`). Units missing the
/// baseline outcome are dropped with a warning.
PanelDataset load_panel(const std::string& csv_path, const Schema& schema, Warnings* warnings = nullptr);
PanelDataset parse_panel(std::string_view csv_text, const Schema& schema, Warnings* warnings = nullptr);

/// Writes the wide CSV layout read by load_panel. Missing cells are empty.
void write_panel(const PanelDataset& data, const std::string& csv_path);
std::string panel_to_csv(const PanelDataset& data);

// ---------------------------------------------------------------------------
// Missingness patterns

struct PatternCount {
    std::string pattern;  ///< one character per wave, '1' = responded
    std::size_t count = 0;
};

struct WaveRate {
    int wave = 0;
    std::string group;  ///< empty for the overall row
    std::string level;
    std::size_t base = 0;           ///< units in the group at wave 0
    std::size_t nonrespondents = 0;
    double rate = 0.0;
};

struct ItemRate {
    std::string variable;
    int wave = 0;
    std::size_t respondents = 0;
    std::size_t missing = 0;
    double rate = 0.0;
};

struct PatternSummary {
    std::vector<PatternCount> patterns;
    bool monotone = true;
    std::vector<WaveRate> wave_rates;   ///< overall, waves 1..T
    std::vector<WaveRate> group_rates;  ///< per (wave, level) when grouped
    std::vector<ItemRate> item_rates;
};

PatternSummary summarize_patterns(const PanelDataset& data, const std::optional<std::string>& group_by = {});

void write_pattern_csv(const PatternSummary& s, const std::string& path);
void write_rates_csv(const PatternSummary& s, const std::string& path);
void write_item_rates_csv(const PatternSummary& s, const std::string& path);

struct MonotonizeReport {
    struct Entry {
        std::string unit_id;
        int first_gap = 0;           ///< first wave with R = 0
        std::vector<int> masked_waves;  ///< later responding waves that were masked
    };
    std::vector<Entry> entries;
    std::size_t masked_cells = 0;
};

/// Drop mode: for units that return after missing a wave, masks every wave after
/// the first gap. The result is monotone.
PanelDataset monotonize(const PanelDataset& data, MonotonizeReport* report = nullptr);

}  // namespace nrba
