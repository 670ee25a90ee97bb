#include "nrba/frames.hpp"

#include <algorithm>
#include <numeric>

namespace nrba {

Column panel_column(const PanelDataset& data, std::span<const std::size_t> units, std::size_t var, int wave) {
    const auto& spec = data.schema().variables[var];
    Column c;
    c.name = wide_column(spec, wave);
    c.kind = spec.kind;
    c.levels = spec.levels;
    c.values.reserve(units.size());
    for (std::size_t i : units) c.values.push_back(data.value(i, var, wave));
    return c;
}

std::vector<std::size_t> all_units(const PanelDataset& data) {
    std::vector<std::size_t> u(data.n_units());
    std::iota(u.begin(), u.end(), 0);
    return u;
}

Frame history_frame(const PanelDataset& data, std::span<const std::size_t> units, int through,
                    const HistoryOptions& options) {
    const Schema& schema = data.schema();
    auto wanted = [&](const VariableSpec& v) {
        return options.variables.empty() ||
               std::find(options.variables.begin(), options.variables.end(), v.name) != options.variables.end();
    };
    for (const auto& name : options.variables) {
        const auto& v = schema.variables[schema.index_of(name)];
        if (v.role != Role::Invariant && v.role != Role::Covariate && v.role != Role::Outcome)
            throw ConfigError("predictor '" + name + "' must be an invariant, covariate or outcome variable");
    }
    Frame f;
    auto add = [&](std::size_t var, int wave) {
        Column c = panel_column(data, units, var, wave);
        for (std::size_t k = 0; k < c.values.size(); ++k)
            if (is_missing(c.values[k]))
                throw DataError("predictor '" + c.name + "' is missing for unit '" + data.unit_ids()[units[k]] +
                                "'; impute item nonresponse first");
        f.columns.push_back(std::move(c));
    };
    for (std::size_t v = 0; v < schema.variables.size(); ++v)
        if (schema.variables[v].role == Role::Invariant && wanted(schema.variables[v])) add(v, 0);
    if (options.include_base_weight) {
        Column c{schema.variables[schema.base_weight_index()].name, VarKind::Numeric, {}, {}};
        for (std::size_t i : units) c.values.push_back(data.base_weights()[i]);
        f.columns.push_back(std::move(c));
    }
    for (int s = 0; s <= through; ++s) {
        for (std::size_t v = 0; v < schema.variables.size(); ++v)
            if (schema.variables[v].role == Role::Covariate && wanted(schema.variables[v])) add(v, s);
        if (wanted(schema.variables[schema.outcome_index()])) add(schema.outcome_index(), s);
    }
    if (options.current_covariates && through + 1 <= data.last_wave()) {
        for (std::size_t v = 0; v < schema.variables.size(); ++v)
            if (schema.variables[v].role == Role::Covariate && wanted(schema.variables[v])) add(v, through + 1);
    }
    return f;
}

}  // namespace nrba
