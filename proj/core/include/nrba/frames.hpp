#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "nrba/design.hpp"
#include "nrba/panel.hpp"

namespace nrba {

struct HistoryOptions {
    /// Schema variables to draw on (Z, X or Y roles). Empty means all of them.
    std::vector<std::string> variables;
    bool include_base_weight = false;
    /// Also take the covariates X (not Y) of wave through+1.
    bool current_covariates = false;
};

/// Predictor columns for the given units: invariants Z, then for each wave
/// s <= through the covariates X_s and the outcome Y_s, named `<var>_w<s>`.
/// Throws DataError naming the first missing cell.
Frame history_frame(const PanelDataset& data, std::span<const std::size_t> units, int through,
                    const HistoryOptions& options = {});

/// One column of a dataset for the given units.
Column panel_column(const PanelDataset& data, std::span<const std::size_t> units, std::size_t var, int wave);

/// Units 0..n-1 satisfying a predicate.
template <class Pred>
std::vector<std::size_t> units_where(const PanelDataset& data, Pred pred) {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < data.n_units(); ++i)
        if (pred(i)) out.push_back(i);
    return out;
}

std::vector<std::size_t> all_units(const PanelDataset& data);

}  // namespace nrba
