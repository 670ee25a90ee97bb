#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "nrba/glm.hpp"

namespace nrba {

enum class Criterion { AIC, BIC };

const char* to_string(Criterion c);
Criterion parse_criterion(const std::string& s);

struct StepwiseOptions {
    Criterion criterion = Criterion::AIC;
    GlmOptions glm;
    /// Scope blocks in the starting model. Empty starts from the base model.
    std::vector<std::size_t> start;
    int max_steps = 200;
};

struct StepwiseResult {
    GlmFit fit;
    std::vector<std::size_t> selected;  ///< scope blocks in the final model, ascending
    double criterion = 0.0;
    /// One line per accepted move, e.g. "+race 1234.5".
    std::vector<std::string> trace;
    /// Candidate fits that failed (separation etc.) and were skipped.
    std::vector<std::string> skipped;
};

double criterion_value(const GlmFit& fit, Criterion c);

/// Bidirectional stepwise search over the blocks listed in `scope` (indices into
/// x.blocks). Blocks outside the scope, and the intercept, are always kept.
/// A move is taken only when it strictly lowers the criterion; among equal
/// moves the earliest block wins.
StepwiseResult stepwise_select(const DesignMatrix& x, const Eigen::VectorXd& y, Family family,
                               std::span<const double> weights, const std::vector<std::size_t>& scope,
                               const StepwiseOptions& options = {});

}  // namespace nrba
