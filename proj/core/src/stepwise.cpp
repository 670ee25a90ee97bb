#include "nrba/stepwise.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace nrba {

const char* to_string(Criterion c) { return c == Criterion::AIC ? "AIC" : "BIC"; }

Criterion parse_criterion(const std::string& s) {
    if (s == "AIC" || s == "aic") return Criterion::AIC;
    if (s == "BIC" || s == "bic") return Criterion::BIC;
    throw ConfigError("unknown selection criterion '" + s + "' (expected AIC or BIC)");
}

double criterion_value(const GlmFit& fit, Criterion c) { return c == Criterion::AIC ? fit.aic() : fit.bic(); }

StepwiseResult stepwise_select(const DesignMatrix& x, const Eigen::VectorXd& y, Family family,
                               std::span<const double> weights, const std::vector<std::size_t>& scope_in,
                               const StepwiseOptions& options) {
    std::vector<std::size_t> scope = scope_in;
    std::sort(scope.begin(), scope.end());
    scope.erase(std::unique(scope.begin(), scope.end()), scope.end());
    for (std::size_t b : scope)
        if (b >= x.blocks.size()) throw ConfigError("stepwise scope refers to a block that does not exist");

    std::vector<bool> in_scope(x.blocks.size(), false);
    for (std::size_t b : scope) in_scope[b] = true;
    std::vector<bool> active(x.blocks.size(), false);
    for (std::size_t b = 0; b < x.blocks.size(); ++b) active[b] = !in_scope[b];
    for (std::size_t b : options.start) {
        if (b >= x.blocks.size()) throw ConfigError("stepwise start refers to a block that does not exist");
        active[b] = true;
    }

    auto fit_active = [&](const std::vector<bool>& act) {
        std::vector<std::size_t> ids;
        for (std::size_t b = 0; b < act.size(); ++b)
            if (act[b]) ids.push_back(b);
        return fit_glm(select_blocks(x, ids), y, family, weights, options.glm);
    };

    StepwiseResult res;
    res.fit = fit_active(active);
    res.criterion = criterion_value(res.fit, options.criterion);

    for (int step = 0; step < options.max_steps; ++step) {
        double best = res.criterion;
        std::size_t best_block = x.blocks.size();
        GlmFit best_fit;
        for (std::size_t b : scope) {
            std::vector<bool> trial = active;
            trial[b] = !trial[b];
            GlmFit f;
            try {
                f = fit_active(trial);
            } catch (const NumericalError& e) {
                res.skipped.push_back(std::string(trial[b] ? "+" : "-") + x.blocks[b].source + ": " + e.what());
                continue;
            }
            double c = criterion_value(f, options.criterion);
            if (c < best - 1e-10 * (1.0 + std::abs(best))) {
                best = c;
                best_block = b;
                best_fit = std::move(f);
            }
        }
        if (best_block == x.blocks.size()) break;
        active[best_block] = !active[best_block];
        std::ostringstream line;
        line << (active[best_block] ? "+" : "-") << x.blocks[best_block].source << " " << best;
        res.trace.push_back(line.str());
        res.fit = std::move(best_fit);
        res.criterion = best;
    }
    for (std::size_t b : scope)
        if (active[b]) res.selected.push_back(b);
    return res;
}

}  // namespace nrba
