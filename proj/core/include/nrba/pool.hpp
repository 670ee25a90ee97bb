#pragma once

#include <cstddef>
#include <span>

namespace nrba {

/// Combined multiple-imputation estimate.
struct PooledEstimate {
    double qbar = 0.0;   ///< mean of the point estimates
    double within = 0.0; ///< mean within-imputation variance
    double between = 0.0;
    double total = 0.0;  ///< within + (1 + 1/m) between
    double df = 0.0;     ///< infinite when between is zero
    double se = 0.0;
    double lower = 0.0;
    double upper = 0.0;
    std::size_t m = 0;
};

/// Rubin's combining rules with a t-based interval. Throws ConfigError for m < 2.
PooledEstimate pool(std::span<const double> estimates, std::span<const double> variances, double level = 0.95);

}  // namespace nrba
