#include "nrba/pool.hpp"

#include <cmath>
#include <limits>
#include <string>

#include <boost/math/distributions/normal.hpp>
#include <boost/math/distributions/students_t.hpp>

#include "nrba/error.hpp"

namespace nrba {

PooledEstimate pool(std::span<const double> estimates, std::span<const double> variances, double level) {
    const std::size_t m = estimates.size();
    if (m < 2) throw ConfigError("pooling needs at least 2 imputations, got " + std::to_string(m));
    if (variances.size() != m) throw DataError("pooling needs one within-imputation variance per estimate");
    if (!(level > 0.0 && level < 1.0)) throw ConfigError("confidence level must lie in (0, 1)");
    const double md = static_cast<double>(m);
    PooledEstimate p;
    p.m = m;
    for (std::size_t j = 0; j < m; ++j) {
        p.qbar += estimates[j];
        p.within += variances[j];
    }
    p.qbar /= md;
    p.within /= md;
    for (double q : estimates) p.between += (q - p.qbar) * (q - p.qbar);
    p.between /= md - 1.0;
    const double inflated = (1.0 + 1.0 / md) * p.between;
    p.total = p.within + inflated;
    p.se = std::sqrt(p.total);
    double crit;
    if (inflated > 0.0) {
        double r = 1.0 + p.within / inflated;
        p.df = (md - 1.0) * r * r;
        crit = boost::math::quantile(boost::math::students_t(p.df), 0.5 + level / 2.0);
    } else {
        p.df = std::numeric_limits<double>::infinity();
        crit = boost::math::quantile(boost::math::normal(), 0.5 + level / 2.0);
    }
    p.lower = p.qbar - crit * p.se;
    p.upper = p.qbar + crit * p.se;
    return p;
}

}  // namespace nrba
