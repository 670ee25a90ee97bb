#include "nrba/auc.hpp"

#include <algorithm>
#include <numeric>
#include <vector>

#include "nrba/error.hpp"

namespace nrba {

double auc(std::span<const double> scores, std::span<const double> labels) {
    if (scores.size() != labels.size()) throw DataError("auc: scores and labels differ in length");
    const std::size_t n = scores.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
    // twice the mid-rank keeps the rank sum integral
    double rank2_pos = 0.0;
    double n_pos = 0.0, n_neg = 0.0;
    for (std::size_t i = 0; i < n;) {
        std::size_t j = i;
        while (j < n && scores[order[j]] == scores[order[i]]) ++j;
        double twice_mid = static_cast<double>(i + 1 + j);
        for (std::size_t k = i; k < j; ++k) {
            double l = labels[order[k]];
            if (l == 1.0) {
                rank2_pos += twice_mid;
                n_pos += 1.0;
            } else if (l == 0.0) {
                n_neg += 1.0;
            } else {
                throw DataError("auc: labels must be 0 or 1");
            }
        }
        i = j;
    }
    if (n_pos == 0.0 || n_neg == 0.0) throw DataError("auc: labels contain a single class");
    double u2 = rank2_pos - n_pos * (n_pos + 1.0);
    return u2 / (2.0 * n_pos * n_neg);
}

}  // namespace nrba
