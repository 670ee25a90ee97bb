#pragma once

#include <span>

namespace nrba {

/// Area under the ROC curve: Pr(score_pos > score_neg) + Pr(tie)/2, computed
/// from mid-ranks. Throws DataError when only one class is present.
double auc(std::span<const double> scores, std::span<const double> labels);

}  // namespace nrba
