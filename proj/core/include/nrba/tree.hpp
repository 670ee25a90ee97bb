#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json_fwd.hpp>

#include "nrba/design.hpp"

namespace nrba {

enum class TreeMode {
    Conditional,  ///< Bonferroni-adjusted association tests, stop at alpha
    Cart,         ///< impurity reduction (Gini or squared error), stop below cp
};

struct TreeOptions {
    TreeMode mode = TreeMode::Conditional;
    std::size_t min_leaf = 20;
    int max_depth = 6;
    double alpha = 0.05;      ///< conditional mode: adjusted p-value threshold
    double cp = 0.01;         ///< cart mode: minimum improvement relative to the root risk
    double smoothing = 0.5;   ///< binary response: leaf rate (r + a) / (n + 2a)
    bool binary_response = true;
};

struct TreeNode {
    int variable = -1;  ///< predictor index; -1 for a leaf
    bool numeric_split = true;
    double threshold = 0.0;         ///< numeric/ordinal: x <= threshold goes left
    std::vector<char> goes_left;    ///< nominal: per level code
    int left = -1;
    int right = -1;
    int depth = 0;
    std::size_t n = 0;
    double value = 0.0;      ///< leaf rate (binary) or mean (numeric)
    double statistic = 0.0;  ///< test statistic or impurity gain of the chosen split
    double p_value = 1.0;    ///< adjusted p-value of the best variable (conditional mode)
    std::vector<double> donors;  ///< response values of the training cases in a leaf

    bool leaf() const { return variable < 0; }
};

struct PropensityTree {
    std::vector<TreeNode> nodes;  ///< nodes[0] is the root
    std::vector<std::string> predictors;
    std::vector<VarKind> kinds;
    std::vector<std::vector<std::string>> levels;
    TreeOptions options;
    /// Why each leaf stopped, in node order.
    std::vector<std::string> stopping;

    std::size_t n_leaves() const;
    /// Leaf node index reached by each row of `frame`.
    std::vector<int> route(const Frame& frame) const;
    /// Leaf value (smoothed rate or mean) for each row.
    Eigen::VectorXd predict(const Frame& frame) const;
};

/// Grows a binary tree on typed predictors. Constant or uninformative
/// predictors yield a root-only tree.
PropensityTree fit_propensity_tree(const Frame& predictors, const Eigen::VectorXd& response,
                                   const TreeOptions& options = {});

nlohmann::json tree_to_json(const PropensityTree& tree);

}  // namespace nrba
