#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "nrba/panel.hpp"

namespace nrba {

/// A typed predictor column. Categorical values are level codes.
struct Column {
    std::string name;
    VarKind kind = VarKind::Numeric;
    std::vector<std::string> levels;
    std::vector<double> values;
};

/// Column-oriented table of predictors handed to model fitters.
struct Frame {
    std::vector<Column> columns;
    std::size_t rows() const { return columns.empty() ? 0 : columns.front().values.size(); }
    const Column& at(const std::string& name) const;
    const Column* find(const std::string& name) const;
};

/// How one source column maps onto design-matrix columns.
struct CodingBlock {
    std::string source;
    VarKind kind = VarKind::Numeric;
    std::vector<std::string> levels;  ///< categorical: reference first
    std::size_t first = 0;            ///< first design column
    std::size_t width = 0;
};

struct DesignMatrix {
    Eigen::MatrixXd x;
    std::vector<std::string> labels;
    std::vector<CodingBlock> blocks;  ///< excludes the intercept
    bool intercept = false;

    std::size_t rows() const { return static_cast<std::size_t>(x.rows()); }
    std::size_t cols() const { return static_cast<std::size_t>(x.cols()); }
};

/// Dummy-codes categorical columns against their first level. Throws DataError
/// on missing cells.
DesignMatrix encode(const Frame& frame, bool intercept = true);

/// Re-applies a fitted coding to new data. Unknown level labels or absent
/// source columns raise DataError naming them. With `lenient`, levels that have
/// no column in the fitted coding are coded as the reference level instead.
Eigen::MatrixXd apply_coding(const std::vector<CodingBlock>& blocks, bool intercept, const Frame& frame,
                             bool lenient = false);

/// Keeps the intercept (if any) and the listed blocks, in the listed order.
DesignMatrix select_blocks(const DesignMatrix& d, const std::vector<std::size_t>& block_ids);

/// Drops columns that are all zero or linearly dependent on earlier columns
/// (greedy orthogonalization in column order). Blocks shrink accordingly and
/// empty blocks vanish. Returns the labels of the dropped columns.
std::vector<std::string> drop_aliased(DesignMatrix& d, double tol = 1e-9);

/// Labels of columns that make X'WX rank deficient; empty when full rank.
std::vector<std::string> collinear_columns(const Eigen::MatrixXd& x, const std::vector<std::string>& labels,
                                           double tol = 1e-9);

}  // namespace nrba
