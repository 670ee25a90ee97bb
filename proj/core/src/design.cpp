#include "nrba/design.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace nrba {

const Column* Frame::find(const std::string& name) const {
    for (const auto& c : columns)
        if (c.name == name) return &c;
    return nullptr;
}

const Column& Frame::at(const std::string& name) const {
    if (const Column* c = find(name)) return *c;
    throw DataError("missing predictor column '" + name + "'");
}

namespace {

std::size_t block_width(const Column& c) {
    if (c.kind == VarKind::Numeric) return 1;
    return c.levels.empty() ? 0 : c.levels.size() - 1;
}

std::string dummy_label(const std::string& source, const std::string& level) { return source + "[" + level + "]"; }

}  // namespace

DesignMatrix encode(const Frame& frame, bool intercept) {
    DesignMatrix d;
    d.intercept = intercept;
    const std::size_t n = frame.rows();
    std::size_t p = intercept ? 1 : 0;
    for (const auto& c : frame.columns) {
        if (c.values.size() != n) throw DataError("predictor '" + c.name + "' has inconsistent length");
        CodingBlock b{c.name, c.kind, c.kind == VarKind::Numeric ? std::vector<std::string>{} : c.levels, p,
                      block_width(c)};
        p += b.width;
        d.blocks.push_back(std::move(b));
    }
    d.x = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(p));
    if (intercept) {
        d.x.col(0).setOnes();
        d.labels.push_back("(Intercept)");
    }
    for (std::size_t k = 0; k < frame.columns.size(); ++k) {
        const auto& c = frame.columns[k];
        const auto& b = d.blocks[k];
        if (c.kind == VarKind::Numeric) {
            d.labels.push_back(c.name);
        } else {
            for (std::size_t l = 1; l < c.levels.size(); ++l) d.labels.push_back(dummy_label(c.name, c.levels[l]));
        }
        for (std::size_t i = 0; i < n; ++i) {
            double v = c.values[i];
            if (is_missing(v)) throw DataError("predictor '" + c.name + "' has a missing value at row " + std::to_string(i));
            if (c.kind == VarKind::Numeric) {
                d.x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(b.first)) = v;
            } else {
                auto code = static_cast<std::size_t>(v);
                if (code >= c.levels.size())
                    throw DataError("predictor '" + c.name + "' has level code " + std::to_string(code) + " out of range");
                if (code > 0)
                    d.x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(b.first + code - 1)) = 1.0;
            }
        }
    }
    return d;
}

Eigen::MatrixXd apply_coding(const std::vector<CodingBlock>& blocks, bool intercept, const Frame& frame,
                             bool lenient) {
    const std::size_t n = frame.rows();
    std::size_t p = intercept ? 1 : 0;
    for (const auto& b : blocks) p = std::max(p, b.first + b.width);
    Eigen::MatrixXd x = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(p));
    if (intercept) x.col(0).setOnes();
    for (const auto& b : blocks) {
        const Column& c = frame.at(b.source);
        if (c.values.size() != n) throw DataError("predictor '" + c.name + "' has inconsistent length");
        if (b.kind == VarKind::Numeric) {
            if (c.kind != VarKind::Numeric) throw DataError("predictor '" + c.name + "' must be numeric");
            for (std::size_t i = 0; i < n; ++i) {
                if (is_missing(c.values[i])) throw DataError("predictor '" + c.name + "' has a missing value");
                x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(b.first)) = c.values[i];
            }
            continue;
        }
        // Map the new data's labels onto the fitted level order. Blocks may have
        // been narrowed by drop_aliased; the column for level l is found by label.
        std::vector<long> to_fit(c.levels.size(), -1);
        for (std::size_t l = 0; l < c.levels.size(); ++l) {
            auto it = std::find(b.levels.begin(), b.levels.end(), c.levels[l]);
            if (it != b.levels.end()) to_fit[l] = it - b.levels.begin();
        }
        for (std::size_t i = 0; i < n; ++i) {
            double v = c.values[i];
            if (is_missing(v)) throw DataError("predictor '" + c.name + "' has a missing value");
            auto code = static_cast<std::size_t>(v);
            if (code >= c.levels.size()) throw DataError("predictor '" + c.name + "' has level code out of range");
            long fit_level = to_fit[code];
            if (fit_level < 0) {
                if (lenient) continue;
                throw DataError("predictor '" + c.name + "': unseen level '" + c.levels[code] + "'");
            }
            if (fit_level == 0) continue;
            // b.levels[0] is the reference; remaining levels occupy consecutive columns
            x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(b.first + static_cast<std::size_t>(fit_level) - 1)) = 1.0;
        }
    }
    return x;
}

DesignMatrix select_blocks(const DesignMatrix& d, const std::vector<std::size_t>& block_ids) {
    DesignMatrix out;
    out.intercept = d.intercept;
    std::vector<Eigen::Index> cols;
    if (d.intercept) {
        cols.push_back(0);
        out.labels.push_back(d.labels[0]);
    }
    for (std::size_t id : block_ids) {
        CodingBlock b = d.blocks.at(id);
        std::size_t first = cols.size();
        for (std::size_t k = 0; k < b.width; ++k) {
            cols.push_back(static_cast<Eigen::Index>(b.first + k));
            out.labels.push_back(d.labels[b.first + k]);
        }
        b.first = first;
        out.blocks.push_back(std::move(b));
    }
    out.x = d.x(Eigen::all, cols);
    return out;
}

std::vector<std::string> collinear_columns(const Eigen::MatrixXd& x, const std::vector<std::string>& labels,
                                           double tol) {
    std::vector<std::string> out;
    if (x.cols() == 0) return out;
    // scale columns so the rank threshold is relative to each column's size
    Eigen::MatrixXd xs = x;
    for (Eigen::Index j = 0; j < xs.cols(); ++j) {
        double nrm = xs.col(j).norm();
        if (nrm > 0) xs.col(j) /= nrm;
    }
    // Greedy in column order: a column is kept when it adds a direction.
    Eigen::MatrixXd basis(xs.rows(), 0);
    for (Eigen::Index j = 0; j < xs.cols(); ++j) {
        Eigen::VectorXd v = xs.col(j);
        if (v.norm() == 0.0) {
            out.push_back(labels[static_cast<std::size_t>(j)]);
            continue;
        }
        if (basis.cols() > 0) v -= basis * (basis.transpose() * v);
        if (basis.cols() > 0) v -= basis * (basis.transpose() * v);  // re-orthogonalize
        double r = v.norm();
        if (r <= std::sqrt(tol)) {
            out.push_back(labels[static_cast<std::size_t>(j)]);
            continue;
        }
        basis.conservativeResize(Eigen::NoChange, basis.cols() + 1);
        basis.col(basis.cols() - 1) = v / r;
    }
    return out;
}

std::vector<std::string> drop_aliased(DesignMatrix& d, double tol) {
    std::vector<std::string> dropped = collinear_columns(d.x, d.labels, tol);
    if (dropped.empty()) return dropped;
    std::vector<Eigen::Index> keep;
    std::vector<std::string> labels;
    for (std::size_t j = 0; j < d.labels.size(); ++j) {
        if (std::find(dropped.begin(), dropped.end(), d.labels[j]) != dropped.end()) continue;
        keep.push_back(static_cast<Eigen::Index>(j));
        labels.push_back(d.labels[j]);
    }
    if (d.intercept && (keep.empty() || keep.front() != 0)) d.intercept = false;
    std::vector<CodingBlock> blocks;
    std::size_t next = d.intercept ? 1 : 0;
    for (const auto& b : d.blocks) {
        CodingBlock nb = b;
        nb.first = next;
        nb.width = 0;
        if (b.kind == VarKind::Numeric) {
            if (std::find(dropped.begin(), dropped.end(), d.labels[b.first]) == dropped.end()) nb.width = 1;
        } else {
            // keep reference + surviving levels; dropped dummies fold into the reference row pattern
            std::vector<std::string> lv{b.levels.front()};
            for (std::size_t k = 0; k < b.width; ++k) {
                if (std::find(dropped.begin(), dropped.end(), d.labels[b.first + k]) == dropped.end()) {
                    lv.push_back(b.levels[k + 1]);
                    ++nb.width;
                }
            }
            nb.levels = std::move(lv);
        }
        if (nb.width > 0) {
            next += nb.width;
            blocks.push_back(std::move(nb));
        }
    }
    d.x = d.x(Eigen::all, keep).eval();
    d.labels = std::move(labels);
    d.blocks = std::move(blocks);
    return dropped;
}

}  // namespace nrba
