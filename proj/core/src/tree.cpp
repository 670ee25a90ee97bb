#include "nrba/tree.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include <boost/math/distributions/chi_squared.hpp>
#include <nlohmann/json.hpp>

namespace nrba {

namespace {

struct Split {
    bool found = false;
    bool numeric = true;
    double threshold = 0.0;
    std::vector<char> goes_left;
    double gain = 0.0;  // between-group sum of squares
};

double chi2_sf(double stat, double df) {
    if (!(stat > 0.0)) return 1.0;
    return boost::math::cdf(boost::math::complement(boost::math::chi_squared(df), stat));
}

bool numeric_like(VarKind k) { return k == VarKind::Numeric || k == VarKind::Ordinal; }

class Grower {
public:
    Grower(const Frame& f, const Eigen::VectorXd& y, const TreeOptions& opt, PropensityTree& tree)
        : f_(f), y_(y), opt_(opt), tree_(tree) {}

    void grow(std::vector<std::size_t> idx, int depth, int node_id) {
        TreeNode& node = tree_.nodes[static_cast<std::size_t>(node_id)];
        node.depth = depth;
        node.n = idx.size();
        double sum = 0.0;
        for (auto i : idx) sum += y_(static_cast<Eigen::Index>(i));
        const double n = static_cast<double>(idx.size());
        node.value = opt_.binary_response ? (sum + opt_.smoothing) / (n + 2.0 * opt_.smoothing) : sum / n;
        double sst = 0.0;
        for (auto i : idx) sst += std::pow(y_(static_cast<Eigen::Index>(i)) - sum / n, 2);
        if (depth == 0) root_sst_ = sst;

        auto make_leaf = [&](std::string why) {
            TreeNode& nd = tree_.nodes[static_cast<std::size_t>(node_id)];
            nd.variable = -1;
            nd.donors.reserve(idx.size());
            for (auto i : idx) nd.donors.push_back(y_(static_cast<Eigen::Index>(i)));
            tree_.stopping.push_back("node " + std::to_string(node_id) + ": " + why);
        };
        if (depth >= opt_.max_depth) return make_leaf("max depth");
        if (idx.size() < 2 * opt_.min_leaf) return make_leaf("fewer than 2*min_leaf cases");
        if (sst <= 1e-12 * std::max(1.0, n)) return make_leaf("pure node");

        int best_var = -1;
        Split best;
        double best_p = 2.0, best_stat = -1.0;
        const std::size_t m = f_.columns.size();
        if (opt_.mode == TreeMode::Conditional) {
            for (std::size_t j = 0; j < m; ++j) {
                auto [stat, df] = association(j, idx, sst);
                if (df <= 0) continue;
                double p = std::min(1.0, chi2_sf(stat, df) * static_cast<double>(m));
                if (p < best_p || (p == best_p && stat > best_stat)) {
                    best_p = p;
                    best_stat = stat;
                    best_var = static_cast<int>(j);
                }
            }
            tree_.nodes[static_cast<std::size_t>(node_id)].p_value = best_p > 1.0 ? 1.0 : best_p;
            if (best_var < 0) return make_leaf("no testable predictor");
            if (best_p > opt_.alpha) {
                std::ostringstream s;
                s << "adjusted p " << best_p << " > " << opt_.alpha;
                return make_leaf(s.str());
            }
            best = best_split(static_cast<std::size_t>(best_var), idx);
            if (!best.found) return make_leaf("no split respects min_leaf");
        } else {
            for (std::size_t j = 0; j < m; ++j) {
                Split s = best_split(j, idx);
                if (s.found && s.gain > best.gain) {
                    best = std::move(s);
                    best_var = static_cast<int>(j);
                }
            }
            if (best_var < 0) return make_leaf("no split respects min_leaf");
            if (best.gain < opt_.cp * root_sst_) return make_leaf("improvement below cp");
        }

        std::vector<std::size_t> left, right;
        const Column& c = f_.columns[static_cast<std::size_t>(best_var)];
        for (auto i : idx) {
            double v = c.values[i];
            bool l = best.numeric ? v <= best.threshold : best.goes_left[static_cast<std::size_t>(v)] != 0;
            (l ? left : right).push_back(i);
        }
        int lid = static_cast<int>(tree_.nodes.size());
        tree_.nodes.emplace_back();
        int rid = static_cast<int>(tree_.nodes.size());
        tree_.nodes.emplace_back();
        {
            TreeNode& nd = tree_.nodes[static_cast<std::size_t>(node_id)];
            nd.variable = best_var;
            nd.numeric_split = best.numeric;
            nd.threshold = best.threshold;
            nd.goes_left = best.goes_left;
            nd.left = lid;
            nd.right = rid;
            nd.statistic = opt_.mode == TreeMode::Conditional ? best_stat : best.gain;
        }
        grow(std::move(left), depth + 1, lid);
        grow(std::move(right), depth + 1, rid);
    }

private:
    /// Permutation-test quadratic statistic and its chi-square df.
    std::pair<double, double> association(std::size_t j, const std::vector<std::size_t>& idx, double sst) const {
        const Column& c = f_.columns[j];
        const double n = static_cast<double>(idx.size());
        if (numeric_like(c.kind)) {
            double mx = 0, my = 0;
            for (auto i : idx) {
                mx += c.values[i];
                my += y_(static_cast<Eigen::Index>(i));
            }
            mx /= n;
            my /= n;
            double sxx = 0, sxy = 0;
            for (auto i : idx) {
                double dx = c.values[i] - mx;
                sxx += dx * dx;
                sxy += dx * (y_(static_cast<Eigen::Index>(i)) - my);
            }
            if (sxx <= 1e-12 * std::max(1.0, n * mx * mx)) return {0.0, 0.0};
            double r2 = sxy * sxy / (sxx * sst);
            return {(n - 1.0) * r2, 1.0};
        }
        std::vector<double> cnt(c.levels.size(), 0.0), sum(c.levels.size(), 0.0);
        double total = 0.0;
        for (auto i : idx) {
            auto l = static_cast<std::size_t>(c.values[i]);
            cnt[l] += 1.0;
            sum[l] += y_(static_cast<Eigen::Index>(i));
            total += y_(static_cast<Eigen::Index>(i));
        }
        double ssb = 0.0;
        int present = 0;
        for (std::size_t l = 0; l < cnt.size(); ++l) {
            if (cnt[l] == 0) continue;
            ++present;
            ssb += cnt[l] * std::pow(sum[l] / cnt[l] - total / n, 2);
        }
        if (present < 2) return {0.0, 0.0};
        return {(n - 1.0) * ssb / sst, static_cast<double>(present - 1)};
    }

    Split best_split(std::size_t j, const std::vector<std::size_t>& idx) const {
        const Column& c = f_.columns[j];
        const std::size_t n = idx.size();
        const std::size_t min_leaf = std::max<std::size_t>(1, opt_.min_leaf);
        double total = 0.0;
        for (auto i : idx) total += y_(static_cast<Eigen::Index>(i));
        Split best;
        auto gain_of = [&](double nl, double sl) {
            double nr = static_cast<double>(n) - nl, sr = total - sl;
            return nl * nr / static_cast<double>(n) * std::pow(sl / nl - sr / nr, 2);
        };
        if (numeric_like(c.kind)) {
            std::vector<std::size_t> order = idx;
            std::stable_sort(order.begin(), order.end(),
                             [&](std::size_t a, std::size_t b) { return c.values[a] < c.values[b]; });
            double sl = 0.0;
            for (std::size_t k = 0; k + 1 < n; ++k) {
                sl += y_(static_cast<Eigen::Index>(order[k]));
                double a = c.values[order[k]], b = c.values[order[k + 1]];
                if (a == b) continue;
                if (k + 1 < min_leaf || n - k - 1 < min_leaf) continue;
                double g = gain_of(static_cast<double>(k + 1), sl);
                if (!best.found || g > best.gain) {
                    best.found = true;
                    best.numeric = true;
                    best.gain = g;
                    best.threshold = a + 0.5 * (b - a);
                }
            }
            return best;
        }
        const std::size_t L = c.levels.size();
        std::vector<double> cnt(L, 0.0), sum(L, 0.0);
        for (auto i : idx) {
            auto l = static_cast<std::size_t>(c.values[i]);
            cnt[l] += 1.0;
            sum[l] += y_(static_cast<Eigen::Index>(i));
        }
        std::vector<std::size_t> present;
        for (std::size_t l = 0; l < L; ++l)
            if (cnt[l] > 0) present.push_back(l);
        std::stable_sort(present.begin(), present.end(),
                         [&](std::size_t a, std::size_t b) { return sum[a] / cnt[a] < sum[b] / cnt[b]; });
        double nl = 0.0, sl = 0.0;
        std::size_t cut = 0;
        for (std::size_t k = 0; k + 1 < present.size(); ++k) {
            nl += cnt[present[k]];
            sl += sum[present[k]];
            if (nl < static_cast<double>(min_leaf) || static_cast<double>(n) - nl < static_cast<double>(min_leaf))
                continue;
            double g = gain_of(nl, sl);
            if (!best.found || g > best.gain) {
                best.found = true;
                best.gain = g;
                cut = k + 1;
            }
        }
        if (!best.found) return best;
        best.numeric = false;
        best.goes_left.assign(L, 0);
        double n_left = 0.0;
        for (std::size_t k = 0; k < cut; ++k) {
            best.goes_left[present[k]] = 1;
            n_left += cnt[present[k]];
        }
        // levels absent from the node follow the larger child
        char absent_side = n_left >= static_cast<double>(n) - n_left ? 1 : 0;
        for (std::size_t l = 0; l < L; ++l)
            if (cnt[l] == 0) best.goes_left[l] = absent_side;
        return best;
    }

    const Frame& f_;
    const Eigen::VectorXd& y_;
    const TreeOptions& opt_;
    PropensityTree& tree_;
    double root_sst_ = 0.0;
};

}  // namespace

std::size_t PropensityTree::n_leaves() const {
    return static_cast<std::size_t>(std::count_if(nodes.begin(), nodes.end(), [](const TreeNode& n) { return n.leaf(); }));
}

std::vector<int> PropensityTree::route(const Frame& frame) const {
    std::vector<const Column*> cols;
    for (std::size_t j = 0; j < predictors.size(); ++j) {
        const Column& c = frame.at(predictors[j]);
        if (is_categorical(kinds[j]) && kinds[j] != VarKind::Ordinal && c.levels != levels[j]) {
            for (const auto& lv : c.levels)
                if (std::find(levels[j].begin(), levels[j].end(), lv) == levels[j].end())
                    throw DataError("predictor '" + c.name + "': unseen level '" + lv + "'");
        }
        cols.push_back(&c);
    }
    const std::size_t n = frame.rows();
    std::vector<int> out(n, 0);
    for (std::size_t i = 0; i < n; ++i) {
        int k = 0;
        while (!nodes[static_cast<std::size_t>(k)].leaf()) {
            const TreeNode& nd = nodes[static_cast<std::size_t>(k)];
            const std::size_t j = static_cast<std::size_t>(nd.variable);
            const Column& c = *cols[j];
            double v = c.values[i];
            if (is_missing(v)) throw DataError("predictor '" + c.name + "' has a missing value");
            bool left;
            if (nd.numeric_split) {
                left = v <= nd.threshold;
            } else {
                const std::string& label = c.levels.at(static_cast<std::size_t>(v));
                auto it = std::find(levels[j].begin(), levels[j].end(), label);
                left = nd.goes_left[static_cast<std::size_t>(it - levels[j].begin())] != 0;
            }
            k = left ? nd.left : nd.right;
        }
        out[i] = k;
    }
    return out;
}

Eigen::VectorXd PropensityTree::predict(const Frame& frame) const {
    auto leaves = route(frame);
    Eigen::VectorXd p(static_cast<Eigen::Index>(leaves.size()));
    for (std::size_t i = 0; i < leaves.size(); ++i)
        p(static_cast<Eigen::Index>(i)) = nodes[static_cast<std::size_t>(leaves[i])].value;
    return p;
}

PropensityTree fit_propensity_tree(const Frame& predictors, const Eigen::VectorXd& response,
                                   const TreeOptions& options) {
    const std::size_t n = predictors.columns.empty() ? static_cast<std::size_t>(response.size()) : predictors.rows();
    if (static_cast<std::size_t>(response.size()) != n) throw DataError("tree: response length does not match predictors");
    if (n == 0) throw DataError("tree: no cases");
    if (options.binary_response)
        for (Eigen::Index i = 0; i < response.size(); ++i)
            if (response(i) != 0.0 && response(i) != 1.0) throw DataError("tree: response must be 0/1");
    for (const auto& c : predictors.columns) {
        if (c.values.size() != n) throw DataError("tree: predictor '" + c.name + "' has inconsistent length");
        for (double v : c.values) {
            if (is_missing(v)) throw DataError("tree: predictor '" + c.name + "' has missing values");
            if (is_categorical(c.kind) && (v < 0 || static_cast<std::size_t>(v) >= c.levels.size()))
                throw DataError("tree: predictor '" + c.name + "' has a level code out of range");
        }
    }
    PropensityTree tree;
    tree.options = options;
    for (const auto& c : predictors.columns) {
        tree.predictors.push_back(c.name);
        tree.kinds.push_back(c.kind);
        tree.levels.push_back(c.levels);
    }
    tree.nodes.emplace_back();
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    Grower(predictors, response, options, tree).grow(std::move(idx), 0, 0);
    return tree;
}

nlohmann::json tree_to_json(const PropensityTree& tree) {
    nlohmann::json j;
    j["mode"] = tree.options.mode == TreeMode::Conditional ? "conditional" : "cart";
    j["min_leaf"] = tree.options.min_leaf;
    j["max_depth"] = tree.options.max_depth;
    j["alpha"] = tree.options.alpha;
    j["cp"] = tree.options.cp;
    auto nodes = nlohmann::json::array();
    for (std::size_t k = 0; k < tree.nodes.size(); ++k) {
        const TreeNode& nd = tree.nodes[k];
        nlohmann::json o{{"id", k}, {"n", nd.n}, {"value", nd.value}, {"depth", nd.depth}};
        if (!nd.leaf()) {
            o["variable"] = tree.predictors[static_cast<std::size_t>(nd.variable)];
            if (nd.numeric_split) {
                o["threshold"] = nd.threshold;
            } else {
                auto left = nlohmann::json::array();
                const auto& lv = tree.levels[static_cast<std::size_t>(nd.variable)];
                for (std::size_t l = 0; l < lv.size(); ++l)
                    if (nd.goes_left[l]) left.push_back(lv[l]);
                o["left_levels"] = left;
            }
            o["left"] = nd.left;
            o["right"] = nd.right;
            o["statistic"] = nd.statistic;
        }
        nodes.push_back(std::move(o));
    }
    j["nodes"] = std::move(nodes);
    j["stopping"] = tree.stopping;
    return j;
}

}  // namespace nrba
