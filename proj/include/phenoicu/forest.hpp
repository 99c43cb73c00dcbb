#pragma once

#include <cstring>
#include <istream>
#include <limits>
#include <numeric>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "phenoicu/common.hpp"

namespace phenoicu {

/// Split nodes send x[feature] <= threshold to `left`. Every node keeps its
/// weighted training count (`cover`) and class distribution.
struct TreeNode {
    int feature = -1;  // -1 marks a leaf
    double threshold = 0.0;
    int left = -1;
    int right = -1;
    double cover = 0.0;
    std::vector<double> value;

    bool is_leaf() const noexcept { return feature < 0; }
    friend bool operator==(const TreeNode&, const TreeNode&) = default;
};

struct Tree {
    std::vector<TreeNode> nodes;  // nodes[0] is the root

    const TreeNode& leaf_for(std::span<const double> x) const {
        const TreeNode* n = &nodes[0];
        while (!n->is_leaf()) n = &nodes[static_cast<std::size_t>(x[static_cast<std::size_t>(n->feature)] <= n->threshold ? n->left : n->right)];
        return *n;
    }

    int depth() const {
        int best = 0;
        std::vector<std::pair<int, int>> stack{{0, 0}};
        while (!stack.empty()) {
            auto [i, d] = stack.back();
            stack.pop_back();
            best = std::max(best, d);
            const auto& n = nodes[static_cast<std::size_t>(i)];
            if (!n.is_leaf()) {
                stack.emplace_back(n.left, d + 1);
                stack.emplace_back(n.right, d + 1);
            }
        }
        return best;
    }

    friend bool operator==(const Tree&, const Tree&) = default;
};

struct TreeParams {
    int max_depth = -1;  // -1: unlimited
    std::size_t min_samples_split = 2;
    std::size_t min_samples_leaf = 1;
    std::size_t max_features = 0;  // features tried per node; 0 means all
};

struct ForestConfig {
    std::size_t n_estimators = 300;
    std::string criterion = "gini";
    int max_depth = -1;
    std::size_t min_samples_split = 2;
    std::size_t min_samples_leaf = 1;
    std::size_t max_features = 0;  // 0: floor(sqrt(n_features))
    bool bootstrap = true;
    std::uint64_t seed = 0;

    nlohmann::json to_json() const {
        return {{"n_estimators", n_estimators},
                {"criterion", criterion},
                {"max_depth", max_depth < 0 ? nlohmann::json(nullptr) : nlohmann::json(max_depth)},
                {"min_samples_split", min_samples_split},
                {"min_samples_leaf", min_samples_leaf},
                {"max_features", max_features},
                {"bootstrap", bootstrap},
                {"seed", seed}};
    }

    static ForestConfig from_json(const nlohmann::json& j) {
        ForestConfig c;
        c.n_estimators = j.value("n_estimators", c.n_estimators);
        c.criterion = j.value("criterion", c.criterion);
        if (j.contains("max_depth") && !j.at("max_depth").is_null()) c.max_depth = j.at("max_depth").get<int>();
        c.min_samples_split = j.value("min_samples_split", c.min_samples_split);
        c.min_samples_leaf = j.value("min_samples_leaf", c.min_samples_leaf);
        c.max_features = j.value("max_features", c.max_features);
        c.bootstrap = j.value("bootstrap", c.bootstrap);
        c.seed = j.value("seed", c.seed);
        if (c.criterion != "gini") throw ConfigError("only the gini criterion is supported");
        if (c.n_estimators == 0) throw ConfigError("n_estimators must be >= 1");
        if (c.min_samples_split < 2) throw ConfigError("min_samples_split must be >= 2");
        if (c.min_samples_leaf < 1) throw ConfigError("min_samples_leaf must be >= 1");
        return c;
    }
};

/// Column-major training data shared by all trees of a forest.
class TrainingSet {
public:
    TrainingSet(std::span<const double> row_major, std::size_t n_rows, std::size_t n_features,
                std::span<const int> labels, int n_classes)
        : n_rows_(n_rows), n_features_(n_features), n_classes_(n_classes), labels_(labels.begin(), labels.end()) {
        if (n_rows == 0) throw DataError("cannot train on an empty matrix");
        if (row_major.size() != n_rows * n_features) throw DataError("matrix size does not match dimensions");
        if (labels.size() != n_rows) throw DataError("label count does not match row count");
        for (int y : labels_) {
            if (y < 0 || y >= n_classes) throw DataError("label " + std::to_string(y) + " outside class range");
        }
        columns_.resize(n_rows * n_features);
        for (std::size_t r = 0; r < n_rows; ++r) {
            for (std::size_t f = 0; f < n_features; ++f) columns_[f * n_rows + r] = row_major[r * n_features + f];
        }
    }

    std::size_t rows() const noexcept { return n_rows_; }
    std::size_t features() const noexcept { return n_features_; }
    int classes() const noexcept { return n_classes_; }
    int label(std::size_t r) const { return labels_[r]; }
    double value(std::size_t r, std::size_t f) const { return columns_[f * n_rows_ + r]; }

private:
    std::size_t n_rows_, n_features_;
    int n_classes_;
    std::vector<int> labels_;
    std::vector<double> columns_;
};

namespace detail {

struct Sample {
    std::uint32_t row;
    double weight;
};

struct SplitChoice {
    int feature = -1;
    double threshold = 0.0;
    double score = -std::numeric_limits<double>::infinity();  // sum_child sum_k c_k^2 / w_child
};

struct SortEntry {
    double value;
    double weight;
    std::size_t label;
};

// Best Gini split of one feature over samples[begin, end). Gini-optimal
// splits maximize the sum over children of (sum_k count_k^2) / weight.
inline void best_split_on(const TrainingSet& data, const std::vector<Sample>& samples, std::size_t begin,
                          std::size_t end, std::size_t feature, const std::vector<double>& totals, double total_w,
                          const TreeParams& params, std::vector<SortEntry>& scratch, SplitChoice& best) {
    scratch.clear();
    for (std::size_t i = begin; i < end; ++i) {
        const Sample& s = samples[i];
        scratch.push_back({data.value(s.row, feature), s.weight, static_cast<std::size_t>(data.label(s.row))});
    }
    std::sort(scratch.begin(), scratch.end(), [](const SortEntry& a, const SortEntry& b) {
        if (a.value != b.value) return a.value < b.value;
        return a.label < b.label;
    });
    if (scratch.front().value == scratch.back().value) return;

    const std::size_t K = totals.size();
    std::vector<double> left(K, 0.0);
    double left_w = 0.0;
    std::size_t left_n = 0;
    const std::size_t n = scratch.size();
    for (std::size_t i = 0; i + 1 < n; ++i) {
        left[scratch[i].label] += scratch[i].weight;
        left_w += scratch[i].weight;
        ++left_n;
        if (scratch[i].value == scratch[i + 1].value) continue;
        if (left_n < params.min_samples_leaf || n - left_n < params.min_samples_leaf) continue;
        const double right_w = total_w - left_w;
        double sl = 0.0, sr = 0.0;
        for (std::size_t k = 0; k < K; ++k) {
            sl += left[k] * left[k];
            const double rk = totals[k] - left[k];
            sr += rk * rk;
        }
        const double score = sl / left_w + sr / right_w;
        // Relative slack so rounding noise cannot override the tie-break order.
        if (best.feature < 0 || score > best.score * (1.0 + 1e-12)) {
            best.score = score;
            best.feature = static_cast<int>(feature);
            best.threshold = 0.5 * (scratch[i].value + scratch[i + 1].value);
            // Midpoint can round onto the upper value for adjacent doubles.
            if (best.threshold >= scratch[i + 1].value) best.threshold = scratch[i].value;
        }
    }
}

}  // namespace detail

/// Grows one CART classification tree by greedy Gini splits over a random
/// subset of features at each node. `samples` pairs row indices with weights
/// (bootstrap multiplicities). Features are visited in random order until
/// `max_features` non-constant ones were scored; ties keep the lowest
/// feature index, then the lowest threshold.
inline Tree train_tree(const TrainingSet& data, std::vector<detail::Sample> samples, Rng& rng, const TreeParams& params) {
    if (samples.empty()) throw DataError("cannot train a tree on zero samples");
    const std::size_t K = static_cast<std::size_t>(data.classes());
    const std::size_t F = data.features();
    const std::size_t mtry = params.max_features == 0 ? F : std::min(params.max_features, F);

    Tree tree;
    struct Work {
        std::size_t node, begin, end;
        int depth;
    };
    std::vector<Work> stack;
    std::vector<std::size_t> order(F);
    std::vector<detail::SortEntry> scratch;
    std::vector<detail::Sample> buffer;

    const auto make_node = [&](std::size_t begin, std::size_t end) {
        TreeNode node;
        node.value.assign(K, 0.0);
        for (std::size_t i = begin; i < end; ++i) {
            node.value[static_cast<std::size_t>(data.label(samples[i].row))] += samples[i].weight;
            node.cover += samples[i].weight;
        }
        tree.nodes.push_back(std::move(node));
        return tree.nodes.size() - 1;
    };

    stack.push_back({make_node(0, samples.size()), 0, samples.size(), 0});
    while (!stack.empty()) {
        const Work w = stack.back();
        stack.pop_back();
        std::vector<double> totals = tree.nodes[w.node].value;
        const double total_w = tree.nodes[w.node].cover;
        const std::size_t n = w.end - w.begin;
        const bool pure = std::count_if(totals.begin(), totals.end(), [](double c) { return c > 0.0; }) <= 1;
        const bool depth_capped = params.max_depth >= 0 && w.depth >= params.max_depth;

        detail::SplitChoice best;
        if (!pure && !depth_capped && n >= params.min_samples_split) {
            std::iota(order.begin(), order.end(), std::size_t{0});
            std::vector<std::size_t> chosen;
            std::size_t scored = 0;
            for (std::size_t i = 0; i < F && scored < mtry; ++i) {
                std::swap(order[i], order[i + rng.below(F - i)]);
                const std::size_t f = order[i];
                double lo = data.value(samples[w.begin].row, f), hi = lo;
                for (std::size_t s = w.begin + 1; s < w.end && lo == hi; ++s) {
                    const double v = data.value(samples[s].row, f);
                    lo = std::min(lo, v);
                    hi = std::max(hi, v);
                }
                if (lo == hi) continue;
                chosen.push_back(f);
                ++scored;
            }
            std::sort(chosen.begin(), chosen.end());
            for (std::size_t f : chosen) {
                detail::best_split_on(data, samples, w.begin, w.end, f, totals, total_w, params, scratch, best);
            }
        }

        auto& node_value = tree.nodes[w.node].value;
        if (best.feature < 0) {
            for (auto& v : node_value) v /= total_w;
            continue;
        }
        for (auto& v : node_value) v /= total_w;

        // Stable partition keeps sample order deterministic.
        buffer.clear();
        std::size_t mid = w.begin;
        for (std::size_t i = w.begin; i < w.end; ++i) {
            if (data.value(samples[i].row, static_cast<std::size_t>(best.feature)) <= best.threshold) {
                samples[mid++] = samples[i];
            } else {
                buffer.push_back(samples[i]);
            }
        }
        std::copy(buffer.begin(), buffer.end(), samples.begin() + static_cast<std::ptrdiff_t>(mid));

        const std::size_t left = make_node(w.begin, mid);
        const std::size_t right = make_node(mid, w.end);
        auto& parent = tree.nodes[w.node];
        parent.feature = best.feature;
        parent.threshold = best.threshold;
        parent.left = static_cast<int>(left);
        parent.right = static_cast<int>(right);
        // Right first so the left subtree is expanded next (pre-order growth).
        stack.push_back({right, mid, w.end, w.depth + 1});
        stack.push_back({left, w.begin, mid, w.depth + 1});
    }
    return tree;
}

/// Convenience overload: every row once with unit weight.
inline Tree train_tree(const TrainingSet& data, Rng& rng, const TreeParams& params) {
    std::vector<detail::Sample> samples(data.rows());
    for (std::size_t r = 0; r < data.rows(); ++r) samples[r] = {static_cast<std::uint32_t>(r), 1.0};
    return train_tree(data, std::move(samples), rng, params);
}

class Forest {
public:
    ForestConfig config;
    std::size_t n_features = 0;
    int n_classes = 2;
    std::vector<Tree> trees;

    /// Mean of the trees' leaf class distributions.
    std::vector<double> predict_proba(std::span<const double> x) const {
        if (x.size() != n_features) {
            throw DataError("feature width " + std::to_string(x.size()) + " does not match model width " +
                            std::to_string(n_features));
        }
        std::vector<double> p(static_cast<std::size_t>(n_classes), 0.0);
        for (const auto& t : trees) {
            const auto& leaf = t.leaf_for(x);
            for (std::size_t k = 0; k < p.size(); ++k) p[k] += leaf.value[k];
        }
        for (auto& v : p) v /= static_cast<double>(trees.size());
        return p;
    }

    /// Probabilities for every row of a row-major matrix, shape rows x classes.
    std::vector<std::vector<double>> predict_proba(std::span<const double> rows, std::size_t n_rows) const {
        std::vector<std::vector<double>> out(n_rows);
        parallel_for(n_rows, [&](std::size_t r) { out[r] = predict_proba(rows.subspan(r * n_features, n_features)); });
        return out;
    }

    friend bool operator==(const Forest& a, const Forest& b) {
        return a.n_features == b.n_features && a.n_classes == b.n_classes && a.trees == b.trees &&
               a.config.to_json() == b.config.to_json();
    }
};

/// Bagged CART forest. Tree t draws its bootstrap sample and node feature
/// subsets from stream derive_seed(seed, t), so results do not depend on
/// the number of worker threads.
inline Forest train_forest(std::span<const double> rows, std::size_t n_rows, std::size_t n_features,
                           std::span<const int> labels, int n_classes, const ForestConfig& cfg) {
    const TrainingSet data(rows, n_rows, n_features, labels, n_classes);
    Forest forest;
    forest.config = cfg;
    forest.n_features = n_features;
    forest.n_classes = n_classes;
    forest.trees.resize(cfg.n_estimators);

    TreeParams params;
    params.max_depth = cfg.max_depth;
    params.min_samples_split = cfg.min_samples_split;
    params.min_samples_leaf = cfg.min_samples_leaf;
    params.max_features = cfg.max_features != 0
                              ? cfg.max_features
                              : std::max<std::size_t>(1, static_cast<std::size_t>(std::sqrt(static_cast<double>(n_features))));

    parallel_for(cfg.n_estimators, [&](std::size_t t) {
        Rng rng(derive_seed(cfg.seed, t));
        std::vector<detail::Sample> samples;
        if (cfg.bootstrap) {
            std::vector<std::uint32_t> counts(n_rows, 0);
            for (std::size_t i = 0; i < n_rows; ++i) ++counts[rng.below(n_rows)];
            for (std::size_t r = 0; r < n_rows; ++r) {
                if (counts[r]) samples.push_back({static_cast<std::uint32_t>(r), static_cast<double>(counts[r])});
            }
        } else {
            for (std::size_t r = 0; r < n_rows; ++r) samples.push_back({static_cast<std::uint32_t>(r), 1.0});
        }
        forest.trees[t] = train_tree(data, std::move(samples), rng, params);
    });
    return forest;
}

}  // namespace phenoicu
