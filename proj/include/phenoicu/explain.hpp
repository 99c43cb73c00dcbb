#pragma once

// Shapley-value attributions.
//
// Two value functions are supported for the coalition game v(S):
//   marginal             v(S) = mean over background rows b of f(x_S, b_{~S})
//   tree path-dependent  v(S) = E[f | x_S] estimated by sending the sample
//                        down every branch whose feature is not in S, weighted
//                        by the training cover of each child.
// The exact routines enumerate all 2^M coalitions and serve as oracles for
// the polynomial tree algorithms.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "phenoicu/common.hpp"
#include "phenoicu/forest.hpp"

namespace phenoicu {

/// Which model output is explained: the sum of the listed class
/// probabilities ({1} for the positive class of a binary task).
struct OutputSelector {
    std::vector<int> classes{1};

    double operator()(const std::vector<double>& probs) const {
        double s = 0.0;
        for (int k : classes) s += probs.at(static_cast<std::size_t>(k));
        return s;
    }

    std::string label() const {
        std::string out = "class";
        for (std::size_t i = 0; i < classes.size(); ++i) out += (i ? "+" : " ") + std::to_string(classes[i]);
        return out;
    }
};

enum class Conditioning { Marginal, TreePathDependent };

inline std::string to_string(Conditioning c) { return c == Conditioning::Marginal ? "marginal" : "tree_path_dependent"; }

struct Explanation {
    double base_value = 0.0;   // phi_0
    std::vector<double> phi;   // one value per feature
    double prediction = 0.0;   // f(x)
    std::string sample;
    std::string output;

    double sum() const {
        double s = base_value;
        for (double v : phi) s += v;
        return s;
    }
};

/// Reference rows for marginal expectations (row-major, B x M).
class BackgroundSet {
public:
    BackgroundSet(std::vector<double> rows, std::size_t width) : rows_(std::move(rows)), width_(width) {
        if (width == 0 || rows_.empty() || rows_.size() % width != 0) throw DataError("background set is empty or ragged");
    }

    std::size_t size() const noexcept { return rows_.size() / width_; }
    std::size_t width() const noexcept { return width_; }
    std::span<const double> row(std::size_t i) const { return {rows_.data() + i * width_, width_}; }

private:
    std::vector<double> rows_;
    std::size_t width_;
};

using ModelFn = std::function<double(std::span<const double>)>;

// ---------------------------------------------------------------------------
// Exact enumeration

/// Shapley values of the game `value` over M players, given v(S) for every
/// coalition bitmask S. phi_0 = v(empty set).
inline Explanation shapley_from_coalitions(std::size_t M, const std::vector<double>& v) {
    // Weight |S|! (M-|S|-1)! / M! for a coalition of size s.
    std::vector<double> weight(M, 0.0);
    for (std::size_t s = 0; s < M; ++s) {
        double w = 1.0 / static_cast<double>(M);
        // 1 / (M * C(M-1, s))
        double binom = 1.0;
        for (std::size_t k = 1; k <= s; ++k) binom = binom * static_cast<double>(M - 1 - s + k) / static_cast<double>(k);
        weight[s] = w / binom;
    }
    Explanation e;
    e.phi.assign(M, 0.0);
    const std::size_t full = std::size_t{1} << M;
    for (std::size_t S = 0; S < full; ++S) {
        const auto size = static_cast<std::size_t>(__builtin_popcountll(S));
        if (size == M) continue;
        const double w = weight[size];
        for (std::size_t i = 0; i < M; ++i) {
            if (S & (std::size_t{1} << i)) continue;
            e.phi[i] += w * (v[S | (std::size_t{1} << i)] - v[S]);
        }
    }
    e.base_value = v[0];
    e.prediction = v[full - 1];
    return e;
}

inline void check_subset_limit(std::size_t M, std::size_t limit) {
    if (M > limit) {
        throw ConfigError("exact Shapley enumeration limited to " + std::to_string(limit) + " features, model has " +
                          std::to_string(M));
    }
    if (M >= 8 * sizeof(std::size_t) - 1) throw ConfigError("too many features for exact enumeration");
}

/// Exact Shapley values of a black-box model under marginal (background
/// substitution) expectations.
inline Explanation exact_shapley(const ModelFn& f, std::span<const double> x, const BackgroundSet& background,
                                 std::size_t subset_limit = 14) {
    const std::size_t M = x.size();
    check_subset_limit(M, subset_limit);
    if (background.size() == 0) throw DataError("empty background set");
    if (background.width() != M) throw DataError("background width does not match sample width");
    const std::size_t full = std::size_t{1} << M;
    std::vector<double> v(full, 0.0);
    std::vector<double> z(M);
    for (std::size_t S = 0; S < full; ++S) {
        double acc = 0.0;
        for (std::size_t b = 0; b < background.size(); ++b) {
            const auto r = background.row(b);
            for (std::size_t j = 0; j < M; ++j) z[j] = (S >> j) & 1 ? x[j] : r[j];
            acc += f(z);
        }
        v[S] = acc / static_cast<double>(background.size());
    }
    return shapley_from_coalitions(M, v);
}

/// Cover-weighted conditional expectation of one tree given the features in
/// `S` fixed to x.
inline double tree_conditional_expectation(const Tree& tree, std::span<const double> x, std::size_t S,
                                           const OutputSelector& out, std::size_t node = 0) {
    const TreeNode& n = tree.nodes[node];
    if (n.is_leaf()) return out(n.value);
    const auto f = static_cast<std::size_t>(n.feature);
    const auto left = static_cast<std::size_t>(n.left), right = static_cast<std::size_t>(n.right);
    if ((S >> f) & 1) return tree_conditional_expectation(tree, x, S, out, x[f] <= n.threshold ? left : right);
    const double cl = tree.nodes[left].cover, cr = tree.nodes[right].cover;
    return (cl * tree_conditional_expectation(tree, x, S, out, left) +
            cr * tree_conditional_expectation(tree, x, S, out, right)) /
           n.cover;
}

/// Exact Shapley values of a forest under tree path-dependent expectations.
inline Explanation exact_shapley_path_dependent(const Forest& forest, std::span<const double> x,
                                                const OutputSelector& out = {}, std::size_t subset_limit = 14) {
    const std::size_t M = x.size();
    if (M != forest.n_features) throw DataError("sample width does not match forest");
    check_subset_limit(M, subset_limit);
    const std::size_t full = std::size_t{1} << M;
    std::vector<double> v(full, 0.0);
    for (std::size_t S = 0; S < full; ++S) {
        double acc = 0.0;
        for (const auto& t : forest.trees) acc += tree_conditional_expectation(t, x, S, out);
        v[S] = acc / static_cast<double>(forest.trees.size());
    }
    return shapley_from_coalitions(M, v);
}

// ---------------------------------------------------------------------------
// Path-dependent tree algorithm

namespace detail {

struct PathElement {
    int feature = -1;
    double zero_fraction = 0.0;
    double one_fraction = 0.0;
    double pweight = 0.0;
};

inline void extend_path(std::vector<PathElement>& path, std::size_t depth, double zero, double one, int feature) {
    path[depth] = {feature, zero, one, depth == 0 ? 1.0 : 0.0};
    const double d1 = static_cast<double>(depth + 1);
    for (std::size_t i = depth; i-- > 0;) {
        path[i + 1].pweight += one * path[i].pweight * static_cast<double>(i + 1) / d1;
        path[i].pweight = zero * path[i].pweight * static_cast<double>(depth - i) / d1;
    }
}

inline void unwind_path(std::vector<PathElement>& path, std::size_t depth, std::size_t index) {
    const double one = path[index].one_fraction, zero = path[index].zero_fraction;
    const double d1 = static_cast<double>(depth + 1);
    double next = path[depth].pweight;
    for (std::size_t i = depth; i-- > 0;) {
        if (one != 0.0) {
            const double tmp = path[i].pweight;
            path[i].pweight = next * d1 / (static_cast<double>(i + 1) * one);
            next = tmp - path[i].pweight * zero * static_cast<double>(depth - i) / d1;
        } else {
            path[i].pweight = path[i].pweight * d1 / (zero * static_cast<double>(depth - i));
        }
    }
    for (std::size_t i = index; i < depth; ++i) {
        path[i].feature = path[i + 1].feature;
        path[i].zero_fraction = path[i + 1].zero_fraction;
        path[i].one_fraction = path[i + 1].one_fraction;
    }
}

// Total permutation weight of the path with element `index` removed.
inline double unwound_path_sum(const std::vector<PathElement>& path, std::size_t depth, std::size_t index) {
    const double one = path[index].one_fraction, zero = path[index].zero_fraction;
    double next = path[depth].pweight, total = 0.0;
    if (one != 0.0) {
        for (std::size_t i = depth; i-- > 0;) {
            const double tmp = next / (static_cast<double>(i + 1) * one);
            total += tmp;
            next = path[i].pweight - tmp * zero * static_cast<double>(depth - i);
        }
    } else {
        for (std::size_t i = depth; i-- > 0;) total += path[i].pweight / (zero * static_cast<double>(depth - i));
    }
    return total * static_cast<double>(depth + 1);
}

inline void tree_shap_recurse(const Tree& tree, std::span<const double> x, const OutputSelector& out,
                              std::vector<double>& phi, std::size_t node, std::vector<PathElement> path,
                              std::size_t depth, double parent_zero, double parent_one, int parent_feature) {
    if (path.size() < depth + 1) path.resize(depth + 1);
    extend_path(path, depth, parent_zero, parent_one, parent_feature);
    const TreeNode& n = tree.nodes[node];
    if (n.is_leaf()) {
        const double leaf = out(n.value);
        for (std::size_t i = 1; i <= depth; ++i) {
            const double w = unwound_path_sum(path, depth, i);
            const auto& el = path[i];
            phi[static_cast<std::size_t>(el.feature)] += w * (el.one_fraction - el.zero_fraction) * leaf;
        }
        return;
    }
    const auto f = static_cast<std::size_t>(n.feature);
    const auto hot = static_cast<std::size_t>(x[f] <= n.threshold ? n.left : n.right);
    const auto cold = static_cast<std::size_t>(x[f] <= n.threshold ? n.right : n.left);
    double incoming_zero = 1.0, incoming_one = 1.0;
    std::size_t index = 0;
    while (index <= depth && path[index].feature != n.feature) ++index;
    if (index <= depth) {
        incoming_zero = path[index].zero_fraction;
        incoming_one = path[index].one_fraction;
        unwind_path(path, depth, index);
        --depth;
    }
    const double hot_zero = tree.nodes[hot].cover / n.cover;
    const double cold_zero = tree.nodes[cold].cover / n.cover;
    tree_shap_recurse(tree, x, out, phi, hot, path, depth + 1, hot_zero * incoming_zero, incoming_one, n.feature);
    tree_shap_recurse(tree, x, out, phi, cold, path, depth + 1, cold_zero * incoming_zero, 0.0, n.feature);
}

// Single-reference marginal game on one tree: a leaf is reached for
// coalition S iff S contains every feature in `take_x` and none in `take_r`.
// Its value then splits as v (a-1)! b! / (a+b)! to each x-feature and
// -v a! (b-1)! / (a+b)! to each reference feature.
struct InterventionalWalk {
    const Tree& tree;
    std::span<const double> x;
    std::span<const double> r;
    const OutputSelector& out;
    std::vector<double>& phi;
    const std::vector<double>& log_factorial;
    std::vector<signed char> state;  // 0 unseen, 1 follows x, 2 follows reference
    std::vector<std::size_t> take_x, take_r;

    void run(std::size_t node) {
        const TreeNode& n = tree.nodes[node];
        if (n.is_leaf()) {
            const std::size_t a = take_x.size(), b = take_r.size();
            if (a + b == 0) return;
            const double v = out(n.value);
            if (a > 0) {
                const double w = std::exp(log_factorial[a - 1] + log_factorial[b] - log_factorial[a + b]);
                for (std::size_t i : take_x) phi[i] += v * w;
            }
            if (b > 0) {
                const double w = std::exp(log_factorial[a] + log_factorial[b - 1] - log_factorial[a + b]);
                for (std::size_t j : take_r) phi[j] -= v * w;
            }
            return;
        }
        const auto f = static_cast<std::size_t>(n.feature);
        const auto x_child = static_cast<std::size_t>(x[f] <= n.threshold ? n.left : n.right);
        const auto r_child = static_cast<std::size_t>(r[f] <= n.threshold ? n.left : n.right);
        if (x_child == r_child) return run(x_child);
        if (state[f] == 1) return run(x_child);
        if (state[f] == 2) return run(r_child);
        state[f] = 1;
        take_x.push_back(f);
        run(x_child);
        take_x.pop_back();
        state[f] = 2;
        take_r.push_back(f);
        run(r_child);
        take_r.pop_back();
        state[f] = 0;
    }
};

inline const std::vector<double>& log_factorials(std::size_t n) {
    static thread_local std::vector<double> table{0.0};
    while (table.size() <= n) table.push_back(table.back() + std::log(static_cast<double>(table.size())));
    return table;
}

}  // namespace detail

/// Path-dependent Shapley values of a single tree (polynomial time).
inline Explanation tree_shapley(const Tree& tree, std::span<const double> x, const OutputSelector& out = {}) {
    Explanation e;
    e.phi.assign(x.size(), 0.0);
    detail::tree_shap_recurse(tree, x, out, e.phi, 0, {}, 0, 1.0, 1.0, -1);
    e.base_value = tree_conditional_expectation(tree, x, 0, out);
    e.prediction = out(tree.leaf_for(x).value);
    e.output = out.label();
    return e;
}

/// Path-dependent Shapley values of a forest: mean of the per-tree values.
inline Explanation tree_shapley(const Forest& forest, std::span<const double> x, const OutputSelector& out = {}) {
    if (x.size() != forest.n_features) {
        throw DataError("sample width " + std::to_string(x.size()) + " does not match forest width " +
                        std::to_string(forest.n_features));
    }
    Explanation e;
    e.phi.assign(x.size(), 0.0);
    for (const auto& t : forest.trees) {
        detail::tree_shap_recurse(t, x, out, e.phi, 0, {}, 0, 1.0, 1.0, -1);
        e.base_value += tree_conditional_expectation(t, x, 0, out);
    }
    const double n = static_cast<double>(forest.trees.size());
    for (auto& v : e.phi) v /= n;
    e.base_value /= n;
    e.prediction = out(forest.predict_proba(x));
    e.output = out.label();
    return e;
}

/// Marginal (interventional) Shapley values of a forest against a
/// background set, in O(trees * background * visited nodes).
inline Explanation tree_shapley_marginal(const Forest& forest, std::span<const double> x,
                                         const BackgroundSet& background, const OutputSelector& out = {}) {
    if (x.size() != forest.n_features || background.width() != forest.n_features) {
        throw DataError("sample or background width does not match forest");
    }
    const std::size_t M = x.size();
    Explanation e;
    e.phi.assign(M, 0.0);
    const auto& lf = detail::log_factorials(2 * M + 2);
    for (const auto& t : forest.trees) {
        for (std::size_t b = 0; b < background.size(); ++b) {
            detail::InterventionalWalk walk{t, x, background.row(b), out, e.phi, lf, std::vector<signed char>(M, 0), {}, {}};
            walk.run(0);
            e.base_value += out(t.leaf_for(background.row(b)).value);
        }
    }
    const double n = static_cast<double>(forest.trees.size() * background.size());
    for (auto& v : e.phi) v /= n;
    e.base_value /= n;
    e.prediction = out(forest.predict_proba(x));
    e.output = out.label();
    return e;
}

/// Bundles a forest with the output and conditioning used for every
/// explanation in a report.
struct ForestExplainer {
    const Forest* forest = nullptr;
    OutputSelector output;
    Conditioning conditioning = Conditioning::TreePathDependent;
    std::optional<BackgroundSet> background;

    Explanation explain(std::span<const double> x) const {
        if (conditioning == Conditioning::Marginal) {
            if (!background) throw ConfigError("marginal conditioning requires a background set");
            return tree_shapley_marginal(*forest, x, *background, output);
        }
        return tree_shapley(*forest, x, output);
    }
};

// ---------------------------------------------------------------------------
// Reports

struct ImportanceReport {
    std::vector<std::string> names;
    std::vector<double> mean_abs;        // per feature
    std::vector<std::size_t> ranking;    // feature indices, most important first
    std::vector<std::vector<double>> phi;     // per sample
    std::vector<std::vector<double>> values;  // per sample feature values
    double base_value = 0.0;

    std::size_t rank_of(std::string_view name) const {
        for (std::size_t r = 0; r < ranking.size(); ++r) {
            if (names[ranking[r]] == name) return r;
        }
        return ranking.size();
    }
};

/// Orders features by descending mean |phi|, ties by name.
inline std::vector<std::size_t> rank_by_mean_abs(const std::vector<double>& mean_abs, const std::vector<std::string>& names) {
    std::vector<std::size_t> order(mean_abs.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (mean_abs[a] != mean_abs[b]) return mean_abs[a] > mean_abs[b];
        return names[a] < names[b];
    });
    return order;
}

/// Mean |phi| per feature over row-major `rows` (n x M).
inline ImportanceReport importance_report(const ForestExplainer& explainer, std::span<const double> rows, std::size_t n,
                                          const std::vector<std::string>& names) {
    if (n == 0) throw DataError("importance report needs at least one row");
    const std::size_t M = names.size();
    ImportanceReport rep;
    rep.names = names;
    rep.phi.resize(n);
    rep.values.resize(n);
    std::vector<double> base(n);
    parallel_for(n, [&](std::size_t i) {
        const auto x = rows.subspan(i * M, M);
        auto e = explainer.explain(x);
        rep.phi[i] = std::move(e.phi);
        rep.values[i].assign(x.begin(), x.end());
        base[i] = e.base_value;
    });
    rep.mean_abs.assign(M, 0.0);
    for (const auto& p : rep.phi) {
        for (std::size_t j = 0; j < M; ++j) rep.mean_abs[j] += std::abs(p[j]);
    }
    for (auto& v : rep.mean_abs) v /= static_cast<double>(n);
    rep.ranking = rank_by_mean_abs(rep.mean_abs, names);
    rep.base_value = base.front();
    return rep;
}

inline void write_importance_csv(std::ostream& out, const ImportanceReport& rep) {
    out << "rank,feature,mean_abs_phi\n";
    char buf[40];
    for (std::size_t r = 0; r < rep.ranking.size(); ++r) {
        std::snprintf(buf, sizeof buf, "%.12g", rep.mean_abs[rep.ranking[r]]);
        out << r + 1 << ",\"" << rep.names[rep.ranking[r]] << "\"," << buf << '\n';
    }
}

/// Long-format beeswarm data: feature, sample, value, phi.
inline void write_beeswarm_csv(std::ostream& out, const ImportanceReport& rep) {
    out << "feature,sample,value,phi\n";
    char buf[80];
    for (std::size_t f : rep.ranking) {
        for (std::size_t s = 0; s < rep.phi.size(); ++s) {
            std::snprintf(buf, sizeof buf, "%.10g,%.12g", rep.values[s][f], rep.phi[s][f]);
            out << '"' << rep.names[f] << "\"," << s << ',' << buf << '\n';
        }
    }
}

struct Timeline {
    std::vector<int> hours;
    std::vector<Explanation> explanations;          // one per hour
    std::vector<std::vector<double>> values;        // feature values per hour
    std::vector<std::string> names;
    std::vector<double> mean_abs;                   // per feature over the episode
    std::vector<std::size_t> order;                 // features by mean_abs, descending

    /// Min-max normalised prediction per hour (0 when constant).
    std::vector<double> normalized_prediction() const {
        std::vector<double> out;
        if (explanations.empty()) return out;
        double lo = explanations.front().prediction, hi = lo;
        for (const auto& e : explanations) {
            lo = std::min(lo, e.prediction);
            hi = std::max(hi, e.prediction);
        }
        for (const auto& e : explanations) out.push_back(hi > lo ? (e.prediction - lo) / (hi - lo) : 0.0);
        return out;
    }
};

/// Per-hour explanations for the rows of one episode (row-major, ordered by hour).
inline Timeline patient_timeline(const ForestExplainer& explainer, std::span<const double> rows,
                                 const std::vector<int>& hours, const std::vector<std::string>& names) {
    const std::size_t M = names.size();
    if (rows.size() != hours.size() * M) throw DataError("timeline rows do not match hours x features");
    if (!std::is_sorted(hours.begin(), hours.end())) throw DataError("timeline rows must be ordered by hour");
    Timeline tl;
    tl.hours = hours;
    tl.names = names;
    tl.explanations.resize(hours.size());
    tl.values.resize(hours.size());
    parallel_for(hours.size(), [&](std::size_t i) {
        const auto x = rows.subspan(i * M, M);
        tl.explanations[i] = explainer.explain(x);
        tl.explanations[i].sample = "hour " + std::to_string(hours[i]);
        tl.values[i].assign(x.begin(), x.end());
    });
    tl.mean_abs.assign(M, 0.0);
    for (const auto& e : tl.explanations) {
        for (std::size_t j = 0; j < M; ++j) tl.mean_abs[j] += std::abs(e.phi[j]);
    }
    if (!hours.empty()) {
        for (auto& v : tl.mean_abs) v /= static_cast<double>(hours.size());
    }
    tl.order = rank_by_mean_abs(tl.mean_abs, names);
    return tl;
}

/// Force-plot data, one line per (hour, feature): features ordered by the
/// episode's mean |phi| (the magnitude is repeated in mean_abs_phi).
inline void write_timeline_csv(std::ostream& out, const Timeline& tl) {
    out << "hour,feature,phi,value,prediction,prediction_normalized,base_value,mean_abs_phi\n";
    const auto norm = tl.normalized_prediction();
    char buf[160];
    for (std::size_t h = 0; h < tl.hours.size(); ++h) {
        const auto& e = tl.explanations[h];
        for (std::size_t f : tl.order) {
            std::snprintf(buf, sizeof buf, "%.12g,%.10g,%.12g,%.12g,%.12g,%.12g", e.phi[f], tl.values[h][f],
                          e.prediction, norm[h], e.base_value, tl.mean_abs[f]);
            out << tl.hours[h] << ",\"" << tl.names[f] << "\"," << buf << '\n';
        }
    }
}

/// Heatmap data: one row per feature (ordered), one column per hour.
inline void write_heatmap_csv(std::ostream& out, const Timeline& tl) {
    out << "feature,mean_abs_phi";
    for (int h : tl.hours) out << ",h" << h;
    out << '\n';
    char buf[40];
    for (std::size_t f : tl.order) {
        std::snprintf(buf, sizeof buf, "%.12g", tl.mean_abs[f]);
        out << '"' << tl.names[f] << "\"," << buf;
        for (const auto& e : tl.explanations) {
            std::snprintf(buf, sizeof buf, "%.12g", e.phi[f]);
            out << ',' << buf;
        }
        out << '\n';
    }
}

}  // namespace phenoicu
