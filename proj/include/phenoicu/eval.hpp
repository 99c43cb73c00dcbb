#pragma once

// Metrics, calibration, bootstrap intervals and pairwise significance.
// Every metric accepts optional per-sample weights so that a bootstrap
// resample can be scored from its multiplicity vector without copying.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "phenoicu/cohort.hpp"
#include "phenoicu/common.hpp"

namespace phenoicu {

struct ConfidenceInterval {
    double lo = 0.0;
    double hi = 0.0;
    double level = 0.95;
    std::size_t resamples = 0;
    std::size_t skipped = 0;  // degenerate resamples left out
};

struct MetricValue {
    std::string name;
    double value = 0.0;
    std::optional<ConfidenceInterval> ci;
};

inline nlohmann::json to_json(const MetricValue& m) {
    nlohmann::json j{{"name", m.name}, {"value", m.value}};
    if (m.ci) {
        j["ci"] = {{"lo", m.ci->lo},
                   {"hi", m.ci->hi},
                   {"level", m.ci->level},
                   {"resamples", m.ci->resamples},
                   {"skipped", m.ci->skipped}};
    }
    return j;
}

namespace detail {

inline double weight_at(std::span<const double> w, std::size_t i) { return w.empty() ? 1.0 : w[i]; }

inline void check_lengths(std::size_t a, std::size_t b, std::span<const double> w, const char* what) {
    if (a != b) throw DataError(std::string(what) + ": inputs differ in length");
    if (!w.empty() && w.size() != a) throw DataError(std::string(what) + ": weights differ in length");
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Binary metrics

/// Sample order by ascending score; reusable across resamples.
inline std::vector<std::size_t> score_order(std::span<const double> scores) {
    std::vector<std::size_t> order(scores.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
    return order;
}

/// Mann-Whitney AUC with ties counted one half. `order` must come from
/// score_order(scores).
inline double auc_roc_sorted(std::span<const double> scores, std::span<const int> labels,
                             std::span<const std::size_t> order, std::span<const double> weights = {}) {
    double neg_below = 0.0, numerator = 0.0, wpos = 0.0, wneg = 0.0;
    std::size_t i = 0;
    while (i < order.size()) {
        std::size_t j = i;
        double gp = 0.0, gn = 0.0;
        while (j < order.size() && scores[order[j]] == scores[order[i]]) {
            const double w = detail::weight_at(weights, order[j]);
            (labels[order[j]] == 1 ? gp : gn) += w;
            ++j;
        }
        numerator += gp * (neg_below + 0.5 * gn);
        neg_below += gn;
        wpos += gp;
        wneg += gn;
        i = j;
    }
    if (wpos == 0.0 || wneg == 0.0) throw DataError("AUC-ROC needs both classes present");
    return numerator / (wpos * wneg);
}

inline double auc_roc(std::span<const double> scores, std::span<const int> labels, std::span<const double> weights = {}) {
    detail::check_lengths(scores.size(), labels.size(), weights, "auc_roc");
    const auto order = score_order(scores);
    return auc_roc_sorted(scores, labels, order, weights);
}

/// Average precision: sum over distinct thresholds (descending) of
/// (recall step) x precision.
inline double auc_pr_sorted(std::span<const double> scores, std::span<const int> labels,
                            std::span<const std::size_t> order, std::span<const double> weights = {}) {
    double total_pos = 0.0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] == 1) total_pos += detail::weight_at(weights, i);
    }
    if (total_pos == 0.0) throw DataError("AUC-PR needs at least one positive");
    double tp = 0.0, fp = 0.0, ap = 0.0, prev_recall = 0.0;
    std::size_t i = order.size();
    while (i > 0) {
        std::size_t j = i;
        const double s = scores[order[i - 1]];
        while (j > 0 && scores[order[j - 1]] == s) {
            const double w = detail::weight_at(weights, order[j - 1]);
            (labels[order[j - 1]] == 1 ? tp : fp) += w;
            --j;
        }
        if (tp + fp > 0.0) {
            const double recall = tp / total_pos;
            ap += (recall - prev_recall) * (tp / (tp + fp));
            prev_recall = recall;
        }
        i = j;
    }
    return ap;
}

inline double auc_pr(std::span<const double> scores, std::span<const int> labels, std::span<const double> weights = {}) {
    detail::check_lengths(scores.size(), labels.size(), weights, "auc_pr");
    const auto order = score_order(scores);
    return auc_pr_sorted(scores, labels, order, weights);
}

inline double brier(std::span<const double> probs, std::span<const int> labels, std::span<const double> weights = {}) {
    detail::check_lengths(probs.size(), labels.size(), weights, "brier");
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < probs.size(); ++i) {
        if (!(probs[i] >= 0.0 && probs[i] <= 1.0)) throw DataError("brier: probability outside [0,1]");
        const double w = detail::weight_at(weights, i);
        const double d = probs[i] - static_cast<double>(labels[i]);
        num += w * d * d;
        den += w;
    }
    if (den == 0.0) throw DataError("brier: empty input");
    return num / den;
}

struct CalibrationBin {
    double mean_prob = 0.0;
    double observed = 0.0;
    std::size_t count = 0;
};

/// Equal-width bins on [0,1]; empty bins are omitted.
inline std::vector<CalibrationBin> calibration_curve(std::span<const double> probs, std::span<const int> labels,
                                                     std::size_t n_bins = 10) {
    detail::check_lengths(probs.size(), labels.size(), {}, "calibration_curve");
    if (n_bins == 0) throw ConfigError("calibration_curve needs at least one bin");
    std::vector<double> sum_p(n_bins, 0.0), sum_y(n_bins, 0.0);
    std::vector<std::size_t> count(n_bins, 0);
    for (std::size_t i = 0; i < probs.size(); ++i) {
        if (!(probs[i] >= 0.0 && probs[i] <= 1.0)) throw DataError("calibration_curve: probability outside [0,1]");
        auto b = static_cast<std::size_t>(probs[i] * static_cast<double>(n_bins));
        b = std::min(b, n_bins - 1);
        sum_p[b] += probs[i];
        sum_y[b] += labels[i];
        ++count[b];
    }
    std::vector<CalibrationBin> out;
    for (std::size_t b = 0; b < n_bins; ++b) {
        if (count[b] == 0) continue;
        const double n = static_cast<double>(count[b]);
        out.push_back({sum_p[b] / n, sum_y[b] / n, count[b]});
    }
    return out;
}

inline void write_calibration_csv(std::ostream& out, const std::vector<CalibrationBin>& bins) {
    out << "mean_prob,observed,count\n";
    char buf[64];
    for (const auto& b : bins) {
        std::snprintf(buf, sizeof buf, "%.12g,%.12g", b.mean_prob, b.observed);
        out << buf << ',' << b.count << '\n';
    }
}

// ---------------------------------------------------------------------------
// Multiclass metrics

enum class KappaWeighting { None, Linear };

inline KappaWeighting parse_kappa_weighting(std::string_view s) {
    if (s == "none") return KappaWeighting::None;
    if (s == "linear") return KappaWeighting::Linear;
    throw ConfigError("unknown kappa weighting '" + std::string(s) + "'");
}

/// Cohen's kappa: 1 - sum w O / sum w E over the (weighted) confusion matrix.
inline double kappa(std::span<const int> pred, std::span<const int> truth, KappaWeighting weighting = KappaWeighting::Linear,
                    std::span<const double> weights = {}) {
    detail::check_lengths(pred.size(), truth.size(), weights, "kappa");
    if (pred.empty()) throw DataError("kappa: empty input");
    int k = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        if (pred[i] < 0 || truth[i] < 0) throw DataError("kappa: negative class");
        k = std::max({k, pred[i] + 1, truth[i] + 1});
    }
    const auto K = static_cast<std::size_t>(k);
    std::vector<double> O(K * K, 0.0), rows(K, 0.0), cols(K, 0.0);
    double total = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const double w = detail::weight_at(weights, i);
        const auto t = static_cast<std::size_t>(truth[i]), p = static_cast<std::size_t>(pred[i]);
        O[t * K + p] += w;
        rows[t] += w;
        cols[p] += w;
        total += w;
    }
    if (total == 0.0) throw DataError("kappa: zero total weight");
    double observed = 0.0, expected = 0.0;
    for (std::size_t a = 0; a < K; ++a) {
        for (std::size_t b = 0; b < K; ++b) {
            const double w = weighting == KappaWeighting::Linear ? std::abs(static_cast<double>(a) - static_cast<double>(b))
                                                                 : (a == b ? 0.0 : 1.0);
            observed += w * O[a * K + b] / total;
            expected += w * rows[a] * cols[b] / (total * total);
        }
    }
    if (expected == 0.0) {
        if (observed == 0.0) return 1.0;
        throw DataError("kappa: undefined for a single class");
    }
    return 1.0 - observed / expected;
}

/// Hours standing in for each remaining-stay class.
inline const std::array<double, 10>& los_representative_hours() {
    static const std::array<double, 10> hours{12, 36, 60, 84, 108, 132, 156, 180, 264, 432};
    return hours;
}

inline double mad(std::span<const int> pred_classes, std::span<const double> true_hours, std::span<const double> weights = {}) {
    detail::check_lengths(pred_classes.size(), true_hours.size(), weights, "mad");
    if (pred_classes.empty()) throw DataError("mad: empty input");
    const auto& rep = los_representative_hours();
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < pred_classes.size(); ++i) {
        if (pred_classes[i] < 0 || pred_classes[i] >= 10) throw DataError("mad: class outside 0..9");
        const double w = detail::weight_at(weights, i);
        num += w * std::abs(rep[static_cast<std::size_t>(pred_classes[i])] - true_hours[i]);
        den += w;
    }
    if (den == 0.0) throw DataError("mad: zero total weight");
    return num / den;
}

// ---------------------------------------------------------------------------
// Resampling

/// Scores one resample given its multiplicity vector. Throws DataError when
/// the resample is degenerate.
using WeightedMetric = std::function<double(std::span<const double>)>;

/// Multiplicities of resample `r`: n draws with replacement from a stream
/// derived from (seed, r).
inline std::vector<double> resample_weights(std::size_t n, std::uint64_t seed, std::size_t r) {
    Rng rng(derive_seed(seed, r));
    std::vector<double> w(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) w[rng.below(n)] += 1.0;
    return w;
}

/// Linear-interpolated quantile of a sorted vector.
inline double quantile_sorted(const std::vector<double>& v, double q) {
    if (v.empty()) throw DataError("quantile of empty set");
    const double pos = q * static_cast<double>(v.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, v.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    return v[lo] + (v[hi] - v[lo]) * frac;
}

/// Percentile bootstrap interval over n samples.
inline ConfidenceInterval bootstrap_ci(const WeightedMetric& metric, std::size_t n, std::size_t n_resamples,
                                       std::uint64_t seed, double level = 0.95) {
    if (n_resamples < 100) throw ConfigError("bootstrap needs at least 100 resamples");
    if (n == 0) throw DataError("bootstrap over empty sample");
    std::vector<double> values(n_resamples, 0.0);
    std::vector<char> ok(n_resamples, 0);
    parallel_for(n_resamples, [&](std::size_t r) {
        const auto w = resample_weights(n, seed, r);
        try {
            values[r] = metric(w);
            ok[r] = 1;
        } catch (const DataError&) {
        }
    });
    std::vector<double> kept;
    for (std::size_t r = 0; r < n_resamples; ++r) {
        if (ok[r]) kept.push_back(values[r]);
    }
    if (kept.empty()) throw DataError("every bootstrap resample was degenerate");
    std::sort(kept.begin(), kept.end());
    const double alpha = (1.0 - level) / 2.0;
    return {quantile_sorted(kept, alpha), quantile_sorted(kept, 1.0 - alpha), level, n_resamples, n_resamples - kept.size()};
}

struct SignificanceMatrix {
    std::vector<std::string> models;
    // wins[i][j]: resamples where model i scored strictly better than j.
    std::vector<std::vector<std::size_t>> wins;
    std::vector<std::vector<std::size_t>> ties;
    std::size_t resamples = 0;  // non-degenerate resamples
    std::size_t skipped = 0;

    double win_percent(std::size_t i, std::size_t j) const {
        return resamples ? 100.0 * static_cast<double>(wins[i][j]) / static_cast<double>(resamples) : 0.0;
    }
    double tie_percent(std::size_t i, std::size_t j) const {
        return resamples ? 100.0 * static_cast<double>(ties[i][j]) / static_cast<double>(resamples) : 0.0;
    }
};

/// Compares every pair of models on the same resample indices. `metrics[m]`
/// scores model m; higher is better unless `lower_is_better`.
inline SignificanceMatrix significance_matrix(const std::vector<std::string>& names,
                                              const std::vector<WeightedMetric>& metrics, std::size_t n,
                                              std::size_t n_resamples, std::uint64_t seed, bool lower_is_better = false) {
    if (names.size() < 2 || names.size() != metrics.size()) throw DataError("significance needs >= 2 aligned models");
    if (n_resamples == 0) throw ConfigError("significance needs at least one resample");
    const std::size_t M = names.size();
    std::vector<std::vector<double>> values(n_resamples, std::vector<double>(M, 0.0));
    std::vector<char> ok(n_resamples, 0);
    parallel_for(n_resamples, [&](std::size_t r) {
        const auto w = resample_weights(n, seed, r);
        try {
            for (std::size_t m = 0; m < M; ++m) values[r][m] = metrics[m](w);
            ok[r] = 1;
        } catch (const DataError&) {
        }
    });
    SignificanceMatrix sm;
    sm.models = names;
    sm.wins.assign(M, std::vector<std::size_t>(M, 0));
    sm.ties.assign(M, std::vector<std::size_t>(M, 0));
    for (std::size_t r = 0; r < n_resamples; ++r) {
        if (!ok[r]) {
            ++sm.skipped;
            continue;
        }
        ++sm.resamples;
        for (std::size_t i = 0; i < M; ++i) {
            for (std::size_t j = 0; j < M; ++j) {
                if (i == j) continue;
                const double a = values[r][i], b = values[r][j];
                if (a == b) ++sm.ties[i][j];
                else if (lower_is_better ? a < b : a > b) ++sm.wins[i][j];
            }
        }
    }
    return sm;
}

inline nlohmann::json to_json(const SignificanceMatrix& sm) {
    nlohmann::json win = nlohmann::json::array(), tie = nlohmann::json::array();
    for (std::size_t i = 0; i < sm.models.size(); ++i) {
        nlohmann::json wr = nlohmann::json::array(), tr = nlohmann::json::array();
        for (std::size_t j = 0; j < sm.models.size(); ++j) {
            if (i == j) {
                wr.push_back(nullptr);
                tr.push_back(nullptr);
            } else {
                wr.push_back(sm.win_percent(i, j));
                tr.push_back(sm.tie_percent(i, j));
            }
        }
        win.push_back(wr);
        tie.push_back(tr);
    }
    return {{"models", sm.models}, {"win_percent", win}, {"tie_percent", tie}, {"resamples", sm.resamples},
            {"skipped", sm.skipped}};
}

// ---------------------------------------------------------------------------
// Slices

enum class Slicer { CohortTag, LosBucket };

inline Slicer parse_slicer(std::string_view s) {
    if (s == "cohort_tag") return Slicer::CohortTag;
    if (s == "los_bucket") return Slicer::LosBucket;
    throw ConfigError("unknown slicer '" + std::string(s) + "'");
}

/// Total-stay bucket of an episode.
inline std::string los_bucket(int length_hours) {
    const int days = length_hours / 24;
    if (days < 3) return "los<3d";
    if (days < 7) return "los3-7d";
    if (days < 14) return "los7-14d";
    return "los>=14d";
}

struct SliceResult {
    std::string slice;
    std::size_t count = 0;
    std::optional<double> value;  // absent when the slice is empty or degenerate
};

/// Scores a metric independently on each slice. `row_episode[i]` names the
/// episode of prediction row i; `metric` receives a 0/1 row mask as weights.
inline std::vector<SliceResult> sliced_eval(const std::vector<std::string>& row_episode,
                                            const std::vector<Episode>& episodes, Slicer slicer,
                                            const WeightedMetric& metric) {
    std::map<std::string, std::vector<std::string>> slices_of;
    std::set<std::string> slice_names;
    for (const auto& e : episodes) {
        std::vector<std::string> s;
        if (slicer == Slicer::CohortTag) s.assign(e.cohort_tags.begin(), e.cohort_tags.end());
        else s.push_back(los_bucket(e.length_hours));
        slice_names.insert(s.begin(), s.end());
        slices_of[e.episode_id] = std::move(s);
    }
    std::vector<SliceResult> out;
    for (const auto& name : slice_names) {
        std::vector<double> mask(row_episode.size(), 0.0);
        std::size_t count = 0;
        for (std::size_t i = 0; i < row_episode.size(); ++i) {
            const auto it = slices_of.find(row_episode[i]);
            if (it == slices_of.end()) throw DataError("prediction row for unknown episode " + row_episode[i]);
            if (std::find(it->second.begin(), it->second.end(), name) != it->second.end()) {
                mask[i] = 1.0;
                ++count;
            }
        }
        SliceResult res{name, count, std::nullopt};
        if (count > 0) {
            try {
                res.value = metric(mask);
            } catch (const DataError&) {
            }
        }
        out.push_back(std::move(res));
    }
    return out;
}

}  // namespace phenoicu
