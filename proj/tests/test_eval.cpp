#include <sstream>

#include <gtest/gtest.h>

#include "phenoicu/eval.hpp"

using namespace phenoicu;

namespace {

double pairwise_auc(const std::vector<double>& s, const std::vector<int>& y) {
    double good = 0, pairs = 0;
    for (std::size_t i = 0; i < s.size(); ++i) {
        for (std::size_t j = 0; j < s.size(); ++j) {
            if (y[i] != 1 || y[j] != 0) continue;
            pairs += 1;
            good += s[i] > s[j] ? 1.0 : s[i] == s[j] ? 0.5 : 0.0;
        }
    }
    return good / pairs;
}

// Precision at every distinct threshold t (predict positive when s >= t),
// weighted by the recall gained at that threshold.
double threshold_sweep_ap(const std::vector<double>& s, const std::vector<int>& y) {
    std::vector<double> t = s;
    std::sort(t.rbegin(), t.rend());
    t.erase(std::unique(t.begin(), t.end()), t.end());
    const double pos = static_cast<double>(std::count(y.begin(), y.end(), 1));
    double ap = 0, prev = 0;
    for (double th : t) {
        double tp = 0, fp = 0;
        for (std::size_t i = 0; i < s.size(); ++i) {
            if (s[i] >= th) (y[i] ? tp : fp) += 1;
        }
        ap += (tp / pos - prev) * tp / (tp + fp);
        prev = tp / pos;
    }
    return ap;
}

double kappa_oracle(const std::vector<int>& p, const std::vector<int>& t, int K, bool linear) {
    std::vector<std::vector<double>> O(static_cast<std::size_t>(K), std::vector<double>(static_cast<std::size_t>(K), 0));
    for (std::size_t i = 0; i < p.size(); ++i) O[static_cast<std::size_t>(t[i])][static_cast<std::size_t>(p[i])] += 1;
    const double n = static_cast<double>(p.size());
    double num = 0, den = 0;
    for (int a = 0; a < K; ++a) {
        for (int b = 0; b < K; ++b) {
            double ra = 0, cb = 0;
            for (int k = 0; k < K; ++k) {
                ra += O[static_cast<std::size_t>(a)][static_cast<std::size_t>(k)];
                cb += O[static_cast<std::size_t>(k)][static_cast<std::size_t>(b)];
            }
            const double w = linear ? std::abs(a - b) : (a != b);
            num += w * O[static_cast<std::size_t>(a)][static_cast<std::size_t>(b)] / n;
            den += w * ra * cb / (n * n);
        }
    }
    return 1 - num / den;
}

struct Stream {
    std::vector<double> s;
    std::vector<int> y;
};

Stream noisy(Rng& rng, std::size_t n, double shift) {
    Stream out;
    for (std::size_t i = 0; i < n; ++i) {
        const int y = rng.uniform() < 0.3;
        out.y.push_back(y);
        out.s.push_back(rng.uniform() + shift * y);
    }
    return out;
}

}  // namespace

TEST(AucRoc, Examples) {
    const std::vector<double> s = {0.1, 0.4, 0.35, 0.8};
    const std::vector<int> y = {0, 0, 1, 1};
    EXPECT_DOUBLE_EQ(auc_roc(s, y), 0.75);
    EXPECT_DOUBLE_EQ(auc_roc(std::vector<double>{0.1, 0.9}, std::vector<int>{0, 1}), 1.0);
    EXPECT_DOUBLE_EQ(auc_roc(std::vector<double>(6, 0.3), std::vector<int>{0, 1, 0, 1, 1, 0}), 0.5);
    EXPECT_THROW(auc_roc(std::vector<double>{0.1, 0.2}, std::vector<int>{1, 1}), DataError);
    EXPECT_THROW(auc_roc(std::vector<double>{0.1}, std::vector<int>{1, 0}), DataError);
}

TEST(AucRoc, MatchesPairwiseEnumeration) {
    Rng rng(1);
    for (int trial = 0; trial < 1000; ++trial) {
        const std::size_t n = 2 + rng.below(40);
        std::vector<double> s;
        std::vector<int> y;
        for (std::size_t i = 0; i < n; ++i) {
            s.push_back(static_cast<double>(rng.below(8)) / 8.0);
            y.push_back(static_cast<int>(rng.below(2)));
        }
        y[0] = 0;
        y[1] = 1;
        ASSERT_EQ(auc_roc(s, y), pairwise_auc(s, y)) << trial;
    }
}

TEST(AucRocProperty, MonotoneTransformAndWeights) {
    Rng rng(2);
    for (int trial = 0; trial < 200; ++trial) {
        const auto st = noisy(rng, 50, 0.3);
        auto y = st.y;
        y[0] = 0;
        y[1] = 1;
        std::vector<double> t;
        for (double v : st.s) t.push_back(std::exp(3 * v) - 7);
        EXPECT_EQ(auc_roc(st.s, y), auc_roc(t, y));
        // integer weights act like duplicated rows
        std::vector<double> w(50);
        std::vector<double> ds;
        std::vector<int> dy;
        for (std::size_t i = 0; i < 50; ++i) {
            w[i] = static_cast<double>(rng.below(3));
            for (int k = 0; k < static_cast<int>(w[i]); ++k) {
                ds.push_back(st.s[i]);
                dy.push_back(y[i]);
            }
        }
        if (std::count(dy.begin(), dy.end(), 1) == 0 || std::count(dy.begin(), dy.end(), 0) == 0) continue;
        EXPECT_NEAR(auc_roc(st.s, y, w), pairwise_auc(ds, dy), 1e-12);
        EXPECT_NEAR(auc_pr(st.s, y, w), threshold_sweep_ap(ds, dy), 1e-12);
    }
}

TEST(AucPr, ExamplesAndSweepOracle) {
    const std::vector<double> s = {0.1, 0.4, 0.35, 0.8};
    const std::vector<int> y = {0, 0, 1, 1};
    EXPECT_NEAR(auc_pr(s, y), threshold_sweep_ap(s, y), 1e-15);
    EXPECT_NEAR(auc_pr(s, y), 0.5 * 1.0 + 0.5 * (2.0 / 3.0), 1e-15);
    EXPECT_DOUBLE_EQ(auc_pr(std::vector<double>{0.1, 0.2, 0.9}, std::vector<int>{0, 1, 1}), 1.0);
    EXPECT_THROW(auc_pr(std::vector<double>{0.1, 0.2}, std::vector<int>{0, 0}), DataError);
    Rng rng(3);
    for (int trial = 0; trial < 300; ++trial) {
        auto st = noisy(rng, 30, 0.2);
        for (auto& v : st.s) v = std::round(v * 5) / 5;  // force ties
        st.y[0] = 1;
        EXPECT_NEAR(auc_pr(st.s, st.y), threshold_sweep_ap(st.s, st.y), 1e-12);
    }
    // random scores approach the positive rate
    std::vector<double> rs;
    std::vector<int> ry;
    for (int i = 0; i < 200000; ++i) {
        rs.push_back(rng.uniform());
        ry.push_back(rng.uniform() < 0.2);
    }
    EXPECT_NEAR(auc_pr(rs, ry), 0.2, 0.01);
}

TEST(Kappa, ExamplesAndOracle) {
    const std::vector<int> x = {0, 1, 2, 2, 1};
    EXPECT_DOUBLE_EQ(kappa(x, x), 1.0);
    EXPECT_DOUBLE_EQ(kappa(x, x, KappaWeighting::None), 1.0);
    // constant majority prediction on a 3-class toy matrix
    const std::vector<int> truth = {0, 1, 1, 1, 2, 2};
    const std::vector<int> major(6, 1);
    EXPECT_NEAR(kappa(major, truth, KappaWeighting::None), kappa_oracle(major, truth, 3, false), 1e-12);
    EXPECT_NEAR(kappa(major, truth, KappaWeighting::None), 0.0, 1e-12);
    EXPECT_NEAR(kappa(major, truth), kappa_oracle(major, truth, 3, true), 1e-12);
    EXPECT_THROW(kappa(std::vector<int>{}, std::vector<int>{}), DataError);
    EXPECT_THROW(parse_kappa_weighting("quadratic"), ConfigError);

    Rng rng(4);
    for (int trial = 0; trial < 300; ++trial) {
        std::vector<int> p, t;
        for (int i = 0; i < 40; ++i) {
            t.push_back(static_cast<int>(rng.below(10)));
            p.push_back(rng.uniform() < 0.5 ? t.back() : static_cast<int>(rng.below(10)));
        }
        t[0] = 9;
        EXPECT_NEAR(kappa(p, t), kappa_oracle(p, t, 10, true), 1e-12);
        EXPECT_NEAR(kappa(p, t, KappaWeighting::None), kappa_oracle(p, t, 10, false), 1e-12);
        EXPECT_DOUBLE_EQ(kappa(t, t), 1.0);
        const double k = kappa(p, t);
        EXPECT_GE(k, -1.0);
        EXPECT_LE(k, 1.0);
    }
    std::vector<int> p, t;
    for (int i = 0; i < 100000; ++i) {
        p.push_back(static_cast<int>(rng.below(10)));
        t.push_back(static_cast<int>(rng.below(10)));
    }
    EXPECT_NEAR(kappa(p, t), 0.0, 0.02);
}

TEST(Mad, Examples) {
    EXPECT_DOUBLE_EQ(mad(std::vector<int>{0}, std::vector<double>{12}), 0.0);
    EXPECT_DOUBLE_EQ(mad(std::vector<int>{0}, std::vector<double>{36}), 24.0);
    EXPECT_DOUBLE_EQ(mad(std::vector<int>{9, 8}, std::vector<double>{432, 264}), 0.0);
    // a truth shifted past every representative adds its offset
    const std::vector<int> pc = {0, 3, 5};
    const std::vector<double> th = {500, 600, 700};
    std::vector<double> shifted = th;
    for (auto& v : shifted) v += 10;
    EXPECT_NEAR(mad(pc, shifted), mad(pc, th) + 10, 1e-12);
    EXPECT_THROW(mad(std::vector<int>{}, std::vector<double>{}), DataError);
    EXPECT_THROW(mad(std::vector<int>{10}, std::vector<double>{1}), DataError);
}

TEST(Brier, HandCasesAndDecomposition) {
    EXPECT_NEAR(brier(std::vector<double>{1, 0}, std::vector<int>{1, 0}), 0.0, 1e-12);
    EXPECT_NEAR(brier(std::vector<double>(4, 0.5), std::vector<int>{1, 0, 0, 1}), 0.25, 1e-12);
    EXPECT_NEAR(brier(std::vector<double>{0.8, 0.3}, std::vector<int>{1, 0}), 0.065, 1e-12);
    EXPECT_THROW(brier(std::vector<double>{1.2}, std::vector<int>{1}), DataError);
    Rng rng(5);
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<double> a, b;
        std::vector<int> ya, yb;
        const std::size_t na = 1 + rng.below(30), nb = 1 + rng.below(30);
        for (std::size_t i = 0; i < na; ++i) {
            a.push_back(rng.uniform());
            ya.push_back(rng.uniform() < 0.5);
        }
        for (std::size_t i = 0; i < nb; ++i) {
            b.push_back(rng.uniform());
            yb.push_back(rng.uniform() < 0.5);
        }
        auto c = a;
        c.insert(c.end(), b.begin(), b.end());
        auto yc = ya;
        yc.insert(yc.end(), yb.begin(), yb.end());
        const double expect = (brier(a, ya) * static_cast<double>(na) + brier(b, yb) * static_cast<double>(nb)) /
                              static_cast<double>(na + nb);
        EXPECT_NEAR(brier(c, yc), expect, 1e-12);
    }
}

TEST(Calibration, Examples) {
    std::vector<double> p(10, 0.7);
    std::vector<int> y = {1, 1, 1, 1, 1, 1, 1, 0, 0, 0};
    auto c = calibration_curve(p, y);
    ASSERT_EQ(c.size(), 1u);
    EXPECT_NEAR(c[0].mean_prob, 0.7, 1e-12);
    EXPECT_NEAR(c[0].observed, 0.7, 1e-12);
    EXPECT_EQ(c[0].count, 10u);
    c = calibration_curve(p, std::vector<int>(10, 0));
    EXPECT_NEAR(c[0].observed, 0.0, 1e-12);
    EXPECT_EQ(calibration_curve(std::vector<double>{1.0, 0.0}, std::vector<int>{1, 0}).size(), 2u);
    EXPECT_THROW(calibration_curve(p, y, 0), ConfigError);
    std::ostringstream csv;
    write_calibration_csv(csv, c);
    EXPECT_EQ(csv.str(), "mean_prob,observed,count\n0.7,0,10\n");
}

TEST(Calibration, WellCalibratedStreamHugsDiagonal) {
    Rng rng(6);
    std::vector<double> p;
    std::vector<int> y;
    double expected = 0;
    for (int i = 0; i < 50000; ++i) {
        p.push_back(rng.uniform());
        y.push_back(rng.uniform() < p.back());
        expected += p.back() * (1 - p.back());
    }
    for (const auto& b : calibration_curve(p, y)) EXPECT_LT(std::abs(b.observed - b.mean_prob), 0.03);
    EXPECT_NEAR(brier(p, y), expected / 50000, 0.005);
}

TEST(Bootstrap, CollapsesDeterministicAndCovers) {
    const auto flat = bootstrap_ci([](std::span<const double>) { return 0.42; }, 50, 200, 1);
    EXPECT_EQ(flat.lo, 0.42);
    EXPECT_EQ(flat.hi, 0.42);
    EXPECT_THROW(bootstrap_ci([](std::span<const double>) { return 0.0; }, 50, 99, 1), ConfigError);

    Rng rng(7);
    int covered = 0;
    for (int trial = 0; trial < 100; ++trial) {
        const auto st = noisy(rng, 200, 0.4);
        const WeightedMetric m = [&](std::span<const double> w) { return auc_roc(st.s, st.y, w); };
        const auto ci = bootstrap_ci(m, 200, 200, static_cast<std::uint64_t>(trial));
        const double point = auc_roc(st.s, st.y);
        covered += ci.lo <= point && point <= ci.hi;
        if (trial == 0) {
            const auto again = bootstrap_ci(m, 200, 200, 0);
            EXPECT_EQ(again.lo, ci.lo);
            EXPECT_EQ(again.hi, ci.hi);
        }
    }
    EXPECT_GE(covered, 99);
}

TEST(Bootstrap, DegenerateResamplesSkipped) {
    std::vector<double> s(30, 0.5);
    std::vector<int> y(30, 0);
    s[0] = 0.9;
    y[0] = 1;
    const auto ci = bootstrap_ci([&](std::span<const double> w) { return auc_roc(s, y, w); }, 30, 300, 2);
    EXPECT_GT(ci.skipped, 0u);
    EXPECT_LT(ci.skipped, 300u);
}

TEST(BootstrapProperty, WidthShrinksWithRootN) {
    Rng rng(8);
    const auto small = noisy(rng, 1000, 0.4), large = noisy(rng, 4000, 0.4);
    const auto width = [](const Stream& st) {
        const auto ci = bootstrap_ci([&](std::span<const double> w) { return auc_roc(st.s, st.y, w); }, st.s.size(), 400, 3);
        return ci.hi - ci.lo;
    };
    const double ratio = width(small) / width(large);
    EXPECT_NEAR(ratio, 2.0, 0.6);
}

TEST(Significance, SelfDominanceAndExchangeable) {
    Rng rng(9);
    const auto st = noisy(rng, 300, 0.3);
    const WeightedMetric base = [&](std::span<const double> w) { return auc_roc(st.s, st.y, w); };
    const auto self = significance_matrix({"a", "b"}, {base, base}, 300, 200, 1);
    EXPECT_EQ(self.wins[0][1] + self.wins[1][0], 0u);
    EXPECT_DOUBLE_EQ(self.tie_percent(0, 1), 100.0);

    auto worse = st.s;
    for (std::size_t i = 0; i < worse.size(); ++i) worse[i] -= st.y[i] ? 0.1 : 0.0;
    const WeightedMetric dominated = [&](std::span<const double> w) { return auc_roc(worse, st.y, w); };
    const auto dom = significance_matrix({"a", "b"}, {base, dominated}, 300, 200, 1);
    EXPECT_DOUBLE_EQ(dom.win_percent(0, 1), 100.0);
    EXPECT_DOUBLE_EQ(dom.win_percent(1, 0), 0.0);

    // exchangeable noise around a shared signal, averaged over datasets
    double mean_win = 0;
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<double> a, b;
        for (std::size_t i = 0; i < st.s.size(); ++i) {
            a.push_back(st.s[i] + rng.uniform(-0.2, 0.2));
            b.push_back(st.s[i] + rng.uniform(-0.2, 0.2));
        }
        const auto ex = significance_matrix({"a", "b"},
                                            {[&](std::span<const double> w) { return auc_roc(a, st.y, w); },
                                             [&](std::span<const double> w) { return auc_roc(b, st.y, w); }},
                                            300, 500, static_cast<std::uint64_t>(trial));
        mean_win += ex.win_percent(0, 1) / 20;
    }
    EXPECT_GE(mean_win, 40.0);
    EXPECT_LE(mean_win, 60.0);
    EXPECT_THROW(significance_matrix({"a"}, {base}, 300, 10, 1), DataError);
}

TEST(SignificanceProperty, PercentagesSumToHundred) {
    Rng rng(10);
    for (int trial = 0; trial < 20; ++trial) {
        const auto st = noisy(rng, 60, 0.2);
        std::vector<std::vector<double>> models(3, st.s);
        for (auto& m : models) {
            for (auto& v : m) v = std::round((v + rng.uniform(-0.3, 0.3)) * 4);  // coarse, so ties occur
        }
        std::vector<WeightedMetric> fns;
        for (const auto& m : models) fns.push_back([&, m](std::span<const double> w) { return auc_roc(m, st.y, w); });
        const auto sm = significance_matrix({"a", "b", "c"}, fns, 60, 200, static_cast<std::uint64_t>(trial));
        for (std::size_t i = 0; i < 3; ++i) {
            for (std::size_t j = 0; j < 3; ++j) {
                if (i == j) continue;
                EXPECT_EQ(sm.wins[i][j] + sm.wins[j][i] + sm.ties[i][j], sm.resamples);
            }
        }
        const auto j = to_json(sm);
        EXPECT_TRUE(j["win_percent"][0][0].is_null());
    }
}

TEST(Slices, IdenticalTagsAndDisjointCounts) {
    std::vector<Episode> eps;
    std::vector<std::string> rows;
    Rng rng(11);
    std::vector<double> s;
    std::vector<int> y;
    for (int e = 0; e < 40; ++e) {
        Episode ep;
        ep.patient_id = "p" + std::to_string(e);
        ep.episode_id = "e" + std::to_string(e);
        ep.length_hours = 24 * (1 + e % 20);
        ep.cohort_tags = {"all"};
        eps.push_back(ep);
        for (int k = 0; k < 3; ++k) {
            rows.push_back(ep.episode_id);
            y.push_back(rng.uniform() < 0.4);
            s.push_back(rng.uniform() + 0.3 * y.back());
        }
    }
    y[0] = 0;
    y[1] = 1;
    const WeightedMetric m = [&](std::span<const double> w) { return auc_roc(s, y, w); };
    const auto tag = sliced_eval(rows, eps, Slicer::CohortTag, m);
    ASSERT_EQ(tag.size(), 1u);
    EXPECT_DOUBLE_EQ(*tag[0].value, auc_roc(s, y));
    const auto buckets = sliced_eval(rows, eps, Slicer::LosBucket, m);
    std::size_t total = 0;
    for (const auto& b : buckets) total += b.count;
    EXPECT_EQ(total, rows.size());
    EXPECT_EQ(buckets.size(), 4u);
    // a slice with one class is reported absent
    std::vector<int> zeros(y.size(), 0);
    const auto none = sliced_eval(rows, eps, Slicer::CohortTag, [&](std::span<const double> w) { return auc_roc(s, zeros, w); });
    EXPECT_FALSE(none[0].value.has_value());
    rows.push_back("ghost");
    EXPECT_THROW(sliced_eval(rows, eps, Slicer::CohortTag, m), DataError);
    EXPECT_EQ(los_bucket(71), "los<3d");
    EXPECT_EQ(los_bucket(72), "los3-7d");
    EXPECT_EQ(los_bucket(400), "los>=14d");
}
