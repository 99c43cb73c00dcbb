// Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any FAIL.
// Usage: acceptance [criterion ...]   (default: all)

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <numeric>
#include <set>

#include "phenoicu/pipeline.hpp"

using namespace phenoicu;
namespace fs = std::filesystem;

namespace {

// Tolerances and sizes.
constexpr double kShapTol = 1e-9;
constexpr double kExactAdditivityTol = 1e-10;
constexpr double kTreeAdditivityTol = 1e-6;
constexpr double kShapBudgetSeconds = 120;
constexpr double kGradTol = 1e-4;
constexpr double kMutationFloor = 1e-2;
constexpr double kBrierTol = 1e-12;
constexpr double kKappaTol = 1e-12;
constexpr double kWinPercentFloor = 95.0;
constexpr double kDirectionalBudgetSeconds = 15 * 60;
constexpr std::size_t kDirectionalPatients = 5000;
constexpr std::size_t kResamples = 1000;
constexpr double kCalibrationBinTol = 0.03;
constexpr double kCalibrationBrierTol = 0.005;

int failures = 0;

void report(int id, bool ok, const std::string& what, const std::string& detail) {
    std::printf("%s criterion %d: %s (%s)\n", ok ? "PASS" : "FAIL", id, what.c_str(), detail.c_str());
    std::fflush(stdout);
    failures += !ok;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt_g(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.4g", v);
    return buf;
}

fs::path data_root() {
    if (const char* env = std::getenv("PHENOICU_DATA")) return env;
    return PHENOICU_DATA_DIR;
}

RunConfig config(json j) { return parse_run_config(j, fs::current_path(), data_root()); }

// ---------------------------------------------------------------------------

void criterion1() {
    const auto t0 = std::chrono::steady_clock::now();
    Rng rng(1001);
    double worst_path = 0, worst_marg = 0, worst_exact_add = 0, worst_tree_add = 0;
    for (int f = 0; f < 50; ++f) {
        const std::size_t M = 2 + rng.below(11);  // 2..12
        const std::size_t n = 80;
        std::vector<double> x(n * M);
        std::vector<int> y(n);
        for (auto& v : x) v = rng.below(3) == 0 ? static_cast<double>(rng.below(2)) : rng.uniform(-1, 1);
        for (std::size_t i = 0; i < n; ++i) y[i] = x[i * M] + 0.5 * x[i * M + M - 1] + rng.uniform(-0.7, 0.7) > 0.2;
        ForestConfig cfg;
        cfg.n_estimators = 1 + rng.below(5);
        cfg.max_depth = 1 + static_cast<int>(rng.below(4));
        cfg.max_features = 1 + rng.below(M);
        cfg.seed = rng.below(1u << 30);
        const auto forest = train_forest(x, n, M, y, 2, cfg);
        std::vector<double> bg_rows;
        for (int b = 0; b < 4; ++b) {
            const auto r = rng.below(n);
            bg_rows.insert(bg_rows.end(), x.begin() + static_cast<std::ptrdiff_t>(r * M),
                           x.begin() + static_cast<std::ptrdiff_t>((r + 1) * M));
        }
        const BackgroundSet bg(bg_rows, M);
        const ModelFn fn = [&](std::span<const double> z) { return forest.predict_proba(z)[1]; };
        for (int s = 0; s < 20; ++s) {
            std::vector<double> q(M);
            for (auto& v : q) v = rng.below(3) == 0 ? static_cast<double>(rng.below(2)) : rng.uniform(-1, 1);
            const auto fast = tree_shapley(forest, q);
            const auto exact = exact_shapley_path_dependent(forest, q);
            const auto fast_m = tree_shapley_marginal(forest, q, bg);
            const auto exact_m = exact_shapley(fn, q, bg);
            for (std::size_t j = 0; j < M; ++j) {
                worst_path = std::max(worst_path, std::abs(fast.phi[j] - exact.phi[j]));
                worst_marg = std::max(worst_marg, std::abs(fast_m.phi[j] - exact_m.phi[j]));
            }
            worst_exact_add = std::max({worst_exact_add, std::abs(exact.sum() - exact.prediction),
                                        std::abs(exact_m.sum() - exact_m.prediction)});
            worst_tree_add = std::max({worst_tree_add, std::abs(fast.sum() - fast.prediction),
                                       std::abs(fast_m.sum() - fast_m.prediction)});
        }
    }
    const double secs = seconds_since(t0);
    const bool ok = worst_path <= kShapTol && worst_marg <= kShapTol && worst_exact_add <= kExactAdditivityTol &&
                    worst_tree_add <= kTreeAdditivityTol && secs < kShapBudgetSeconds;
    report(1, ok, "tree Shapley equals exact enumeration",
           "max |dphi| path " + fmt_g(worst_path) + ", marginal " + fmt_g(worst_marg) + "; additivity exact " +
               fmt_g(worst_exact_add) + ", tree " + fmt_g(worst_tree_add) + "; " + fmt_g(secs) + " s");
}

void criterion2() {
    Rng rng(2002);
    double worst = 0, mutated = 1e300;
    for (int trial = 0; trial < 5; ++trial) {
        for (int outputs : {1, 3}) {
            const Lstm m(LstmParams::random(3, 4, outputs, rng));
            std::vector<Sequence> batch;
            for (int s = 0; s < 2; ++s) {
                Sequence q{Eigen::MatrixXd(3, 3), {}};
                for (Eigen::Index i = 0; i < q.x.size(); ++i) q.x.data()[i] = rng.uniform(-1, 1);
                for (int t = 0; t < 3; ++t) q.labels.push_back(static_cast<int>(rng.below(outputs == 1 ? 2 : 3)));
                batch.push_back(q);
            }
            worst = std::max(worst, gradient_check(m, batch));
            mutated = std::min(mutated, gradient_check(m, batch, 1e-5, GradientMutation::CorruptForgetGate));
        }
    }
    report(2, worst < kGradTol && mutated > kMutationFloor, "LSTM gradient check",
           "max rel err " + fmt_g(worst) + ", corrupted forget gate min err " + fmt_g(mutated));
}

void criterion3() {
    Rng rng(3003);
    std::size_t auc_mismatch = 0;
    for (int trial = 0; trial < 1000; ++trial) {
        const std::size_t n = 2 + rng.below(60);
        std::vector<double> s(n);
        std::vector<int> y(n);
        for (std::size_t i = 0; i < n; ++i) {
            s[i] = static_cast<double>(rng.below(10)) / 10.0;
            y[i] = static_cast<int>(rng.below(2));
        }
        y[0] = 0;
        y[1] = 1;
        double good = 0, pairs = 0;
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < n; ++j) {
                if (y[i] == 1 && y[j] == 0) {
                    pairs += 1;
                    good += s[i] > s[j] ? 1.0 : s[i] == s[j] ? 0.5 : 0.0;
                }
            }
        }
        auc_mismatch += auc_roc(s, y) != good / pairs;
    }
    double kappa_err = 0;
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<int> p(50), t(50);
        for (std::size_t i = 0; i < 50; ++i) {
            t[i] = static_cast<int>(rng.below(10));
            p[i] = rng.uniform() < 0.5 ? t[i] : static_cast<int>(rng.below(10));
        }
        p[0] = 9;
        for (bool linear : {true, false}) {
            double O[10][10] = {}, r[10] = {}, c[10] = {};
            for (std::size_t i = 0; i < 50; ++i) {
                O[t[i]][p[i]] += 1.0 / 50;
                r[t[i]] += 1.0 / 50;
                c[p[i]] += 1.0 / 50;
            }
            double num = 0, den = 0;
            for (int a = 0; a < 10; ++a) {
                for (int b = 0; b < 10; ++b) {
                    const double w = linear ? std::abs(a - b) : a != b;
                    num += w * O[a][b];
                    den += w * r[a] * c[b];
                }
            }
            const double got = kappa(p, t, linear ? KappaWeighting::Linear : KappaWeighting::None);
            kappa_err = std::max(kappa_err, std::abs(got - (1 - num / den)));
        }
    }
    const double b0 = brier(std::vector<double>{1, 0, 1}, std::vector<int>{1, 0, 1});
    const double b1 = brier(std::vector<double>{0.5, 0.5}, std::vector<int>{1, 0});
    const double b2 = brier(std::vector<double>{0.8, 0.3}, std::vector<int>{1, 0});
    const double brier_err = std::max({std::abs(b0), std::abs(b1 - 0.25), std::abs(b2 - 0.065)});
    report(3, auc_mismatch == 0 && kappa_err <= kKappaTol && brier_err <= kBrierTol, "metric oracles",
           std::to_string(auc_mismatch) + "/1000 AUC mismatches, kappa err " + fmt_g(kappa_err) + ", Brier err " +
               fmt_g(brier_err));
}

void criterion4() {
    bool los_ok = los_class(23) == 0 && los_class(24) == 1 && los_class(191) == 7 && los_class(192) == 8;
    for (int h = 336; h < 3000; ++h) los_ok = los_ok && los_class(h) == 9;
    for (int h = 0; h < 336; ++h) {
        const double d = h / 24.0;
        const int want = d < 8 ? static_cast<int>(d) : 8;
        los_ok = los_ok && los_class(h) == want;
    }
    GeneratorConfig gc;
    gc.n_patients = 9000;
    gc.seed = 404;
    std::size_t checked = 0, violations = 0;
    for (const auto& e : generate(gc)) {
        if (!e.died_in_hospital) continue;
        ++checked;
        const auto rows = decomp_labels(e, 5);
        const int first = std::max(5, *e.death_hour - 24);
        for (const auto& r : rows) violations += r.label != (r.hour >= first ? 1 : 0);
    }
    report(4, los_ok && violations == 0 && checked >= 1000, "label rules",
           std::string("LOS sweep ") + (los_ok ? "ok" : "broken") + ", " + std::to_string(checked) +
               " non-survivors, " + std::to_string(violations) + " suffix violations");
}

void criterion5() {
    const auto hypo = TermId::parse("HP:0002615"), bp = TermId::parse("HP:0030972");
    PersistencyMap pm;
    pm.set(bp, Persistency::Persistent);
    const auto hours_of = [](const std::vector<TermSet>& a, const TermId& t) {
        std::vector<int> out;
        for (std::size_t h = 0; h < a.size(); ++h) {
            if (a[h].count(t)) out.push_back(static_cast<int>(h));
        }
        return out;
    };
    const auto range = [](int a, int b) {
        std::vector<int> r(static_cast<std::size_t>(b - a));
        std::iota(r.begin(), r.end(), a);
        return r;
    };
    const std::vector<Annotation> tr = {{hypo, 10, "n1", std::nullopt, "e"}};
    const std::vector<Annotation> ps = {{bp, 10, "n1", std::nullopt, "e"}};
    const bool ex1 = hours_of(propagate_phenotypes(tr, pm, {10, 22}, 50, true), hypo) == range(10, 22);
    const bool ex2 = hours_of(propagate_phenotypes(ps, pm, {10, 22}, 50, true), bp) == range(10, 50);
    const bool ex3 = hours_of(propagate_phenotypes(tr, pm, {10, 22}, 50, false), hypo) == range(10, 11);

    Rng rng(5005);
    const std::vector<TermId> pool = {hypo, bp, TermId::parse("HP:0012531"), TermId::parse("HP:0001635")};
    std::size_t violations = 0;
    for (int trial = 0; trial < 10000; ++trial) {
        const int length = 1 + static_cast<int>(rng.below(240));
        std::set<int> note_hours;
        for (std::size_t i = 0, k = rng.below(7); i < k; ++i) note_hours.insert(static_cast<int>(rng.below(static_cast<std::uint64_t>(length))));
        std::vector<Annotation> anns;
        for (int h : note_hours) {
            for (const auto& t : pool) {
                if (rng.uniform() < 0.4) anns.push_back({t, h, "n", std::nullopt, "e"});
            }
        }
        const std::vector<int> nh(note_hours.begin(), note_hours.end());
        const auto off = propagate_phenotypes(anns, pm, nh, length, false);
        const auto on = propagate_phenotypes(anns, pm, nh, length, true);
        for (int h = 0; h < length; ++h) {
            const auto& a = off[static_cast<std::size_t>(h)];
            const auto& b = on[static_cast<std::size_t>(h)];
            violations += !std::includes(b.begin(), b.end(), a.begin(), a.end());
        }
    }
    report(5, ex1 && ex2 && ex3 && violations == 0, "propagation semantics",
           std::string("examples ") + (ex1 ? "1" : "-") + (ex2 ? "2" : "-") + (ex3 ? "3" : "-") + ", " +
               std::to_string(violations) + " monotonicity violations over 10000 episodes");
}

// Shared by 6, 7 and 9: the planted cohort and its mortality config.
json directional_config(const std::string& task) {
    json j = {{"task", task}, {"seed", 7}, {"generator", {{"n_patients", kDirectionalPatients}}}};
    if (task == "mortality") j["model"] = {{"type", "rf"}, {"rf", {{"n_estimators", 300}}}};
    else j["model"] = {{"type", "rf"}, {"rf", {{"n_estimators", 40}, {"min_samples_leaf", 5}}}};
    return j;
}

const Inputs& planted_inputs() {
    static const Inputs in = load_inputs(config(directional_config("mortality")));
    return in;
}

void criterion6() {
    const auto t0 = std::chrono::steady_clock::now();
    std::string detail;
    bool ok = true;
    for (const std::string task : {"mortality", "decompensation"}) {
        const auto cfg = config(directional_config(task));
        const auto runs = run_variants(cfg, planted_inputs(), cfg.variants);
        const auto sm = significance_of(cfg, runs, kResamples, derive_seed(cfg.seed, 400));
        const double win = sm.win_percent(1, 0);
        const double a0 = auc_roc(runs[0].predictions.positive(), runs[0].predictions.labels);
        const double a1 = auc_roc(runs[1].predictions.positive(), runs[1].predictions.labels);
        ok = ok && win >= kWinPercentFloor;
        detail += task + ": AUC " + fmt_g(a0) + " -> " + fmt_g(a1) + ", win " + fmt_g(win) + "% of " +
                  std::to_string(sm.resamples) + "; ";
    }
    const double secs = seconds_since(t0);
    report(6, ok && secs < kDirectionalBudgetSeconds, "S+annotations beats S on AUC-ROC",
           detail + std::to_string(kDirectionalPatients) + " patients, " + fmt_g(secs) + " s");
}

void criterion7() {
    const auto cfg = config(directional_config("mortality"));
    FeatureConfig on = cfg.features, off = cfg.features;
    on.propagate = true;
    off.propagate = false;
    const auto runs = run_variants(cfg, planted_inputs(), {{"with", on}, {"without", off}});
    const double a = auc_roc(runs[0].predictions.positive(), runs[0].predictions.labels);
    const double b = auc_roc(runs[1].predictions.positive(), runs[1].predictions.labels);
    report(7, a - b > 0, "propagation raises mortality AUC-ROC",
           "with " + fmt_g(a) + ", without " + fmt_g(b) + ", delta " + fmt_g(a - b));
}

void criterion8() {
    Rng rng(8008);
    const std::size_t n = 50000;
    std::vector<double> p(n);
    std::vector<int> y(n);
    double expected = 0;
    for (std::size_t i = 0; i < n; ++i) {
        p[i] = rng.uniform();
        y[i] = rng.uniform() < p[i];
        expected += p[i] * (1 - p[i]) / static_cast<double>(n);
    }
    double worst = 0;
    for (const auto& b : calibration_curve(p, y)) worst = std::max(worst, std::abs(b.observed - b.mean_prob));
    const double br = brier(p, y);
    report(8, worst < kCalibrationBinTol && std::abs(br - expected) < kCalibrationBrierTol, "calibration",
           "max bin deviation " + fmt_g(worst) + ", Brier " + fmt_g(br) + " vs expected " + fmt_g(expected));
}

void criterion9() {
    auto j = directional_config("mortality");
    j["explain"] = {{"n_timelines", 5}};
    const auto cfg = config(j);
    const auto& in = planted_inputs();
    const auto part = split_cohort(cfg, in.cohort);
    const auto train_eps = subset(in.cohort, part.train), test_eps = subset(in.cohort, part.test);
    const auto tm = train_model(cfg, in, train_eps, cfg.variants[1].features);
    const auto res = explain_model(cfg, in, tm, train_eps, test_eps);

    // the planted phenotype with the largest mortality effect
    const auto effects = GeneratorConfig{}.effects;
    const auto strongest = std::max_element(effects.begin(), effects.end(), [](const auto& a, const auto& b) {
        return std::abs(a.mortality_log_odds) < std::abs(b.mortality_log_odds);
    });
    const std::size_t rank = res.importance.rank_of(strongest->term.str());

    // Onset oracle from the raw notes: a column becomes active at the first
    // note charting the term or a child lifted into it.
    std::size_t checked = 0, leaks = 0, jumps = 0;
    const int levels = tm.features.aggregate_levels;
    for (const auto& [ep, tl] : res.timelines) {
        const Episode* e = nullptr;
        for (const auto& x : test_eps) e = x.episode_id == ep ? &x : e;
        std::map<std::string, int> onset;
        for (const auto& note : e->notes) {
            for (const auto& t : note.terms) {
                TermSet cols{t};
                if (levels > 0) {
                    const auto up = in.ontology.within_hops(t, levels);
                    cols.insert(up.begin(), up.end());
                }
                for (const auto& c : cols) {
                    auto [it, fresh] = onset.emplace(c.str(), note.hour);
                    if (!fresh) it->second = std::min(it->second, note.hour);
                }
            }
        }
        for (const auto& [col, hour] : onset) {
            if (hour < tl.hours.front() || hour > tl.hours.back()) continue;
            const auto idx = tm.schema.index_of(col);
            if (!idx) continue;
            ++checked;
            for (std::size_t h = 0; h < tl.hours.size(); ++h) {
                const double phi = tl.explanations[h].phi[*idx];
                if (tl.hours[h] < hour && phi != 0.0) ++leaks;
                if (tl.hours[h] == hour && phi != 0.0) ++jumps;
            }
        }
    }
    std::size_t pheno_top20 = 0;
    for (std::size_t r = 0; r < std::min<std::size_t>(20, res.importance.ranking.size()); ++r) {
        pheno_top20 += res.importance.ranking[r] >= tm.schema.n_structured;
    }
    std::string top;
    for (std::size_t r = 0; r < std::min<std::size_t>(5, res.importance.ranking.size()); ++r) {
        top += (r ? " " : "") + res.importance.names[res.importance.ranking[r]];
    }
    report(9, rank < 3 && checked > 0 && leaks == 0 && jumps > 0, "explanations recover planted structure",
           strongest->term.str() + " ranked " + std::to_string(rank + 1) + ", " + std::to_string(pheno_top20) +
               " phenotypes in top 20 (top 5: " + top + "); " + std::to_string(res.timelines.size()) + " timelines, " +
               std::to_string(checked) + " onsets checked, " + std::to_string(jumps) + " nonzero at note hour, " +
               std::to_string(leaks) + " nonzero before it");
}

std::map<std::string, std::string> read_dir(const fs::path& dir) {
    std::map<std::string, std::string> out;
    for (const auto& entry : fs::directory_iterator(dir)) out[entry.path().filename().string()] = read_file(entry.path().string());
    return out;
}

void criterion10() {
    const auto root = fs::temp_directory_path() / ("phenoicu_accept_" + std::to_string(::getpid()));
    fs::remove_all(root);
    const json j = {{"task", "mortality"},
                    {"seed", 11},
                    {"generator", {{"n_patients", 300}}},
                    {"model", {{"type", "rf"}, {"rf", {{"n_estimators", 20}}}}},
                    {"eval", {{"resamples", 100}}},
                    {"explain", {{"max_rows", 30}, {"background_size", 10}, {"n_timelines", 1}}},
                    {"ablation", {{"tasks", {"mortality", "los"}}}}};
    void (*const cmds[])(const RunConfig&) = {cmd_generate, cmd_ingest,       cmd_train,  cmd_eval,
                                              cmd_explain,  cmd_significance, cmd_ablation};
    for (const char* run : {"a", "b"}) {
        auto cfg = config(j);
        cfg.out = (root / run).string();
        for (auto* c : cmds) c(cfg);
    }
    const auto a = read_dir(root / "a"), b = read_dir(root / "b");
    std::size_t differ = 0;
    for (const auto& [name, bytes] : a) {
        const auto it = b.find(name);
        differ += it == b.end() || it->second != bytes;
    }
    differ += a.size() != b.size();
    fs::remove_all(root);
    report(10, differ == 0 && a.size() > 20, "byte-identical reruns",
           std::to_string(a.size()) + " files from 7 commands, " + std::to_string(differ) + " differ");
}

}  // namespace

int main(int argc, char** argv) {
    void (*const all[])() = {criterion1, criterion2, criterion3, criterion4, criterion5,
                             criterion6, criterion7, criterion8, criterion9, criterion10};
    std::set<int> pick;
    for (int i = 1; i < argc; ++i) pick.insert(std::atoi(argv[i]));
    for (int id = 1; id <= 10; ++id) {
        if (!pick.empty() && !pick.count(id)) continue;
        try {
            all[id - 1]();
        } catch (const std::exception& e) {
            report(id, false, "raised", e.what());
        }
    }
    std::printf("%d criteria failed\n", failures);
    return failures == 0 ? 0 : 1;
}
