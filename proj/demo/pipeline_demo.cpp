// Small end-to-end run: generate a cohort, train RF with and without
// phenotype features for in-hospital mortality, print AUCs and the top
// features of the phenotype-augmented model.

#include <cstdio>
#include <iostream>

#include "phenoicu/pipeline.hpp"

int main(int argc, char** argv) {
    using namespace phenoicu;
    const int n_patients = argc > 1 ? std::atoi(argv[1]) : 800;
    const json j = {
        {"task", "mortality"},
        {"seed", 7},
        {"generator", {{"n_patients", n_patients}}},
        {"model", {{"type", "rf"}, {"rf", {{"n_estimators", 100}}}}},
        {"explain", {{"max_rows", 200}, {"top_features", 10}}},
    };
    try {
        const auto cfg = parse_run_config(j, ".", PHENOICU_DATA_DIR);
        const auto in = load_inputs(cfg);
        std::printf("cohort: %zu episodes\n", in.cohort.size());

        const auto runs = run_variants(cfg, in, cfg.variants);
        for (const auto& r : runs) {
            const auto scores = r.predictions.positive();
            std::printf("%-14s AUC-ROC %.4f  AUC-PR %.4f  (%zu test rows)\n", r.name.c_str(),
                        auc_roc(scores, r.predictions.labels), auc_pr(scores, r.predictions.labels),
                        scores.size());
        }
        const auto sm = significance_of(cfg, runs, 1000, 1);
        std::printf("%s beats %s in %.1f%% of 1000 resamples\n", sm.models[1].c_str(), sm.models[0].c_str(),
                    sm.win_percent(1, 0));

        const auto part = split_cohort(cfg, in.cohort);
        const auto train_eps = subset(in.cohort, part.train);
        const auto tm = train_model(cfg, in, train_eps, cfg.variants[1].features);
        const auto ex = explain_model(cfg, in, tm, train_eps, subset(in.cohort, part.test));
        std::printf("top features by mean |phi|:\n");
        for (const auto& t : ex.summary.at("top_features")) {
            std::printf("  %2d  %-40s %.5f\n", t.at("rank").get<int>(), t.at("label").get<std::string>().c_str(),
                        t.at("mean_abs_phi").get<double>());
        }
    } catch (const std::exception& e) {
        std::cerr << e.what() << "\n";
        return 1;
    }
    return 0;
}
