// phenoicu <command> --config <path> [--seed N] [--out DIR]

#include <cstdlib>
#include <iostream>

#include <CLI11.hpp>

#include "phenoicu/pipeline.hpp"

namespace {

std::filesystem::path data_root() {
    if (const char* env = std::getenv("PHENOICU_DATA")) return env;
#ifdef PHENOICU_DATA_DIR
    return PHENOICU_DATA_DIR;
#else
    return "data";
#endif
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Phenotype-augmented ICU prediction pipeline"};
    app.set_version_flag("--version", phenoicu::kVersion);
    app.require_subcommand(1, 1);

    std::string config;
    std::uint64_t seed = 0;
    std::string out;
    struct Cmd {
        const char* name;
        const char* help;
        void (*run)(const phenoicu::RunConfig&);
    };
    const Cmd cmds[] = {
        {"generate", "write a synthetic cohort", phenoicu::cmd_generate},
        {"ingest", "build labels and feature matrices", phenoicu::cmd_ingest},
        {"train", "fit a model on the training partition", phenoicu::cmd_train},
        {"eval", "score the test partition with confidence intervals", phenoicu::cmd_eval},
        {"explain", "SHAP importance and patient timelines", phenoicu::cmd_explain},
        {"significance", "pairwise bootstrap win matrix", phenoicu::cmd_significance},
        {"ablation", "propagation on/off delta table", phenoicu::cmd_ablation},
    };
    std::vector<CLI::App*> subs;
    std::vector<CLI::Option*> seed_opts;
    for (const auto& c : cmds) {
        auto* sub = app.add_subcommand(c.name, c.help);
        sub->add_option("--config", config, "run config (JSON)")->required();
        seed_opts.push_back(sub->add_option("--seed", seed, "override the config seed"));
        sub->add_option("--out", out, "override the output directory");
        subs.push_back(sub);
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    try {
        for (std::size_t i = 0; i < subs.size(); ++i) {
            if (!subs[i]->parsed()) continue;
            std::optional<std::uint64_t> seed_override;
            if (seed_opts[i]->count()) seed_override = seed;
            std::optional<std::string> out_override;
            if (!out.empty()) out_override = out;
            const auto cfg = phenoicu::load_run_config(config, seed_override, out_override, data_root());
            cmds[i].run(cfg);
            std::cerr << cmds[i].name << ": wrote " << cfg.out << "\n";
        }
    } catch (const phenoicu::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const phenoicu::DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 3;
    } catch (const phenoicu::NumericError& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
