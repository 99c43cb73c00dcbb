#pragma once

// Batch commands behind the `phenoicu` executable. Each command reads one
// JSON run config, writes its artifacts into the output directory together
// with a manifest, and never modifies its inputs.

#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "phenoicu/annotate.hpp"
#include "phenoicu/cohort.hpp"
#include "phenoicu/eval.hpp"
#include "phenoicu/explain.hpp"
#include "phenoicu/features.hpp"
#include "phenoicu/forest.hpp"
#include "phenoicu/generator.hpp"
#include "phenoicu/lstm.hpp"
#include "phenoicu/model_io.hpp"
#include "phenoicu/ontology.hpp"
#include "phenoicu/svg.hpp"
#include "phenoicu/tasks.hpp"

namespace phenoicu {

inline constexpr const char* kVersion = "1.0.0";

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------------------
// Config reading with JSON-pointer error locations

class ConfigNode {
public:
    ConfigNode(const json& j, std::string path) : j_(&j), path_(std::move(path)) {
        if (!j.is_object()) throw ConfigError(where() + ": expected an object");
    }

    std::string where(std::string_view key = {}) const {
        std::string p = path_;
        if (!key.empty()) p += "/" + std::string(key);
        return p.empty() ? "/" : p;
    }

    void allow(std::initializer_list<const char*> keys) const {
        for (const auto& [k, v] : j_->items()) {
            bool ok = false;
            for (const char* a : keys) ok = ok || k == a;
            if (!ok) throw ConfigError(where(k) + ": unknown key");
        }
    }

    bool has(const char* key) const { return j_->contains(key) && !j_->at(key).is_null(); }

    ConfigNode child(const char* key) const {
        static const json empty = json::object();
        return has(key) ? ConfigNode(j_->at(key), where(key)) : ConfigNode(empty, where(key));
    }

    const json& raw(const char* key) const { return j_->at(key); }

    std::string str(const char* key, const std::string& def) const {
        if (!has(key)) return def;
        if (!j_->at(key).is_string()) throw ConfigError(where(key) + ": expected a string");
        return j_->at(key).get<std::string>();
    }

    bool boolean(const char* key, bool def) const {
        if (!has(key)) return def;
        if (!j_->at(key).is_boolean()) throw ConfigError(where(key) + ": expected a boolean");
        return j_->at(key).get<bool>();
    }

    double number(const char* key, double def) const {
        if (!has(key)) return def;
        if (!j_->at(key).is_number()) throw ConfigError(where(key) + ": expected a number");
        return j_->at(key).get<double>();
    }

    std::int64_t integer(const char* key, std::int64_t def, std::int64_t lo = INT64_MIN) const {
        if (!has(key)) return def;
        if (!j_->at(key).is_number_integer()) throw ConfigError(where(key) + ": expected an integer");
        const auto v = j_->at(key).get<std::int64_t>();
        if (v < lo) throw ConfigError(where(key) + ": must be >= " + std::to_string(lo));
        return v;
    }

    std::uint64_t seed(const char* key, std::uint64_t def) const {
        if (!has(key)) return def;
        const auto& v = j_->at(key);
        if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<std::int64_t>() >= 0)) {
            throw ConfigError(where(key) + ": expected a non-negative integer");
        }
        return v.get<std::uint64_t>();
    }

    std::vector<std::string> strings(const char* key) const {
        std::vector<std::string> out;
        if (!has(key)) return out;
        const auto& a = j_->at(key);
        if (!a.is_array()) throw ConfigError(where(key) + ": expected an array of strings");
        for (std::size_t i = 0; i < a.size(); ++i) {
            if (!a[i].is_string()) throw ConfigError(where(key) + "/" + std::to_string(i) + ": expected a string");
            out.push_back(a[i].get<std::string>());
        }
        return out;
    }

    std::vector<int> ints(const char* key, std::vector<int> def) const {
        if (!has(key)) return def;
        const auto& a = j_->at(key);
        if (!a.is_array()) throw ConfigError(where(key) + ": expected an array of integers");
        std::vector<int> out;
        for (std::size_t i = 0; i < a.size(); ++i) {
            if (!a[i].is_number_integer()) throw ConfigError(where(key) + "/" + std::to_string(i) + ": expected an integer");
            out.push_back(a[i].get<int>());
        }
        return out;
    }

private:
    const json* j_;
    std::string path_;
};

// ---------------------------------------------------------------------------
// Run config

struct Paths {
    std::string ontology = "hpo_subset.obo";  // defaults resolve against the data directory
    std::string persistency = "persistency.tsv";
    std::string cohort;       // empty: generate from the generator section
    std::string annotations;  // JSONL, used when annotation_source = "file"
    std::string lexicon;      // TSV, used for text notes
};

struct EvalSettings {
    std::size_t resamples = 0;  // 0: 10,000 for mortality, 1,000 otherwise
    KappaWeighting kappa = KappaWeighting::Linear;
    std::size_t calibration_bins = 10;
    std::vector<Slicer> slicers{Slicer::CohortTag, Slicer::LosBucket};
};

struct ExplainSettings {
    Conditioning conditioning = Conditioning::TreePathDependent;
    std::size_t max_rows = 500;
    std::size_t background_size = 100;
    std::vector<int> output_classes;  // empty: {1} binary, {8, 9} length of stay
    std::vector<std::string> episodes;
    std::size_t n_timelines = 3;
    int timeline_hours = 96;
    bool phenotype_absent_background = true;
    std::size_t top_features = 20;
};

struct Variant {
    std::string name;
    FeatureConfig features;
};

struct RunConfig {
    Task task = Task::Mortality;
    std::uint64_t seed = 7;
    FeatureConfig features;
    std::string annotation_source = "notes";  // notes | file
    std::string model = "rf";                 // rf | lstm
    ForestConfig rf;
    LstmConfig lstm;
    std::string split_scheme = "train_test";
    double train_fraction = 0.85;
    std::size_t k = 4;
    std::size_t fold = 0;
    int obs_start_hour = 5;
    bool drop_noteless = true;
    bool generator_text_notes = false;
    GeneratorConfig generator;
    Paths paths;
    EvalSettings eval;
    ExplainSettings explain;
    std::vector<Variant> variants;
    std::vector<Task> ablation_tasks{Task::Mortality};
    std::string out = "out";
    json effective;  // normalized config, hashed into manifests
};

namespace detail {

inline FeatureConfig parse_features(const ConfigNode& n, FeatureConfig fc) {
    n.allow({"mode", "propagate", "aggregate_levels", "aggregate_mode", "one_hot"});
    const auto mode = n.str("mode", fc.phenotypes ? "S+annotations" : "S");
    if (mode == "S") fc.phenotypes = false;
    else if (mode == "S+annotations") fc.phenotypes = true;
    else throw ConfigError(n.where("mode") + ": expected \"S\" or \"S+annotations\"");
    fc.propagate = n.boolean("propagate", fc.propagate);
    fc.aggregate_levels = static_cast<int>(n.integer("aggregate_levels", fc.aggregate_levels, 0));
    const auto am = n.str("aggregate_mode", fc.aggregate_mode == AggregateMode::Superset ? "superset" : "replace");
    if (am == "superset") fc.aggregate_mode = AggregateMode::Superset;
    else if (am == "replace") fc.aggregate_mode = AggregateMode::Replace;
    else throw ConfigError(n.where("aggregate_mode") + ": expected \"superset\" or \"replace\"");
    fc.one_hot = n.boolean("one_hot", fc.one_hot);
    return fc;
}

inline json features_json(const FeatureConfig& fc) {
    return {{"mode", fc.phenotypes ? "S+annotations" : "S"},
            {"propagate", fc.propagate},
            {"aggregate_levels", fc.aggregate_levels},
            {"aggregate_mode", fc.aggregate_mode == AggregateMode::Superset ? "superset" : "replace"},
            {"one_hot", fc.one_hot}};
}

inline Task parse_task_at(const ConfigNode& n, const char* key, const std::string& value) {
    try {
        return parse_task(value);
    } catch (const ConfigError&) {
        throw ConfigError(n.where(key) + ": unknown task '" + value + "'");
    }
}

inline std::string resolve(const fs::path& base, const std::string& p) {
    if (p.empty()) return p;
    const fs::path path(p);
    return (path.is_absolute() ? path : base / path).lexically_normal().string();
}

inline json paths_json(const Paths& p) {
    return {{"ontology", p.ontology}, {"persistency", p.persistency}, {"cohort", p.cohort},
            {"annotations", p.annotations}, {"lexicon", p.lexicon}};
}

}  // namespace detail

/// Parses a run config. Relative paths resolve against `base_dir`; defaults
/// for the bundled data resolve against `data_root`.
inline RunConfig parse_run_config(const json& j, const fs::path& base_dir, const fs::path& data_root) {
    const ConfigNode root(j, "");
    root.allow({"task", "seed", "features", "annotation_source", "model", "split", "obs_start_hour", "drop_noteless",
                "generator", "paths", "eval", "explain", "significance", "ablation", "out"});
    RunConfig c;
    c.task = detail::parse_task_at(root, "task", root.str("task", "mortality"));
    c.seed = root.seed("seed", c.seed);
    c.features = detail::parse_features(root.child("features"), c.features);
    c.annotation_source = root.str("annotation_source", c.annotation_source);
    if (c.annotation_source != "notes" && c.annotation_source != "file") {
        throw ConfigError("/annotation_source: expected \"notes\" or \"file\"");
    }
    c.obs_start_hour = static_cast<int>(root.integer("obs_start_hour", c.obs_start_hour, 0));
    c.drop_noteless = root.boolean("drop_noteless", c.drop_noteless);
    c.out = root.str("out", c.out);

    {
        const auto m = root.child("model");
        m.allow({"type", "rf", "lstm"});
        c.model = m.str("type", c.model);
        if (c.model != "rf" && c.model != "lstm") throw ConfigError(m.where("type") + ": expected \"rf\" or \"lstm\"");
        const auto rf = m.child("rf");
        rf.allow({"n_estimators", "criterion", "max_depth", "min_samples_split", "min_samples_leaf", "max_features",
                  "bootstrap", "seed"});
        c.rf.n_estimators = static_cast<std::size_t>(rf.integer("n_estimators", static_cast<std::int64_t>(c.rf.n_estimators), 1));
        c.rf.criterion = rf.str("criterion", c.rf.criterion);
        if (c.rf.criterion != "gini") throw ConfigError(rf.where("criterion") + ": only \"gini\" is supported");
        c.rf.max_depth = static_cast<int>(rf.integer("max_depth", c.rf.max_depth, -1));
        c.rf.min_samples_split =
            static_cast<std::size_t>(rf.integer("min_samples_split", static_cast<std::int64_t>(c.rf.min_samples_split), 2));
        c.rf.min_samples_leaf =
            static_cast<std::size_t>(rf.integer("min_samples_leaf", static_cast<std::int64_t>(c.rf.min_samples_leaf), 1));
        c.rf.max_features = static_cast<std::size_t>(rf.integer("max_features", 0, 0));
        c.rf.bootstrap = rf.boolean("bootstrap", c.rf.bootstrap);
        c.rf.seed = rf.seed("seed", derive_seed(c.seed, 101));
        const auto ls = m.child("lstm");
        ls.allow({"hidden", "epochs", "batch_size", "layers", "learning_rate", "weight_decay", "seed"});
        c.lstm.hidden = static_cast<int>(ls.integer("hidden", c.lstm.hidden, 1));
        c.lstm.epochs = static_cast<int>(ls.integer("epochs", c.lstm.epochs, 0));
        c.lstm.batch_size = static_cast<int>(ls.integer("batch_size", c.lstm.batch_size, 1));
        if (ls.integer("layers", 1, 1) != 1) throw ConfigError(ls.where("layers") + ": only 1 layer is supported");
        c.lstm.learning_rate = ls.number("learning_rate", c.lstm.learning_rate);
        c.lstm.weight_decay = ls.number("weight_decay", c.lstm.weight_decay);
        c.lstm.seed = ls.seed("seed", derive_seed(c.seed, 102));
    }
    {
        const auto s = root.child("split");
        s.allow({"scheme", "train_fraction", "k", "fold"});
        c.split_scheme = s.str("scheme", c.split_scheme);
        if (c.split_scheme != "train_test" && c.split_scheme != "kfold") {
            throw ConfigError(s.where("scheme") + ": expected \"train_test\" or \"kfold\"");
        }
        c.train_fraction = s.number("train_fraction", c.train_fraction);
        if (!(c.train_fraction > 0.0 && c.train_fraction < 1.0)) throw ConfigError(s.where("train_fraction") + ": must be in (0, 1)");
        c.k = static_cast<std::size_t>(s.integer("k", static_cast<std::int64_t>(c.k), 2));
        c.fold = static_cast<std::size_t>(s.integer("fold", 0, 0));
        if (c.fold >= c.k) throw ConfigError(s.where("fold") + ": must be < k");
    }
    {
        const auto g = root.child("generator");
        g.allow({"n_patients", "seed", "mortality_rate", "decomp_rate", "note_interval_hours", "multi_episode_rate",
                 "max_los_hours", "obs_start_hour", "severity_log_odds", "drift_scale", "spurious_mention_rate",
                 "text_notes", "los_weights", "tag_signal", "effects"});
        g.integer("n_patients", 1, 1);
        g.seed("seed", 0);
        for (const char* k : {"mortality_rate", "decomp_rate", "note_interval_hours", "multi_episode_rate",
                              "severity_log_odds", "drift_scale", "spurious_mention_rate"}) {
            g.number(k, 0.0);
        }
        g.integer("max_los_hours", 720);
        g.boolean("text_notes", false);
        json gj = j.contains("generator") ? j.at("generator") : json::object();
        if (!gj.contains("seed")) gj["seed"] = c.seed;
        if (!gj.contains("obs_start_hour")) gj["obs_start_hour"] = c.obs_start_hour;
        try {
            c.generator = generator_config_from_json(gj);
        } catch (const ConfigError& e) {
            throw ConfigError(std::string("/generator: ") + e.what());
        }
    }
    {
        const auto p = root.child("paths");
        p.allow({"ontology", "persistency", "cohort", "annotations", "lexicon"});
        c.paths.ontology = p.has("ontology") ? detail::resolve(base_dir, p.str("ontology", ""))
                                             : detail::resolve(data_root, c.paths.ontology);
        c.paths.persistency = p.has("persistency") ? detail::resolve(base_dir, p.str("persistency", ""))
                                                   : detail::resolve(data_root, c.paths.persistency);
        c.paths.cohort = detail::resolve(base_dir, p.str("cohort", ""));
        c.paths.annotations = detail::resolve(base_dir, p.str("annotations", ""));
        c.paths.lexicon = detail::resolve(base_dir, p.str("lexicon", ""));
        if (c.annotation_source == "file" && c.paths.annotations.empty()) {
            throw ConfigError("/paths/annotations: required when annotation_source is \"file\"");
        }
        if (c.generator.text_notes && c.paths.lexicon.empty()) {
            throw ConfigError("/paths/lexicon: required when generator.text_notes is set");
        }
    }
    {
        const auto e = root.child("eval");
        e.allow({"resamples", "kappa", "calibration_bins", "slicers"});
        c.eval.resamples = static_cast<std::size_t>(e.integer("resamples", 0, 0));
        if (c.eval.resamples != 0 && c.eval.resamples < 100) throw ConfigError(e.where("resamples") + ": must be >= 100");
        const auto kw = e.str("kappa", "linear");
        if (kw != "linear" && kw != "none") throw ConfigError(e.where("kappa") + ": expected \"linear\" or \"none\"");
        c.eval.kappa = parse_kappa_weighting(kw);
        c.eval.calibration_bins = static_cast<std::size_t>(e.integer("calibration_bins", 10, 1));
        if (e.has("slicers")) {
            c.eval.slicers.clear();
            for (const auto& s : e.strings("slicers")) {
                if (s != "cohort_tag" && s != "los_bucket") throw ConfigError(e.where("slicers") + ": unknown slicer '" + s + "'");
                c.eval.slicers.push_back(parse_slicer(s));
            }
        }
    }
    {
        const auto x = root.child("explain");
        x.allow({"conditioning", "max_rows", "background_size", "output_classes", "episodes", "n_timelines",
                 "timeline_hours", "timeline_background", "top_features"});
        const auto cond = x.str("conditioning", "tree_path_dependent");
        if (cond == "tree_path_dependent") c.explain.conditioning = Conditioning::TreePathDependent;
        else if (cond == "marginal") c.explain.conditioning = Conditioning::Marginal;
        else throw ConfigError(x.where("conditioning") + ": expected \"tree_path_dependent\" or \"marginal\"");
        c.explain.max_rows = static_cast<std::size_t>(x.integer("max_rows", 500, 1));
        c.explain.background_size = static_cast<std::size_t>(x.integer("background_size", 100, 1));
        c.explain.output_classes = x.ints("output_classes", {});
        const int nc = num_classes(c.task);
        for (int k : c.explain.output_classes) {
            if (k < 0 || k >= nc) throw ConfigError(x.where("output_classes") + ": class outside task range");
        }
        c.explain.episodes = x.strings("episodes");
        c.explain.n_timelines = static_cast<std::size_t>(x.integer("n_timelines", 3, 0));
        c.explain.timeline_hours = static_cast<int>(x.integer("timeline_hours", 96, 1));
        const auto bg = x.str("timeline_background", "phenotype_absent");
        if (bg != "phenotype_absent" && bg != "training") {
            throw ConfigError(x.where("timeline_background") + ": expected \"phenotype_absent\" or \"training\"");
        }
        c.explain.phenotype_absent_background = bg == "phenotype_absent";
        c.explain.top_features = static_cast<std::size_t>(x.integer("top_features", 20, 1));
    }
    {
        const auto s = root.child("significance");
        s.allow({"variants"});
        if (s.has("variants")) {
            const auto& arr = s.raw("variants");
            if (!arr.is_array()) throw ConfigError(s.where("variants") + ": expected an array");
            for (std::size_t i = 0; i < arr.size(); ++i) {
                const ConfigNode v(arr[i], s.where("variants") + "/" + std::to_string(i));
                v.allow({"name", "features"});
                if (!v.has("name")) throw ConfigError(v.where("name") + ": required");
                c.variants.push_back({v.str("name", ""), detail::parse_features(v.child("features"), c.features)});
            }
        } else {
            FeatureConfig s_only = c.features, with = c.features;
            s_only.phenotypes = false;
            with.phenotypes = true;
            c.variants = {{"S", s_only}, {"S+annotations", with}};
        }
        if (c.variants.size() < 2) throw ConfigError(s.where("variants") + ": need at least two variants");
    }
    {
        const auto a = root.child("ablation");
        a.allow({"tasks"});
        if (a.has("tasks")) {
            c.ablation_tasks.clear();
            for (const auto& t : a.strings("tasks")) c.ablation_tasks.push_back(detail::parse_task_at(a, "tasks", t));
        }
    }

    json eff;
    eff["task"] = to_string(c.task);
    eff["seed"] = c.seed;
    eff["features"] = detail::features_json(c.features);
    eff["annotation_source"] = c.annotation_source;
    eff["model"] = {{"type", c.model}, {"rf", c.rf.to_json()}, {"lstm", c.lstm.to_json()}};
    eff["split"] = {{"scheme", c.split_scheme}, {"train_fraction", c.train_fraction}, {"k", c.k}, {"fold", c.fold}};
    eff["obs_start_hour"] = c.obs_start_hour;
    eff["drop_noteless"] = c.drop_noteless;
    eff["generator"] = j.contains("generator") ? j.at("generator") : json::object();
    eff["generator"]["seed"] = c.generator.seed;
    eff["paths"] = detail::paths_json(c.paths);
    eff["eval"] = {{"resamples", c.eval.resamples},
                   {"kappa", c.eval.kappa == KappaWeighting::Linear ? "linear" : "none"},
                   {"calibration_bins", c.eval.calibration_bins}};
    json variants = json::array();
    for (const auto& v : c.variants) variants.push_back({{"name", v.name}, {"features", detail::features_json(v.features)}});
    eff["significance"] = {{"variants", variants}};
    eff["explain"] = j.contains("explain") ? j.at("explain") : json::object();
    json at = json::array();
    for (auto t : c.ablation_tasks) at.push_back(to_string(t));
    eff["ablation"] = {{"tasks", at}};
    c.effective = eff;
    return c;
}

/// Reads a config file and applies flag overrides (flags win over file keys,
/// file keys win over defaults).
inline RunConfig load_run_config(const std::string& path, std::optional<std::uint64_t> seed_override,
                                 std::optional<std::string> out_override, const fs::path& data_root) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path);
    json j;
    try {
        j = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    if (!j.is_object()) throw ConfigError("/: expected an object");
    if (seed_override) j["seed"] = *seed_override;
    if (out_override) j["out"] = *out_override;
    const fs::path base = fs::absolute(fs::path(path)).parent_path();
    auto cfg = parse_run_config(j, base, data_root);
    if (out_override) cfg.out = *out_override;
    else cfg.out = detail::resolve(base, cfg.out);
    return cfg;
}

// ---------------------------------------------------------------------------
// Inputs

struct Inputs {
    Ontology ontology;
    PersistencyMap persistency;
    std::optional<Lexicon> lexicon;
    std::vector<Episode> cohort;
    AnnotationIndex annotations;
    std::map<std::string, std::string> hashes;  // input path -> content hash
};

inline std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open input file " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline std::string content_hash(std::string_view bytes) { return hex64(fnv1a(bytes)); }

inline Inputs load_inputs(const RunConfig& cfg) {
    Inputs in;
    {
        const auto text = read_file(cfg.paths.ontology);
        in.hashes[cfg.paths.ontology] = content_hash(text);
        in.ontology = parse_obo(text);
    }
    {
        const auto text = read_file(cfg.paths.persistency);
        in.hashes[cfg.paths.persistency] = content_hash(text);
        std::istringstream ss(text);
        in.persistency = load_persistency(ss);
    }
    if (!cfg.paths.lexicon.empty()) {
        const auto text = read_file(cfg.paths.lexicon);
        in.hashes[cfg.paths.lexicon] = content_hash(text);
        std::istringstream ss(text);
        in.lexicon = load_lexicon(ss);
    }
    const Lexicon* lex = in.lexicon ? &*in.lexicon : nullptr;
    if (!cfg.paths.cohort.empty()) {
        const auto text = read_file(cfg.paths.cohort);
        in.hashes[cfg.paths.cohort] = content_hash(text);
        std::istringstream ss(text);
        in.cohort = load_episodes(ss, cfg.drop_noteless);
    } else {
        in.cohort = generate(cfg.generator, lex);
        if (cfg.drop_noteless) {
            std::erase_if(in.cohort, [](const Episode& e) { return e.notes.empty(); });
        }
    }
    if (in.cohort.empty()) throw DataError("cohort is empty");
    if (cfg.annotation_source == "file") {
        const auto text = read_file(cfg.paths.annotations);
        in.hashes[cfg.paths.annotations] = content_hash(text);
        std::istringstream ss(text);
        in.annotations = index_annotations(load_annotations(ss));
    } else {
        in.annotations = annotations_from_notes(in.cohort, lex);
    }
    for (const auto& [ep, anns] : in.annotations) {
        for (const auto& a : anns) {
            if (!in.ontology.contains(a.term)) {
                throw DataError("annotation term " + a.term.str() + " (episode " + ep + ") is not in the ontology");
            }
        }
    }
    return in;
}

inline Partition split_cohort(const RunConfig& cfg, const std::vector<Episode>& cohort) {
    const auto split_seed = derive_seed(cfg.seed, 11);
    if (cfg.split_scheme == "kfold") return fold_partition(kfold_split(cohort, cfg.k, split_seed), cfg.fold);
    return train_test_split(cohort, cfg.train_fraction, split_seed);
}

inline std::vector<Episode> subset(const std::vector<Episode>& cohort, const std::vector<std::size_t>& idx) {
    std::vector<Episode> out;
    out.reserve(idx.size());
    for (std::size_t i : idx) out.push_back(cohort[i]);
    return out;
}

inline std::size_t default_resamples(Task t) { return t == Task::Mortality ? 10000 : 1000; }

// ---------------------------------------------------------------------------
// Training and prediction

/// Per-hour rows of one episode (grid rows 0..hours-1).
inline FeatureMatrix hourly_rows(const Episode& e, const Inputs& in, const FeatureConfig& fc, const FeatureSchema& schema,
                                 int hours) {
    TaskLabels tl{Task::Decompensation, {}};
    for (int h = 0; h < std::min(hours, e.length_hours); ++h) tl.rows.push_back({e.episode_id, h, 0});
    return assemble({e}, in.ontology, in.annotations, in.persistency, fc, tl, schema);
}

struct Predictions {
    Task task = Task::Mortality;
    std::vector<RowKey> keys;
    std::vector<int> labels;
    std::vector<std::vector<double>> proba;
    std::vector<double> remaining_hours;  // for length of stay

    std::vector<double> positive() const {
        std::vector<double> s;
        s.reserve(proba.size());
        for (const auto& p : proba) s.push_back(p.at(1));
        return s;
    }

    std::vector<int> argmax() const {
        std::vector<int> out;
        for (const auto& p : proba) {
            out.push_back(static_cast<int>(std::max_element(p.begin(), p.end()) - p.begin()));
        }
        return out;
    }
};

struct TrainedModel {
    AnyModel model;
    ModelMeta meta;
    FeatureSchema schema;
    FeatureConfig features;
    std::optional<Standardizer> standardizer;
};

namespace detail {

inline std::vector<Sequence> lstm_sequences(const std::vector<Episode>& eps, const TaskLabels& labels, const Inputs& in,
                                            const FeatureConfig& fc, const FeatureSchema& schema,
                                            const Standardizer* stdz, std::vector<std::vector<std::size_t>>* label_rows) {
    std::map<std::string, std::vector<std::size_t>> rows_of;
    for (std::size_t r = 0; r < labels.rows.size(); ++r) rows_of[labels.rows[r].episode_id].push_back(r);
    std::vector<Sequence> out;
    for (const auto& e : eps) {
        auto it = rows_of.find(e.episode_id);
        if (it == rows_of.end()) continue;
        int T = e.length_hours;
        if (labels.task == Task::Mortality) T = kMortalityHour;
        auto m = hourly_rows(e, in, fc, schema, T);
        if (stdz) stdz->apply(m);
        Sequence s;
        s.x.resize(static_cast<Eigen::Index>(m.rows()), static_cast<Eigen::Index>(m.cols()));
        for (std::size_t r = 0; r < m.rows(); ++r) {
            for (std::size_t c = 0; c < m.cols(); ++c) s.x(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = m.at(r, c);
        }
        s.labels.assign(m.rows(), -1);
        std::vector<std::size_t> mapping(m.rows(), SIZE_MAX);
        for (std::size_t r : it->second) {
            const auto g = static_cast<std::size_t>(grid_hour(labels.task, labels.rows[r].hour));
            s.labels.at(g) = labels.rows[r].label;
            mapping[g] = r;
        }
        if (label_rows) label_rows->push_back(std::move(mapping));
        out.push_back(std::move(s));
    }
    return out;
}

}  // namespace detail

inline TrainedModel train_model(const RunConfig& cfg, const Inputs& in, const std::vector<Episode>& train_eps,
                                const FeatureConfig& fc) {
    const auto labels = build_labels(cfg.task, train_eps, cfg.obs_start_hour);
    if (labels.rows.empty()) throw DataError("no labelled rows in the training partition");
    TrainedModel tm;
    tm.features = fc;
    tm.schema = build_schema(train_eps, in.ontology, in.annotations, fc);
    const int K = num_classes(cfg.task);
    if (cfg.model == "rf") {
        const auto m = assemble(train_eps, in.ontology, in.annotations, in.persistency, fc, labels, tm.schema);
        std::vector<int> y;
        for (const auto& r : labels.rows) y.push_back(r.label);
        tm.model = train_forest(m.data, m.rows(), m.cols(), y, K, cfg.rf);
    } else {
        const auto hourly = assemble(train_eps, in.ontology, in.annotations, in.persistency, fc, labels, tm.schema);
        tm.standardizer = Standardizer::fit(hourly);
        const auto seqs = detail::lstm_sequences(train_eps, labels, in, fc, tm.schema, &*tm.standardizer, nullptr);
        tm.model = train_lstm(seqs, K, cfg.lstm);
    }
    tm.meta.task = to_string(cfg.task);
    tm.meta.schema_hash = tm.schema.hash();
    tm.meta.extra = {{"features", detail::features_json(fc)},
                     {"schema", to_json(tm.schema)},
                     {"obs_start_hour", cfg.obs_start_hour},
                     {"annotation_source", cfg.annotation_source}};
    if (tm.standardizer) tm.meta.extra["standardizer"] = {{"mean", tm.standardizer->mean}, {"scale", tm.standardizer->scale}};
    return tm;
}

inline TrainedModel from_file(const ModelFile& mf) {
    TrainedModel tm;
    tm.model = mf.model;
    tm.meta = mf.meta;
    try {
        tm.schema = schema_from_json(mf.meta.extra.at("schema"));
        tm.features = detail::parse_features(ConfigNode(mf.meta.extra.at("features"), "/features"), FeatureConfig{});
        if (mf.meta.extra.contains("standardizer")) {
            Standardizer s;
            s.mean = mf.meta.extra.at("standardizer").at("mean").get<std::vector<double>>();
            s.scale = mf.meta.extra.at("standardizer").at("scale").get<std::vector<double>>();
            tm.standardizer = s;
        }
    } catch (const json::exception& e) {
        throw DataError(std::string("model header lacks feature metadata: ") + e.what());
    }
    if (tm.schema.hash() != mf.meta.schema_hash) throw DataError("model schema hash does not match its schema");
    return tm;
}

inline Predictions predict(const RunConfig& cfg, const Inputs& in, const TrainedModel& tm, const std::vector<Episode>& eps) {
    Predictions p;
    p.task = cfg.task;
    const auto labels = build_labels(cfg.task, eps, cfg.obs_start_hour);
    if (labels.rows.empty()) throw DataError("no labelled rows in the evaluation partition");
    std::map<std::string, int> length;
    for (const auto& e : eps) length[e.episode_id] = e.length_hours;
    for (const auto& r : labels.rows) {
        p.keys.push_back({r.episode_id, r.hour});
        p.labels.push_back(r.label);
        p.remaining_hours.push_back(static_cast<double>(length.at(r.episode_id) - r.hour));
    }
    if (const auto* f = std::get_if<Forest>(&tm.model)) {
        const auto m = assemble(eps, in.ontology, in.annotations, in.persistency, tm.features, labels, tm.schema);
        p.proba = f->predict_proba(m.data, m.rows());
    } else {
        const auto& l = std::get<Lstm>(tm.model);
        std::vector<std::vector<std::size_t>> mapping;
        const auto seqs = detail::lstm_sequences(eps, labels, in, tm.features, tm.schema,
                                                 tm.standardizer ? &*tm.standardizer : nullptr, &mapping);
        p.proba.assign(labels.rows.size(), {});
        for (std::size_t s = 0; s < seqs.size(); ++s) {
            const Eigen::MatrixXd pr = l.predict_proba(seqs[s].x);
            for (std::size_t t = 0; t < mapping[s].size(); ++t) {
                if (mapping[s][t] == SIZE_MAX) continue;
                std::vector<double> v(static_cast<std::size_t>(pr.cols()));
                for (Eigen::Index k = 0; k < pr.cols(); ++k) v[static_cast<std::size_t>(k)] = pr(static_cast<Eigen::Index>(t), k);
                p.proba[mapping[s][t]] = std::move(v);
            }
        }
    }
    return p;
}

// ---------------------------------------------------------------------------
// Metrics over predictions

/// Weighted metric closures for one prediction set, keyed by metric name.
inline std::map<std::string, WeightedMetric> metric_closures(const Predictions& p, KappaWeighting kw) {
    std::map<std::string, WeightedMetric> out;
    if (p.task == Task::LengthOfStay) {
        auto pred = std::make_shared<std::vector<int>>(p.argmax());
        auto truth = std::make_shared<std::vector<int>>(p.labels);
        auto hours = std::make_shared<std::vector<double>>(p.remaining_hours);
        out["Kappa"] = [pred, truth, kw](std::span<const double> w) { return kappa(*pred, *truth, kw, w); };
        out["MAD"] = [pred, hours](std::span<const double> w) { return mad(*pred, *hours, w); };
    } else {
        auto scores = std::make_shared<std::vector<double>>(p.positive());
        auto labels = std::make_shared<std::vector<int>>(p.labels);
        auto order = std::make_shared<std::vector<std::size_t>>(score_order(*scores));
        out["AUC-ROC"] = [=](std::span<const double> w) { return auc_roc_sorted(*scores, *labels, *order, w); };
        out["AUC-PR"] = [=](std::span<const double> w) { return auc_pr_sorted(*scores, *labels, *order, w); };
        out["Brier"] = [=](std::span<const double> w) { return brier(*scores, *labels, w); };
    }
    return out;
}

inline json evaluate_predictions(const RunConfig& cfg, const Predictions& p, const std::vector<Episode>& eps) {
    const std::size_t R = cfg.eval.resamples ? cfg.eval.resamples : default_resamples(cfg.task);
    json metrics = json::array();
    std::size_t i = 0;
    for (const auto& [name, fn] : metric_closures(p, cfg.eval.kappa)) {
        MetricValue mv{name, fn({}), std::nullopt};
        mv.ci = bootstrap_ci(fn, p.keys.size(), R, derive_seed(cfg.seed, 200 + i++));
        metrics.push_back(to_json(mv));
    }
    json slices = json::object();
    std::vector<std::string> row_episode;
    for (const auto& k : p.keys) row_episode.push_back(k.episode_id);
    const auto closures = metric_closures(p, cfg.eval.kappa);
    const std::string slice_metric = p.task == Task::LengthOfStay ? "Kappa" : "AUC-ROC";
    for (auto s : cfg.eval.slicers) {
        json arr = json::array();
        for (const auto& r : sliced_eval(row_episode, eps, s, closures.at(slice_metric))) {
            arr.push_back({{"slice", r.slice}, {"count", r.count}, {"value", r.value ? json(*r.value) : json(nullptr)}});
        }
        slices[s == Slicer::CohortTag ? "cohort_tag" : "los_bucket"] = {{"metric", slice_metric}, {"slices", arr}};
    }
    std::size_t positives = 0;
    for (int y : p.labels) positives += (y == 1);
    json rep{{"task", to_string(p.task)},
             {"n_rows", p.keys.size()},
             {"n_episodes", eps.size()},
             {"resamples", R},
             {"metrics", metrics},
             {"slices", slices}};
    if (p.task != Task::LengthOfStay) rep["positive_rate"] = static_cast<double>(positives) / static_cast<double>(p.labels.size());
    return rep;
}

// ---------------------------------------------------------------------------
// Output helpers

class OutputDir {
public:
    explicit OutputDir(fs::path dir) : dir_(std::move(dir)) {
        std::error_code ec;
        fs::create_directories(dir_, ec);
        if (ec) throw DataError("cannot create output directory " + dir_.string() + ": " + ec.message());
    }

    const fs::path& path() const { return dir_; }

    void write(const std::string& name, const std::string& bytes) {
        std::ofstream out(dir_ / name, std::ios::binary);
        if (!out) throw DataError("cannot write " + (dir_ / name).string());
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        outputs_[name] = content_hash(bytes);
    }

    void write_json(const std::string& name, const json& j) { write(name, j.dump(2) + "\n"); }

    void manifest(const std::string& command, const RunConfig& cfg, const std::map<std::string, std::string>& inputs) {
        json m;
        m["command"] = command;
        m["version"] = kVersion;
        m["model_format_version"] = kModelFormatVersion;
        m["config"] = cfg.effective;
        m["config_hash"] = content_hash(cfg.effective.dump());
        m["seed"] = cfg.seed;
        m["inputs"] = inputs;
        m["outputs"] = outputs_;
        std::ofstream out(dir_ / (command + "_manifest.json"), std::ios::binary);
        out << m.dump(2) << "\n";
        if (!out) throw DataError("cannot write manifest");
    }

private:
    fs::path dir_;
    std::map<std::string, std::string> outputs_;
};

inline std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.12g", v);
    return buf;
}

inline std::string predictions_csv(const Predictions& p) {
    std::ostringstream o;
    o << "episode_id,hour,label";
    const std::size_t K = p.proba.empty() ? 0 : p.proba.front().size();
    for (std::size_t k = 0; k < K; ++k) o << ",p" << k;
    o << '\n';
    for (std::size_t i = 0; i < p.keys.size(); ++i) {
        o << p.keys[i].episode_id << ',' << p.keys[i].hour << ',' << p.labels[i];
        for (double v : p.proba[i]) o << ',' << fmt(v);
        o << '\n';
    }
    return o.str();
}

// ---------------------------------------------------------------------------
// Commands

inline void cmd_generate(const RunConfig& cfg) {
    std::optional<Lexicon> lex;
    std::map<std::string, std::string> inputs;
    if (!cfg.paths.lexicon.empty()) {
        const auto text = read_file(cfg.paths.lexicon);
        inputs[cfg.paths.lexicon] = content_hash(text);
        std::istringstream ss(text);
        lex = load_lexicon(ss);
    }
    const auto cohort = generate(cfg.generator, lex ? &*lex : nullptr);
    OutputDir out(cfg.out);
    std::ostringstream ss;
    save_episodes(ss, cohort);
    out.write("cohort.jsonl", ss.str());

    std::set<std::string> patients;
    std::size_t died_patients = 0, steps = 0, positives = 0;
    std::map<std::string, bool> patient_died;
    for (const auto& e : cohort) {
        patients.insert(e.patient_id);
        patient_died[e.patient_id] = patient_died[e.patient_id] || e.died_in_hospital;
        for (const auto& r : decomp_labels(e, cfg.obs_start_hour)) {
            ++steps;
            positives += r.label;
        }
    }
    for (const auto& [pid, d] : patient_died) died_patients += d;
    std::array<std::size_t, 10> los{};
    for (const auto& e : cohort) {
        for (const auto& r : los_labels(e, cfg.obs_start_hour)) ++los[static_cast<std::size_t>(r.label)];
    }
    json summary{{"patients", patients.size()},
                 {"episodes", cohort.size()},
                 {"mortality_rate_patients", static_cast<double>(died_patients) / static_cast<double>(patients.size())},
                 {"decompensation_rate_timesteps", steps ? static_cast<double>(positives) / static_cast<double>(steps) : 0.0},
                 {"los_class_counts", los}};
    out.write_json("generate_summary.json", summary);
    out.manifest("generate", cfg, inputs);
}

inline void cmd_ingest(const RunConfig& cfg) {
    const auto in = load_inputs(cfg);
    const auto labels = build_labels(cfg.task, in.cohort, cfg.obs_start_hour);
    const auto m = assemble(in.cohort, in.ontology, in.annotations, in.persistency, cfg.features, labels);
    OutputDir out(cfg.out);
    std::ostringstream lab, bin, csv;
    write_labels_csv(lab, labels);
    write_matrix_binary(bin, m);
    write_matrix_csv(csv, m);
    out.write("labels.csv", lab.str());
    out.write("features.bin", bin.str());
    out.write("features.csv", csv.str());
    out.write_json("features_schema.json", to_json(m.schema));
    std::vector<Annotation> flat;
    for (const auto& [ep, anns] : in.annotations) flat.insert(flat.end(), anns.begin(), anns.end());
    std::ostringstream ann;
    save_annotations(ann, flat);
    out.write("annotations.jsonl", ann.str());
    std::size_t clamped = 0;
    for (const auto& e : in.cohort) clamped += impute_channels(e).clamped;
    out.write_json("ingest_summary.json", {{"episodes", in.cohort.size()},
                                           {"rows", m.rows()},
                                           {"columns", m.cols()},
                                           {"annotations", flat.size()},
                                           {"clamped_cells", clamped}});
    out.manifest("ingest", cfg, in.hashes);
}

inline void cmd_train(const RunConfig& cfg) {
    const auto in = load_inputs(cfg);
    const auto part = split_cohort(cfg, in.cohort);
    const auto train_eps = subset(in.cohort, part.train);
    const auto tm = train_model(cfg, in, train_eps, cfg.features);
    OutputDir out(cfg.out);
    std::ostringstream ss;
    save_model(ss, tm.model, tm.meta);
    out.write("model.bin", ss.str());
    json summary{{"task", to_string(cfg.task)},
                 {"model", cfg.model},
                 {"train_episodes", train_eps.size()},
                 {"features", tm.schema.width()},
                 {"schema_hash", tm.schema.hash()}};
    if (const auto* l = std::get_if<Lstm>(&tm.model)) summary["loss_curve"] = l->loss_curve;
    out.write_json("train_summary.json", summary);
    out.write_json("features_schema.json", to_json(tm.schema));
    out.manifest("train", cfg, in.hashes);
}

inline std::string model_path(const RunConfig& cfg) { return (fs::path(cfg.out) / "model.bin").string(); }

inline void cmd_eval(const RunConfig& cfg) {
    const auto mf = load_model_file(model_path(cfg));
    if (mf.meta.task != to_string(cfg.task)) throw ConfigError("/task: model was trained for " + mf.meta.task);
    const auto tm = from_file(mf);
    const auto in = load_inputs(cfg);
    const auto part = split_cohort(cfg, in.cohort);
    const auto test_eps = subset(in.cohort, part.test);
    const auto p = predict(cfg, in, tm, test_eps);
    OutputDir out(cfg.out);
    out.write("predictions.csv", predictions_csv(p));
    auto rep = evaluate_predictions(cfg, p, test_eps);
    rep["model"] = std::holds_alternative<Forest>(tm.model) ? "rf" : "lstm";
    rep["schema_hash"] = tm.schema.hash();
    if (cfg.task != Task::LengthOfStay) {
        const auto scores = p.positive();
        const auto bins = calibration_curve(scores, p.labels, cfg.eval.calibration_bins);
        std::ostringstream cal;
        write_calibration_csv(cal, bins);
        out.write("calibration.csv", cal.str());
        svg::Series s{"model", {}, {}, "#d62728"};
        json jb = json::array();
        for (const auto& b : bins) {
            s.x.push_back(b.mean_prob);
            s.y.push_back(b.observed);
            jb.push_back({{"mean_prob", b.mean_prob}, {"observed", b.observed}, {"count", b.count}});
        }
        out.write("calibration.svg", svg::line_chart("Calibration (" + to_string(cfg.task) + ")", {s}, true, true));
        rep["calibration"] = jb;
    }
    out.write_json("report.json", rep);
    auto inputs = in.hashes;
    inputs["model.bin"] = content_hash(read_file(model_path(cfg)));
    out.manifest("eval", cfg, inputs);
}

inline OutputSelector output_selector(const RunConfig& cfg) {
    if (!cfg.explain.output_classes.empty()) return {cfg.explain.output_classes};
    if (cfg.task == Task::LengthOfStay) return {{8, 9}};
    return {{1}};
}

/// Rows of the matrix sampled without replacement (sorted), at most n.
inline std::vector<std::size_t> sample_rows(std::size_t total, std::size_t n, std::uint64_t seed) {
    std::vector<std::size_t> idx(total);
    for (std::size_t i = 0; i < total; ++i) idx[i] = i;
    if (n >= total) return idx;
    Rng rng(seed);
    rng.shuffle(idx);
    idx.resize(n);
    std::sort(idx.begin(), idx.end());
    return idx;
}

inline BackgroundSet make_background(const FeatureMatrix& m, std::size_t n, std::uint64_t seed, bool zero_phenotypes) {
    std::vector<double> rows;
    for (std::size_t r : sample_rows(m.rows(), n, seed)) {
        auto row = m.row(r);
        for (std::size_t c = 0; c < m.cols(); ++c) rows.push_back(zero_phenotypes && c >= m.schema.n_structured ? 0.0 : row[c]);
    }
    return BackgroundSet(std::move(rows), m.cols());
}

struct ExplainResult {
    ImportanceReport importance;
    std::vector<std::pair<std::string, Timeline>> timelines;
    json summary;
};

/// Importance over test rows and per-hour timelines for selected episodes.
inline ExplainResult explain_model(const RunConfig& cfg, const Inputs& in, const TrainedModel& tm,
                                   const std::vector<Episode>& train_eps, const std::vector<Episode>& test_eps) {
    const auto* forest = std::get_if<Forest>(&tm.model);
    if (!forest) throw ConfigError("/model/type: explanations are available for forest models only");
    const auto test_labels = build_labels(cfg.task, test_eps, cfg.obs_start_hour);
    const auto test_m = assemble(test_eps, in.ontology, in.annotations, in.persistency, tm.features, test_labels, tm.schema);
    const auto train_labels = build_labels(cfg.task, train_eps, cfg.obs_start_hour);
    const auto train_m = assemble(train_eps, in.ontology, in.annotations, in.persistency, tm.features, train_labels, tm.schema);
    if (test_m.rows() == 0 || train_m.rows() == 0) throw DataError("no rows to explain");

    ExplainResult res;
    ForestExplainer ex{forest, output_selector(cfg), cfg.explain.conditioning, std::nullopt};
    if (ex.conditioning == Conditioning::Marginal) {
        ex.background = make_background(train_m, cfg.explain.background_size, derive_seed(cfg.seed, 301), false);
    }
    const auto rows = sample_rows(test_m.rows(), cfg.explain.max_rows, derive_seed(cfg.seed, 302));
    const auto sub = select_rows(test_m, rows);
    res.importance = importance_report(ex, sub.data, sub.rows(), tm.schema.names);

    // Timelines use marginal expectations so an absent phenotype contributes
    // nothing until it is charted.
    ForestExplainer tex{forest, ex.output, Conditioning::Marginal,
                        make_background(train_m, cfg.explain.background_size, derive_seed(cfg.seed, 303),
                                        cfg.explain.phenotype_absent_background)};
    std::vector<const Episode*> chosen;
    if (!cfg.explain.episodes.empty()) {
        for (const auto& id : cfg.explain.episodes) {
            const Episode* found = nullptr;
            for (const auto& e : test_eps) found = e.episode_id == id ? &e : found;
            if (!found) throw DataError("explain episode " + id + " is not in the test partition");
            chosen.push_back(found);
        }
    } else {
        for (const auto& e : test_eps) {
            if (chosen.size() >= cfg.explain.n_timelines) break;
            if (e.died_in_hospital && !e.notes.empty() && e.length_hours >= kMortalityHour) chosen.push_back(&e);
        }
    }
    json tsum = json::array();
    for (const Episode* e : chosen) {
        const int H = cfg.task == Task::Mortality ? std::min(kMortalityHour, e->length_hours)
                                                  : std::min(cfg.explain.timeline_hours, e->length_hours);
        const auto hm = hourly_rows(*e, in, tm.features, tm.schema, H);
        std::vector<int> hours;
        for (const auto& k : hm.keys) hours.push_back(k.hour);
        auto tl = patient_timeline(tex, hm.data, hours, tm.schema.names);
        json onsets = json::object();
        for (std::size_t c = tm.schema.n_structured; c < tm.schema.width(); ++c) {
            std::optional<int> active, nonzero;
            for (std::size_t h = 0; h < hours.size(); ++h) {
                if (!active && hm.at(h, c) != 0.0) active = hours[h];
                if (!nonzero && tl.explanations[h].phi[c] != 0.0) nonzero = hours[h];
            }
            if (active || nonzero) {
                onsets[tm.schema.names[c]] = {{"first_active_hour", active ? json(*active) : json(nullptr)},
                                              {"first_nonzero_phi_hour", nonzero ? json(*nonzero) : json(nullptr)}};
            }
        }
        tsum.push_back({{"episode_id", e->episode_id}, {"hours", hours.size()}, {"phenotype_onsets", onsets}});
        res.timelines.emplace_back(e->episode_id, std::move(tl));
    }
    json top = json::array();
    std::size_t phenotypes_in_top = 0;
    const std::size_t n_top = std::min(cfg.explain.top_features, res.importance.ranking.size());
    for (std::size_t r = 0; r < n_top; ++r) {
        const auto f = res.importance.ranking[r];
        const bool is_pheno = f >= tm.schema.n_structured;
        phenotypes_in_top += is_pheno;
        std::string label = tm.schema.names[f];
        if (is_pheno) {
            const auto id = TermId::parse(label);
            if (in.ontology.contains(id)) label += " " + in.ontology.term(id).name;
        }
        top.push_back({{"rank", r + 1}, {"feature", tm.schema.names[f]}, {"label", label},
                       {"mean_abs_phi", res.importance.mean_abs[f]}, {"phenotype", is_pheno}});
    }
    res.summary = {{"task", to_string(cfg.task)},
                   {"output", ex.output.label()},
                   {"conditioning", to_string(cfg.explain.conditioning)},
                   {"explained_rows", sub.rows()},
                   {"base_value", res.importance.base_value},
                   {"top_features", top},
                   {"phenotypes_in_top", phenotypes_in_top},
                   {"timelines", tsum}};
    return res;
}

inline void cmd_explain(const RunConfig& cfg) {
    const auto mf = load_model_file(model_path(cfg));
    if (mf.meta.task != to_string(cfg.task)) throw ConfigError("/task: model was trained for " + mf.meta.task);
    const auto tm = from_file(mf);
    const auto in = load_inputs(cfg);
    const auto part = split_cohort(cfg, in.cohort);
    const auto res = explain_model(cfg, in, tm, subset(in.cohort, part.train), subset(in.cohort, part.test));
    OutputDir out(cfg.out);
    std::ostringstream imp, bee;
    write_importance_csv(imp, res.importance);
    write_beeswarm_csv(bee, res.importance);
    out.write("importance.csv", imp.str());
    out.write("beeswarm.csv", bee.str());
    {
        std::vector<std::string> labels;
        std::vector<double> values;
        for (const auto& t : res.summary.at("top_features")) {
            labels.push_back(t.at("label").get<std::string>());
            values.push_back(t.at("mean_abs_phi").get<double>());
        }
        out.write("importance.svg", svg::bar_chart("mean |SHAP| (" + to_string(cfg.task) + ")", labels, values));
    }
    for (const auto& [ep, tl] : res.timelines) {
        std::ostringstream force, heat;
        write_timeline_csv(force, tl);
        write_heatmap_csv(heat, tl);
        out.write("timeline_" + ep + ".csv", force.str());
        out.write("heatmap_" + ep + ".csv", heat.str());
        std::vector<double> hx(tl.hours.begin(), tl.hours.end());
        svg::Series pred{"normalised prediction", hx, tl.normalized_prediction(), "#d62728"};
        out.write("timeline_" + ep + ".svg", svg::line_chart("Prediction over time, " + ep, {pred}));
        std::vector<std::string> rows, cols;
        std::vector<std::vector<double>> vals;
        for (std::size_t i = 0; i < std::min<std::size_t>(20, tl.order.size()); ++i) {
            const auto f = tl.order[i];
            rows.push_back(tl.names[f]);
            std::vector<double> r;
            for (const auto& e : tl.explanations) r.push_back(e.phi[f]);
            vals.push_back(std::move(r));
        }
        for (int h : tl.hours) cols.push_back(std::to_string(h) + "h");
        out.write("heatmap_" + ep + ".svg", svg::heatmap("SHAP over time, " + ep, rows, cols, vals));
    }
    out.write_json("explain_report.json", res.summary);
    auto inputs = in.hashes;
    inputs["model.bin"] = content_hash(read_file(model_path(cfg)));
    out.manifest("explain", cfg, inputs);
}

struct VariantRun {
    std::string name;
    Predictions predictions;
};

inline std::vector<VariantRun> run_variants(const RunConfig& cfg, const Inputs& in, const std::vector<Variant>& variants) {
    const auto part = split_cohort(cfg, in.cohort);
    const auto train_eps = subset(in.cohort, part.train);
    const auto test_eps = subset(in.cohort, part.test);
    std::vector<VariantRun> runs;
    for (const auto& v : variants) {
        const auto tm = train_model(cfg, in, train_eps, v.features);
        runs.push_back({v.name, predict(cfg, in, tm, test_eps)});
    }
    return runs;
}

/// Win matrix on the primary metric of the task, over shared resamples.
inline SignificanceMatrix significance_of(const RunConfig& cfg, const std::vector<VariantRun>& runs, std::size_t resamples,
                                          std::uint64_t seed) {
    const std::string metric = cfg.task == Task::LengthOfStay ? "Kappa" : "AUC-ROC";
    std::vector<std::string> names;
    std::vector<WeightedMetric> fns;
    for (const auto& r : runs) {
        if (r.predictions.keys != runs.front().predictions.keys) throw DataError("variant predictions are not aligned");
        names.push_back(r.name);
        fns.push_back(metric_closures(r.predictions, cfg.eval.kappa).at(metric));
    }
    return significance_matrix(names, fns, runs.front().predictions.keys.size(), resamples, seed);
}

inline void cmd_significance(const RunConfig& cfg) {
    const auto in = load_inputs(cfg);
    const auto runs = run_variants(cfg, in, cfg.variants);
    const std::size_t R = cfg.eval.resamples ? cfg.eval.resamples : default_resamples(cfg.task);
    const auto sm = significance_of(cfg, runs, R, derive_seed(cfg.seed, 400));
    OutputDir out(cfg.out);
    json rep{{"task", to_string(cfg.task)},
             {"metric", cfg.task == Task::LengthOfStay ? "Kappa" : "AUC-ROC"},
             {"matrix", to_json(sm)}};
    json points = json::object();
    for (const auto& r : runs) {
        json m = json::object();
        for (const auto& [name, fn] : metric_closures(r.predictions, cfg.eval.kappa)) m[name] = fn({});
        points[r.name] = m;
    }
    rep["point_estimates"] = points;
    std::ostringstream csv;
    csv << "base,secondary,win_percent,tie_percent\n";
    for (std::size_t i = 0; i < sm.models.size(); ++i) {
        for (std::size_t j = 0; j < sm.models.size(); ++j) {
            if (i != j) csv << sm.models[i] << ',' << sm.models[j] << ',' << fmt(sm.win_percent(i, j)) << ',' << fmt(sm.tie_percent(i, j)) << '\n';
        }
    }
    out.write("significance.csv", csv.str());
    out.write_json("significance_report.json", rep);
    out.manifest("significance", cfg, in.hashes);
}

inline void cmd_ablation(const RunConfig& base) {
    const auto in = load_inputs(base);
    json rows = json::array();
    std::ostringstream csv;
    csv << "task,metric,with_propagation,without_propagation,delta\n";
    for (Task t : base.ablation_tasks) {
        RunConfig cfg = base;
        cfg.task = t;
        FeatureConfig on = cfg.features, off = cfg.features;
        on.phenotypes = off.phenotypes = true;
        on.propagate = true;
        off.propagate = false;
        const auto runs = run_variants(cfg, in, {{"with", on}, {"without", off}});
        const auto with = metric_closures(runs[0].predictions, cfg.eval.kappa);
        const auto without = metric_closures(runs[1].predictions, cfg.eval.kappa);
        for (const auto& [name, fn] : with) {
            const double a = fn({}), b = without.at(name)({});
            rows.push_back({{"task", to_string(t)}, {"metric", name}, {"with_propagation", a},
                            {"without_propagation", b}, {"delta", a - b}});
            csv << to_string(t) << ',' << name << ',' << fmt(a) << ',' << fmt(b) << ',' << fmt(a - b) << '\n';
        }
    }
    OutputDir out(base.out);
    out.write("ablation.csv", csv.str());
    out.write_json("ablation_report.json", {{"rows", rows}});
    out.manifest("ablation", base, in.hashes);
}

}  // namespace phenoicu
