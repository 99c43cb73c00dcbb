#pragma once

#include <array>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "phenoicu/annotate.hpp"
#include "phenoicu/common.hpp"
#include "phenoicu/ontology.hpp"

namespace phenoicu {

// ---------------------------------------------------------------------------
// Structured channels

enum class ChannelKind { Continuous, Categorical };

struct ChannelSpec {
    std::string name;
    ChannelKind kind;
    double normal_value;
    double lo;  // plausible range, values outside are clamped
    double hi;
    int levels_lo = 0;  // ordinal code range for categorical channels
    int levels_hi = 0;
};

inline constexpr std::size_t kNumChannels = 17;

/// The 17 bedside channels. Normal values are imputation defaults.
inline const std::array<ChannelSpec, kNumChannels>& channel_specs() {
    static const std::array<ChannelSpec, kNumChannels> specs{{
        {"capillary refill rate", ChannelKind::Categorical, 0.0, 0.0, 1.0, 0, 1},
        {"diastolic blood pressure", ChannelKind::Continuous, 59.0, 0.0, 300.0},
        {"fraction inspired oxygen", ChannelKind::Continuous, 0.21, 0.21, 1.0},
        {"glasgow coma scale eye opening", ChannelKind::Categorical, 4.0, 1.0, 4.0, 1, 4},
        {"glasgow coma scale motor response", ChannelKind::Categorical, 6.0, 1.0, 6.0, 1, 6},
        {"glasgow coma scale verbal response", ChannelKind::Categorical, 5.0, 1.0, 5.0, 1, 5},
        {"glasgow coma scale total", ChannelKind::Categorical, 15.0, 3.0, 15.0, 3, 15},
        {"glucose", ChannelKind::Continuous, 128.0, 0.0, 2000.0},
        {"heart rate", ChannelKind::Continuous, 86.0, 0.0, 350.0},
        {"height", ChannelKind::Continuous, 170.0, 0.0, 275.0},
        {"mean blood pressure", ChannelKind::Continuous, 77.0, 0.0, 375.0},
        {"oxygen saturation", ChannelKind::Continuous, 98.0, 0.0, 100.0},
        {"respiratory rate", ChannelKind::Continuous, 19.0, 0.0, 150.0},
        {"systolic blood pressure", ChannelKind::Continuous, 118.0, 0.0, 375.0},
        {"temperature", ChannelKind::Continuous, 37.0, 14.2, 47.0},
        {"weight", ChannelKind::Continuous, 81.0, 0.0, 600.0},
        {"pH", ChannelKind::Continuous, 7.4, 6.3, 8.4},
    }};
    return specs;
}

inline std::optional<std::size_t> channel_index(std::string_view name) {
    const auto& specs = channel_specs();
    for (std::size_t i = 0; i < specs.size(); ++i) {
        if (specs[i].name == name) return i;
    }
    return std::nullopt;
}

// ---------------------------------------------------------------------------
// Episodes

using Series = std::vector<std::optional<double>>;

struct Note {
    int hour = 0;
    std::string note_id;
    std::vector<TermId> terms;         // pre-annotated phenotypes
    std::optional<std::string> text;   // raw text for the lexicon annotator

    friend bool operator==(const Note&, const Note&) = default;
};

/// One ICU stay on an hourly grid.
struct Episode {
    std::string patient_id;
    std::string episode_id;
    int length_hours = 1;
    std::array<Series, kNumChannels> channels;
    std::vector<Note> notes;
    bool died_in_hospital = false;
    std::optional<int> death_hour;
    std::set<std::string> cohort_tags;

    /// Sorted distinct note hours.
    std::vector<int> note_hours() const {
        std::set<int> hours;
        for (const auto& n : notes) hours.insert(n.hour);
        return {hours.begin(), hours.end()};
    }

    friend bool operator==(const Episode&, const Episode&) = default;
};

/// Throws DataError describing the first violated invariant.
inline void validate(const Episode& e) {
    const auto fail = [&](const std::string& msg) { return DataError("episode " + e.episode_id + ": " + msg); };
    if (e.patient_id.empty()) throw fail("empty patient_id");
    if (e.episode_id.empty()) throw DataError("episode with empty episode_id");
    if (e.length_hours < 1) throw fail("length_hours must be >= 1");
    for (std::size_t c = 0; c < kNumChannels; ++c) {
        if (e.channels[c].size() != static_cast<std::size_t>(e.length_hours)) {
            throw fail("channel '" + channel_specs()[c].name + "' has " + std::to_string(e.channels[c].size()) +
                       " values, expected " + std::to_string(e.length_hours));
        }
    }
    for (const auto& n : e.notes) {
        if (n.hour < 0 || n.hour >= e.length_hours) {
            throw fail("note " + n.note_id + " hour " + std::to_string(n.hour) + " outside stay");
        }
    }
    if (e.death_hour) {
        if (!e.died_in_hospital) throw fail("death_hour set but died_in_hospital is false");
        if (*e.death_hour < 0 || *e.death_hour > e.length_hours) {
            throw fail("death_hour " + std::to_string(*e.death_hour) + " exceeds length_hours " +
                       std::to_string(e.length_hours));
        }
    }
}

/// Parses a categorical cell such as 4, "4", or "4 Spontaneously".
inline double parse_cell(const nlohmann::json& v, const ChannelSpec& spec) {
    if (v.is_number()) return v.get<double>();
    if (v.is_string() && spec.kind == ChannelKind::Categorical) {
        const std::string s = v;
        std::size_t used = 0;
        try {
            const double d = std::stod(s, &used);
            if (used > 0) return d;
        } catch (const std::exception&) {
        }
    }
    throw DataError("channel '" + spec.name + "': cannot interpret value " + v.dump());
}

inline nlohmann::json to_json(const Episode& e) {
    nlohmann::json j;
    j["patient_id"] = e.patient_id;
    j["episode_id"] = e.episode_id;
    j["length_hours"] = e.length_hours;
    nlohmann::json channels = nlohmann::json::object();
    for (std::size_t c = 0; c < kNumChannels; ++c) {
        nlohmann::json series = nlohmann::json::array();
        for (const auto& v : e.channels[c]) series.push_back(v ? nlohmann::json(*v) : nlohmann::json(nullptr));
        channels[channel_specs()[c].name] = std::move(series);
    }
    j["channels"] = std::move(channels);
    nlohmann::json notes = nlohmann::json::array();
    for (const auto& n : e.notes) {
        nlohmann::json jn{{"hour", n.hour}, {"note_id", n.note_id}};
        nlohmann::json terms = nlohmann::json::array();
        for (const auto& t : n.terms) terms.push_back(t.str());
        jn["terms"] = std::move(terms);
        if (n.text) jn["text"] = *n.text;
        notes.push_back(std::move(jn));
    }
    j["notes"] = std::move(notes);
    j["died_in_hospital"] = e.died_in_hospital;
    j["death_hour"] = e.death_hour ? nlohmann::json(*e.death_hour) : nlohmann::json(nullptr);
    j["cohort_tags"] = e.cohort_tags;
    return j;
}

inline Episode episode_from_json(const nlohmann::json& j) {
    const auto need = [&](const char* key) -> const nlohmann::json& {
        if (!j.contains(key)) throw DataError(std::string("missing field '") + key + "'");
        return j.at(key);
    };
    if (!j.is_object()) throw DataError("record is not an object");
    Episode e;
    try {
        e.patient_id = need("patient_id").get<std::string>();
        e.episode_id = need("episode_id").get<std::string>();
        e.length_hours = need("length_hours").get<int>();
        if (e.length_hours < 1) throw DataError("length_hours must be >= 1");
        for (auto& s : e.channels) s.assign(static_cast<std::size_t>(e.length_hours), std::nullopt);
        if (j.contains("channels")) {
            const auto& ch = j.at("channels");
            if (!ch.is_object()) throw DataError("'channels' must be an object");
            for (const auto& [name, series] : ch.items()) {
                auto idx = channel_index(name);
                if (!idx) throw DataError("unknown channel '" + name + "'");
                if (!series.is_array() || series.size() != static_cast<std::size_t>(e.length_hours)) {
                    throw DataError("channel '" + name + "' must be an array of length_hours values");
                }
                for (std::size_t t = 0; t < series.size(); ++t) {
                    if (!series[t].is_null()) e.channels[*idx][t] = parse_cell(series[t], channel_specs()[*idx]);
                }
            }
        }
        if (j.contains("notes")) {
            for (const auto& jn : j.at("notes")) {
                Note n;
                n.hour = jn.at("hour").get<int>();
                n.note_id = jn.at("note_id").get<std::string>();
                if (jn.contains("terms")) {
                    for (const auto& t : jn.at("terms")) n.terms.push_back(TermId::parse(t.get<std::string>()));
                }
                if (jn.contains("text") && !jn.at("text").is_null()) n.text = jn.at("text").get<std::string>();
                e.notes.push_back(std::move(n));
            }
        }
        e.died_in_hospital = need("died_in_hospital").get<bool>();
        if (j.contains("death_hour") && !j.at("death_hour").is_null()) e.death_hour = j.at("death_hour").get<int>();
        if (j.contains("cohort_tags")) {
            for (const auto& t : j.at("cohort_tags")) e.cohort_tags.insert(t.get<std::string>());
        }
    } catch (const nlohmann::json::exception& ex) {
        throw DataError(std::string("schema violation: ") + ex.what());
    }
    validate(e);
    return e;
}

/// Reads episode JSONL. With `drop_noteless`, episodes without any note are
/// discarded after validation.
inline std::vector<Episode> load_episodes(std::istream& in, bool drop_noteless = false) {
    std::vector<Episode> out;
    std::string raw;
    std::size_t lineno = 0;
    while (std::getline(in, raw)) {
        ++lineno;
        if (trim(raw).empty()) continue;
        try {
            Episode e = episode_from_json(nlohmann::json::parse(raw));
            if (drop_noteless && e.notes.empty()) continue;
            out.push_back(std::move(e));
        } catch (const nlohmann::json::parse_error& ex) {
            throw DataError("episodes line " + std::to_string(lineno) + ": parse error: " + ex.what());
        } catch (const DataError& ex) {
            throw DataError("episodes line " + std::to_string(lineno) + ": " + ex.what());
        }
    }
    return out;
}

inline void save_episodes(std::ostream& out, const std::vector<Episode>& episodes) {
    for (const auto& e : episodes) out << to_json(e).dump() << '\n';
}

// ---------------------------------------------------------------------------
// Patient-level splits

struct Partition {
    std::vector<std::size_t> train;  // episode indices
    std::vector<std::size_t> test;
};

namespace detail {
// Distinct patient ids in a seeded random order.
inline std::vector<std::string> shuffled_patients(const std::vector<Episode>& cohort, std::uint64_t seed) {
    std::set<std::string> ids;
    for (const auto& e : cohort) ids.insert(e.patient_id);
    std::vector<std::string> order(ids.begin(), ids.end());
    Rng rng(derive_seed(seed, 0x5117));
    rng.shuffle(order);
    return order;
}

inline std::vector<std::vector<std::size_t>> group_by(const std::vector<Episode>& cohort,
                                                      const std::map<std::string, std::size_t>& bucket,
                                                      std::size_t n_buckets) {
    std::vector<std::vector<std::size_t>> out(n_buckets);
    for (std::size_t i = 0; i < cohort.size(); ++i) out[bucket.at(cohort[i].patient_id)].push_back(i);
    return out;
}
}  // namespace detail

/// Holds out round((1 - train_fraction) * patients) patients for testing.
inline Partition train_test_split(const std::vector<Episode>& cohort, double train_fraction, std::uint64_t seed) {
    if (!(train_fraction > 0.0 && train_fraction < 1.0)) throw ConfigError("train fraction must be in (0, 1)");
    const auto order = detail::shuffled_patients(cohort, seed);
    const auto n_train = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(order.size())));
    std::map<std::string, std::size_t> bucket;
    for (std::size_t i = 0; i < order.size(); ++i) bucket[order[i]] = i < n_train ? 0 : 1;
    auto groups = detail::group_by(cohort, bucket, 2);
    return Partition{std::move(groups[0]), std::move(groups[1])};
}

/// k folds of episode indices; patients are dealt round-robin so fold sizes
/// differ by at most one patient.
inline std::vector<std::vector<std::size_t>> kfold_split(const std::vector<Episode>& cohort, std::size_t k,
                                                         std::uint64_t seed) {
    if (k < 2) throw ConfigError("kfold requires k >= 2");
    const auto order = detail::shuffled_patients(cohort, seed);
    if (k > order.size()) {
        throw ConfigError("kfold k=" + std::to_string(k) + " exceeds patient count " + std::to_string(order.size()));
    }
    std::map<std::string, std::size_t> bucket;
    for (std::size_t i = 0; i < order.size(); ++i) bucket[order[i]] = i % k;
    return detail::group_by(cohort, bucket, k);
}

/// Train/test view of fold `f`: every other fold trains.
inline Partition fold_partition(const std::vector<std::vector<std::size_t>>& folds, std::size_t f) {
    Partition p;
    for (std::size_t i = 0; i < folds.size(); ++i) {
        auto& dst = i == f ? p.test : p.train;
        dst.insert(dst.end(), folds[i].begin(), folds[i].end());
    }
    std::sort(p.train.begin(), p.train.end());
    std::sort(p.test.begin(), p.test.end());
    return p;
}

}  // namespace phenoicu
