#pragma once

#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "phenoicu/annotate.hpp"
#include "phenoicu/cohort.hpp"
#include "phenoicu/ontology.hpp"
#include "phenoicu/tasks.hpp"

namespace phenoicu {

// ---------------------------------------------------------------------------
// Structured channels

struct ImputedGrid {
    std::array<std::vector<double>, kNumChannels> values;
    std::size_t clamped = 0;  // cells pulled back into the plausible range
};

/// Forward fill, normal values before the first observation, clamping to
/// the plausible range; categorical channels become ordinal codes.
inline ImputedGrid impute_channels(const Episode& e) {
    ImputedGrid g;
    const auto& specs = channel_specs();
    for (std::size_t c = 0; c < kNumChannels; ++c) {
        const auto& spec = specs[c];
        auto& out = g.values[c];
        out.resize(static_cast<std::size_t>(e.length_hours));
        double last = spec.normal_value;
        for (std::size_t t = 0; t < out.size(); ++t) {
            if (t < e.channels[c].size() && e.channels[c][t]) {
                double v = *e.channels[c][t];
                if (v < spec.lo || v > spec.hi) {
                    v = std::clamp(v, spec.lo, spec.hi);
                    ++g.clamped;
                }
                if (spec.kind == ChannelKind::Categorical) v = std::round(v);
                last = v;
            }
            out[t] = last;
        }
    }
    return g;
}

// ---------------------------------------------------------------------------
// Phenotype propagation

/// Active terms per hour. With propagation, a transient term charted at t
/// stays on until the next note, a persistent one until the end of the
/// stay; without it, a term is on only at the hour it was charted.
inline std::vector<TermSet> propagate_phenotypes(const std::vector<Annotation>& annotations, const PersistencyMap& pmap,
                                                 const std::vector<int>& note_hours, int length_hours, bool enabled) {
    std::vector<TermSet> active(static_cast<std::size_t>(std::max(0, length_hours)));
    for (const auto& a : annotations) {
        if (a.hour < 0 || a.hour >= length_hours) {
            throw DataError("annotation " + a.term.str() + " at hour " + std::to_string(a.hour) + " outside stay of " +
                            std::to_string(length_hours) + "h");
        }
        int end = a.hour + 1;
        if (enabled) {
            if (pmap(a.term) == Persistency::Persistent) {
                end = length_hours;
            } else {
                auto next = std::upper_bound(note_hours.begin(), note_hours.end(), a.hour);
                end = next == note_hours.end() ? length_hours : std::min(*next, length_hours);
            }
        }
        for (int h = a.hour; h < end; ++h) active[static_cast<std::size_t>(h)].insert(a.term);
    }
    return active;
}

// ---------------------------------------------------------------------------
// Schema and matrix

struct FeatureConfig {
    bool phenotypes = true;        // false: structured-only ("S")
    bool propagate = true;
    int aggregate_levels = 1;
    AggregateMode aggregate_mode = AggregateMode::Superset;
    bool one_hot = false;          // expand categorical channels
};

struct FeatureSchema {
    std::vector<std::string> names;
    std::size_t n_structured = 0;

    std::size_t width() const noexcept { return names.size(); }

    std::string hash() const {
        std::uint64_t h = fnv1a(std::to_string(n_structured));
        for (const auto& n : names) h = fnv1a(n + '\x1f', h);
        return hex64(h);
    }

    std::optional<std::size_t> index_of(std::string_view name) const {
        for (std::size_t i = 0; i < names.size(); ++i) {
            if (names[i] == name) return i;
        }
        return std::nullopt;
    }

    friend bool operator==(const FeatureSchema&, const FeatureSchema&) = default;
};

inline nlohmann::json to_json(const FeatureSchema& s) {
    return {{"names", s.names}, {"n_structured", s.n_structured}, {"hash", s.hash()}};
}

inline FeatureSchema schema_from_json(const nlohmann::json& j) {
    FeatureSchema s;
    s.names = j.at("names").get<std::vector<std::string>>();
    s.n_structured = j.at("n_structured").get<std::size_t>();
    return s;
}

struct RowKey {
    std::string episode_id;
    int hour = 0;  // label hour
    friend bool operator==(const RowKey&, const RowKey&) = default;
};

/// Dense row-major feature rows.
struct FeatureMatrix {
    FeatureSchema schema;
    std::vector<RowKey> keys;
    std::vector<double> data;

    std::size_t rows() const noexcept { return keys.size(); }
    std::size_t cols() const noexcept { return schema.width(); }
    std::span<const double> row(std::size_t i) const { return {data.data() + i * cols(), cols()}; }
    std::span<double> row(std::size_t i) { return {data.data() + i * cols(), cols()}; }
    double at(std::size_t r, std::size_t c) const { return data[r * cols() + c]; }

    friend bool operator==(const FeatureMatrix&, const FeatureMatrix&) = default;
};

/// Grid row holding the data available at a label hour. Mortality is
/// predicted from the first 48 hours, i.e. rows 0..47.
inline int grid_hour(Task task, int label_hour) { return task == Task::Mortality ? label_hour - 1 : label_hour; }

inline std::vector<std::string> structured_names(bool one_hot) {
    std::vector<std::string> names;
    for (const auto& spec : channel_specs()) {
        if (one_hot && spec.kind == ChannelKind::Categorical) {
            for (int lv = spec.levels_lo; lv <= spec.levels_hi; ++lv) names.push_back(spec.name + "=" + std::to_string(lv));
        } else {
            names.push_back(spec.name);
        }
    }
    return names;
}

using AnnotationIndex = std::map<std::string, std::vector<Annotation>>;

/// Annotations taken from the episodes' own notes: pre-annotated terms,
/// plus lexicon matches on note text when a lexicon is given.
inline AnnotationIndex annotations_from_notes(const std::vector<Episode>& cohort, const Lexicon* lexicon = nullptr) {
    AnnotationIndex idx;
    for (const auto& e : cohort) {
        auto& out = idx[e.episode_id];
        for (const auto& n : e.notes) {
            for (const auto& t : n.terms) out.push_back(Annotation{t, n.hour, n.note_id, std::nullopt, e.episode_id});
            if (lexicon && n.text) {
                for (auto& a : match_lexicon(*lexicon, *n.text, n.hour, n.note_id)) {
                    a.episode_id = e.episode_id;
                    out.push_back(std::move(a));
                }
            }
        }
    }
    return idx;
}

/// Groups a flat annotation list by episode_id.
inline AnnotationIndex index_annotations(const std::vector<Annotation>& anns) {
    AnnotationIndex idx;
    for (const auto& a : anns) {
        if (a.episode_id.empty()) throw DataError("annotation for note " + a.note_id + " lacks episode_id");
        idx[a.episode_id].push_back(a);
    }
    return idx;
}

namespace detail {

// Per-hour indicator vectors of every term active after propagation and
// aggregation.
inline std::map<TermId, std::vector<char>> phenotype_tracks(const Episode& e, const std::vector<Annotation>& anns,
                                                            const Ontology& onto, const PersistencyMap& pmap,
                                                            const FeatureConfig& cfg) {
    auto hours = e.note_hours();
    for (const auto& a : anns) hours.push_back(a.hour);
    std::sort(hours.begin(), hours.end());
    hours.erase(std::unique(hours.begin(), hours.end()), hours.end());

    const auto active = propagate_phenotypes(anns, pmap, hours, e.length_hours, cfg.propagate);
    std::map<TermId, TermSet> lifted;
    std::map<TermId, std::vector<char>> tracks;
    for (std::size_t h = 0; h < active.size(); ++h) {
        for (const auto& t : active[h]) {
            auto it = lifted.find(t);
            if (it == lifted.end()) {
                it = lifted.emplace(t, aggregate_to_parents(onto, {t}, cfg.aggregate_levels, cfg.aggregate_mode)).first;
            }
            for (const auto& u : it->second) {
                if (u == onto.root()) continue;
                auto& track = tracks[u];
                if (track.empty()) track.assign(active.size(), 0);
                track[h] = 1;
            }
        }
    }
    return tracks;
}

}  // namespace detail

/// Phenotype columns implied by a cohort: every charted term and its
/// aggregated parents, excluding the ontology root, in lexicographic order.
inline FeatureSchema build_schema(const std::vector<Episode>& cohort, const Ontology& onto, const AnnotationIndex& anns,
                                  const FeatureConfig& cfg) {
    FeatureSchema s;
    s.names = structured_names(cfg.one_hot);
    s.n_structured = s.names.size();
    if (!cfg.phenotypes) return s;
    TermSet terms;
    for (const auto& e : cohort) {
        auto it = anns.find(e.episode_id);
        if (it == anns.end()) continue;
        for (const auto& a : it->second) {
            for (const auto& u : aggregate_to_parents(onto, {a.term}, cfg.aggregate_levels, cfg.aggregate_mode)) {
                if (u != onto.root()) terms.insert(u);
            }
        }
    }
    for (const auto& t : terms) s.names.push_back(t.str());
    return s;
}

/// Builds one feature row per label row. Episodes with notes must have an
/// entry in `anns` when phenotype columns are requested. Pass `schema` to
/// reuse the column layout of a trained model.
inline FeatureMatrix assemble(const std::vector<Episode>& cohort, const Ontology& onto, const AnnotationIndex& anns,
                              const PersistencyMap& pmap, const FeatureConfig& cfg, const TaskLabels& labels,
                              std::optional<FeatureSchema> schema = std::nullopt) {
    FeatureMatrix m;
    m.schema = schema ? *schema : build_schema(cohort, onto, anns, cfg);
    const std::size_t W = m.schema.width();
    const auto expected_structured = structured_names(cfg.one_hot);
    if (m.schema.n_structured != expected_structured.size()) {
        throw ConfigError("schema structured width does not match feature config");
    }
    std::map<std::string, std::size_t> column;
    for (std::size_t c = m.schema.n_structured; c < W; ++c) column[m.schema.names[c]] = c;

    std::map<std::string, std::size_t> by_id;
    for (std::size_t i = 0; i < cohort.size(); ++i) by_id[cohort[i].episode_id] = i;

    // Group label rows by episode, preserving label order in the output.
    std::map<std::size_t, std::vector<std::size_t>> rows_of;
    for (std::size_t r = 0; r < labels.rows.size(); ++r) {
        auto it = by_id.find(labels.rows[r].episode_id);
        if (it == by_id.end()) throw DataError("label row references unknown episode " + labels.rows[r].episode_id);
        rows_of[it->second].push_back(r);
    }
    m.keys.resize(labels.rows.size());
    m.data.assign(labels.rows.size() * W, 0.0);

    std::vector<std::size_t> episodes;
    for (const auto& [ei, unused] : rows_of) episodes.push_back(ei);
    parallel_for(episodes.size(), [&](std::size_t k) {
        const Episode& e = cohort[episodes[k]];
        const auto grid = impute_channels(e);
        std::map<TermId, std::vector<char>> tracks;
        if (cfg.phenotypes) {
            auto it = anns.find(e.episode_id);
            if (it == anns.end()) {
                if (!e.notes.empty()) throw DataError("no annotations supplied for episode " + e.episode_id);
            } else {
                tracks = detail::phenotype_tracks(e, it->second, onto, pmap, cfg);
            }
        }
        for (std::size_t r : rows_of.at(episodes[k])) {
            const auto& lr = labels.rows[r];
            m.keys[r] = RowKey{lr.episode_id, lr.hour};
            const int g = grid_hour(labels.task, lr.hour);
            if (g < 0 || g >= e.length_hours) {
                throw DataError("label hour " + std::to_string(lr.hour) + " outside episode " + e.episode_id);
            }
            const auto gh = static_cast<std::size_t>(g);
            double* row = m.data.data() + r * W;
            std::size_t c = 0;
            for (std::size_t ch = 0; ch < kNumChannels; ++ch) {
                const auto& spec = channel_specs()[ch];
                const double v = grid.values[ch][gh];
                if (cfg.one_hot && spec.kind == ChannelKind::Categorical) {
                    for (int lv = spec.levels_lo; lv <= spec.levels_hi; ++lv) row[c++] = (static_cast<int>(v) == lv) ? 1.0 : 0.0;
                } else {
                    row[c++] = v;
                }
            }
            for (const auto& [term, track] : tracks) {
                if (!track[gh]) continue;
                if (auto col = column.find(term.str()); col != column.end()) row[col->second] = 1.0;
            }
        }
    });
    return m;
}

/// Rows of `m` selected by index, in the given order.
inline FeatureMatrix select_rows(const FeatureMatrix& m, const std::vector<std::size_t>& idx) {
    FeatureMatrix out;
    out.schema = m.schema;
    out.keys.reserve(idx.size());
    out.data.reserve(idx.size() * m.cols());
    for (std::size_t i : idx) {
        out.keys.push_back(m.keys[i]);
        const auto r = m.row(i);
        out.data.insert(out.data.end(), r.begin(), r.end());
    }
    return out;
}

/// Per-column z-scoring fitted on training rows (LSTM inputs only).
struct Standardizer {
    std::vector<double> mean;
    std::vector<double> scale;

    static Standardizer fit(const FeatureMatrix& m) {
        Standardizer s;
        const std::size_t W = m.cols(), N = m.rows();
        s.mean.assign(W, 0.0);
        s.scale.assign(W, 1.0);
        if (N == 0) return s;
        for (std::size_t r = 0; r < N; ++r) {
            for (std::size_t c = 0; c < W; ++c) s.mean[c] += m.at(r, c);
        }
        for (auto& v : s.mean) v /= static_cast<double>(N);
        std::vector<double> var(W, 0.0);
        for (std::size_t r = 0; r < N; ++r) {
            for (std::size_t c = 0; c < W; ++c) {
                const double d = m.at(r, c) - s.mean[c];
                var[c] += d * d;
            }
        }
        for (std::size_t c = 0; c < W; ++c) {
            const double sd = std::sqrt(var[c] / static_cast<double>(N));
            s.scale[c] = sd > 1e-12 ? sd : 1.0;
        }
        return s;
    }

    void apply(std::span<double> row) const {
        for (std::size_t c = 0; c < row.size(); ++c) row[c] = (row[c] - mean[c]) / scale[c];
    }

    void apply(FeatureMatrix& m) const {
        for (std::size_t r = 0; r < m.rows(); ++r) apply(m.row(r));
    }
};

// ---------------------------------------------------------------------------
// Export

inline void write_matrix_csv(std::ostream& out, const FeatureMatrix& m) {
    out << "episode_id,hour";
    for (const auto& n : m.schema.names) out << ",\"" << n << '"';
    out << '\n';
    char buf[32];
    for (std::size_t r = 0; r < m.rows(); ++r) {
        out << m.keys[r].episode_id << ',' << m.keys[r].hour;
        for (double v : m.row(r)) {
            std::snprintf(buf, sizeof buf, "%.10g", v);
            out << ',' << buf;
        }
        out << '\n';
    }
}

inline constexpr char kMatrixMagic[8] = {'P', 'I', 'C', 'U', 'F', 'M', 'X', '1'};

namespace detail {
inline void put_u64(std::ostream& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.put(static_cast<char>((v >> (8 * i)) & 0xff));
}
inline std::uint64_t get_u64(std::istream& in) {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) {
        const int c = in.get();
        if (c == EOF) throw DataError("unexpected end of binary file");
        v |= static_cast<std::uint64_t>(static_cast<unsigned char>(c)) << (8 * i);
    }
    return v;
}
inline void put_f64(std::ostream& out, double d) {
    std::uint64_t v;
    std::memcpy(&v, &d, sizeof v);
    put_u64(out, v);
}
inline double get_f64(std::istream& in) {
    const std::uint64_t v = get_u64(in);
    double d;
    std::memcpy(&d, &v, sizeof d);
    return d;
}
}  // namespace detail

/// Columnar binary layout: magic, u64 header length, JSON header (schema and
/// row keys), then each column as little-endian f64 values.
inline void write_matrix_binary(std::ostream& out, const FeatureMatrix& m) {
    nlohmann::json header{{"schema", to_json(m.schema)}, {"rows", m.rows()}};
    nlohmann::json keys = nlohmann::json::array();
    for (const auto& k : m.keys) keys.push_back({k.episode_id, k.hour});
    header["keys"] = std::move(keys);
    const std::string h = header.dump();
    out.write(kMatrixMagic, sizeof kMatrixMagic);
    detail::put_u64(out, h.size());
    out.write(h.data(), static_cast<std::streamsize>(h.size()));
    for (std::size_t c = 0; c < m.cols(); ++c) {
        for (std::size_t r = 0; r < m.rows(); ++r) detail::put_f64(out, m.at(r, c));
    }
}

inline FeatureMatrix read_matrix_binary(std::istream& in) {
    char magic[8];
    if (!in.read(magic, sizeof magic) || std::memcmp(magic, kMatrixMagic, sizeof magic) != 0) {
        throw DataError("not a feature matrix file");
    }
    const std::uint64_t len = detail::get_u64(in);
    std::string h(len, '\0');
    if (!in.read(h.data(), static_cast<std::streamsize>(len))) throw DataError("truncated matrix header");
    const auto header = nlohmann::json::parse(h);
    FeatureMatrix m;
    m.schema = schema_from_json(header.at("schema"));
    for (const auto& k : header.at("keys")) m.keys.push_back({k[0].get<std::string>(), k[1].get<int>()});
    m.data.assign(m.rows() * m.cols(), 0.0);
    for (std::size_t c = 0; c < m.cols(); ++c) {
        for (std::size_t r = 0; r < m.rows(); ++r) m.data[r * m.cols() + c] = detail::get_f64(in);
    }
    return m;
}

}  // namespace phenoicu
