#pragma once

#include <cctype>
#include <istream>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "phenoicu/common.hpp"
#include "phenoicu/ontology.hpp"

namespace phenoicu {

struct Span {
    std::size_t begin = 0;
    std::size_t end = 0;
    friend bool operator==(const Span&, const Span&) = default;
};

struct Annotation {
    TermId term;
    int hour = 0;
    std::string note_id;
    std::optional<Span> span;
    std::string episode_id;  // empty when the source is already per-episode

    friend bool operator==(const Annotation&, const Annotation&) = default;
};

inline bool is_alnum(char c) { return std::isalnum(static_cast<unsigned char>(c)) != 0; }

/// Lowercases and collapses whitespace runs into single spaces.
inline std::string normalize_surface(std::string_view s) {
    std::string out;
    bool pending_space = false;
    for (char c : trim(s)) {
        if (std::isspace(static_cast<unsigned char>(c))) {
            pending_space = true;
            continue;
        }
        if (pending_space && !out.empty()) out.push_back(' ');
        pending_space = false;
        out.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    }
    return out;
}

/// Surface-string dictionary for the rule-based phenotyper.
class Lexicon {
public:
    Lexicon() : root_(std::make_shared<Node>()) {}

    void add(std::string_view surface, const TermId& term) {
        std::string key = normalize_surface(surface);
        if (key.empty()) throw DataError("empty lexicon surface string");
        auto [it, inserted] = entries_.emplace(key, term);
        if (!inserted && it->second != term) {
            throw DataError("lexicon surface '" + key + "' maps to both " + it->second.str() + " and " + term.str());
        }
        Node* node = root_.get();
        for (char c : key) {
            auto& child = node->next[c];
            if (!child) child = std::make_unique<Node>();
            node = child.get();
        }
        node->term = term;
    }

    const std::map<std::string, TermId>& entries() const noexcept { return entries_; }
    std::string source;

    /// Longest entry starting at normalized position `pos` that ends on a
    /// token boundary. Returns the match length in normalized characters.
    std::optional<std::pair<std::size_t, TermId>> longest_at(const std::string& text, std::size_t pos) const {
        std::optional<std::pair<std::size_t, TermId>> best;
        const Node* node = root_.get();
        for (std::size_t i = pos; i < text.size(); ++i) {
            auto it = node->next.find(text[i]);
            if (it == node->next.end()) break;
            node = it->second.get();
            const std::size_t end = i + 1;
            if (node->term && (end == text.size() || !is_alnum(text[end]) || !is_alnum(text[i]))) {
                best.emplace(end - pos, *node->term);
            }
        }
        return best;
    }

private:
    struct Node {
        std::map<char, std::unique_ptr<Node>> next;
        std::optional<TermId> term;
    };

    std::map<std::string, TermId> entries_;
    std::shared_ptr<Node> root_;
};

/// Reads `surface<TAB>HP:NNNNNNN` lines. Blank lines and `#` comments skipped.
inline Lexicon load_lexicon(std::istream& in) {
    Lexicon lex;
    std::string raw;
    std::size_t lineno = 0;
    while (std::getline(in, raw)) {
        ++lineno;
        std::string_view line = trim(raw);
        if (line.empty() || line.front() == '#') continue;
        const auto tab = line.find('\t');
        if (tab == std::string_view::npos) throw DataError("lexicon line " + std::to_string(lineno) + ": missing tab");
        const auto id = trim(line.substr(tab + 1));
        if (!TermId::valid(id)) {
            throw DataError("lexicon line " + std::to_string(lineno) + ": malformed term id '" + std::string(id) + "'");
        }
        lex.add(line.substr(0, tab), TermId::parse(id));
    }
    return lex;
}

/// Case-insensitive, whitespace-normalized, longest-match-first scan of a
/// note. Matches are non-overlapping and bounded by non-alphanumerics.
/// Spans refer to byte offsets in the original text.
inline std::vector<Annotation> match_lexicon(const Lexicon& lex, std::string_view note_text, int hour,
                                             const std::string& note_id = {}) {
    // Normalized text plus the original offset of each normalized character.
    std::string norm;
    std::vector<std::size_t> origin;
    norm.reserve(note_text.size());
    bool pending_space = false;
    for (std::size_t i = 0; i < note_text.size(); ++i) {
        const char c = note_text[i];
        if (std::isspace(static_cast<unsigned char>(c))) {
            pending_space = true;
            continue;
        }
        if (pending_space && !norm.empty()) {
            norm.push_back(' ');
            origin.push_back(i - 1);
        }
        pending_space = false;
        norm.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
        origin.push_back(i);
    }

    std::vector<Annotation> out;
    std::size_t pos = 0;
    while (pos < norm.size()) {
        const bool boundary = pos == 0 || !is_alnum(norm[pos - 1]) || !is_alnum(norm[pos]);
        if (boundary) {
            if (auto hit = lex.longest_at(norm, pos)) {
                const auto [len, term] = *hit;
                out.push_back(Annotation{term, hour, note_id, Span{origin[pos], origin[pos + len - 1] + 1}, {}});
                pos += len;
                continue;
            }
        }
        ++pos;
    }
    return out;
}

/// Parses annotation JSONL: `{"term","hour","note_id"[,"episode_id","span"]}`.
inline std::vector<Annotation> load_annotations(std::istream& in) {
    std::vector<Annotation> out;
    std::string raw;
    std::size_t lineno = 0;
    while (std::getline(in, raw)) {
        ++lineno;
        if (trim(raw).empty()) continue;
        const auto fail = [&](const std::string& msg) {
            return DataError("annotations line " + std::to_string(lineno) + ": " + msg);
        };
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(raw);
        } catch (const nlohmann::json::parse_error& e) {
            throw fail(std::string("parse error: ") + e.what());
        }
        if (!j.is_object()) throw fail("record is not an object");
        if (!j.contains("term") || !j["term"].is_string()) throw fail("missing string field 'term'");
        if (!j.contains("hour") || !j["hour"].is_number_integer()) throw fail("missing integer field 'hour'");
        if (!j.contains("note_id") || !j["note_id"].is_string()) throw fail("missing string field 'note_id'");
        const std::string term = j["term"];
        if (!TermId::valid(term)) throw fail("malformed term id '" + term + "'");
        const long long hour = j["hour"];
        if (hour < 0 || hour > 1'000'000) throw fail("hour out of range: " + std::to_string(hour));
        Annotation a{TermId::parse(term), static_cast<int>(hour), j["note_id"], std::nullopt, {}};
        if (j.contains("episode_id")) {
            if (!j["episode_id"].is_string()) throw fail("'episode_id' must be a string");
            a.episode_id = j["episode_id"];
        }
        if (j.contains("span") && j["span"].is_array() && j["span"].size() == 2) {
            a.span = Span{j["span"][0].get<std::size_t>(), j["span"][1].get<std::size_t>()};
        }
        out.push_back(std::move(a));
    }
    return out;
}

inline nlohmann::json to_json(const Annotation& a) {
    nlohmann::json j;
    if (!a.episode_id.empty()) j["episode_id"] = a.episode_id;
    j["term"] = a.term.str();
    j["hour"] = a.hour;
    j["note_id"] = a.note_id;
    if (a.span) j["span"] = {a.span->begin, a.span->end};
    return j;
}

inline void save_annotations(std::ostream& out, const std::vector<Annotation>& anns) {
    for (const auto& a : anns) out << to_json(a).dump() << '\n';
}

enum class Persistency { Transient, Persistent };

/// Expert persistency labels. Terms not listed are transient.
class PersistencyMap {
public:
    void set(const TermId& t, Persistency p) { map_[t] = p; }

    Persistency operator()(const TermId& t) const {
        auto it = map_.find(t);
        return it == map_.end() ? Persistency::Transient : it->second;
    }

    const std::map<TermId, Persistency>& entries() const noexcept { return map_; }

private:
    std::map<TermId, Persistency> map_;
};

/// Reads `HP:NNNNNNN<TAB>persistent|transient` lines.
inline PersistencyMap load_persistency(std::istream& in) {
    PersistencyMap pm;
    std::string raw;
    std::size_t lineno = 0;
    while (std::getline(in, raw)) {
        ++lineno;
        std::string_view line = trim(raw);
        if (line.empty() || line.front() == '#') continue;
        const auto tab = line.find('\t');
        const auto fail = [&](const std::string& msg) {
            return DataError("persistency line " + std::to_string(lineno) + ": " + msg);
        };
        if (tab == std::string_view::npos) throw fail("missing tab");
        const auto id = trim(line.substr(0, tab));
        const auto kind = trim(line.substr(tab + 1));
        if (!TermId::valid(id)) throw fail("malformed term id '" + std::string(id) + "'");
        if (kind == "persistent") {
            pm.set(TermId::parse(id), Persistency::Persistent);
        } else if (kind == "transient") {
            pm.set(TermId::parse(id), Persistency::Transient);
        } else {
            throw fail("expected 'persistent' or 'transient', got '" + std::string(kind) + "'");
        }
    }
    return pm;
}

}  // namespace phenoicu
