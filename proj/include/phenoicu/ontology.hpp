#pragma once

#include <deque>
#include <istream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "phenoicu/common.hpp"

namespace phenoicu {

/// Phenotype term identifier, `HP:` followed by exactly seven digits.
class TermId {
public:
    TermId() = default;

    static bool valid(std::string_view s) {
        if (s.size() != 10 || s.substr(0, 3) != "HP:") return false;
        return std::all_of(s.begin() + 3, s.end(), [](char c) { return c >= '0' && c <= '9'; });
    }

    /// Throws DataError on malformed input.
    static TermId parse(std::string_view s) {
        if (!valid(s)) throw DataError("malformed term id '" + std::string(s) + "'");
        TermId t;
        t.value_ = std::string(s);
        return t;
    }

    const std::string& str() const noexcept { return value_; }
    bool empty() const noexcept { return value_.empty(); }

    friend auto operator<=>(const TermId&, const TermId&) = default;

private:
    std::string value_;
};

using TermSet = std::set<TermId>;

struct Term {
    TermId id;
    std::string name;
    TermSet parents;
};

/// Immutable is_a DAG over phenotype terms with a single root.
class Ontology {
public:
    Ontology() = default;

    const std::map<TermId, Term>& terms() const noexcept { return terms_; }
    const TermId& root() const noexcept { return root_; }
    std::size_t size() const noexcept { return terms_.size(); }
    bool contains(const TermId& t) const { return terms_.count(t) != 0; }

    const Term& term(const TermId& t) const {
        auto it = terms_.find(t);
        if (it == terms_.end()) throw DataError("unknown term " + t.str());
        return it->second;
    }

    /// Transitive closure over parents, excluding `t` itself.
    TermSet ancestors(const TermId& t) const { return within_hops(t, -1); }

    /// Ancestors reachable in at most `levels` is_a hops (negative: unbounded).
    TermSet within_hops(const TermId& t, int levels) const {
        term(t);
        TermSet seen;
        std::deque<std::pair<TermId, int>> queue{{t, 0}};
        while (!queue.empty()) {
            auto [cur, depth] = queue.front();
            queue.pop_front();
            if (levels >= 0 && depth >= levels) continue;
            for (const auto& p : terms_.at(cur).parents) {
                if (seen.insert(p).second) queue.emplace_back(p, depth + 1);
            }
        }
        return seen;
    }

    /// Terms in an order where every parent precedes its children.
    std::vector<TermId> topological_order() const {
        std::map<TermId, std::size_t> pending;
        std::map<TermId, std::vector<TermId>> children;
        for (const auto& [id, term] : terms_) {
            pending[id] = term.parents.size();
            for (const auto& p : term.parents) children[p].push_back(id);
        }
        std::deque<TermId> ready;
        for (const auto& [id, n] : pending) {
            if (n == 0) ready.push_back(id);
        }
        std::vector<TermId> order;
        while (!ready.empty()) {
            TermId cur = ready.front();
            ready.pop_front();
            order.push_back(cur);
            for (const auto& c : children[cur]) {
                if (--pending[c] == 0) ready.push_back(c);
            }
        }
        if (order.size() != terms_.size()) throw DataError("ontology contains a cycle");
        return order;
    }

    /// Builds and validates an ontology from a term list. `lines` maps ids to
    /// their stanza line for error reporting and may be empty.
    static Ontology build(std::vector<Term> terms, const std::map<TermId, std::size_t>& lines = {}) {
        const auto where = [&](const TermId& id) {
            auto it = lines.find(id);
            return it == lines.end() ? std::string() : " (line " + std::to_string(it->second) + ")";
        };
        Ontology o;
        for (auto& t : terms) {
            if (t.parents.count(t.id)) throw DataError("self is_a edge on " + t.id.str() + where(t.id));
            if (o.terms_.count(t.id)) throw DataError("duplicate term id " + t.id.str() + where(t.id));
            TermId id = t.id;
            o.terms_.emplace(std::move(id), std::move(t));
        }
        for (const auto& [id, t] : o.terms_) {
            for (const auto& p : t.parents) {
                if (!o.terms_.count(p)) {
                    throw DataError("term " + id.str() + where(id) + " has unknown parent " + p.str());
                }
            }
        }
        o.check_acyclic(where);
        std::vector<TermId> roots;
        for (const auto& [id, t] : o.terms_) {
            if (t.parents.empty()) roots.push_back(id);
        }
        if (roots.size() != 1) {
            throw DataError("ontology must have exactly one root, found " + std::to_string(roots.size()));
        }
        o.root_ = roots.front();
        return o;
    }

private:
    template <class Where>
    void check_acyclic(const Where& where) const {
        // Iterative DFS colouring; reports the first back edge found.
        enum class Mark { White, Grey, Black };
        std::map<TermId, Mark> mark;
        for (const auto& [id, t] : terms_) mark[id] = Mark::White;
        for (const auto& [start, unused] : terms_) {
            if (mark[start] != Mark::White) continue;
            std::vector<std::pair<TermId, TermSet::const_iterator>> stack;
            mark[start] = Mark::Grey;
            stack.emplace_back(start, terms_.at(start).parents.begin());
            while (!stack.empty()) {
                auto& [node, it] = stack.back();
                if (it == terms_.at(node).parents.end()) {
                    mark[node] = Mark::Black;
                    stack.pop_back();
                    continue;
                }
                const TermId next = *it++;
                if (mark[next] == Mark::Grey) {
                    std::string cycle;
                    bool on = false;
                    for (const auto& [n, unused2] : stack) {
                        if (n == next) on = true;
                        if (on) cycle += n.str() + " -> ";
                    }
                    cycle += next.str();
                    throw DataError("cycle detected: " + cycle + where(next));
                }
                if (mark[next] == Mark::White) {
                    mark[next] = Mark::Grey;
                    stack.emplace_back(next, terms_.at(next).parents.begin());
                }
            }
        }
    }

    std::map<TermId, Term> terms_;
    TermId root_;
};

/// Parses the `[Term]` stanzas of an OBO flat file. Only `id`, `name`,
/// `is_a` and `is_obsolete` are interpreted; other keys and stanza types are
/// skipped.
inline Ontology parse_obo(std::istream& in) {
    std::vector<Term> terms;
    std::map<TermId, std::size_t> lines;

    struct Pending {
        bool in_term = false;
        bool obsolete = false;
        bool has_id = false;
        std::size_t line = 0;
        Term term;
    } cur;

    const auto flush = [&] {
        if (cur.in_term && !cur.obsolete) {
            if (!cur.has_id) throw DataError("[Term] stanza without id at line " + std::to_string(cur.line));
            if (lines.count(cur.term.id)) {
                throw DataError("duplicate term id " + cur.term.id.str() + " at line " + std::to_string(cur.line));
            }
            lines[cur.term.id] = cur.line;
            terms.push_back(std::move(cur.term));
        }
        cur = Pending{};
    };

    std::string raw;
    std::size_t lineno = 0;
    while (std::getline(in, raw)) {
        ++lineno;
        std::string_view line = trim(raw);
        if (line.empty() || line.front() == '!') continue;
        if (line.front() == '[') {
            flush();
            cur.in_term = (line == "[Term]");
            cur.line = lineno;
            continue;
        }
        if (!cur.in_term) continue;
        const auto colon = line.find(':');
        if (colon == std::string_view::npos) continue;
        const std::string_view key = trim(line.substr(0, colon));
        std::string_view value = trim(line.substr(colon + 1));
        const auto at = [&](const std::string& msg) {
            return DataError(msg + " at line " + std::to_string(lineno));
        };
        if (key == "id") {
            if (!TermId::valid(value)) throw at("malformed term id '" + std::string(value) + "'");
            cur.term.id = TermId::parse(value);
            cur.has_id = true;
        } else if (key == "name") {
            cur.term.name = std::string(value);
        } else if (key == "is_a") {
            if (auto bang = value.find(" !"); bang != std::string_view::npos) value = trim(value.substr(0, bang));
            if (!TermId::valid(value)) throw at("malformed is_a target '" + std::string(value) + "'");
            cur.term.parents.insert(TermId::parse(value));
        } else if (key == "is_obsolete") {
            cur.obsolete = (value == "true");
        }
    }
    flush();
    return Ontology::build(std::move(terms), lines);
}

inline Ontology parse_obo(std::string_view text) {
    std::istringstream in{std::string(text)};
    return parse_obo(in);
}

/// Writes the interpreted subset back out as OBO.
inline std::string serialize_obo(const Ontology& o) {
    std::ostringstream out;
    out << "format-version: 1.2\n";
    for (const auto& [id, t] : o.terms()) {
        out << "\n[Term]\nid: " << id.str() << "\nname: " << t.name << "\n";
        for (const auto& p : t.parents) {
            out << "is_a: " << p.str();
            if (o.contains(p) && !o.term(p).name.empty()) out << " ! " << o.term(p).name;
            out << "\n";
        }
    }
    return out.str();
}

enum class AggregateMode {
    Superset,  ///< active terms plus their ancestors within `levels` hops
    Replace    ///< ancestors within `levels` hops replace the active term
};

/// Lifts a set of active terms towards the root by `levels` is_a hops.
inline TermSet aggregate_to_parents(const Ontology& o, const TermSet& active, int levels = 1,
                                    AggregateMode mode = AggregateMode::Superset) {
    if (levels < 0) throw ConfigError("aggregation levels must be >= 0");
    TermSet out;
    for (const auto& t : active) {
        if (!o.contains(t)) throw DataError("unknown term " + t.str() + " in active set");
        TermSet lifted = o.within_hops(t, levels);
        if (mode == AggregateMode::Superset || levels == 0 || lifted.empty()) out.insert(t);
        out.insert(lifted.begin(), lifted.end());
    }
    return out;
}

}  // namespace phenoicu
