#include <algorithm>
#include <fstream>
#include <sstream>

#include <gtest/gtest.h>

#include "phenoicu/annotate.hpp"

using namespace phenoicu;

namespace {

const TermId kHypo = TermId::parse("HP:0002615");
const TermId kPain = TermId::parse("HP:0012531");
const TermId kChest = TermId::parse("HP:0100749");

Lexicon lexicon(std::vector<std::pair<std::string, TermId>> entries) {
    Lexicon lex;
    for (const auto& [s, t] : entries) lex.add(s, t);
    return lex;
}

std::vector<TermId> terms(const std::vector<Annotation>& anns) {
    std::vector<TermId> out;
    for (const auto& a : anns) out.push_back(a.term);
    return out;
}

// Every occurrence of every entry at token boundaries, then a greedy
// left-to-right pick preferring the longest candidate at each start.
std::vector<std::pair<std::size_t, std::size_t>> longest_match_oracle(const std::vector<std::string>& surfaces,
                                                                      const std::string& text) {
    std::string low = text;
    std::transform(low.begin(), low.end(), low.begin(), [](unsigned char c) { return std::tolower(c); });
    const auto alnum = [](char c) { return std::isalnum(static_cast<unsigned char>(c)) != 0; };
    std::vector<std::pair<std::size_t, std::size_t>> cands;
    for (const auto& s : surfaces) {
        for (std::size_t p = low.find(s); p != std::string::npos; p = low.find(s, p + 1)) {
            const std::size_t e = p + s.size();
            if ((p == 0 || !alnum(low[p - 1])) && (e == low.size() || !alnum(low[e]))) cands.push_back({p, e});
        }
    }
    std::sort(cands.begin(), cands.end(), [](auto a, auto b) { return a.first != b.first ? a.first < b.first : a.second > b.second; });
    std::vector<std::pair<std::size_t, std::size_t>> out;
    std::size_t cursor = 0;
    for (const auto& c : cands) {
        if (c.first < cursor) continue;
        out.push_back(c);
        cursor = c.second;
    }
    return out;
}

}  // namespace

TEST(Lexicon, DirectHitAndCase) {
    const auto lex = lexicon({{"hypotension", kHypo}});
    EXPECT_EQ(terms(match_lexicon(lex, "persistent hypotension noted", 3)), std::vector<TermId>{kHypo});
    const auto a = match_lexicon(lex, "HYPOTENSION", 7, "n1");
    ASSERT_EQ(a.size(), 1u);
    EXPECT_EQ(a[0].term, kHypo);
    EXPECT_EQ(a[0].hour, 7);
    EXPECT_EQ(a[0].note_id, "n1");
    EXPECT_EQ(a[0].span, (Span{0, 11}));
}

TEST(Lexicon, LongestMatchWins) {
    const auto lex = lexicon({{"pain", kPain}, {"chest pain", kChest}});
    EXPECT_EQ(terms(match_lexicon(lex, "reports chest pain", 0)), std::vector<TermId>{kChest});
    EXPECT_EQ(terms(match_lexicon(lex, "pain then chest pain then pain", 0)),
              (std::vector<TermId>{kPain, kChest, kPain}));
}

TEST(Lexicon, TokenBoundaries) {
    const auto lex = lexicon({{"pain", kPain}});
    EXPECT_TRUE(match_lexicon(lex, "travelled to Spain", 0).empty());
    EXPECT_TRUE(match_lexicon(lex, "painful", 0).empty());
    EXPECT_EQ(match_lexicon(lex, "(pain).", 0).size(), 1u);
}

TEST(Lexicon, WhitespaceNormalizedSpansPointIntoOriginal) {
    const auto lex = lexicon({{"chest pain", kChest}});
    const std::string text = "Pt has Chest \n\t Pain today";
    const auto a = match_lexicon(lex, text, 0);
    ASSERT_EQ(a.size(), 1u);
    EXPECT_EQ(text.substr(a[0].span->begin, a[0].span->end - a[0].span->begin), "Chest \n\t Pain");
}

TEST(Lexicon, ConflictingEntryRejected) {
    Lexicon lex;
    lex.add("pain", kPain);
    lex.add("PAIN", kPain);
    EXPECT_THROW(lex.add("pain", kChest), DataError);
    EXPECT_THROW(lex.add("   ", kChest), DataError);
}

TEST(Lexicon, BundledFileLoads) {
    std::ifstream in("data/lexicon.tsv");
    ASSERT_TRUE(in);
    const auto lex = load_lexicon(in);
    EXPECT_GT(lex.entries().size(), 20u);
    EXPECT_EQ(terms(match_lexicon(lex, "episode of hypotension overnight", 0)), std::vector<TermId>{kHypo});
    std::istringstream bad("pain\tHP:12\n");
    EXPECT_THROW(load_lexicon(bad), DataError);
}

TEST(LexiconProperty, MatchesOracleAndInsertionOrderIrrelevant) {
    std::vector<std::pair<std::string, TermId>> entries = {
        {"pain", kPain}, {"chest pain", kChest}, {"chest", TermId::parse("HP:0000765")},
        {"low blood pressure", kHypo}, {"low", TermId::parse("HP:0000001")}, {"pressure", TermId::parse("HP:0000118")}};
    const std::vector<std::string> words = {"pain", "chest", "low", "blood", "pressure", "spain", "x", "painful"};
    Rng rng(11);
    for (int trial = 0; trial < 500; ++trial) {
        std::string text;
        const std::size_t n = 1 + rng.below(12);
        for (std::size_t i = 0; i < n; ++i) {
            if (i) text += rng.uniform() < 0.2 ? ", " : " ";
            text += words[rng.below(words.size())];
        }
        auto shuffled = entries;
        rng.shuffle(shuffled);
        const auto a = match_lexicon(lexicon(entries), text, 0);
        const auto b = match_lexicon(lexicon(shuffled), text, 0);
        ASSERT_EQ(a, b) << text;
        std::vector<std::string> surfaces;
        for (const auto& [s, t] : entries) surfaces.push_back(s);
        const auto expected = longest_match_oracle(surfaces, text);
        ASSERT_EQ(a.size(), expected.size()) << text;
        for (std::size_t i = 0; i < a.size(); ++i) {
            EXPECT_EQ(a[i].span->begin, expected[i].first) << text;
            EXPECT_EQ(a[i].span->end, expected[i].second) << text;
            if (i) {
                EXPECT_LE(a[i - 1].span->end, a[i].span->begin);
            }
        }
        // matching never crosses a document boundary
        const std::string other = "chest pain low";
        const auto joined = match_lexicon(lexicon(entries), text + "\n" + other, 0);
        auto sep = match_lexicon(lexicon(entries), other, 0);
        auto expect = a;
        for (auto s : sep) {
            s.span->begin += text.size() + 1;
            s.span->end += text.size() + 1;
            expect.push_back(s);
        }
        EXPECT_EQ(joined, expect) << text;
    }
}

TEST(Annotations, LoadExamples) {
    std::istringstream one(R"({"term":"HP:0002615","hour":12,"note_id":"n1"})");
    const auto a = load_annotations(one);
    ASSERT_EQ(a.size(), 1u);
    EXPECT_EQ(a[0].term, kHypo);
    EXPECT_EQ(a[0].hour, 12);
    EXPECT_EQ(a[0].note_id, "n1");

    std::istringstream bad(R"({"term":"HP:12","hour":12,"note_id":"n1"})");
    try {
        load_annotations(bad);
        FAIL();
    } catch (const DataError& e) {
        EXPECT_NE(std::string(e.what()).find("line 1"), std::string::npos) << e.what();
    }
    std::istringstream empty("");
    EXPECT_TRUE(load_annotations(empty).empty());
    std::istringstream neg(R"({"term":"HP:0002615","hour":-1,"note_id":"n1"})");
    EXPECT_THROW(load_annotations(neg), DataError);
    std::istringstream missing(R"({"term":"HP:0002615","note_id":"n1"})");
    EXPECT_THROW(load_annotations(missing), DataError);
}

TEST(Annotations, RoundTrip) {
    std::vector<Annotation> anns = {{kHypo, 3, "n1", Span{2, 9}, "e1"}, {kPain, 40, "n2", std::nullopt, ""}};
    std::ostringstream out;
    save_annotations(out, anns);
    std::istringstream in(out.str());
    EXPECT_EQ(load_annotations(in), anns);
}

TEST(Persistency, DefaultTransientAndFileLoads) {
    PersistencyMap pm;
    EXPECT_EQ(pm(kHypo), Persistency::Transient);
    std::istringstream in("# comment\nHP:0002615\tpersistent\nHP:0012531\ttransient\n");
    const auto loaded = load_persistency(in);
    EXPECT_EQ(loaded(kHypo), Persistency::Persistent);
    EXPECT_EQ(loaded(kPain), Persistency::Transient);
    EXPECT_EQ(loaded(kChest), Persistency::Transient);
    std::istringstream bad("HP:0002615\tsometimes\n");
    EXPECT_THROW(load_persistency(bad), DataError);
    std::ifstream bundled("data/persistency.tsv");
    ASSERT_TRUE(bundled);
    EXPECT_EQ(load_persistency(bundled)(TermId::parse("HP:0001635")), Persistency::Persistent);
}
