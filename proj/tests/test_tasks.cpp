#include <sstream>

#include <gtest/gtest.h>

#include "phenoicu/generator.hpp"
#include "phenoicu/tasks.hpp"

using namespace phenoicu;

namespace {

Episode stay(int hours, bool died = false, std::optional<int> death = std::nullopt) {
    Episode e;
    e.patient_id = "p";
    e.episode_id = "e";
    e.length_hours = hours;
    e.died_in_hospital = died;
    e.death_hour = death;
    for (auto& s : e.channels) s.assign(static_cast<std::size_t>(hours), std::nullopt);
    return e;
}

// Day bins straight from the published class table: [0,1), [1,2), ..., [7,8), [8,14), [14, inf).
int los_oracle(int hours) {
    const double days = hours / 24.0;
    const double edges[] = {1, 2, 3, 4, 5, 6, 7, 8, 14};
    for (int k = 0; k < 9; ++k) {
        if (days < edges[k]) return k;
    }
    return 9;
}

}  // namespace

TEST(Mortality, Examples) {
    auto r = mortality_label(stay(100));
    ASSERT_TRUE(r);
    EXPECT_EQ(r->hour, 48);
    EXPECT_EQ(r->label, 0);
    r = mortality_label(stay(100, true, 90));
    ASSERT_TRUE(r);
    EXPECT_EQ(r->label, 1);
    EXPECT_FALSE(mortality_label(stay(30)));
    EXPECT_TRUE(mortality_label(stay(48)));
    EXPECT_FALSE(mortality_label(stay(47)));
}

TEST(Decompensation, Examples) {
    const auto survivor = stay(80);
    for (const auto& r : decomp_labels(survivor, 0)) EXPECT_EQ(r.label, 0);
    const auto dying = stay(50, true, 50);
    EXPECT_EQ(decomp_label_at(dying, 26), 1);
    EXPECT_EQ(decomp_label_at(dying, 25), 0);  // 25 hours out
    EXPECT_EQ(decomp_label_at(dying, 49), 1);
    EXPECT_EQ(decomp_label_at(dying, 20), 0);
    EXPECT_EQ(decomp_label_at(stay(12, true, 10), 0), 1);
    const auto rows = decomp_labels(dying, 5);
    EXPECT_EQ(rows.front().hour, 5);
    EXPECT_EQ(rows.back().hour, 49);
}

TEST(LengthOfStay, PublishedBoundaries) {
    EXPECT_EQ(los_class(23), 0);
    EXPECT_EQ(los_class(24), 1);
    EXPECT_EQ(los_class(30), 1);
    EXPECT_EQ(los_class(191), 7);
    EXPECT_EQ(los_class(192), 8);
    EXPECT_EQ(los_class(335), 8);
    EXPECT_EQ(los_class(336), 9);
    EXPECT_EQ(los_class(400), 9);
    for (int h = 0; h < 2000; ++h) ASSERT_EQ(los_class(h), los_oracle(h)) << h;
}

TEST(LengthOfStay, NonIncreasingOverStay) {
    GeneratorConfig cfg;
    cfg.n_patients = 200;
    for (const auto& e : generate(cfg)) {
        const auto rows = los_labels(e);
        for (std::size_t i = 1; i < rows.size(); ++i) ASSERT_LE(rows[i].label, rows[i - 1].label);
        if (!rows.empty()) {
            EXPECT_EQ(rows.back().label, 0);
        }
    }
}

TEST(Labels, SuffixOfOnesForNonSurvivors) {
    GeneratorConfig cfg;
    cfg.n_patients = 1500;
    std::size_t checked = 0;
    for (const auto& e : generate(cfg)) {
        if (!e.died_in_hospital) continue;
        ++checked;
        const auto rows = decomp_labels(e, 5);
        std::size_t ones = 0;
        bool seen_one = false;
        for (const auto& r : rows) {
            if (r.label) {
                seen_one = true;
                ++ones;
            } else {
                ASSERT_FALSE(seen_one) << e.episode_id << " has a 0 after a 1";
            }
        }
        // hours h in [max(5, death-24), length) are positive
        const int first = std::max(5, *e.death_hour - 24);
        const int expected = std::max(0, e.length_hours - first);
        EXPECT_EQ(ones, static_cast<std::size_t>(expected)) << e.episode_id;
    }
    EXPECT_GT(checked, 100u);
}

TEST(Labels, MortalitySumMatchesEligibleDeaths) {
    GeneratorConfig cfg;
    cfg.n_patients = 500;
    const auto c = generate(cfg);
    const auto tl = build_labels(Task::Mortality, c);
    std::size_t sum = 0, eligible = 0;
    for (const auto& r : tl.rows) sum += r.label;
    for (const auto& e : c) eligible += e.died_in_hospital && e.length_hours >= 48;
    EXPECT_EQ(sum, eligible);
}

TEST(Tasks, ParseAndCsv) {
    EXPECT_EQ(parse_task("mortality"), Task::Mortality);
    EXPECT_EQ(parse_task("decompensation"), Task::Decompensation);
    EXPECT_EQ(parse_task("los"), Task::LengthOfStay);
    EXPECT_THROW(parse_task("readmission"), ConfigError);
    EXPECT_EQ(num_classes(Task::LengthOfStay), 10);
    TaskLabels tl{Task::Mortality, {{"e1", 48, 1}}};
    std::ostringstream out;
    write_labels_csv(out, tl);
    EXPECT_EQ(out.str(), "episode_id,hour,label\ne1,48,1\n");
}
