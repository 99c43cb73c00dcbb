#pragma once

#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "phenoicu/cohort.hpp"

namespace phenoicu {

enum class Task { Mortality, Decompensation, LengthOfStay };

inline std::string to_string(Task t) {
    switch (t) {
        case Task::Mortality: return "mortality";
        case Task::Decompensation: return "decompensation";
        case Task::LengthOfStay: return "los";
    }
    return "?";
}

inline Task parse_task(std::string_view s) {
    if (s == "mortality") return Task::Mortality;
    if (s == "decompensation") return Task::Decompensation;
    if (s == "los") return Task::LengthOfStay;
    throw ConfigError("unknown task '" + std::string(s) + "' (expected mortality|decompensation|los)");
}

inline int num_classes(Task t) { return t == Task::LengthOfStay ? 10 : 2; }

inline constexpr int kMortalityHour = 48;
inline constexpr int kDecompHorizonHours = 24;

struct LabelRow {
    std::string episode_id;
    int hour = 0;
    int label = 0;
    friend bool operator==(const LabelRow&, const LabelRow&) = default;
};

struct TaskLabels {
    Task task = Task::Mortality;
    std::vector<LabelRow> rows;
};

/// In-hospital mortality, predicted once at hour 48. Stays shorter than
/// 48 hours are not eligible.
inline std::optional<LabelRow> mortality_label(const Episode& e) {
    if (e.length_hours < kMortalityHour) return std::nullopt;
    return LabelRow{e.episode_id, kMortalityHour, e.died_in_hospital ? 1 : 0};
}

inline int decomp_label_at(const Episode& e, int hour) {
    return e.died_in_hospital && e.death_hour && *e.death_hour - hour <= kDecompHorizonHours ? 1 : 0;
}

/// Death within the next 24 hours, for every hour in [obs_start, length).
inline std::vector<LabelRow> decomp_labels(const Episode& e, int obs_start = 5) {
    std::vector<LabelRow> out;
    for (int h = std::max(0, obs_start); h < e.length_hours; ++h) out.push_back({e.episode_id, h, decomp_label_at(e, h)});
    return out;
}

/// Remaining-stay class: one bin per day for the first 8 days, 8-14 days,
/// then beyond 14 days. Bins are half-open in days.
inline int los_class(int remaining_hours) {
    const int days = remaining_hours / 24;  // remaining_hours >= 0
    if (days < 8) return days;
    if (days < 14) return 8;
    return 9;
}

inline std::vector<LabelRow> los_labels(const Episode& e, int obs_start = 5) {
    std::vector<LabelRow> out;
    for (int h = std::max(0, obs_start); h < e.length_hours; ++h) {
        out.push_back({e.episode_id, h, los_class(e.length_hours - h)});
    }
    return out;
}

inline TaskLabels build_labels(Task task, const std::vector<Episode>& cohort, int obs_start = 5) {
    TaskLabels tl{task, {}};
    for (const auto& e : cohort) {
        switch (task) {
            case Task::Mortality:
                if (auto r = mortality_label(e)) tl.rows.push_back(*r);
                break;
            case Task::Decompensation:
                for (auto& r : decomp_labels(e, obs_start)) tl.rows.push_back(std::move(r));
                break;
            case Task::LengthOfStay:
                for (auto& r : los_labels(e, obs_start)) tl.rows.push_back(std::move(r));
                break;
        }
    }
    return tl;
}

/// `episode_id,hour,label` CSV with header.
inline void write_labels_csv(std::ostream& out, const TaskLabels& tl) {
    out << "episode_id,hour,label\n";
    for (const auto& r : tl.rows) out << r.episode_id << ',' << r.hour << ',' << r.label << '\n';
}

}  // namespace phenoicu
