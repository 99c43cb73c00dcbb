#pragma once

// Synthetic ICU cohort generator. Outcomes are driven by a latent per-patient
// severity plus planted phenotype effects; structured channels follow a
// mean-reverting process around per-patient baselines with a deterioration
// drift before in-ICU deaths.

#include <array>
#include <cstdio>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "phenoicu/annotate.hpp"
#include "phenoicu/cohort.hpp"
#include "phenoicu/common.hpp"

namespace phenoicu {

struct PhenotypeEffect {
    TermId term;
    double prevalence = 0.1;
    double mortality_log_odds = 0.0;
    /// Shift on the log-odds of the term being charted in the final 48h of
    /// a stay that ends in death.
    double decomp_log_odds = 0.0;
    double los_day_shift = 0.0;
    bool persistent = false;
    std::string tag;                  // cohort tag given to carriers
    std::vector<TermId> mention_as;   // surface terms used when charted; defaults to {term}
};

/// Test-set proportions of the ten remaining-stay classes of the reference
/// cohort, reused here as total-stay mixture weights.
inline std::array<double, 10> default_los_weights() {
    const std::array<double, 10> counts{95439, 61372, 38858, 27142, 20171, 15878, 12940, 10953, 40856, 45741};
    double total = 0.0;
    for (double c : counts) total += c;
    std::array<double, 10> w{};
    for (std::size_t i = 0; i < 10; ++i) w[i] = counts[i] / total;
    return w;
}

/// Half-open hour range [lo, hi) of stays in LOS bin k.
inline std::pair<int, int> los_bin_hours(std::size_t k, int max_los_hours) {
    if (k == 0) return {1, 24};
    if (k <= 7) return {static_cast<int>(24 * k), static_cast<int>(24 * (k + 1))};
    if (k == 8) return {192, 336};
    return {336, std::max(337, max_los_hours + 1)};
}

inline std::vector<PhenotypeEffect> default_phenotype_effects() {
    const auto T = [](const char* s) { return TermId::parse(s); };
    std::vector<PhenotypeEffect> fx;
    // Pain is charted under several child terms, so its signal is only fully
    // visible after aggregation into the parent.
    fx.push_back({T("HP:0012531"), 0.4, -4.0, 0.0, 0.0, false, "",
                  {T("HP:0012531"), T("HP:0100749"), T("HP:0002027")}});
    fx.push_back({T("HP:0100606"), 0.06, 1.4, 0.0, 0.0, true, "cancer", {}});
    fx.push_back({T("HP:0000819"), 0.20, 0.3, 0.0, 0.0, true, "diabetes", {}});
    fx.push_back({T("HP:0001635"), 0.15, 0.6, 0.0, 0.0, true, "cardiovascular", {}});
    fx.push_back({T("HP:0000822"), 0.20, 0.1, 0.0, 0.0, true, "cardiovascular", {}});
    fx.push_back({T("HP:0000716"), 0.10, 0.0, 0.0, 0.0, true, "depression", {}});
    fx.push_back({T("HP:0002615"), 0.10, 0.8, 3.0, 0.0, false, "", {}});
    fx.push_back({T("HP:0002878"), 0.08, 1.0, 2.5, 0.0, false, "", {}});
    fx.push_back({T("HP:0001259"), 0.04, 1.2, 2.0, 0.0, false, "", {}});
    fx.push_back({T("HP:0002090"), 0.05, 0.2, 0.0, 1.0, false, "", {}});
    // Charted but outcome-neutral.
    fx.push_back({T("HP:0001945"), 0.20, 0.0, 0.0, 0.0, false, "", {}});
    fx.push_back({T("HP:0012735"), 0.15, 0.0, 0.0, 0.0, false, "", {}});
    fx.push_back({T("HP:0002018"), 0.10, 0.0, 0.0, 0.0, false, "", {}});
    fx.push_back({T("HP:0000739"), 0.10, 0.0, 0.0, 0.0, false, "", {}});
    fx.push_back({T("HP:0012378"), 0.15, 0.0, 0.0, 0.0, false, "", {}});
    return fx;
}

struct GeneratorConfig {
    std::size_t n_patients = 2000;
    std::uint64_t seed = 7;
    double mortality_rate = 0.1312;
    double decomp_rate = 0.0201;
    double note_interval_hours = 12.0;
    std::array<double, 10> los_weights = default_los_weights();
    std::vector<PhenotypeEffect> effects = default_phenotype_effects();

    double multi_episode_rate = 0.15;  // chance a patient has a second stay
    int max_los_hours = 720;
    int obs_start_hour = 5;            // first labelled hour, used to hit decomp_rate
    double severity_log_odds = 1.0;    // mortality log-odds per SD of latent severity
    double drift_scale = 1.0;          // multiplier on pre-death deterioration
    double spurious_mention_rate = 0.02;
    /// Per-tag multiplier on outcome signal. Values below 1 make a harder sub-cohort.
    std::map<std::string, double> tag_signal;
    bool text_notes = false;           // emit note text instead of term lists
};

inline void validate(const GeneratorConfig& cfg) {
    const auto in01 = [](double v) { return v >= 0.0 && v <= 1.0; };
    if (cfg.n_patients == 0) throw ConfigError("n_patients must be >= 1");
    if (!in01(cfg.mortality_rate)) throw ConfigError("mortality_rate must be in [0, 1]");
    if (!in01(cfg.decomp_rate)) throw ConfigError("decomp_rate must be in [0, 1]");
    if (!in01(cfg.multi_episode_rate)) throw ConfigError("multi_episode_rate must be in [0, 1]");
    if (!(cfg.note_interval_hours >= 1.0)) throw ConfigError("note_interval_hours must be >= 1");
    if (cfg.max_los_hours < 337) throw ConfigError("max_los_hours must exceed 14 days");
    double sum = 0.0;
    for (double w : cfg.los_weights) {
        if (!(w >= 0.0)) throw ConfigError("los_weights must be non-negative");
        sum += w;
    }
    if (std::abs(sum - 1.0) > 1e-6) throw ConfigError("los_weights must sum to 1");
    for (const auto& fx : cfg.effects) {
        if (!in01(fx.prevalence)) throw ConfigError("effect prevalence for " + fx.term.str() + " outside [0, 1]");
    }
    for (const auto& [tag, s] : cfg.tag_signal) {
        if (!(s >= 0.0)) throw ConfigError("tag_signal for '" + tag + "' must be >= 0");
    }
}

inline GeneratorConfig generator_config_from_json(const nlohmann::json& j) {
    GeneratorConfig cfg;
    try {
        cfg.n_patients = j.value("n_patients", cfg.n_patients);
        cfg.seed = j.value("seed", cfg.seed);
        cfg.mortality_rate = j.value("mortality_rate", cfg.mortality_rate);
        cfg.decomp_rate = j.value("decomp_rate", cfg.decomp_rate);
        cfg.note_interval_hours = j.value("note_interval_hours", cfg.note_interval_hours);
        cfg.multi_episode_rate = j.value("multi_episode_rate", cfg.multi_episode_rate);
        cfg.max_los_hours = j.value("max_los_hours", cfg.max_los_hours);
        cfg.obs_start_hour = j.value("obs_start_hour", cfg.obs_start_hour);
        cfg.severity_log_odds = j.value("severity_log_odds", cfg.severity_log_odds);
        cfg.drift_scale = j.value("drift_scale", cfg.drift_scale);
        cfg.spurious_mention_rate = j.value("spurious_mention_rate", cfg.spurious_mention_rate);
        cfg.text_notes = j.value("text_notes", cfg.text_notes);
        if (j.contains("los_weights")) {
            const auto& w = j.at("los_weights");
            if (!w.is_array() || w.size() != 10) throw ConfigError("/los_weights: expected 10 numbers");
            for (std::size_t i = 0; i < 10; ++i) cfg.los_weights[i] = w[i].get<double>();
        }
        if (j.contains("tag_signal")) cfg.tag_signal = j.at("tag_signal").get<std::map<std::string, double>>();
        if (j.contains("effects")) {
            cfg.effects.clear();
            for (const auto& je : j.at("effects")) {
                PhenotypeEffect fx;
                fx.term = TermId::parse(je.at("term").get<std::string>());
                fx.prevalence = je.value("prevalence", fx.prevalence);
                fx.mortality_log_odds = je.value("mortality_log_odds", 0.0);
                fx.decomp_log_odds = je.value("decomp_log_odds", 0.0);
                fx.los_day_shift = je.value("los_day_shift", 0.0);
                fx.persistent = je.value("persistent", false);
                fx.tag = je.value("tag", std::string());
                if (je.contains("mention_as")) {
                    for (const auto& t : je.at("mention_as")) fx.mention_as.push_back(TermId::parse(t.get<std::string>()));
                }
                cfg.effects.push_back(std::move(fx));
            }
        }
    } catch (const nlohmann::json::exception& ex) {
        throw ConfigError(std::string("generator config: ") + ex.what());
    } catch (const DataError& ex) {
        throw ConfigError(std::string("generator config: ") + ex.what());
    }
    validate(cfg);
    return cfg;
}

namespace detail {

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }
inline double logit(double p) { return std::log(p / (1.0 - p)); }

// Per-channel simulation parameters: baseline spread, hourly noise, shift per
// SD of severity, full deterioration shift, hourly observation probability.
struct ChannelDynamics {
    double baseline_sd, noise_sd, severity_shift, drift_shift, obs_prob;
};

inline const std::array<ChannelDynamics, kNumChannels>& channel_dynamics() {
    static const std::array<ChannelDynamics, kNumChannels> d{{
        {0.0, 0.0, 0.0, 0.0, 0.05},       // capillary refill (derived)
        {8.0, 4.0, -3.0, -15.0, 0.9},     // diastolic bp
        {0.05, 0.02, 0.05, 0.3, 0.2},     // fio2
        {0.0, 0.0, 0.0, 0.0, 0.3},        // gcs eye (derived)
        {0.0, 0.0, 0.0, 0.0, 0.3},        // gcs motor (derived)
        {0.0, 0.0, 0.0, 0.0, 0.3},        // gcs verbal (derived)
        {0.0, 0.0, 0.0, 0.0, 0.3},        // gcs total (derived)
        {30.0, 15.0, 10.0, 20.0, 0.15},   // glucose
        {10.0, 5.0, 6.0, 25.0, 0.95},     // heart rate
        {10.0, 0.0, 0.0, 0.0, 0.0},       // height (charted once)
        {9.0, 4.0, -4.0, -18.0, 0.9},     // mean bp
        {1.5, 1.0, -1.0, -8.0, 0.95},     // spo2
        {3.0, 2.0, 2.0, 8.0, 0.95},       // resp rate
        {12.0, 6.0, -6.0, -30.0, 0.9},    // systolic bp
        {0.4, 0.2, 0.2, 0.8, 0.3},        // temperature
        {15.0, 0.0, 0.0, 0.0, 0.0},       // weight (charted once)
        {0.03, 0.02, -0.02, -0.12, 0.1},  // ph
    }};
    return d;
}

// Expected mortality under intercept b, integrating severity on a grid and
// enumerating carrier patterns of the effects that move the outcome.
inline double expected_mortality(const GeneratorConfig& cfg, double intercept) {
    std::vector<const PhenotypeEffect*> active;
    for (const auto& fx : cfg.effects) {
        const bool tagged = !fx.tag.empty() && cfg.tag_signal.count(fx.tag);
        if (fx.mortality_log_odds != 0.0 || tagged) active.push_back(&fx);
    }
    if (active.size() > 16) active.resize(16);  // caps enumeration at 65536 patterns

    static constexpr int kGrid = 161;
    std::array<double, kGrid> z{}, wz{};
    double wsum = 0.0;
    for (int i = 0; i < kGrid; ++i) {
        z[i] = -8.0 + 16.0 * i / (kGrid - 1);
        wz[i] = std::exp(-0.5 * z[i] * z[i]);
        wsum += wz[i];
    }
    for (auto& w : wz) w /= wsum;

    double total = 0.0;
    const std::size_t patterns = std::size_t{1} << active.size();
    for (std::size_t mask = 0; mask < patterns; ++mask) {
        double p = 1.0, shift = 0.0, scale = 1.0;
        for (std::size_t k = 0; k < active.size(); ++k) {
            const bool on = (mask >> k) & 1;
            p *= on ? active[k]->prevalence : 1.0 - active[k]->prevalence;
            if (!on) continue;
            shift += active[k]->mortality_log_odds;
            if (auto it = cfg.tag_signal.find(active[k]->tag); it != cfg.tag_signal.end()) scale *= it->second;
        }
        if (p == 0.0) continue;
        double m = 0.0;
        for (int i = 0; i < kGrid; ++i) m += wz[i] * sigmoid(intercept + scale * (cfg.severity_log_odds * z[i] + shift));
        total += p * m;
    }
    return total;
}

inline double solve_intercept(const GeneratorConfig& cfg) {
    double lo = -40.0, hi = 40.0;
    for (int it = 0; it < 200; ++it) {
        const double mid = 0.5 * (lo + hi);
        (expected_mortality(cfg, mid) < cfg.mortality_rate ? lo : hi) = mid;
    }
    return 0.5 * (lo + hi);
}

// Probability that a death happens inside the ICU (death_hour = end of stay)
// rather than later in hospital, chosen so that the share of positive
// decompensation timesteps matches cfg.decomp_rate.
inline double in_icu_death_share(const GeneratorConfig& cfg) {
    double steps = 0.0, positives = 0.0;
    for (std::size_t k = 0; k < 10; ++k) {
        const auto [lo, hi] = los_bin_hours(k, cfg.max_los_hours);
        double s = 0.0, p = 0.0;
        for (int L = lo; L < hi; ++L) {
            const int observed = std::max(0, L - cfg.obs_start_hour);
            s += observed;
            p += std::min(24, observed);
        }
        steps += cfg.los_weights[k] * s / (hi - lo);
        positives += cfg.los_weights[k] * p / (hi - lo);
    }
    if (cfg.mortality_rate <= 0.0 || positives <= 0.0) return 0.0;
    const double episodes_per_patient = 1.0 + cfg.multi_episode_rate;
    const double q = cfg.decomp_rate * episodes_per_patient * steps / (cfg.mortality_rate * positives);
    return std::clamp(q, 0.0, 1.0);
}

struct PatientState {
    double severity = 0.0;
    double signal = 1.0;
    std::vector<bool> carries;
    std::set<std::string> tags;
};

inline void simulate_channels(Episode& e, const PatientState& ps, bool deteriorates, Rng& rng,
                              const GeneratorConfig& cfg) {
    const auto& specs = channel_specs();
    const auto& dyn = channel_dynamics();
    const std::size_t L = static_cast<std::size_t>(e.length_hours);
    for (auto& s : e.channels) s.assign(L, std::nullopt);

    // Deterioration ramps from 0 to 1 over the final 24-48h.
    std::vector<double> drift(L, 0.0);
    if (deteriorates) {
        const int window = 24 + static_cast<int>(rng.below(25));
        for (std::size_t t = 0; t < L; ++t) {
            const int into = static_cast<int>(t) - (e.length_hours - window);
            if (into >= 0) drift[t] = cfg.drift_scale * ps.signal * (static_cast<double>(into + 1) / window);
        }
    }
    const double sev = ps.severity * ps.signal;

    for (std::size_t c : {1u, 2u, 7u, 8u, 10u, 11u, 12u, 13u, 14u, 16u}) {
        const auto& d = dyn[c];
        const double base = specs[c].normal_value + sev * d.severity_shift + rng.normal(0.0, d.baseline_sd);
        double dev = 0.0;
        for (std::size_t t = 0; t < L; ++t) {
            dev = 0.8 * dev + rng.normal(0.0, d.noise_sd);
            const double v = std::clamp(base + dev + drift[t] * d.drift_shift, specs[c].lo, specs[c].hi);
            if (rng.bernoulli(d.obs_prob)) e.channels[c][t] = v;
        }
    }
    for (std::size_t c : {9u, 15u}) {
        const double v = std::clamp(specs[c].normal_value + rng.normal(0.0, dyn[c].baseline_sd), specs[c].lo, specs[c].hi);
        if (rng.bernoulli(0.6)) e.channels[c][0] = v;
    }
    // Neurological status and perfusion: ordinal channels from one latent.
    double neuro = 0.0;
    for (std::size_t t = 0; t < L; ++t) {
        neuro = 0.7 * neuro + rng.normal(0.0, 0.5);
        const double deficit = std::max(0.0, neuro + 1.5 * sev + 8.0 * drift[t]);
        const double total = std::clamp(std::round(15.0 - deficit), 3.0, 15.0);
        if (rng.bernoulli(dyn[3].obs_prob)) {
            const double eye = std::clamp(std::round(total * 4.0 / 15.0), 1.0, 4.0);
            const double motor = std::clamp(std::round(total * 6.0 / 15.0), 1.0, 6.0);
            const double verbal = std::clamp(total - eye - motor, 1.0, 5.0);
            e.channels[3][t] = eye;
            e.channels[4][t] = motor;
            e.channels[5][t] = verbal;
            e.channels[6][t] = std::clamp(eye + motor + verbal, 3.0, 15.0);
        }
        if (rng.bernoulli(dyn[0].obs_prob)) {
            e.channels[0][t] = rng.bernoulli(sigmoid(-3.0 + sev + 3.0 * drift[t])) ? 1.0 : 0.0;
        }
    }
}

inline std::map<TermId, std::string> surface_forms(const Lexicon* lex) {
    std::map<TermId, std::string> out;
    if (!lex) return out;
    for (const auto& [surface, term] : lex->entries()) {
        auto it = out.find(term);
        if (it == out.end() || surface.size() < it->second.size()) out[term] = surface;
    }
    return out;
}

inline void write_notes(Episode& e, const PatientState& ps, bool dies_in_icu, Rng& rng, const GeneratorConfig& cfg,
                        const std::map<TermId, std::string>& surfaces) {
    const int interval = static_cast<int>(std::round(cfg.note_interval_hours));
    std::vector<int> hours;
    int h = static_cast<int>(rng.below(static_cast<std::uint64_t>(std::min(interval, e.length_hours))));
    while (h < e.length_hours) {
        hours.push_back(h);
        const int lo = std::max(1, interval / 2);
        const int hi = std::max(lo, interval + interval / 2);
        h += lo + static_cast<int>(rng.below(static_cast<std::uint64_t>(hi - lo + 1)));
    }
    for (std::size_t n = 0; n < hours.size(); ++n) {
        Note note;
        note.hour = hours[n];
        note.note_id = e.episode_id + "_n" + std::to_string(n);
        const bool final_window = dies_in_icu && e.length_hours - note.hour <= 48;
        std::set<TermId> charted;
        for (std::size_t k = 0; k < cfg.effects.size(); ++k) {
            const auto& fx = cfg.effects[k];
            double p;
            if (ps.carries[k]) {
                p = fx.persistent ? (n == 0 ? 0.9 : 0.3) : 0.6;
            } else {
                p = cfg.spurious_mention_rate;
            }
            if (final_window && fx.decomp_log_odds != 0.0 && fx.prevalence > 0.0 && fx.prevalence < 1.0) {
                p = std::max(p, sigmoid(logit(fx.prevalence) + fx.decomp_log_odds));
            }
            if (!rng.bernoulli(p)) continue;
            const auto& forms = fx.mention_as.empty() ? std::vector<TermId>{fx.term} : fx.mention_as;
            charted.insert(forms[rng.below(forms.size())]);
        }
        if (cfg.text_notes) {
            std::string text = "Patient seen at hour " + std::to_string(note.hour) + ".";
            for (const auto& t : charted) {
                auto it = surfaces.find(t);
                if (it == surfaces.end()) throw ConfigError("text_notes: no lexicon surface form for " + t.str());
                text += " Findings consistent with " + it->second + ".";
            }
            text += " Plan reviewed with team.";
            note.text = std::move(text);
        } else {
            note.terms.assign(charted.begin(), charted.end());
        }
        e.notes.push_back(std::move(note));
    }
}

}  // namespace detail

/// Generates a cohort. Deterministic for a fixed config; each patient draws
/// from its own derived random stream so generation order is irrelevant.
/// `lexicon` supplies surface forms when `cfg.text_notes` is set.
inline std::vector<Episode> generate(const GeneratorConfig& cfg, const Lexicon* lexicon = nullptr) {
    validate(cfg);
    const double intercept = cfg.mortality_rate <= 0.0   ? -INFINITY
                             : cfg.mortality_rate >= 1.0 ? INFINITY
                                                         : detail::solve_intercept(cfg);
    const double in_icu_share = detail::in_icu_death_share(cfg);
    const auto surfaces = detail::surface_forms(lexicon);
    const std::vector<double> los_w(cfg.los_weights.begin(), cfg.los_weights.end());

    std::vector<std::vector<Episode>> per_patient(cfg.n_patients);
    parallel_for(cfg.n_patients, [&](std::size_t i) {
        Rng rng(derive_seed(cfg.seed, i));
        detail::PatientState ps;
        ps.carries.resize(cfg.effects.size());
        double shift = 0.0, los_shift_days = 0.0;
        for (std::size_t k = 0; k < cfg.effects.size(); ++k) {
            const auto& fx = cfg.effects[k];
            ps.carries[k] = rng.bernoulli(fx.prevalence);
            if (!ps.carries[k]) continue;
            shift += fx.mortality_log_odds;
            los_shift_days += fx.los_day_shift;
            if (!fx.tag.empty()) {
                ps.tags.insert(fx.tag);
                if (auto it = cfg.tag_signal.find(fx.tag); it != cfg.tag_signal.end()) ps.signal *= it->second;
            }
        }
        ps.severity = rng.normal();
        const double logit = intercept + ps.signal * (cfg.severity_log_odds * ps.severity + shift);
        const bool dies = std::isinf(intercept) ? intercept > 0 : rng.bernoulli(detail::sigmoid(logit));
        const int n_episodes = rng.bernoulli(cfg.multi_episode_rate) ? 2 : 1;

        char pid[32];
        std::snprintf(pid, sizeof pid, "p%06zu", i);
        for (int ep = 0; ep < n_episodes; ++ep) {
            Episode e;
            e.patient_id = pid;
            e.episode_id = std::string(pid) + "_e" + std::to_string(ep);
            const auto [lo, hi] = los_bin_hours(rng.categorical(los_w), cfg.max_los_hours);
            int L = lo + static_cast<int>(rng.below(static_cast<std::uint64_t>(hi - lo)));
            L = std::clamp(L + static_cast<int>(std::lround(24.0 * los_shift_days)), 1, cfg.max_los_hours);
            e.length_hours = L;
            const bool last = ep == n_episodes - 1;
            bool dies_in_icu = false;
            if (dies && last) {
                e.died_in_hospital = true;
                dies_in_icu = rng.bernoulli(in_icu_share);
                if (dies_in_icu) e.death_hour = L;
            }
            e.cohort_tags = ps.tags;
            detail::simulate_channels(e, ps, dies_in_icu, rng, cfg);
            detail::write_notes(e, ps, dies_in_icu, rng, cfg, surfaces);
            per_patient[i].push_back(std::move(e));
        }
    });

    std::vector<Episode> out;
    for (auto& eps : per_patient) {
        for (auto& e : eps) out.push_back(std::move(e));
    }
    return out;
}

}  // namespace phenoicu
