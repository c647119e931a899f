#pragma once

// Synthetic households for desk-scale experiments. Each archetype has one
// dominant daily peak (peaks spread evenly over the day) and its own weekend
// behaviour; households add a size factor, a mild heating response to the
// shared weather, and multiplicative reading noise.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "fedcast/calendar.hpp"
#include "fedcast/data_pipeline.hpp"
#include "fedcast/errors.hpp"
#include "fedcast/random.hpp"

namespace fedcast {

struct SyntheticConfig {
    int households = 20;
    int archetypes = 3;
    double noise = 0.05;  // std-dev of the multiplicative reading noise
    std::uint64_t seed = 1;
    int days = 90;
    TimePoint start = make_time(2013, 1, 1);
};

struct SyntheticHousehold {
    std::string id;
    int archetype = 0;
    std::vector<RawReading> readings;  // half-hourly
};

struct SyntheticData {
    std::vector<SyntheticHousehold> households;
    std::vector<WeatherRecord> weather;  // hourly
    std::vector<int> peak_hours;         // per archetype
};

inline int archetype_peak_hour(int archetype, int archetypes) {
    return (7 + archetype * 24 / archetypes) % 24;
}

inline std::string household_name(int index) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "H%03d", index);
    return buf;
}

namespace detail {

inline double circular_hour_distance(double a, double b) {
    const double d = std::fmod(std::abs(a - b), 24.0);
    return std::min(d, 24.0 - d);
}

inline double weekend_factor(int archetype) {
    static constexpr double factors[] = {1.25, 0.8, 1.0};
    return factors[archetype % 3];
}

}  // namespace detail

inline std::vector<WeatherRecord> synthesize_weather(TimePoint start, int days, std::uint64_t seed) {
    Rng rng(derive_seed(seed, Stream::weather));
    std::vector<WeatherRecord> out;
    out.reserve(static_cast<std::size_t>(days) * 24);
    double drift = 0.0;
    for (int hour = 0; hour < days * 24; ++hour) {
        const double day = hour / 24.0;
        const double hod = hour % 24;
        drift = 0.95 * drift + 0.4 * rng.normal();
        const double temp = 4.0 + 0.06 * day + 3.5 * std::sin(2.0 * 3.141592653589793 * (hod - 9.0) / 24.0) + drift;
        const double humidity = std::clamp(82.0 - 2.5 * (temp - 5.0) + 3.0 * rng.normal(), 0.0, 100.0);
        out.push_back({start + std::chrono::hours{hour}, temp, humidity});
    }
    return out;
}

inline SyntheticData generate_synthetic_households(const SyntheticConfig& cfg) {
    require(cfg.households >= 1, "need at least one household");
    require(cfg.archetypes >= 1, "need at least one archetype");
    require(cfg.noise >= 0.0 && std::isfinite(cfg.noise), "noise must be a finite non-negative number");
    require(cfg.days >= 1, "need at least one day");

    SyntheticData data;
    data.weather = synthesize_weather(cfg.start, cfg.days, cfg.seed);
    for (int a = 0; a < cfg.archetypes; ++a) data.peak_hours.push_back(archetype_peak_hour(a, cfg.archetypes));

    for (int i = 0; i < cfg.households; ++i) {
        Rng rng(derive_seed(cfg.seed, Stream::synth, static_cast<std::uint64_t>(i)));
        SyntheticHousehold hh{household_name(i), i % cfg.archetypes, {}};
        const double peak = data.peak_hours[static_cast<std::size_t>(hh.archetype)] + 0.5;  // middle of the peak hour
        // Household heterogeneity scales with the noise level; noise 0 gives identical households.
        const double size = 1.0 + 4.0 * cfg.noise * (rng.uniform() - 0.5);
        const double base = 0.08;
        hh.readings.reserve(static_cast<std::size_t>(cfg.days) * 48);
        for (int slot = 0; slot < cfg.days * 48; ++slot) {
            const TimePoint t = cfg.start + std::chrono::minutes{30 * slot};
            const auto cal = calendar_fields(t);
            const double hod = (slot % 48) / 2.0 + 0.25;
            const double dist = detail::circular_hour_distance(hod, peak);
            double profile = base + 0.45 * std::exp(-dist * dist / (2.0 * 1.5 * 1.5));
            if (cal.day_of_week >= 5) profile *= detail::weekend_factor(hh.archetype);
            const double temp = data.weather[static_cast<std::size_t>(slot / 2)].air_temp_c;
            const double heating = 1.0 + 0.015 * std::max(0.0, 12.0 - temp);
            const double jitter = std::max(0.0, 1.0 + cfg.noise * rng.normal());
            hh.readings.push_back({t, size * profile * heating * jitter});
        }
        data.households.push_back(std::move(hh));
    }
    return data;
}

// Hour of day with the highest mean consumption.
inline int mean_peak_hour(const HourlySeries& series) {
    double sums[24] = {};
    for (const auto& p : series.points) sums[calendar_fields(p.hour).hour] += p.energy_kwh;
    return static_cast<int>(std::max_element(sums, sums + 24) - sums);
}

// Cleans every synthetic household and joins the synthetic weather when asked.
inline std::vector<DesignMatrix> design_matrices(const SyntheticData& data, bool with_weather) {
    std::vector<DesignMatrix> out;
    for (const auto& h : data.households) {
        const auto series = clean_readings(h.readings, h.id);
        out.push_back(with_weather ? build_design_matrix(series, std::span<const WeatherRecord>(data.weather))
                                   : build_design_matrix(series));
    }
    return out;
}

inline std::vector<int> archetype_labels(const SyntheticData& data) {
    std::vector<int> out;
    for (const auto& h : data.households) out.push_back(h.archetype);
    return out;
}

}  // namespace fedcast
