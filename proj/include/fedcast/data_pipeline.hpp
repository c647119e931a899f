#pragma once

// Meter data preparation: cleaning, hourly resampling, design matrices,
// min-max normalisation, chronological splits and rolling K-step sequences.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fedcast/calendar.hpp"
#include "fedcast/errors.hpp"
#include "fedcast/lstm.hpp"

namespace fedcast {

struct RawReading {
    TimePoint timestamp;
    double energy_kwh = 0.0;

    bool operator==(const RawReading&) const = default;
};

struct WeatherRecord {
    TimePoint timestamp;  // hour resolution
    double air_temp_c = 0.0;
    double rel_humidity_pct = 0.0;

    bool operator==(const WeatherRecord&) const = default;
};

struct HourlyPoint {
    TimePoint hour;
    double energy_kwh = 0.0;
    bool filled = false;  // at least one half-hour slot was forward-filled

    bool operator==(const HourlyPoint&) const = default;
};

struct HourlySeries {
    std::string household_id;
    std::vector<HourlyPoint> points;

    std::size_t filled_hours() const {
        return static_cast<std::size_t>(std::count_if(points.begin(), points.end(),
                                                      [](const HourlyPoint& p) { return p.filled; }));
    }
    double filled_fraction() const {
        return points.empty() ? 0.0 : static_cast<double>(filled_hours()) / static_cast<double>(points.size());
    }
    // Households above this fraction of filled hours are flagged in reports.
    static constexpr double kFillWarningFraction = 0.10;
};

// Optional explicit study window [start, end).
struct StudyWindow {
    TimePoint start;
    TimePoint end;
};

struct HalfHourlyReading {
    RawReading reading;
    bool filled = false;

    bool operator==(const HalfHourlyReading&) const = default;
};

// Drops duplicate slots (keeping the first occurrence in input order) and
// forward fills missing 30-minute slots, producing a gap-free grid that
// starts on the hour of the first reading and ends on a full hour.
inline std::vector<HalfHourlyReading> regularize_half_hourly(std::span<const RawReading> raw,
                                                             const std::string& household_id,
                                                             std::optional<StudyWindow> window = std::nullopt) {
    if (raw.empty()) throw InputError("household " + household_id + ": no readings");
    std::map<TimePoint, double> by_slot;
    for (const auto& r : raw) {
        if (!std::isfinite(r.energy_kwh) || r.energy_kwh < 0.0)
            throw InputError("household " + household_id + ": invalid reading at " + format_timestamp(r.timestamp));
        by_slot.emplace(floor_half_hour(r.timestamp), r.energy_kwh);  // keeps first
    }
    TimePoint start = floor_hour(by_slot.begin()->first);
    TimePoint end = floor_hour(by_slot.rbegin()->first) + std::chrono::hours{1};
    if (window) {
        require(window->start < window->end, "study window must be nonempty");
        start = floor_hour(window->start);
        end = floor_hour(window->end);
    }
    std::vector<HalfHourlyReading> out;
    auto it = by_slot.lower_bound(start);
    std::optional<double> last;
    // A reading before the window can seed the forward fill.
    if (it != by_slot.begin()) last = std::prev(it)->second;
    for (TimePoint slot = start; slot < end; slot += std::chrono::minutes{30}) {
        if (it != by_slot.end() && it->first == slot) {
            last = it->second;
            out.push_back({{slot, it->second}, false});
            ++it;
        } else {
            if (!last)
                throw InputError("household " + household_id + ": leading gap at " + format_timestamp(slot) +
                                 ", nothing to forward fill from");
            out.push_back({{slot, *last}, true});
        }
    }
    return out;
}

inline std::vector<RawReading> readings_of(std::span<const HalfHourlyReading> grid) {
    std::vector<RawReading> out;
    out.reserve(grid.size());
    for (const auto& g : grid) out.push_back(g.reading);
    return out;
}

// Hourly energy is the sum of the two half-hour interval totals.
inline HourlySeries resample_hourly(std::span<const HalfHourlyReading> grid, const std::string& household_id) {
    require(grid.size() % 2 == 0, "half-hourly grid must cover whole hours");
    HourlySeries series{household_id, {}};
    series.points.reserve(grid.size() / 2);
    for (std::size_t i = 0; i < grid.size(); i += 2) {
        require(grid[i].reading.timestamp == floor_hour(grid[i].reading.timestamp), "grid must start on the hour");
        series.points.push_back({grid[i].reading.timestamp, grid[i].reading.energy_kwh + grid[i + 1].reading.energy_kwh,
                                 grid[i].filled || grid[i + 1].filled});
    }
    return series;
}

inline HourlySeries clean_readings(std::span<const RawReading> raw, const std::string& household_id,
                                   std::optional<StudyWindow> window = std::nullopt) {
    const auto grid = regularize_half_hourly(raw, household_id, window);
    return resample_hourly(grid, household_id);
}

// Feature column order: energy, year, week, day of week, hour [, air temperature, humidity].
inline constexpr int kBaseFeatures = 5;
inline constexpr int kWeatherFeatures = 7;

inline int feature_dim(bool with_weather) { return with_weather ? kWeatherFeatures : kBaseFeatures; }

struct FeatureVector {
    TimePoint time;
    double energy = 0.0;
    double year = 0.0;
    double week = 0.0;
    double day_of_week = 0.0;
    double hour = 0.0;
    std::optional<double> air_temp;
    std::optional<double> humidity;

    bool operator==(const FeatureVector&) const = default;
};

struct DesignMatrix {
    std::string household_id;
    bool with_weather = false;
    std::vector<FeatureVector> rows;

    int feature_dim() const { return fedcast::feature_dim(with_weather); }

    // feature_dim x rows, one column per hour.
    Eigen::MatrixXd values() const {
        Eigen::MatrixXd m(feature_dim(), static_cast<Eigen::Index>(rows.size()));
        for (std::size_t j = 0; j < rows.size(); ++j) {
            const auto& r = rows[j];
            const auto c = static_cast<Eigen::Index>(j);
            m(0, c) = r.energy;
            m(1, c) = r.year;
            m(2, c) = r.week;
            m(3, c) = r.day_of_week;
            m(4, c) = r.hour;
            if (with_weather) {
                m(5, c) = *r.air_temp;
                m(6, c) = *r.humidity;
            }
        }
        return m;
    }

    std::vector<std::int64_t> time_indices() const {
        std::vector<std::int64_t> t;
        t.reserve(rows.size());
        for (const auto& r : rows) t.push_back(hours_since_epoch(r.time));
        return t;
    }
};

inline DesignMatrix build_design_matrix(const HourlySeries& series,
                                        std::optional<std::span<const WeatherRecord>> weather = std::nullopt) {
    DesignMatrix dm{series.household_id, weather.has_value(), {}};
    std::map<TimePoint, const WeatherRecord*> by_hour;
    if (weather)
        for (const auto& w : *weather) by_hour.emplace(floor_hour(w.timestamp), &w);
    dm.rows.reserve(series.points.size());
    for (const auto& p : series.points) {
        const auto cal = calendar_fields(p.hour);
        FeatureVector fv{p.hour, p.energy_kwh, double(cal.year), double(cal.week), double(cal.day_of_week),
                         double(cal.hour), std::nullopt, std::nullopt};
        if (weather) {
            const auto it = by_hour.find(p.hour);
            if (it == by_hour.end())
                throw InputError("weather data missing for hour " + format_timestamp(p.hour));
            fv.air_temp = it->second->air_temp_c;
            fv.humidity = it->second->rel_humidity_pct;
        }
        dm.rows.push_back(fv);
    }
    return dm;
}

// Per-dimension min-max scaling. A dimension with max == min maps to 0.
struct NormalizationParams {
    Eigen::VectorXd min;
    Eigen::VectorXd max;
    std::vector<std::string> warnings;

    Eigen::Index dims() const { return min.size(); }

    double normalize(Eigen::Index dim, double v) const {
        const double span = max[dim] - min[dim];
        return span > 0.0 ? (v - min[dim]) / span : 0.0;
    }
    double denormalize(Eigen::Index dim, double v) const { return min[dim] + v * (max[dim] - min[dim]); }

    Eigen::MatrixXd normalize(const Eigen::MatrixXd& values) const {
        require(values.rows() == dims(), "normalizer dimension mismatch");
        Eigen::MatrixXd out(values.rows(), values.cols());
        for (Eigen::Index d = 0; d < values.rows(); ++d)
            for (Eigen::Index c = 0; c < values.cols(); ++c) out(d, c) = normalize(d, values(d, c));
        return out;
    }
    Eigen::MatrixXd denormalize(const Eigen::MatrixXd& values) const {
        require(values.rows() == dims(), "normalizer dimension mismatch");
        Eigen::MatrixXd out(values.rows(), values.cols());
        for (Eigen::Index d = 0; d < values.rows(); ++d)
            for (Eigen::Index c = 0; c < values.cols(); ++c) out(d, c) = denormalize(d, values(d, c));
        return out;
    }

    // Energy is dimension 0.
    double energy_span() const { return max[0] - min[0]; }
};

inline const char* feature_name(Eigen::Index dim) {
    static const char* names[] = {"energy", "year", "week", "day_of_week", "hour", "air_temp", "humidity"};
    return dim >= 0 && dim < 7 ? names[dim] : "feature";
}

// Fits global per-dimension bounds over blocks of rows (feature_dim x n each),
// typically the training rows of every household.
inline NormalizationParams fit_normalizer(std::span<const Eigen::MatrixXd> blocks) {
    require(!blocks.empty(), "normalizer needs at least one block");
    const auto d = blocks.front().rows();
    NormalizationParams p{Eigen::VectorXd::Constant(d, INFINITY), Eigen::VectorXd::Constant(d, -INFINITY), {}};
    bool any = false;
    for (const auto& b : blocks) {
        require(b.rows() == d, "normalizer blocks disagree on dimension");
        if (b.cols() == 0) continue;
        any = true;
        p.min = p.min.cwiseMin(b.rowwise().minCoeff());
        p.max = p.max.cwiseMax(b.rowwise().maxCoeff());
    }
    require(any, "normalizer needs at least one row");
    for (Eigen::Index k = 0; k < d; ++k) {
        if (p.max[k] == p.min[k])
            p.warnings.push_back(std::string("dimension ") + feature_name(k) +
                                 " is constant over the fitting rows; normalised to 0");
    }
    return p;
}

struct SplitRanges {
    std::size_t train_end = 0;       // train = [0, train_end)
    std::size_t validation_end = 0;  // validation = [train_end, validation_end)
    std::size_t rows = 0;            // test = [validation_end, rows)

    std::size_t train_rows() const { return train_end; }
    std::size_t validation_rows() const { return validation_end - train_end; }
    std::size_t test_rows() const { return rows - validation_end; }

    bool operator==(const SplitRanges&) const = default;
};

// 70/20/10 by floor division; the remainder goes to train.
inline SplitRanges split_chronological(std::size_t rows, int k) {
    require(rows > 0, "cannot split an empty matrix");
    require(k >= 1, "sequence length must be positive");
    if (rows < 3 * (static_cast<std::size_t>(k) + 1))
        throw InputError("only " + std::to_string(rows) + " hourly rows; at least " +
                         std::to_string(3 * (k + 1)) + " needed for K=" + std::to_string(k));
    const std::size_t validation = rows * 2 / 10;
    const std::size_t test = rows / 10;
    const std::size_t train = rows - validation - test;
    return {train, train + validation, rows};
}

struct SequenceSample {
    Eigen::MatrixXd window;  // feature_dim x K, oldest first
    double label = 0.0;      // normalised energy at time_index
    std::int64_t time_index = 0;
};

// Rolling K-step windows over a block of normalised rows, stored once and
// materialised on demand.
class SequenceSet {
public:
    SequenceSet() = default;
    SequenceSet(Eigen::MatrixXd rows, std::vector<std::int64_t> times, int k)
        : rows_(std::move(rows)), times_(std::move(times)), k_(k) {
        require(k_ >= 1, "sequence length must be positive");
        require(static_cast<std::size_t>(rows_.cols()) == times_.size(), "row and time counts differ");
        if (rows_.cols() <= k_)
            throw InputError("matrix of " + std::to_string(rows_.cols()) + " rows is too short for K=" +
                             std::to_string(k_));
    }

    std::size_t size() const { return rows_.cols() > k_ ? static_cast<std::size_t>(rows_.cols() - k_) : 0; }
    bool empty() const { return size() == 0; }
    int k() const { return k_; }
    int feature_dim() const { return static_cast<int>(rows_.rows()); }
    const Eigen::MatrixXd& rows() const { return rows_; }
    const std::vector<std::int64_t>& times() const { return times_; }

    double label(std::size_t i) const { return rows_(0, static_cast<Eigen::Index>(i) + k_); }
    std::int64_t time_index(std::size_t i) const { return times_[i + static_cast<std::size_t>(k_)]; }

    SequenceSample sample(std::size_t i) const {
        require(i < size(), "sequence index out of range");
        return {rows_.middleCols(static_cast<Eigen::Index>(i), k_), label(i), time_index(i)};
    }

    Batch batch(std::span<const std::size_t> indices) const {
        require(!indices.empty(), "batch must be nonempty");
        const auto n = static_cast<Eigen::Index>(indices.size());
        Batch b;
        b.steps.assign(static_cast<std::size_t>(k_), Eigen::MatrixXd(rows_.rows(), n));
        b.targets.resize(n);
        for (Eigen::Index j = 0; j < n; ++j) {
            const auto start = static_cast<Eigen::Index>(indices[static_cast<std::size_t>(j)]);
            require(static_cast<std::size_t>(start) < size(), "sequence index out of range");
            for (int t = 0; t < k_; ++t) b.steps[static_cast<std::size_t>(t)].col(j) = rows_.col(start + t);
            b.targets[j] = rows_(0, start + k_);
        }
        return b;
    }

    Batch all() const {
        std::vector<std::size_t> idx(size());
        for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
        return batch(idx);
    }

private:
    Eigen::MatrixXd rows_;
    std::vector<std::int64_t> times_;
    int k_ = 1;
};

inline SequenceSet make_sequences(const Eigen::MatrixXd& rows, std::vector<std::int64_t> times, int k) {
    return SequenceSet(rows, std::move(times), k);
}

inline Batch make_batch(std::span<const SequenceSample> samples) {
    std::vector<Eigen::MatrixXd> windows;
    std::vector<double> labels;
    for (const auto& s : samples) {
        windows.push_back(s.window);
        labels.push_back(s.label);
    }
    return make_batch(std::span<const Eigen::MatrixXd>(windows), std::span<const double>(labels));
}

inline GradientResult compute_gradients(std::span<const SequenceSample> samples, const ForecastModel& model) {
    require(!samples.empty(), "batch must be nonempty");
    return compute_gradients(model, make_batch(samples));
}

struct Variant {
    int k = 12;
    bool weather = false;

    std::string name() const { return "k" + std::to_string(k) + (weather ? "+weather" : "-weather"); }
    std::string slug() const { return "k" + std::to_string(k) + (weather ? "_weather" : "_noweather"); }
    int feature_dim() const { return fedcast::feature_dim(weather); }

    auto operator<=>(const Variant&) const = default;
};

// The six variants in table column order.
inline std::vector<Variant> all_variants() {
    return {{6, true}, {12, true}, {24, true}, {6, false}, {12, false}, {24, false}};
}

struct HouseholdDataset {
    std::string household_id;
    Variant variant;
    SplitRanges split;
    SequenceSet train;
    SequenceSet validation;
    SequenceSet test;
};

struct PreparedVariant {
    Variant variant;
    NormalizationParams normalizer;
    std::vector<HouseholdDataset> households;
};

// Windows each split of an already-normalised household matrix.
inline HouseholdDataset assemble_household(std::string household_id, Variant variant, const SplitRanges& s,
                                           const Eigen::MatrixXd& normalized, const std::vector<std::int64_t>& times) {
    require(static_cast<std::size_t>(normalized.cols()) == s.rows && times.size() == s.rows,
            "household rows do not match its split");
    require(normalized.rows() == variant.feature_dim(), "household features do not match the variant");
    const auto block = [&](std::size_t lo, std::size_t hi) {
        return SequenceSet(normalized.middleCols(static_cast<Eigen::Index>(lo), static_cast<Eigen::Index>(hi - lo)),
                           std::vector<std::int64_t>(times.begin() + static_cast<std::ptrdiff_t>(lo),
                                                     times.begin() + static_cast<std::ptrdiff_t>(hi)),
                           variant.k);
    };
    return {std::move(household_id), variant, s, block(0, s.train_end), block(s.train_end, s.validation_end),
            block(s.validation_end, s.rows)};
}

// Splits every household, fits the normaliser on all training rows, and
// windows each split independently (no window crosses a split boundary).
inline PreparedVariant prepare_variant(std::span<const DesignMatrix> matrices, int k) {
    require(!matrices.empty(), "no households to prepare");
    const bool weather = matrices.front().with_weather;
    std::vector<Eigen::MatrixXd> values;
    std::vector<SplitRanges> splits;
    std::vector<Eigen::MatrixXd> train_blocks;
    for (const auto& m : matrices) {
        require(m.with_weather == weather, "households disagree on weather features");
        values.push_back(m.values());
        splits.push_back(split_chronological(m.rows.size(), k));
        train_blocks.push_back(values.back().leftCols(static_cast<Eigen::Index>(splits.back().train_end)));
    }
    PreparedVariant out{{k, weather}, fit_normalizer(train_blocks), {}};
    for (std::size_t h = 0; h < matrices.size(); ++h)
        out.households.push_back(assemble_household(matrices[h].household_id, out.variant, splits[h],
                                                    out.normalizer.normalize(values[h]),
                                                    matrices[h].time_indices()));
    return out;
}

}  // namespace fedcast
