#include <gtest/gtest.h>

#include <sstream>

#include "fedcast/csv_io.hpp"
#include "fedcast/data_pipeline.hpp"
#include "fedcast/synthetic.hpp"

using namespace fedcast;
using std::chrono::hours;
using std::chrono::minutes;

namespace {

const TimePoint t0 = make_time(2013, 1, 1);

std::vector<RawReading> regular(int slots, double kwh = 0.1, TimePoint start = t0) {
    std::vector<RawReading> r;
    for (int i = 0; i < slots; ++i) r.push_back({start + minutes{30 * i}, kwh * (1 + i % 5)});
    return r;
}

DesignMatrix hourly_matrix(const std::string& id, int hours_count, double peak = 1.0) {
    HourlySeries s{id, {}};
    for (int i = 0; i < hours_count; ++i)
        s.points.push_back({t0 + hours{i}, peak * static_cast<double>((i * 37) % 100) / 99.0, false});
    return build_design_matrix(s);
}

}  // namespace

TEST(Timestamps, ParseAndFormat) {
    EXPECT_EQ(parse_timestamp("2013-01-01T00:30:00"), t0 + minutes{30});
    EXPECT_EQ(parse_timestamp("2013-01-01 00:30:00.0000000"), t0 + minutes{30});
    EXPECT_EQ(parse_timestamp("2013-01-01T00:30Z"), t0 + minutes{30});
    EXPECT_FALSE(parse_timestamp("2013-02-30T00:00:00"));
    EXPECT_FALSE(parse_timestamp("yesterday"));
    EXPECT_FALSE(parse_timestamp("2013-01-01T25:00:00"));
    EXPECT_EQ(format_timestamp(make_time(2013, 3, 9, 17, 30)), "2013-03-09T17:30:00");
}

TEST(CleanReadings, SumsHalfHourTotals) {
    const std::vector<RawReading> raw{{t0, 0.3}, {t0 + minutes{30}, 0.4}};
    const auto s = clean_readings(raw, "A");
    ASSERT_EQ(s.points.size(), 1u);
    EXPECT_EQ(s.points[0].hour, t0);
    EXPECT_DOUBLE_EQ(s.points[0].energy_kwh, 0.7);
    EXPECT_FALSE(s.points[0].filled);
}

TEST(CleanReadings, DropsDuplicatesKeepingFirst) {
    const std::vector<RawReading> raw{{t0, 0.3}, {t0, 0.3}, {t0 + minutes{30}, 0.1}, {t0 + minutes{30}, 9.0}};
    const auto grid = regularize_half_hourly(raw, "A");
    ASSERT_EQ(grid.size(), 2u);
    EXPECT_EQ(grid[0].reading.energy_kwh, 0.3);
    EXPECT_EQ(grid[1].reading.energy_kwh, 0.1);
}

TEST(CleanReadings, ForwardFillsMissingSlot) {
    // Four-row fixture: 00:30 is missing and takes 00:00's value.
    const std::vector<RawReading> raw{
        {t0, 0.3}, {t0 + minutes{60}, 0.2}, {t0 + minutes{90}, 0.5}, {t0 + minutes{60}, 0.2}};
    const auto s = clean_readings(raw, "A");
    ASSERT_EQ(s.points.size(), 2u);
    EXPECT_DOUBLE_EQ(s.points[0].energy_kwh, 0.6);
    EXPECT_TRUE(s.points[0].filled);
    EXPECT_DOUBLE_EQ(s.points[1].energy_kwh, 0.7);
    EXPECT_EQ(s.filled_hours(), 1u);
}

TEST(CleanReadings, TrailingHalfHourIsFilled) {
    const std::vector<RawReading> raw{{t0, 0.3}, {t0 + minutes{30}, 0.1}, {t0 + minutes{60}, 0.2}};
    const auto s = clean_readings(raw, "A");
    ASSERT_EQ(s.points.size(), 2u);
    EXPECT_DOUBLE_EQ(s.points[1].energy_kwh, 0.4);
}

TEST(CleanReadings, EmptyAndLeadingGapRejected) {
    EXPECT_THROW(clean_readings({}, "A"), InputError);
    const std::vector<RawReading> late{{t0 + minutes{30}, 0.3}};
    try {
        clean_readings(late, "MAC000123");
        FAIL();
    } catch (const InputError& e) {
        EXPECT_NE(std::string(e.what()).find("MAC000123"), std::string::npos);
    }
    const std::vector<RawReading> raw{{t0 + hours{2}, 0.3}};
    EXPECT_THROW(clean_readings(raw, "A", StudyWindow{t0, t0 + hours{4}}), InputError);
}

TEST(CleanReadings, RegularisationIsIdempotent) {
    Rng rng(3);
    for (int trial = 0; trial < 30; ++trial) {
        std::vector<RawReading> raw;
        raw.push_back({t0, rng.uniform()});
        for (int i = 1; i < 200; ++i) {
            const double u = rng.uniform();
            if (u < 0.15) continue;  // gap
            raw.push_back({t0 + minutes{30 * i}, rng.uniform()});
            if (u > 0.9) raw.push_back({t0 + minutes{30 * i}, rng.uniform()});  // duplicate
        }
        const auto once = readings_of(regularize_half_hourly(raw, "A"));
        const auto twice = readings_of(regularize_half_hourly(once, "A"));
        EXPECT_EQ(once, twice);
        for (std::size_t i = 1; i < once.size(); ++i) EXPECT_EQ(once[i].timestamp - once[i - 1].timestamp, minutes{30});
    }
}

TEST(DesignMatrix, CalendarDecomposition) {
    const auto a = calendar_fields(t0);
    EXPECT_EQ(a.year, 2013);
    EXPECT_EQ(a.week, 0);
    EXPECT_EQ(a.day_of_week, 1);  // Tuesday
    EXPECT_EQ(a.hour, 0);
    const auto b = calendar_fields(make_time(2013, 1, 7, 23));
    EXPECT_EQ(b.day_of_week, 0);
    EXPECT_EQ(b.hour, 23);
    EXPECT_EQ(b.week, 0);
    EXPECT_EQ(calendar_fields(make_time(2013, 1, 8)).week, 1);
    EXPECT_EQ(calendar_fields(make_time(2012, 12, 31, 5)).week, 51);  // day 366 clamps
}

TEST(DesignMatrix, JoinsWeatherByHour) {
    const auto series = clean_readings(regular(48), "A");
    std::vector<WeatherRecord> weather;
    for (int h = 23; h >= 0; --h) weather.push_back({t0 + hours{h}, 1.0 + h, 50.0 + h});
    const auto dm = build_design_matrix(series, weather);
    ASSERT_EQ(dm.rows.size(), 24u);
    for (int h = 0; h < 24; ++h) {
        EXPECT_EQ(*dm.rows[h].air_temp, 1.0 + h);
        EXPECT_EQ(*dm.rows[h].humidity, 50.0 + h);
        EXPECT_EQ(dm.rows[h].hour, h);
    }
    EXPECT_EQ(dm.values().rows(), 7);
}

TEST(DesignMatrix, WeatherGapRejectedWithFirstMissingHour) {
    const auto series = clean_readings(regular(8), "A");
    std::vector<WeatherRecord> weather{{t0, 1, 50}, {t0 + hours{1}, 1, 50}, {t0 + hours{3}, 1, 50}};
    try {
        build_design_matrix(series, weather);
        FAIL();
    } catch (const InputError& e) {
        EXPECT_NE(std::string(e.what()).find("2013-01-01T02:00"), std::string::npos);
    }
}

TEST(Normalizer, BasicScalingAndRoundTrip) {
    const std::vector<Eigen::MatrixXd> blocks{(Eigen::MatrixXd(1, 3) << 0.0, 2.0, 1.0).finished()};
    const auto p = fit_normalizer(blocks);
    EXPECT_DOUBLE_EQ(p.normalize(0, 1.0), 0.5);
    Rng rng(8);
    for (int i = 0; i < 100; ++i) {
        const double v = rng.uniform(0.0, 2.0);
        EXPECT_NEAR(p.denormalize(0, p.normalize(0, v)), v, 1e-9);
    }
}

TEST(Normalizer, EnergyBoundsAreGlobalAcrossHouseholds) {
    const std::vector<Eigen::MatrixXd> blocks{(Eigen::MatrixXd(1, 2) << 0.0, 1.0).finished(),
                                              (Eigen::MatrixXd(1, 2) << 0.0, 3.0).finished()};
    const auto p = fit_normalizer(blocks);
    EXPECT_DOUBLE_EQ(p.normalize(0, 1.0), 1.0 / 3.0);
}

TEST(Normalizer, ConstantDimensionMapsToZeroWithWarning) {
    const std::vector<Eigen::MatrixXd> blocks{(Eigen::MatrixXd(2, 2) << 2013, 2013, 0.0, 1.0).finished()};
    const auto p = fit_normalizer(blocks);
    EXPECT_EQ(p.normalize(0, 2013.0), 0.0);
    ASSERT_EQ(p.warnings.size(), 1u);
    EXPECT_NE(p.warnings[0].find("energy"), std::string::npos);
}

TEST(Sequences, CountsAndWindowLayout) {
    const auto dm = hourly_matrix("A", 10);
    const auto set = make_sequences(dm.values(), dm.time_indices(), 6);
    ASSERT_EQ(set.size(), 4u);
    const auto first = set.sample(0);
    EXPECT_EQ(first.window.cols(), 6);
    for (int t = 0; t < 6; ++t) EXPECT_EQ(first.window(0, t), dm.rows[t].energy);
    EXPECT_EQ(first.label, dm.rows[6].energy);
    EXPECT_EQ(first.time_index, hours_since_epoch(dm.rows[6].time));

    const auto hundred = hourly_matrix("A", 100);
    EXPECT_EQ(make_sequences(hundred.values(), hundred.time_indices(), 24).size(), 76u);
    EXPECT_THROW(make_sequences(dm.values().leftCols(6), std::vector<std::int64_t>(6), 6), InputError);
}

TEST(Sequences, BatchMatchesSamples) {
    const auto dm = hourly_matrix("A", 30);
    const auto set = make_sequences(dm.values(), dm.time_indices(), 4);
    const std::vector<std::size_t> idx{3, 0, 11};
    const auto b = set.batch(idx);
    for (std::size_t j = 0; j < idx.size(); ++j) {
        const auto s = set.sample(idx[j]);
        for (int t = 0; t < 4; ++t) EXPECT_EQ(b.steps[t].col(j), s.window.col(t));
        EXPECT_EQ(b.targets[j], s.label);
    }
}

TEST(Split, SeventyTwentyTen) {
    auto s = split_chronological(100, 6);
    EXPECT_EQ(s.train_rows(), 70u);
    EXPECT_EQ(s.validation_rows(), 20u);
    EXPECT_EQ(s.test_rows(), 10u);
    s = split_chronological(101, 6);
    EXPECT_EQ(s.train_rows(), 71u);
    EXPECT_EQ(s.validation_rows(), 20u);
    EXPECT_EQ(s.test_rows(), 10u);
    s = split_chronological(4320, 24);
    EXPECT_EQ(s.train_rows(), 3024u);
    EXPECT_EQ(s.validation_rows(), 864u);
    EXPECT_EQ(s.test_rows(), 432u);
    EXPECT_THROW(split_chronological(38, 12), InputError);
    EXPECT_THROW(split_chronological(0, 12), ContractError);
}

TEST(PrepareVariant, SplitsAreMonotoneAndTrainIsInUnitInterval) {
    std::vector<DesignMatrix> ms{hourly_matrix("A", 400, 1.0), hourly_matrix("B", 400, 3.0)};
    const auto prepared = prepare_variant(ms, 12);
    ASSERT_EQ(prepared.households.size(), 2u);
    EXPECT_EQ(prepared.normalizer.max[0], 3.0);
    for (const auto& h : prepared.households) {
        EXPECT_LT(h.train.times().back(), h.validation.times().front());
        EXPECT_LT(h.validation.times().back(), h.test.times().front());
        EXPECT_EQ(h.train.size(), h.split.train_rows() - 12);
        EXPECT_EQ(h.validation.size(), h.split.validation_rows() - 12);
        EXPECT_EQ(h.test.size(), h.split.test_rows() - 12);
        // Year and the all-equal calendar fields are constant; every train value is in [0, 1].
        EXPECT_GE(h.train.rows().minCoeff(), 0.0);
        EXPECT_LE(h.train.rows().maxCoeff(), 1.0);
    }
}

TEST(Synthetic, NoiseFreeSingleArchetypeGivesIdenticalHouseholds) {
    SyntheticConfig cfg{5, 1, 0.0, 9, 7};
    const auto data = generate_synthetic_households(cfg);
    for (const auto& h : data.households) EXPECT_EQ(h.readings, data.households[0].readings);
}

TEST(Synthetic, SameSeedIsBitwiseIdentical) {
    SyntheticConfig cfg{4, 3, 0.05, 21, 10};
    const auto a = generate_synthetic_households(cfg);
    const auto b = generate_synthetic_households(cfg);
    ASSERT_EQ(a.households.size(), b.households.size());
    for (std::size_t i = 0; i < a.households.size(); ++i) EXPECT_EQ(a.households[i].readings, b.households[i].readings);
    EXPECT_EQ(a.weather, b.weather);
    cfg.seed = 22;
    EXPECT_NE(generate_synthetic_households(cfg).households[0].readings, a.households[0].readings);
}

TEST(Synthetic, PeakHourRecoversArchetype) {
    SyntheticConfig cfg{60, 3, 0.05, 4, 90};
    const auto data = generate_synthetic_households(cfg);
    int hits = 0;
    for (const auto& h : data.households) {
        const auto s = clean_readings(h.readings, h.id);
        hits += mean_peak_hour(s) == data.peak_hours[static_cast<std::size_t>(h.archetype)];
    }
    EXPECT_GE(hits, 57);  // >= 95%
}

TEST(Synthetic, RejectsBadParameters) {
    EXPECT_THROW(generate_synthetic_households({0, 3, 0.05, 1, 10}), ContractError);
    EXPECT_THROW(generate_synthetic_households({3, 0, 0.05, 1, 10}), ContractError);
    EXPECT_THROW(generate_synthetic_households({3, 3, -1.0, 1, 10}), ContractError);
}

TEST(Ingest, EmptyFileGivesEmptyResult) {
    std::istringstream in("");
    const auto r = ingest_meter_csv(in);
    EXPECT_TRUE(r.records.empty());
    EXPECT_EQ(r.rows, 0u);
    EXPECT_EQ(r.skipped, 0u);
}

TEST(Ingest, TwoRowFixture) {
    std::istringstream in("household_id,timestamp,kwh\nA,2013-01-01T00:00:00,0.25\nA,2013-01-01T00:30:00,0.125\n");
    const auto r = ingest_meter_csv(in);
    ASSERT_EQ(r.records.at("A").size(), 2u);
    EXPECT_EQ(r.records.at("A")[0], (RawReading{t0, 0.25}));
    EXPECT_EQ(r.records.at("A")[1], (RawReading{t0 + minutes{30}, 0.125}));
}

TEST(Ingest, MalformedRowSkippedAndCounted) {
    std::ostringstream text;
    text << "household_id,timestamp,kwh\n";
    for (int i = 0; i < 10; ++i) {
        if (i == 4)
            text << "B,not-a-time,0.1\n";
        else
            text << (i % 2 ? "A" : "B") << ",2013-01-01T0" << i << ":00:00,0." << i << "\n";
    }
    std::istringstream in(text.str());
    const auto r = ingest_meter_csv(in);
    EXPECT_EQ(r.rows, 10u);
    EXPECT_EQ(r.skipped, 1u);
    EXPECT_EQ(r.records.at("A").size() + r.records.at("B").size(), 9u);
}

TEST(Ingest, LowCarbonLondonColumnNamesAndNullValues) {
    std::istringstream in(
        "LCLid,stdorToU,DateTime,KWH/hh (per half hour) \nMAC000002,Std,2013-01-01 00:00:00.0000000,0.219\n"
        "MAC000002,Std,2013-01-01 00:30:00.0000000,Null\n");
    // Trailing space in the header name is trimmed.
    const auto r = ingest_meter_csv(in);
    EXPECT_EQ(r.records.at("MAC000002").size(), 1u);
    EXPECT_EQ(r.skipped, 1u);
}

TEST(Ingest, WeatherRoundTripsThroughWriter) {
    const std::vector<WeatherRecord> w{{t0, 3.5, 81.0}, {t0 + hours{1}, -1.25, 100.0}};
    std::stringstream buf;
    write_weather_csv(buf, w);
    const auto r = ingest_weather_csv(buf);
    EXPECT_EQ(r.records, w);
    std::istringstream bad("timestamp,air_temp_c,rel_humidity_pct\n2013-01-01T00:00:00,3,140\n");
    EXPECT_EQ(ingest_weather_csv(bad).skipped, 1u);
    std::istringstream no_header("a,b\n1,2\n");
    EXPECT_THROW(ingest_weather_csv(no_header), InputError);
}
