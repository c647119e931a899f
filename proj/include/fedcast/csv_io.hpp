#pragma once

// Meter and weather CSV ingestion and emission.
//
// Meter files: header row, columns household_id,timestamp,kwh (the Low Carbon
// London names LCLid, DateTime and "KWH/hh (per half hour)" are accepted as
// aliases; extra columns are ignored). Weather files: timestamp,air_temp_c,
// rel_humidity_pct. Unparseable rows are skipped and counted.

#include <algorithm>
#include <charconv>
#include <optional>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "fedcast/calendar.hpp"
#include "fedcast/data_pipeline.hpp"
#include "fedcast/errors.hpp"

namespace fedcast {

template <typename Record>
struct IngestResult {
    Record records;
    std::size_t rows = 0;     // data rows seen (header excluded)
    std::size_t skipped = 0;  // rows that failed to parse
};

using MeterIngest = IngestResult<std::map<std::string, std::vector<RawReading>>>;
using WeatherIngest = IngestResult<std::vector<WeatherRecord>>;

namespace csv {

inline std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '"')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r' || s.back() == '"'))
        s.remove_suffix(1);
    return s;
}

inline std::vector<std::string_view> split(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t pos = 0;
    while (true) {
        const auto comma = line.find(',', pos);
        out.push_back(trim(line.substr(pos, comma == std::string_view::npos ? std::string_view::npos : comma - pos)));
        if (comma == std::string_view::npos) break;
        pos = comma + 1;
    }
    return out;
}

inline std::optional<double> parse_double(std::string_view s) {
    if (s.empty()) return std::nullopt;
    const std::string tmp(s);
    char* end = nullptr;
    const double v = std::strtod(tmp.c_str(), &end);
    if (end != tmp.c_str() + tmp.size() || !std::isfinite(v)) return std::nullopt;
    return v;
}

inline int find_column(const std::vector<std::string_view>& header, std::initializer_list<std::string_view> names) {
    for (std::size_t i = 0; i < header.size(); ++i)
        for (auto n : names)
            if (header[i] == n) return static_cast<int>(i);
    return -1;
}

inline std::ifstream open(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open " + path);
    return in;
}

}  // namespace csv

inline MeterIngest ingest_meter_csv(std::istream& in) {
    MeterIngest result;
    std::string line;
    if (!std::getline(in, line)) return result;
    const auto header = csv::split(line);
    const int id_col = csv::find_column(header, {"household_id", "LCLid"});
    const int ts_col = csv::find_column(header, {"timestamp", "DateTime"});
    const int kwh_col = csv::find_column(header, {"kwh", "KWH/hh (per half hour)"});
    if (id_col < 0 || ts_col < 0 || kwh_col < 0)
        throw InputError("meter CSV header must name household_id, timestamp and kwh columns");
    const int needed = std::max({id_col, ts_col, kwh_col});
    while (std::getline(in, line)) {
        if (csv::trim(line).empty()) continue;
        ++result.rows;
        const auto f = csv::split(line);
        if (static_cast<int>(f.size()) <= needed || f[static_cast<std::size_t>(id_col)].empty()) {
            ++result.skipped;
            continue;
        }
        const auto ts = parse_timestamp(f[static_cast<std::size_t>(ts_col)]);
        const auto kwh = csv::parse_double(f[static_cast<std::size_t>(kwh_col)]);
        if (!ts || !kwh || *kwh < 0.0) {
            ++result.skipped;
            continue;
        }
        result.records[std::string(f[static_cast<std::size_t>(id_col)])].push_back({*ts, *kwh});
    }
    return result;
}

inline MeterIngest ingest_lcl_csv(const std::string& path) {
    auto in = csv::open(path);
    return ingest_meter_csv(in);
}

inline WeatherIngest ingest_weather_csv(std::istream& in) {
    WeatherIngest result;
    std::string line;
    if (!std::getline(in, line)) return result;
    const auto header = csv::split(line);
    const int ts_col = csv::find_column(header, {"timestamp"});
    const int temp_col = csv::find_column(header, {"air_temp_c"});
    const int hum_col = csv::find_column(header, {"rel_humidity_pct"});
    if (ts_col < 0 || temp_col < 0 || hum_col < 0)
        throw InputError("weather CSV header must name timestamp, air_temp_c and rel_humidity_pct columns");
    const int needed = std::max({ts_col, temp_col, hum_col});
    while (std::getline(in, line)) {
        if (csv::trim(line).empty()) continue;
        ++result.rows;
        const auto f = csv::split(line);
        if (static_cast<int>(f.size()) <= needed) {
            ++result.skipped;
            continue;
        }
        const auto ts = parse_timestamp(f[static_cast<std::size_t>(ts_col)]);
        const auto temp = csv::parse_double(f[static_cast<std::size_t>(temp_col)]);
        const auto hum = csv::parse_double(f[static_cast<std::size_t>(hum_col)]);
        if (!ts || !temp || !hum || *hum < 0.0 || *hum > 100.0) {
            ++result.skipped;
            continue;
        }
        result.records.push_back({*ts, *temp, *hum});
    }
    return result;
}

inline WeatherIngest ingest_weather_csv(const std::string& path) {
    auto in = csv::open(path);
    return ingest_weather_csv(in);
}

inline std::string format_number(double v, int significant = 6) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.*g", significant, v);
    return buf;
}

inline void write_meter_csv(std::ostream& out, const std::vector<std::pair<std::string, std::vector<RawReading>>>& households) {
    out << "household_id,timestamp,kwh\n";
    for (const auto& [id, readings] : households)
        for (const auto& r : readings) out << id << ',' << format_timestamp(r.timestamp) << ',' << format_number(r.energy_kwh) << '\n';
}

inline void write_weather_csv(std::ostream& out, const std::vector<WeatherRecord>& weather) {
    out << "timestamp,air_temp_c,rel_humidity_pct\n";
    for (const auto& w : weather)
        out << format_timestamp(w.timestamp) << ',' << format_number(w.air_temp_c) << ','
            << format_number(w.rel_humidity_pct) << '\n';
}

}  // namespace fedcast
