#pragma once

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <cstdio>
#include <optional>
#include <string>
#include <string_view>

namespace fedcast {

using TimePoint = std::chrono::sys_time<std::chrono::minutes>;

inline TimePoint make_time(int year, unsigned month, unsigned day, int hour = 0, int minute = 0) {
    using namespace std::chrono;
    const sys_days date = year_month_day{std::chrono::year{year}, std::chrono::month{month}, std::chrono::day{day}};
    return TimePoint{date} + hours{hour} + minutes{minute};
}

inline std::int64_t hours_since_epoch(TimePoint t) {
    return std::chrono::floor<std::chrono::hours>(t).time_since_epoch().count();
}

inline TimePoint floor_hour(TimePoint t) { return std::chrono::floor<std::chrono::hours>(t); }

inline TimePoint floor_half_hour(TimePoint t) {
    const auto m = t.time_since_epoch().count();
    const auto floored = m - (((m % 30) + 30) % 30);
    return TimePoint{std::chrono::minutes{floored}};
}

// Accepts "YYYY-MM-DD[T| ]HH:MM[:SS[.fraction]][Z]". Seconds are truncated.
inline std::optional<TimePoint> parse_timestamp(std::string_view text) {
    int y = 0, mo = 0, d = 0, h = 0, mi = 0;
    char sep = 0;
    int consumed = 0;
    const std::string s(text);
    if (std::sscanf(s.c_str(), "%4d-%2d-%2d%c%2d:%2d%n", &y, &mo, &d, &sep, &h, &mi, &consumed) != 6)
        return std::nullopt;
    if (sep != 'T' && sep != ' ') return std::nullopt;
    std::string_view rest = text.substr(static_cast<std::size_t>(consumed));
    if (!rest.empty() && rest.front() == ':') {
        int sec = 0, n = 0;
        const std::string r(rest);
        if (std::sscanf(r.c_str(), ":%2d%n", &sec, &n) != 1 || sec < 0 || sec > 60) return std::nullopt;
        rest.remove_prefix(static_cast<std::size_t>(n));
        if (!rest.empty() && rest.front() == '.') {
            rest.remove_prefix(1);
            while (!rest.empty() && rest.front() >= '0' && rest.front() <= '9') rest.remove_prefix(1);
        }
    }
    if (!rest.empty() && rest.front() == 'Z') rest.remove_prefix(1);
    if (!rest.empty()) return std::nullopt;
    if (h < 0 || h > 23 || mi < 0 || mi > 59) return std::nullopt;
    const std::chrono::year_month_day ymd{std::chrono::year{y}, std::chrono::month{static_cast<unsigned>(mo)},
                                          std::chrono::day{static_cast<unsigned>(d)}};
    if (!ymd.ok()) return std::nullopt;
    return make_time(y, static_cast<unsigned>(mo), static_cast<unsigned>(d), h, mi);
}

inline std::string format_timestamp(TimePoint t) {
    using namespace std::chrono;
    const auto day = floor<days>(t);
    const year_month_day ymd{day};
    const auto minutes_of_day = (t - day).count();
    char buf[32];
    std::snprintf(buf, sizeof buf, "%04d-%02u-%02uT%02d:%02d:00", static_cast<int>(ymd.year()),
                  static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()),
                  static_cast<int>(minutes_of_day / 60), static_cast<int>(minutes_of_day % 60));
    return buf;
}

// Calendar decomposition: Monday = day 0; week = floor((day_of_year - 1) / 7), clamped to 51.
struct CalendarFields {
    int year;
    int week;
    int day_of_week;
    int hour;
};

inline CalendarFields calendar_fields(TimePoint t) {
    using namespace std::chrono;
    const auto day = floor<days>(t);
    const year_month_day ymd{day};
    const sys_days jan1 = ymd.year() / January / 1;
    const int day_of_year = static_cast<int>((day - jan1).count()) + 1;
    const int week = std::min((day_of_year - 1) / 7, 51);
    const int dow = static_cast<int>((weekday{day}.c_encoding() + 6) % 7);
    const int hour = static_cast<int>(duration_cast<hours>(t - day).count());
    return {static_cast<int>(ymd.year()), week, dow, hour};
}

}  // namespace fedcast
