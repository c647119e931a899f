#pragma once

// Error metrics, RMSE and sample comparison tables across scenarios and
// variants, and the results.csv / results.json / text-table writers.

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "fedcast/errors.hpp"
#include "fedcast/federation.hpp"

namespace fedcast {

inline double rmse(std::span<const double> predictions, std::span<const double> targets) {
    require(!predictions.empty() && predictions.size() == targets.size(),
            "rmse needs equal, nonzero lengths");
    double sse = 0.0;
    for (std::size_t i = 0; i < predictions.size(); ++i) {
        const double e = predictions[i] - targets[i];
        sse += e * e;
    }
    return std::sqrt(sse / static_cast<double>(predictions.size()));
}

inline double rmse(const Eigen::VectorXd& predictions, const Eigen::VectorXd& targets) {
    return rmse(std::span<const double>(predictions.data(), static_cast<std::size_t>(predictions.size())),
                std::span<const double>(targets.data(), static_cast<std::size_t>(targets.size())));
}

// Positive when the scenario has lower error than the localised baseline.
inline double pct_difference(double scenario, double localised) {
    require(localised > 0.0 && std::isfinite(localised), "baseline metric must be positive");
    require(std::isfinite(scenario), "scenario metric must be finite");
    return (localised - scenario) / localised * 100.0;
}

inline double savings_factor(double scenario_samples, double localised_samples) {
    require(scenario_samples > 0.0, "scenario sample count must be positive");
    require(localised_samples >= 0.0, "baseline sample count must be non-negative");
    return localised_samples / scenario_samples;
}

// One scenario x variant line of results.csv.
struct ResultRow {
    ScenarioKind scenario = ScenarioKind::fl;
    Variant variant;
    double mean_rmse = 0.0;  // selected entry: uniform mean of per-client test RMSE
    double best_rmse = 0.0;  // lowest mean test RMSE over all entries of the sweep
    std::uint64_t total_samples = 0;  // selected entry
    std::uint64_t seed = 0;

    bool operator==(const ResultRow&) const = default;
};

// Validation metric used to pick a sweep entry: pooled for centralised runs.
inline double selection_metric(const RunReport& r) {
    return r.pooled_validation_rmse ? *r.pooled_validation_rmse : r.mean_validation_rmse;
}

// Index of the entry with the lowest validation metric; ties go to fewer
// samples, then to the earlier entry.
inline std::size_t select_best(std::span<const RunReport> entries) {
    require(!entries.empty(), "no entries to select from");
    std::size_t best = 0;
    for (std::size_t i = 1; i < entries.size(); ++i) {
        const double a = selection_metric(entries[i]), b = selection_metric(entries[best]);
        if (a < b || (a == b && entries[i].total_samples < entries[best].total_samples)) best = i;
    }
    return best;
}

inline ResultRow summarize(std::span<const RunReport> entries) {
    const auto& chosen = entries[select_best(entries)];
    ResultRow row{chosen.config.kind, chosen.config.variant, chosen.mean_test_rmse, chosen.mean_test_rmse,
                  chosen.total_samples, chosen.config.seed};
    for (const auto& e : entries) row.best_rmse = std::min(row.best_rmse, e.mean_test_rmse);
    return row;
}

inline constexpr std::size_t kVariantColumns = 6;

inline int variant_column(const Variant& v) {
    const auto all = all_variants();
    for (std::size_t i = 0; i < all.size(); ++i)
        if (all[i] == v) return static_cast<int>(i);
    return -1;
}

enum class TableKind { rmse, samples };

struct TableRow {
    ScenarioKind scenario = ScenarioKind::fl;
    std::array<std::optional<double>, kVariantColumns> cells;
    double mean = 0.0;
    double best = 0.0;
    int marked = -1;  // column shown in bold: lowest cell
    std::optional<double> mean_delta;  // vs localised: percent (rmse) or factor (samples)
    std::optional<double> best_delta;
};

struct ComparisonTable {
    TableKind kind = TableKind::rmse;
    std::vector<TableRow> rows;  // scenario table order

    const TableRow* find(ScenarioKind s) const {
        for (const auto& r : rows)
            if (r.scenario == s) return &r;
        return nullptr;
    }
};

namespace detail {

using RowGrid = std::map<ScenarioKind, std::array<const ResultRow*, kVariantColumns>>;

inline RowGrid grid_of(std::span<const ResultRow> rows) {
    RowGrid grid;
    for (const auto& r : rows) {
        const int c = variant_column(r.variant);
        require(c >= 0, "variant " + r.variant.name() + " is not a table column");
        auto& slot = grid[r.scenario];  // value-initialised: all null
        require(slot[static_cast<std::size_t>(c)] == nullptr,
                "duplicate result for " + std::string(to_string(r.scenario)) + " " + r.variant.name());
        slot[static_cast<std::size_t>(c)] = &r;
    }
    return grid;
}

inline int argmin(const std::array<std::optional<double>, kVariantColumns>& cells) {
    int best = -1;
    for (int i = 0; i < static_cast<int>(kVariantColumns); ++i)
        if (cells[static_cast<std::size_t>(i)] && (best < 0 || *cells[static_cast<std::size_t>(i)] < *cells[static_cast<std::size_t>(best)]))
            best = i;
    return best;
}

inline double mean_of(const std::array<std::optional<double>, kVariantColumns>& cells) {
    double s = 0.0;
    int n = 0;
    for (const auto& c : cells)
        if (c) {
            s += *c;
            ++n;
        }
    return s / n;
}

}  // namespace detail

// Mean test RMSE per variant; mean and best columns with the percentage
// difference against the localised row.
inline ComparisonTable rmse_table(std::span<const ResultRow> rows) {
    const auto grid = detail::grid_of(rows);
    ComparisonTable t{TableKind::rmse, {}};
    for (ScenarioKind s : kAllScenarios) {
        const auto it = grid.find(s);
        if (it == grid.end()) continue;
        TableRow row{s, {}, 0.0, 0.0, -1, {}, {}};
        for (std::size_t c = 0; c < kVariantColumns; ++c)
            if (it->second[c]) row.cells[c] = it->second[c]->mean_rmse;
        row.mean = detail::mean_of(row.cells);
        row.marked = detail::argmin(row.cells);
        row.best = *row.cells[static_cast<std::size_t>(row.marked)];
        t.rows.push_back(row);
    }
    if (const TableRow* base = t.find(ScenarioKind::localised))
        for (auto& r : t.rows)
            if (r.scenario != ScenarioKind::localised) {
                r.mean_delta = pct_difference(r.mean, base->mean);
                r.best_delta = pct_difference(r.best, base->best);
            }
    return t;
}

// Samples in millions per variant. "best" is the sample count of the variant
// with the lowest RMSE in that scenario; the marked cell is the fewest
// samples. Deltas are savings factors against the localised row.
inline ComparisonTable samples_table(std::span<const ResultRow> rows) {
    const auto grid = detail::grid_of(rows);
    const ComparisonTable errors = rmse_table(rows);
    ComparisonTable t{TableKind::samples, {}};
    for (ScenarioKind s : kAllScenarios) {
        const auto it = grid.find(s);
        if (it == grid.end()) continue;
        TableRow row{s, {}, 0.0, 0.0, -1, {}, {}};
        for (std::size_t c = 0; c < kVariantColumns; ++c)
            if (it->second[c]) row.cells[c] = static_cast<double>(it->second[c]->total_samples) / 1e6;
        row.mean = detail::mean_of(row.cells);
        row.marked = detail::argmin(row.cells);
        row.best = *row.cells[static_cast<std::size_t>(errors.find(s)->marked)];
        t.rows.push_back(row);
    }
    if (const TableRow* base = t.find(ScenarioKind::localised))
        for (auto& r : t.rows)
            if (r.scenario != ScenarioKind::localised) {
                if (r.mean > 0.0) r.mean_delta = savings_factor(r.mean, base->mean);
                if (r.best > 0.0) r.best_delta = savings_factor(r.best, base->best);
            }
    return t;
}

// Recomputes every derived column of `t` from its cells; throws on mismatch.
inline void verify_table(const ComparisonTable& t) {
    const TableRow* base = t.find(ScenarioKind::localised);
    for (const auto& r : t.rows) {
        require(r.marked >= 0 && r.cells[static_cast<std::size_t>(r.marked)], "table row has no cells");
        require(std::abs(r.mean - detail::mean_of(r.cells)) <= 1e-12 * std::max(1.0, std::abs(r.mean)),
                "mean column does not match its cells");
        for (const auto& c : r.cells)
            if (c) require(*c >= *r.cells[static_cast<std::size_t>(r.marked)], "marked cell is not the minimum");
        if (t.kind == TableKind::rmse)
            require(r.best == *r.cells[static_cast<std::size_t>(r.marked)], "best column is not the row minimum");
        if (!base || r.scenario == ScenarioKind::localised) continue;
        const auto check = [](const std::optional<double>& stored, double expected) {
            require(stored && std::abs(*stored - expected) <= 1e-9 * std::max(1.0, std::abs(expected)),
                    "annotation does not match raw cells");
        };
        if (t.kind == TableKind::rmse) {
            check(r.mean_delta, pct_difference(r.mean, base->mean));
            check(r.best_delta, pct_difference(r.best, base->best));
        } else {
            if (r.mean > 0.0) check(r.mean_delta, savings_factor(r.mean, base->mean));
            if (r.best > 0.0) check(r.best_delta, savings_factor(r.best, base->best));
        }
    }
}

inline std::string format_sig(double v, int significant = 6) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*g", significant, v);
    return buf;
}

inline constexpr const char* kResultsHeader = "scenario,variant,k,weather,mean_rmse,best_rmse,total_samples,seed";

inline void write_results_csv(std::ostream& out, std::span<const ResultRow> rows) {
    out << kResultsHeader << '\n';
    for (const auto& r : rows)
        out << to_string(r.scenario) << ',' << r.variant.name() << ',' << r.variant.k << ','
            << (r.variant.weather ? "true" : "false") << ',' << format_sig(r.mean_rmse) << ','
            << format_sig(r.best_rmse) << ',' << r.total_samples << ',' << r.seed << '\n';
}

inline std::string render_table(const ComparisonTable& t) {
    const bool err = t.kind == TableKind::rmse;
    std::ostringstream out;
    out << (err ? "Test RMSE (normalised units); * marks the lowest error per scenario\n"
                : "Samples (millions); * marks the fewest samples per scenario; best = samples of the lowest-error variant\n");
    char line[256];
    std::snprintf(line, sizeof line, "%-12s %10s %10s %10s %10s %10s %10s   %-20s %-20s\n", "", "K6+w", "K12+w",
                  "K24+w", "K6-w", "K12-w", "K24-w", "mean", "best");
    out << line;
    const auto cell = [&](double v) {
        char b[32];
        std::snprintf(b, sizeof b, err ? "%.4f" : "%.1f", v);
        return std::string(b);
    };
    const auto annotated = [&](double v, const std::optional<double>& d, bool baseline) {
        std::string s = cell(v);
        char b[32];
        if (baseline) s += " (---)";
        else if (d && err) std::snprintf(b, sizeof b, " (%+.1f%%)", *d), s += b;
        else if (d) std::snprintf(b, sizeof b, " (%.1fx)", *d), s += b;
        return s;
    };
    const bool have_base = t.find(ScenarioKind::localised) != nullptr;
    for (const auto& r : t.rows) {
        std::snprintf(line, sizeof line, "%-12s", std::string(display_name(r.scenario)).c_str());
        out << line;
        for (std::size_t c = 0; c < kVariantColumns; ++c) {
            std::string s = r.cells[c] ? cell(*r.cells[c]) : "-";
            if (static_cast<int>(c) == r.marked) s += "*";
            std::snprintf(line, sizeof line, " %10s", s.c_str());
            out << line;
        }
        const bool baseline = have_base && r.scenario == ScenarioKind::localised;
        std::snprintf(line, sizeof line, "   %-20s %-20s\n", annotated(r.mean, r.mean_delta, baseline).c_str(),
                      annotated(r.best, r.best_delta, baseline).c_str());
        out << line;
    }
    return out.str();
}

}  // namespace fedcast
