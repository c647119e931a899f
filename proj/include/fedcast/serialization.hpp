#pragma once

// JSON forms of configs, run reports and result rows.

#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "fedcast/clustering.hpp"
#include "fedcast/dataset_cache.hpp"
#include "fedcast/federation.hpp"
#include "fedcast/metrics.hpp"

namespace fedcast {

using json = nlohmann::ordered_json;

namespace detail {

template <typename T>
json optional_json(const std::optional<T>& v) {
    return v ? json(*v) : json(nullptr);
}

}  // namespace detail

inline json to_json_value(const Variant& v) { return {{"name", v.name()}, {"k", v.k}, {"weather", v.weather}}; }

inline json to_json_value(const TrainingSettings& t) {
    return {{"batch_size", t.batch_size},
            {"learning_rate", t.learning_rate},
            {"patience", t.patience},
            {"caps",
             {{"centralised_epochs", t.caps.centralised_epochs},
              {"localised_epochs", t.caps.localised_epochs},
              {"fl_rounds", t.caps.fl_rounds},
              {"flhc_rounds", t.caps.flhc_rounds},
              {"lft_epochs", t.caps.lft_epochs}}}};
}

inline json to_json_value(const ScenarioConfig& c) {
    json j{{"scenario", to_string(c.kind)}, {"variant", to_json_value(c.variant)}, {"seed", c.seed}};
    if (uses_federation(c.kind)) {
        j["client_fraction"] = c.client_fraction;
        j["local_epochs"] = c.local_epochs;
    }
    if (c.hc)
        j["hc"] = {{"threshold", c.hc->threshold},
                   {"linkage", to_string(c.hc->linkage)},
                   {"rounds_before", c.hc->rounds_before}};
    j["training"] = to_json_value(c.training);
    return j;
}

inline json to_json_value(const RoundRecord& r) {
    return {{"phase", r.phase},
            {"index", r.index},
            {"cluster", r.cluster},
            {"participants", r.participants},
            {"train_loss", r.train_loss},
            {"participant_samples", r.participant_samples},
            {"validation_rmse", r.validation_rmse},
            {"samples", r.samples},
            {"cumulative_samples", r.cumulative_samples}};
}

inline json to_json_value(const ClientResult& c) {
    return {{"household_id", c.household_id},
            {"cluster", c.cluster},
            {"validation_rmse", c.validation_rmse},
            {"test_rmse", c.test_rmse},
            {"base_validation_rmse", detail::optional_json(c.base_validation_rmse)},
            {"base_test_rmse", detail::optional_json(c.base_test_rmse)},
            {"samples", c.samples}};
}

inline json to_json_value(const RunReport& r) {
    json clients = json::array(), log = json::array();
    for (const auto& c : r.clients) clients.push_back(to_json_value(c));
    for (const auto& rec : r.log) log.push_back(to_json_value(rec));
    return {{"config", to_json_value(r.config)},
            {"mean_test_rmse", r.mean_test_rmse},
            {"mean_validation_rmse", r.mean_validation_rmse},
            {"mean_test_rmse_kwh", r.mean_test_rmse_kwh()},
            {"pooled_test_rmse", detail::optional_json(r.pooled_test_rmse)},
            {"pooled_validation_rmse", detail::optional_json(r.pooled_validation_rmse)},
            {"energy_span_kwh", r.energy_span},
            {"total_samples", r.total_samples},
            {"total_samples_millions", count_samples(r.log).millions()},
            {"cluster_count", r.cluster_count},
            {"cluster_labels", r.cluster_labels},
            {"clients", clients},
            {"notes", r.notes},
            {"log", log}};
}

inline json to_json_value(const ResultRow& r) {
    return {{"scenario", to_string(r.scenario)},
            {"variant", r.variant.name()},
            {"k", r.variant.k},
            {"weather", r.variant.weather},
            {"mean_rmse", r.mean_rmse},
            {"best_rmse", r.best_rmse},
            {"total_samples", r.total_samples},
            {"seed", r.seed}};
}

inline ResultRow result_row_from_json(const json& j) {
    ResultRow r;
    const auto s = parse_scenario(j.at("scenario").get<std::string>());
    if (!s) throw InputError("unknown scenario " + j.at("scenario").dump());
    r.scenario = *s;
    r.variant = {j.at("k").get<int>(), j.at("weather").get<bool>()};
    r.mean_rmse = j.at("mean_rmse").get<double>();
    r.best_rmse = j.at("best_rmse").get<double>();
    r.total_samples = j.at("total_samples").get<std::uint64_t>();
    r.seed = j.at("seed").get<std::uint64_t>();
    return r;
}

inline json to_json_value(const ComparisonTable& t) {
    json rows = json::array();
    for (const auto& r : t.rows) {
        json cells = json::array();
        for (const auto& c : r.cells) cells.push_back(detail::optional_json(c));
        rows.push_back({{"scenario", to_string(r.scenario)},
                        {"cells", cells},
                        {"mean", r.mean},
                        {"best", r.best},
                        {"marked", r.marked},
                        {"mean_delta", detail::optional_json(r.mean_delta)},
                        {"best_delta", detail::optional_json(r.best_delta)}});
    }
    json columns = json::array();
    for (const auto& v : all_variants()) columns.push_back(v.name());
    return {{"kind", t.kind == TableKind::rmse ? "rmse" : "samples_millions"}, {"columns", columns}, {"rows", rows}};
}

struct ReportFiles {
    std::filesystem::path csv;
    std::filesystem::path json;
    std::filesystem::path tables;
};

// Writes results.csv, results.json and tables.txt into `dir`. `extra` is
// copied to the top of results.json (configs, run reports, sources). Both
// tables are verified against their cells before anything is written.
inline ReportFiles emit_report(const std::filesystem::path& dir, std::span<const ResultRow> rows,
                               const json& extra = json::object()) {
    const ComparisonTable errors = rmse_table(rows);
    const ComparisonTable samples = samples_table(rows);
    verify_table(errors);
    verify_table(samples);

    std::ostringstream csv;
    write_results_csv(csv, rows);
    json doc = extra.is_object() ? extra : json::object();
    json results = json::array();
    for (const auto& r : rows) results.push_back(to_json_value(r));
    doc["results"] = results;
    doc["tables"] = {{"rmse", to_json_value(errors)}, {"samples", to_json_value(samples)}};

    ReportFiles files{dir / "results.csv", dir / "results.json", dir / "tables.txt"};
    write_file(files.csv, csv.str());
    write_file(files.json, doc.dump(2) + "\n");
    write_file(files.tables, render_table(errors) + "\n" + render_table(samples));
    return files;
}

}  // namespace fedcast
