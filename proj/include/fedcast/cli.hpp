#pragma once

// The four command-line operations. Each returns a process exit code:
// 0 success, 2 usage or input error, 3 numerical failure during training.

#include <json.hpp>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "fedcast/csv_io.hpp"
#include "fedcast/data_pipeline.hpp"
#include "fedcast/dataset_cache.hpp"
#include "fedcast/errors.hpp"
#include "fedcast/federation.hpp"
#include "fedcast/metrics.hpp"
#include "fedcast/run_config.hpp"
#include "fedcast/serialization.hpp"
#include "fedcast/synthetic.hpp"

namespace fedcast::cli {

inline constexpr const char* kToolVersion = "1.0.0";

enum ExitCode : int { kSuccess = 0, kInputError = 2, kNumericalError = 3 };

template <typename Fn>
int guarded(std::ostream& err, Fn&& fn) {
    try {
        return fn();
    } catch (const NumericalFailure& e) {
        err << "numerical failure: " << e.what() << '\n';
        return kNumericalError;
    } catch (const InputError& e) {
        err << "input error: " << e.what() << '\n';
    } catch (const ContractError& e) {
        err << "invalid argument: " << e.what() << '\n';
    } catch (const nlohmann::json::exception& e) {
        err << "invalid JSON: " << e.what() << '\n';
    } catch (const std::filesystem::filesystem_error& e) {
        err << "file system error: " << e.what() << '\n';
    }
    return kInputError;
}

// ---------------------------------------------------------------- synthesize

struct SynthesizeOptions {
    int households = 20;
    int archetypes = 3;
    double noise = 0.05;
    std::uint64_t seed = 1;
    int days = 90;
    std::filesystem::path out;
};

inline int cmd_synthesize(const SynthesizeOptions& o, std::ostream& log, std::ostream& err) {
    return guarded(err, [&] {
        require(!o.out.empty(), "--out is required");
        SyntheticConfig cfg;
        cfg.households = o.households;
        cfg.archetypes = o.archetypes;
        cfg.noise = o.noise;
        cfg.seed = o.seed;
        cfg.days = o.days;
        const auto data = generate_synthetic_households(cfg);
        std::vector<std::pair<std::string, std::vector<RawReading>>> meters;
        std::ostringstream labels;
        labels << "household_id,archetype\n";
        for (const auto& h : data.households) {
            meters.emplace_back(h.id, h.readings);
            labels << h.id << ',' << h.archetype << '\n';
        }
        std::ostringstream m, w;
        write_meter_csv(m, meters);
        write_weather_csv(w, data.weather);
        write_file(o.out / "meters.csv", m.str());
        write_file(o.out / "weather.csv", w.str());
        write_file(o.out / "archetypes.csv", labels.str());
        log << "wrote " << data.households.size() << " households over " << o.days << " days to " << o.out.string()
            << '\n';
        return int{kSuccess};
    });
}

// ------------------------------------------------------------------- prepare

enum class WeatherChoice { both, with, without };

inline std::optional<WeatherChoice> parse_weather_choice(std::string_view s) {
    if (s == "both") return WeatherChoice::both;
    if (s == "with" || s == "+weather") return WeatherChoice::with;
    if (s == "without" || s == "-weather") return WeatherChoice::without;
    return std::nullopt;
}

inline std::vector<Variant> requested_variants(std::span<const int> ks, WeatherChoice w) {
    std::vector<Variant> out;
    for (const auto& v : all_variants()) {
        const bool k_wanted = std::find(ks.begin(), ks.end(), v.k) != ks.end();
        const bool w_wanted = w == WeatherChoice::both || (w == WeatherChoice::with) == v.weather;
        if (k_wanted && w_wanted) out.push_back(v);
    }
    return out;
}

struct PreparedData {
    std::vector<PreparedVariant> variants;
    CacheInputs inputs;
};

// Ingest, clean, join weather, normalise and window the requested variants.
inline PreparedData prepare_from_csv(const std::filesystem::path& meters, const std::filesystem::path& weather,
                                     std::span<const Variant> variants) {
    PreparedData out;
    const bool need_weather =
        std::any_of(variants.begin(), variants.end(), [](const Variant& v) { return v.weather; });
    if (need_weather && (weather.empty() || !std::filesystem::exists(weather)))
        throw InputError("a +weather variant was requested but no weather file was found" +
                         (weather.empty() ? std::string() : " at " + weather.string()));
    if (!std::filesystem::exists(meters)) throw InputError("meter file not found: " + meters.string());
    out.inputs.meters_digest = file_digest(meters);
    const auto ingest = ingest_lcl_csv(meters.string());
    if (ingest.records.empty()) throw InputError("meter file " + meters.string() + " has no usable readings");
    if (ingest.skipped)
        out.inputs.warnings.push_back("skipped " + std::to_string(ingest.skipped) + " of " +
                                      std::to_string(ingest.rows) + " meter rows that failed to parse");
    std::vector<HourlySeries> series;
    for (const auto& [id, readings] : ingest.records) {
        series.push_back(clean_readings(readings, id));
        if (series.back().filled_fraction() > HourlySeries::kFillWarningFraction)
            out.inputs.warnings.push_back("household " + id + ": " +
                                          format_number(100.0 * series.back().filled_fraction(), 3) +
                                          "% of hours forward-filled");
    }
    std::vector<WeatherRecord> weather_rows;
    if (need_weather) {
        out.inputs.weather_digest = file_digest(weather);
        const auto w = ingest_weather_csv(weather.string());
        if (w.records.empty()) throw InputError("weather file " + weather.string() + " has no usable rows");
        if (w.skipped)
            out.inputs.warnings.push_back("skipped " + std::to_string(w.skipped) + " of " + std::to_string(w.rows) +
                                          " weather rows that failed to parse");
        weather_rows = w.records;
    }
    for (const auto& v : variants) {
        std::vector<DesignMatrix> matrices;
        for (const auto& s : series)
            matrices.push_back(v.weather ? build_design_matrix(s, std::span<const WeatherRecord>(weather_rows))
                                         : build_design_matrix(s));
        out.variants.push_back(prepare_variant(matrices, v.k));
    }
    return out;
}

struct PrepareOptions {
    std::filesystem::path meters;
    std::filesystem::path weather;  // optional
    std::filesystem::path out;
    std::vector<int> ks{6, 12, 24};
    std::string weather_variant = "both";
};

inline int cmd_prepare(const PrepareOptions& o, std::ostream& log, std::ostream& err) {
    return guarded(err, [&] {
        if (o.meters.empty() || o.out.empty()) throw InputError("--meters and --out are required");
        const auto choice = parse_weather_choice(o.weather_variant);
        if (!choice) throw InputError("--weather-variant must be both, with or without");
        if (o.ks.empty()) throw InputError("--k needs at least one sequence length");
        for (int k : o.ks)
            if (k != 6 && k != 12 && k != 24) throw InputError("--k values must be 6, 12 or 24");
        const auto variants = requested_variants(o.ks, *choice);
        const auto prepared = prepare_from_csv(o.meters, o.weather, variants);
        const auto manifest = write_cache(o.out, prepared.variants, prepared.inputs);
        for (const auto& w : manifest.at("warnings")) log << "warning: " << w.get<std::string>() << '\n';
        log << "prepared " << prepared.variants.size() << " variants x " << prepared.variants.front().households.size()
            << " households in " << o.out.string() << '\n';
        return int{kSuccess};
    });
}

// ----------------------------------------------------------------------- run

struct RunOptions {
    std::filesystem::path config;
    std::filesystem::path out;
    int jobs = 1;
};

namespace detail {

class CollectingSink : public RecordSink {
public:
    void record(const RoundRecord& r) override {
        std::lock_guard lock(mutex_);
        records_.push_back(r);
    }
    std::vector<RoundRecord> take() {
        std::lock_guard lock(mutex_);
        return std::move(records_);
    }

private:
    std::mutex mutex_;
    std::vector<RoundRecord> records_;
};

inline std::string log_csv(std::span<const RoundRecord> log) {
    std::ostringstream out;
    out << "phase,index,cluster,participants,validation_rmse,samples,cumulative_samples\n";
    char buf[32];
    for (const auto& r : log) {
        std::string ids;
        for (const auto& p : r.participants) ids += (ids.empty() ? "" : ";") + p;
        std::snprintf(buf, sizeof buf, "%.17g", r.validation_rmse);
        out << r.phase << ',' << r.index << ',' << r.cluster << ',' << ids << ',' << buf << ',' << r.samples << ','
            << r.cumulative_samples << '\n';
    }
    return out.str();
}

inline json model_json(const NamedModel& m, int feature_dim) {
    return {{"name", m.name},
            {"feature_dim", feature_dim},
            {"hidden", kHiddenUnits},
            {"parameters", std::vector<double>(m.params.data(), m.params.data() + m.params.size())}};
}

inline std::vector<PreparedVariant> load_variants(const RunConfig& rc) {
    std::vector<PreparedVariant> out;
    switch (rc.data.kind) {
        case DataSource::Kind::cache:
            for (const auto& v : rc.variants) out.push_back(read_cache(rc.data.cache_dir, v));
            break;
        case DataSource::Kind::csv:
            out = prepare_from_csv(rc.data.meters, rc.data.weather, rc.variants).variants;
            break;
        case DataSource::Kind::synthetic: {
            const auto data = generate_synthetic_households(rc.data.synthetic);
            for (const auto& v : rc.variants) out.push_back(prepare_variant(design_matrices(data, v.weather), v.k));
            break;
        }
    }
    return out;
}

inline std::string entry_id(const ScenarioConfig& c, std::size_t index) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "%02zu", index);
    return std::string(to_string(c.kind)) + "_" + c.variant.slug() + "_" + buf;
}

// Key under which a federated base run can be shared with its fine-tuned twin.
inline std::string base_key(ScenarioConfig c) {
    if (c.kind == ScenarioKind::fl_lft) c.kind = ScenarioKind::fl;
    if (c.kind == ScenarioKind::flhc_lft) c.kind = ScenarioKind::flhc;
    c.training.caps.lft_epochs = 0;
    c.training.sink = nullptr;
    return to_json_value(c).dump();
}

}  // namespace detail

inline std::string run_id_of(const RunConfig& rc) {
    return hex_digest(fnv1a64(rc.snapshot.dump())).substr(0, 12);
}

inline int cmd_run(const RunOptions& o, std::ostream& log, std::ostream& err,
                   std::filesystem::path* run_dir_out = nullptr) {
    namespace fs = std::filesystem;
    return guarded(err, [&] {
        const auto started = std::chrono::steady_clock::now();
        if (o.config.empty() || o.out.empty()) throw InputError("--config and --out are required");
        if (o.jobs < 1) throw InputError("--jobs must be at least 1");
        json raw;
        try {
            raw = json::parse(read_file(o.config));
        } catch (const nlohmann::json::exception& e) {
            throw InputError("config " + o.config.string() + " is not valid JSON: " + e.what());
        }
        RunConfig rc = load_run_config(raw, o.config.parent_path(), seed_from_environment());
        rc.training.jobs = o.jobs;
        const std::string run_id = run_id_of(rc);
        const fs::path dir = o.out / run_id;
        if (run_dir_out) *run_dir_out = dir;
        fs::create_directories(dir);

        const auto datasets = detail::load_variants(rc);
        json digests = json::object();
        for (const auto& p : datasets) digests[p.variant.name()] = dataset_digest(p);

        std::vector<ResultRow> rows;
        json runs = json::array();
        std::vector<std::string> files;
        std::map<std::string, ScenarioResult> bases;
        for (const auto& data : datasets) {
            for (ScenarioKind kind : kAllScenarios) {
                if (std::find(rc.scenarios.begin(), rc.scenarios.end(), kind) == rc.scenarios.end()) continue;
                const auto entries = sweep_entries(rc, kind, data.variant);
                std::vector<RunReport> reports;
                std::vector<std::vector<NamedModel>> models;
                for (std::size_t i = 0; i < entries.size(); ++i) {
                    const std::string id = detail::entry_id(entries[i], i);
                    detail::CollectingSink sink;
                    ScenarioConfig cfg = entries[i];
                    cfg.training.sink = &sink;
                    ScenarioResult result;
                    try {
                        if (uses_fine_tuning(kind) && bases.count(detail::base_key(cfg))) {
                            result = fine_tune_from(bases.at(detail::base_key(cfg)), data.households, cfg);
                        } else {
                            ScenarioConfig base = cfg;
                            if (uses_fine_tuning(kind)) base.kind = uses_clustering(kind) ? ScenarioKind::flhc : ScenarioKind::fl;
                            ScenarioResult first = run_scenario(data, base);
                            if (kind == ScenarioKind::fl || kind == ScenarioKind::flhc || uses_fine_tuning(kind))
                                bases[detail::base_key(cfg)] = first;
                            result = uses_fine_tuning(kind) ? fine_tune_from(std::move(first), data.households, cfg)
                                                            : std::move(first);
                        }
                    } catch (const NumericalFailure&) {
                        const auto partial = sink.take();
                        write_file(dir / "logs" / (id + ".failed.csv"), detail::log_csv(partial));
                        throw;
                    }
                    result.report.config = entries[i];
                    result.report.energy_span = data.normalizer.energy_span();
                    const std::string rel = "logs/" + id + ".csv";
                    write_file(dir / rel, detail::log_csv(result.report.log));
                    files.push_back(rel);
                    log << id << ": mean test RMSE " << format_sig(result.report.mean_test_rmse) << ", "
                        << result.report.total_samples << " samples\n";
                    reports.push_back(std::move(result.report));
                    models.push_back(std::move(result.models));
                }
                const std::size_t chosen = select_best(reports);
                rows.push_back(summarize(reports));
                for (std::size_t i = 0; i < reports.size(); ++i)
                    runs.push_back({{"entry", detail::entry_id(entries[i], i)},
                                    {"selected", i == chosen},
                                    {"data_digest", digests[data.variant.name()]},
                                    {"report", to_json_value(reports[i])}});
                for (const auto& m : models[chosen]) {
                    const std::string rel = "models/" + std::string(to_string(kind)) + "_" + data.variant.slug() +
                                            "/" + safe_file_name(m.name) + ".json";
                    write_file(dir / rel, detail::model_json(m, data.variant.feature_dim()).dump() + "\n");
                    files.push_back(rel);
                }
            }
        }

        json doc{{"tool_version", kToolVersion}, {"run_id", run_id}, {"seed", rc.seed}, {"config", rc.snapshot},
                 {"data_digests", digests}, {"runs", runs}};
        emit_report(dir, rows, doc);
        files.insert(files.begin(), {"results.csv", "results.json", "tables.txt"});

        json listed = json::array();
        for (const auto& f : files) listed.push_back({{"path", f}, {"digest", file_digest(dir / f)}});
        const double seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
        json manifest{{"tool_version", kToolVersion},
                      {"run_id", run_id},
                      {"seed", rc.seed},
                      {"config", rc.snapshot},
                      {"data_digests", digests},
                      {"files", listed},
                      {"duration_seconds", seconds}};
        write_file(dir / "manifest.json", manifest.dump(2) + "\n");
        log << "results in " << dir.string() << '\n';
        return int{kSuccess};
    });
}

// -------------------------------------------------------------------- report

struct ReportOptions {
    std::vector<std::filesystem::path> run_dirs;
    std::filesystem::path out;
};

namespace detail {

// A run directory, or a directory whose immediate subdirectories are runs.
inline std::vector<std::filesystem::path> expand_run_dirs(const std::filesystem::path& p) {
    namespace fs = std::filesystem;
    if (fs::exists(p / "results.json")) return {p};
    std::vector<fs::path> out;
    if (fs::is_directory(p))
        for (const auto& e : fs::directory_iterator(p))
            if (e.is_directory() && fs::exists(e.path() / "results.json")) out.push_back(e.path());
    std::sort(out.begin(), out.end());
    if (out.empty()) throw InputError("no results.json under " + p.string());
    return out;
}

}  // namespace detail

inline int cmd_report(const ReportOptions& o, std::ostream& log, std::ostream& err) {
    return guarded(err, [&] {
        if (o.run_dirs.empty() || o.out.empty()) throw InputError("report needs run directories and --out");
        std::vector<ResultRow> rows;
        std::map<std::string, std::string> digests;
        std::set<std::pair<ScenarioKind, Variant>> seen;
        json sources = json::array();
        for (const auto& given : o.run_dirs)
            for (const auto& dir : detail::expand_run_dirs(given)) {
                json doc;
                try {
                    doc = json::parse(read_file(dir / "results.json"));
                } catch (const nlohmann::json::exception& e) {
                    throw InputError(dir.string() + "/results.json is not valid JSON: " + e.what());
                }
                if (doc.contains("data_digests"))
                    for (const auto& [variant, digest] : doc.at("data_digests").items()) {
                        const auto d = digest.get<std::string>();
                        const auto [it, fresh] = digests.emplace(variant, d);
                        if (!fresh && it->second != d)
                            throw InputError("runs disagree on the data behind variant " + variant + " (" + it->second +
                                             " vs " + d + ")");
                    }
                for (const auto& r : doc.at("results")) {
                    const ResultRow row = result_row_from_json(r);
                    if (!seen.emplace(row.scenario, row.variant).second)
                        throw InputError("more than one result for " + std::string(to_string(row.scenario)) + " " +
                                         row.variant.name());
                    rows.push_back(row);
                }
                sources.push_back({{"run_id", doc.value("run_id", dir.filename().string())},
                                   {"results_digest", file_digest(dir / "results.json")}});
            }
        std::stable_sort(rows.begin(), rows.end(), [](const ResultRow& a, const ResultRow& b) {
            const auto order = [](ScenarioKind k) {
                return static_cast<int>(std::find(std::begin(kAllScenarios), std::end(kAllScenarios), k) -
                                        std::begin(kAllScenarios));
            };
            if (variant_column(a.variant) != variant_column(b.variant))
                return variant_column(a.variant) < variant_column(b.variant);
            return order(a.scenario) < order(b.scenario);
        });
        json doc{{"tool_version", kToolVersion}, {"sources", sources}, {"data_digests", digests}};
        const auto files = emit_report(o.out, rows, doc);
        log << read_file(files.tables);
        return int{kSuccess};
    });
}

}  // namespace fedcast::cli
