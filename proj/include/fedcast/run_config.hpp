#pragma once

// JSON run configuration and its expansion into sweep entries.
//
// {
//   "seed": 42,
//   "data": {"cache": "prepared/"}            (or {"meters": ..., "weather": ...}
//                                               or {"synthetic": {"households": 20, ...}})
//   "variants": ["k12+weather"] | "all",
//   "scenarios": ["fl", "flhc_lft"] | "all",
//   "fl": {"client_fraction": [0.1, 0.2, 0.3], "local_epochs": [1, 3, 5]},
//   "hc": {"threshold": [0.8, 1.4, 2.0], "linkage": ["ward"], "rounds_before": [3, 5, 10]},
//   "training": {"batch_size": 256, "learning_rate": 0.001, "patience": 10,
//                "caps": {"centralised_epochs": 500, ...}}
// }
//
// Any hyperparameter may be a scalar or a list; lists are swept. Relative
// paths resolve against the config file's directory.

#include <json.hpp>

#include <cstdlib>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "fedcast/clustering.hpp"
#include "fedcast/data_pipeline.hpp"
#include "fedcast/errors.hpp"
#include "fedcast/federation.hpp"
#include "fedcast/synthetic.hpp"

namespace fedcast {

struct DataSource {
    enum class Kind { cache, csv, synthetic } kind = Kind::synthetic;
    std::filesystem::path cache_dir;
    std::filesystem::path meters;
    std::filesystem::path weather;  // empty when absent
    SyntheticConfig synthetic;
};

struct RunConfig {
    nlohmann::ordered_json snapshot;  // the parsed file with the effective seed
    std::uint64_t seed = 1;
    DataSource data;
    std::vector<Variant> variants;
    std::vector<ScenarioKind> scenarios;
    std::vector<double> client_fractions{0.1};
    std::vector<int> local_epochs{3};
    std::vector<double> hc_thresholds{1.4};
    std::vector<Linkage> hc_linkages{Linkage::ward};
    std::vector<int> hc_rounds{3};
    TrainingSettings training;
};

namespace detail {

using cjson = nlohmann::ordered_json;

template <typename T>
std::vector<T> scalar_or_list(const cjson& j, const char* key, std::vector<T> fallback) {
    if (!j.contains(key)) return fallback;
    const auto& v = j.at(key);
    std::vector<T> out;
    if (v.is_array())
        for (const auto& x : v) out.push_back(x.get<T>());
    else
        out.push_back(v.get<T>());
    if (out.empty()) throw InputError(std::string("config list '") + key + "' is empty");
    return out;
}

inline Variant parse_variant(const std::string& s) {
    for (const auto& v : all_variants())
        if (v.name() == s || v.slug() == s) return v;
    throw InputError("unknown variant '" + s + "' (expected e.g. k12+weather or k24-weather)");
}

inline void reject_unknown_keys(const cjson& j, std::initializer_list<const char*> allowed, const std::string& where) {
    for (const auto& [key, _] : j.items()) {
        bool ok = false;
        for (const char* a : allowed) ok |= key == a;
        if (!ok) throw InputError("unknown key '" + key + "' in " + where);
    }
}

}  // namespace detail

inline RunConfig parse_run_config(const nlohmann::ordered_json& j, const std::filesystem::path& base_dir,
                                  std::optional<std::uint64_t> seed_override = std::nullopt) {
    using detail::cjson;
    RunConfig c;
    try {
        if (!j.is_object()) throw InputError("config must be a JSON object");
        detail::reject_unknown_keys(j, {"seed", "data", "variants", "scenarios", "fl", "hc", "training"}, "config");
        c.seed = seed_override ? *seed_override : j.value("seed", std::uint64_t{1});
        c.snapshot = j;
        c.snapshot["seed"] = c.seed;

        const cjson& data = j.at("data");
        const auto resolve = [&](const std::string& p) {
            const std::filesystem::path path(p);
            return path.is_absolute() ? path : base_dir / path;
        };
        if (data.contains("cache")) {
            c.data.kind = DataSource::Kind::cache;
            c.data.cache_dir = resolve(data.at("cache").get<std::string>());
        } else if (data.contains("meters")) {
            c.data.kind = DataSource::Kind::csv;
            c.data.meters = resolve(data.at("meters").get<std::string>());
            if (data.contains("weather")) c.data.weather = resolve(data.at("weather").get<std::string>());
        } else if (data.contains("synthetic")) {
            const cjson& s = data.at("synthetic");
            detail::reject_unknown_keys(s, {"households", "archetypes", "noise", "seed", "days"}, "data.synthetic");
            c.data.kind = DataSource::Kind::synthetic;
            auto& sc = c.data.synthetic;
            sc.households = s.value("households", sc.households);
            sc.archetypes = s.value("archetypes", sc.archetypes);
            sc.noise = s.value("noise", sc.noise);
            sc.seed = s.value("seed", sc.seed);
            sc.days = s.value("days", sc.days);
        } else {
            throw InputError("config data section needs 'cache', 'meters' or 'synthetic'");
        }

        const auto variants = j.value("variants", cjson("all"));
        if (variants.is_string() && variants.get<std::string>() == "all")
            c.variants = all_variants();
        else
            for (const auto& s : detail::scalar_or_list<std::string>(j, "variants", {}))
                c.variants.push_back(detail::parse_variant(s));

        const auto scenarios = j.value("scenarios", cjson("all"));
        if (scenarios.is_string() && scenarios.get<std::string>() == "all")
            c.scenarios.assign(std::begin(kAllScenarios), std::end(kAllScenarios));
        else
            for (const auto& s : detail::scalar_or_list<std::string>(j, "scenarios", {})) {
                const auto k = parse_scenario(s);
                if (!k) throw InputError("unknown scenario '" + s + "'");
                c.scenarios.push_back(*k);
            }

        if (j.contains("fl")) {
            const cjson& fl = j.at("fl");
            detail::reject_unknown_keys(fl, {"client_fraction", "local_epochs"}, "fl");
            c.client_fractions = detail::scalar_or_list<double>(fl, "client_fraction", c.client_fractions);
            c.local_epochs = detail::scalar_or_list<int>(fl, "local_epochs", c.local_epochs);
        }
        if (j.contains("hc")) {
            const cjson& hc = j.at("hc");
            detail::reject_unknown_keys(hc, {"threshold", "linkage", "rounds_before"}, "hc");
            c.hc_thresholds = detail::scalar_or_list<double>(hc, "threshold", c.hc_thresholds);
            c.hc_rounds = detail::scalar_or_list<int>(hc, "rounds_before", c.hc_rounds);
            c.hc_linkages.clear();
            for (const auto& s : detail::scalar_or_list<std::string>(hc, "linkage", {"ward"})) {
                const auto l = parse_linkage(s);
                if (!l) throw InputError("unknown linkage '" + s + "'");
                c.hc_linkages.push_back(*l);
            }
        }
        if (j.contains("training")) {
            const cjson& t = j.at("training");
            detail::reject_unknown_keys(t, {"batch_size", "learning_rate", "patience", "caps"}, "training");
            c.training.batch_size = t.value("batch_size", c.training.batch_size);
            c.training.learning_rate = t.value("learning_rate", c.training.learning_rate);
            c.training.patience = t.value("patience", c.training.patience);
            if (t.contains("caps")) {
                const cjson& caps = t.at("caps");
                detail::reject_unknown_keys(
                    caps, {"centralised_epochs", "localised_epochs", "fl_rounds", "flhc_rounds", "lft_epochs"},
                    "training.caps");
                auto& cp = c.training.caps;
                cp.centralised_epochs = caps.value("centralised_epochs", cp.centralised_epochs);
                cp.localised_epochs = caps.value("localised_epochs", cp.localised_epochs);
                cp.fl_rounds = caps.value("fl_rounds", cp.fl_rounds);
                cp.flhc_rounds = caps.value("flhc_rounds", cp.flhc_rounds);
                cp.lft_epochs = caps.value("lft_epochs", cp.lft_epochs);
            }
        }
    } catch (const nlohmann::json::exception& e) {
        throw InputError(std::string("invalid config: ") + e.what());
    }
    if (c.variants.empty()) throw InputError("config selects no variants");
    if (c.scenarios.empty()) throw InputError("config selects no scenarios");
    return c;
}

inline std::vector<ScenarioConfig> sweep_entries(const RunConfig& rc, ScenarioKind kind, const Variant& variant);

// Parses and checks every sweep entry up front, so a bad value fails before
// any training starts.
inline RunConfig load_run_config(const nlohmann::ordered_json& j, const std::filesystem::path& base_dir,
                                 std::optional<std::uint64_t> seed_override = std::nullopt) {
    RunConfig c = parse_run_config(j, base_dir, seed_override);
    try {
        for (ScenarioKind k : c.scenarios) sweep_entries(c, k, c.variants.front());
    } catch (const ContractError& e) {
        throw InputError(std::string("invalid config: ") + e.what());
    }
    return c;
}

// FEDCAST_SEED, when set, replaces the config seed.
inline std::optional<std::uint64_t> seed_from_environment() {
    const char* s = std::getenv("FEDCAST_SEED");
    if (!s || !*s) return std::nullopt;
    char* end = nullptr;
    const auto v = std::strtoull(s, &end, 10);
    if (*end != '\0') throw InputError(std::string("FEDCAST_SEED is not an unsigned integer: ") + s);
    return v;
}

// Every ScenarioConfig a run config asks for, for one scenario and variant.
inline std::vector<ScenarioConfig> sweep_entries(const RunConfig& rc, ScenarioKind kind, const Variant& variant) {
    ScenarioConfig base;
    base.kind = kind;
    base.variant = variant;
    base.seed = rc.seed;
    base.training = rc.training;
    std::vector<ScenarioConfig> out;
    if (!uses_federation(kind)) {
        out.push_back(base);
    } else if (uses_clustering(kind)) {
        base.client_fraction = kHcClientFraction;
        base.local_epochs = kHcLocalEpochs;
        for (double t : rc.hc_thresholds)
            for (Linkage l : rc.hc_linkages)
                for (int n : rc.hc_rounds) {
                    auto c = base;
                    c.hc = HcSettings{t, l, n};
                    out.push_back(c);
                }
    } else {
        for (double f : rc.client_fractions)
            for (int e : rc.local_epochs) {
                auto c = base;
                c.client_fraction = f;
                c.local_epochs = e;
                out.push_back(c);
            }
    }
    for (const auto& c : out) c.validate();
    return out;
}

}  // namespace fedcast
