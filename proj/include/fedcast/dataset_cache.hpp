#pragma once

// On-disk cache of prepared variants: one CSV of normalised rows per
// household and variant, plus manifest.json with normalisers, split
// boundaries and digests. Rows are written with 17 significant digits so a
// reload is bit-identical to the in-memory preparation.

#include <json.hpp>

#include <cctype>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>
#include <string>
#include <vector>

#include "fedcast/csv_io.hpp"
#include "fedcast/data_pipeline.hpp"
#include "fedcast/errors.hpp"
#include "fedcast/random.hpp"

namespace fedcast {

namespace fs = std::filesystem;

inline std::string hex_digest(std::uint64_t h) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

inline std::string read_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw InputError("cannot read " + p.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline std::string file_digest(const fs::path& p) { return hex_digest(fnv1a64(read_file(p))); }

inline void write_file(const fs::path& p, std::string_view content) {
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    if (!out) throw InputError("cannot write " + p.string());
    out << content;
    if (!out) throw InputError("failed writing " + p.string());
}

namespace detail {

inline std::uint64_t hash_set(std::uint64_t h, const SequenceSet& s) {
    const auto& m = s.rows();
    const auto* bytes = reinterpret_cast<const char*>(m.data());
    h = fnv1a64(std::string_view(bytes, static_cast<std::size_t>(m.size()) * sizeof(double)), h);
    const auto* t = reinterpret_cast<const char*>(s.times().data());
    return fnv1a64(std::string_view(t, s.times().size() * sizeof(std::int64_t)), h);
}

}  // namespace detail

// Digest of the normalised, windowed data a scenario actually trains on.
inline std::string dataset_digest(const PreparedVariant& p) {
    std::uint64_t h = fnv1a64(p.variant.name());
    for (const auto& hh : p.households) {
        h = fnv1a64(hh.household_id, h);
        h = detail::hash_set(h, hh.train);
        h = detail::hash_set(h, hh.validation);
        h = detail::hash_set(h, hh.test);
    }
    return hex_digest(h);
}

inline std::string safe_file_name(std::string_view id) {
    std::string s;
    for (char c : id) s += (std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_') ? c : '_';
    return s.empty() ? "_" : s;
}

inline std::string household_rows_csv(const HouseholdDataset& h) {
    std::ostringstream out;
    out << "time_index";
    for (Eigen::Index d = 0; d < h.variant.feature_dim(); ++d) out << ',' << feature_name(d);
    out << '\n';
    char buf[32];
    const auto emit = [&](const SequenceSet& s) {
        for (Eigen::Index c = 0; c < s.rows().cols(); ++c) {
            out << s.times()[static_cast<std::size_t>(c)];
            for (Eigen::Index d = 0; d < s.rows().rows(); ++d) {
                std::snprintf(buf, sizeof buf, "%.17g", s.rows()(d, c));
                out << ',' << buf;
            }
            out << '\n';
        }
    };
    emit(h.train);
    emit(h.validation);
    emit(h.test);
    return out.str();
}

struct CacheInputs {
    std::string meters_digest;
    std::string weather_digest;  // empty when no weather file was used
    std::vector<std::string> warnings;
};

// Writes every variant under `dir` and returns the manifest it wrote.
inline nlohmann::ordered_json write_cache(const fs::path& dir, const std::vector<PreparedVariant>& variants,
                                          const CacheInputs& inputs) {
    using json = nlohmann::ordered_json;
    json manifest;
    manifest["format"] = "fedcast-cache-1";
    manifest["inputs"] = {{"meters_digest", inputs.meters_digest},
                          {"weather_digest", inputs.weather_digest.empty() ? json(nullptr) : json(inputs.weather_digest)}};
    json vs = json::array(), entries = json::array();
    std::vector<std::string> warnings = inputs.warnings;
    for (const auto& p : variants) {
        json norm{{"min", std::vector<double>(p.normalizer.min.data(), p.normalizer.min.data() + p.normalizer.min.size())},
                  {"max", std::vector<double>(p.normalizer.max.data(), p.normalizer.max.data() + p.normalizer.max.size())}};
        for (const auto& w : p.normalizer.warnings) warnings.push_back(p.variant.name() + ": " + w);
        vs.push_back({{"name", p.variant.name()},
                      {"k", p.variant.k},
                      {"weather", p.variant.weather},
                      {"normalizer", norm},
                      {"energy_span_kwh", p.normalizer.energy_span()},
                      {"digest", dataset_digest(p)}});
        for (const auto& h : p.households) {
            const std::string rel = p.variant.slug() + "/" + safe_file_name(h.household_id) + ".csv";
            const std::string body = household_rows_csv(h);
            write_file(dir / rel, body);
            entries.push_back({{"variant", p.variant.name()},
                               {"household_id", h.household_id},
                               {"file", rel},
                               {"rows", h.split.rows},
                               {"train_end", h.split.train_end},
                               {"validation_end", h.split.validation_end},
                               {"digest", hex_digest(fnv1a64(body))}});
        }
    }
    manifest["variants"] = vs;
    manifest["datasets"] = entries;
    manifest["warnings"] = warnings;
    write_file(dir / "manifest.json", manifest.dump(2) + "\n");
    return manifest;
}

inline nlohmann::ordered_json read_manifest(const fs::path& dir) {
    const auto text = read_file(dir / "manifest.json");
    try {
        return nlohmann::ordered_json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw InputError("malformed cache manifest in " + dir.string() + ": " + e.what());
    }
}

inline std::vector<Variant> cached_variants(const fs::path& dir) {
    std::vector<Variant> out;
    for (const auto& v : read_manifest(dir).at("variants")) out.push_back({v.at("k").get<int>(), v.at("weather").get<bool>()});
    return out;
}

// Reloads one variant; file digests are checked against the manifest.
inline PreparedVariant read_cache(const fs::path& dir, const Variant& variant) {
    const auto manifest = read_manifest(dir);
    PreparedVariant out;
    out.variant = variant;
    bool found = false;
    try {
        for (const auto& v : manifest.at("variants")) {
            if (v.at("name").get<std::string>() != variant.name()) continue;
            const auto mn = v.at("normalizer").at("min").get<std::vector<double>>();
            const auto mx = v.at("normalizer").at("max").get<std::vector<double>>();
            out.normalizer.min = Eigen::Map<const Eigen::VectorXd>(mn.data(), static_cast<Eigen::Index>(mn.size()));
            out.normalizer.max = Eigen::Map<const Eigen::VectorXd>(mx.data(), static_cast<Eigen::Index>(mx.size()));
            found = true;
        }
        if (!found) throw InputError("cache in " + dir.string() + " has no variant " + variant.name());
        const int d = variant.feature_dim();
        for (const auto& e : manifest.at("datasets")) {
            if (e.at("variant").get<std::string>() != variant.name()) continue;
            const auto body = read_file(dir / e.at("file").get<std::string>());
            if (hex_digest(fnv1a64(body)) != e.at("digest").get<std::string>())
                throw InputError("cache file " + e.at("file").get<std::string>() + " does not match its digest");
            const SplitRanges split{e.at("train_end").get<std::size_t>(), e.at("validation_end").get<std::size_t>(),
                                    e.at("rows").get<std::size_t>()};
            Eigen::MatrixXd m(d, static_cast<Eigen::Index>(split.rows));
            std::vector<std::int64_t> times;
            std::istringstream in(body);
            std::string line;
            std::getline(in, line);  // header
            Eigen::Index c = 0;
            while (std::getline(in, line)) {
                if (line.empty()) continue;
                const auto fields = csv::split(line);
                if (static_cast<int>(fields.size()) != d + 1 || c >= m.cols())
                    throw InputError("malformed cache row in " + e.at("file").get<std::string>());
                times.push_back(std::stoll(std::string(fields[0])));
                for (int r = 0; r < d; ++r) {
                    const auto v = csv::parse_double(fields[static_cast<std::size_t>(r) + 1]);
                    if (!v) throw InputError("malformed cache value in " + e.at("file").get<std::string>());
                    m(r, c) = *v;
                }
                ++c;
            }
            if (c != m.cols()) throw InputError("cache file " + e.at("file").get<std::string>() + " is truncated");
            out.households.push_back(
                assemble_household(e.at("household_id").get<std::string>(), variant, split, m, times));
        }
    } catch (const nlohmann::json::exception& e) {
        throw InputError("malformed cache manifest in " + dir.string() + ": " + e.what());
    }
    if (out.households.empty()) throw InputError("cache in " + dir.string() + " has no households for " + variant.name());
    return out;
}

}  // namespace fedcast
