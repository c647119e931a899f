#pragma once

// Agglomerative hierarchical clustering of client parameter updates.
//
// Euclidean input distances; linkage distances maintained with the
// Lance-Williams recurrences. Ward runs on squared distances and its merge
// height is the square root of the recurrence value, so for two singletons
// every linkage reports the plain Euclidean distance and one threshold grid
// applies to all four.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "fedcast/errors.hpp"
#include "fedcast/lstm.hpp"

namespace fedcast {

enum class Linkage { ward, average, complete, single };

inline std::string_view to_string(Linkage l) {
    switch (l) {
        case Linkage::ward: return "ward";
        case Linkage::average: return "average";
        case Linkage::complete: return "complete";
        case Linkage::single: return "single";
    }
    return "unknown";
}

inline std::optional<Linkage> parse_linkage(std::string_view s) {
    for (Linkage l : {Linkage::ward, Linkage::average, Linkage::complete, Linkage::single})
        if (to_string(l) == s) return l;
    return std::nullopt;
}

inline constexpr Linkage kAllLinkages[] = {Linkage::ward, Linkage::average, Linkage::complete, Linkage::single};

inline Eigen::MatrixXd pairwise_euclidean(std::span<const ParameterVector> updates) {
    require(updates.size() >= 2, "need at least two updates to cluster");
    const auto n = static_cast<Eigen::Index>(updates.size());
    for (const auto& u : updates) require(u.size() == updates.front().size(), "update lengths differ");
    Eigen::MatrixXd d = Eigen::MatrixXd::Zero(n, n);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = i + 1; j < n; ++j)
            d(i, j) = d(j, i) = (updates[static_cast<std::size_t>(i)] - updates[static_cast<std::size_t>(j)]).norm();
    return d;
}

struct MergeStep {
    std::vector<int> left;
    std::vector<int> right;
    double distance = 0.0;
};

struct ClusterAssignment {
    std::vector<int> labels;  // client index -> cluster id
    int cluster_count = 0;
    std::vector<MergeStep> merges;

    std::vector<int> members(int cluster) const {
        std::vector<int> out;
        for (std::size_t i = 0; i < labels.size(); ++i)
            if (labels[i] == cluster) out.push_back(static_cast<int>(i));
        return out;
    }
};

// Cluster ids are contiguous and ordered by smallest member index.
inline ClusterAssignment relabel(std::span<const int> roots) {
    ClusterAssignment a;
    std::map<int, int> ids;
    for (int r : roots) {
        const auto [it, fresh] = ids.emplace(r, a.cluster_count);
        if (fresh) ++a.cluster_count;
        a.labels.push_back(it->second);
    }
    return a;
}

inline void validate_distances(const Eigen::MatrixXd& d) {
    require(d.rows() == d.cols() && d.rows() >= 1, "distance matrix must be square and nonempty");
    require(d.array().isFinite().all(), "distance matrix contains non-finite values");
    require((d.array() >= 0.0).all(), "distance matrix contains negative values");
}

// Merges the closest pair while its linkage distance is <= threshold. Ties
// go to the lexicographically smallest (min id of left, min id of right).
inline ClusterAssignment agglomerate(const Eigen::MatrixXd& distances, Linkage linkage, double threshold) {
    validate_distances(distances);
    require(threshold > 0.0, "clustering threshold must be positive");
    const auto n = static_cast<int>(distances.rows());
    const bool ward = linkage == Linkage::ward;

    // Slot i holds the cluster whose smallest member is i.
    Eigen::MatrixXd link = ward ? Eigen::MatrixXd(distances.array().square()) : distances;
    std::vector<bool> active(static_cast<std::size_t>(n), true);
    std::vector<int> size(static_cast<std::size_t>(n), 1);
    std::vector<std::vector<int>> members(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) members[static_cast<std::size_t>(i)] = {i};
    std::vector<MergeStep> merges;

    const auto height = [ward](double v) { return ward ? std::sqrt(std::max(v, 0.0)) : v; };

    for (int remaining = n; remaining > 1; --remaining) {
        int bi = -1, bj = -1;
        double best = std::numeric_limits<double>::infinity();
        for (int i = 0; i < n; ++i) {
            if (!active[static_cast<std::size_t>(i)]) continue;
            for (int j = i + 1; j < n; ++j) {
                if (!active[static_cast<std::size_t>(j)]) continue;
                if (link(i, j) < best) {
                    best = link(i, j);
                    bi = i;
                    bj = j;
                }
            }
        }
        if (bi < 0 || height(best) > threshold) break;

        const double ni = size[static_cast<std::size_t>(bi)];
        const double nj = size[static_cast<std::size_t>(bj)];
        for (int k = 0; k < n; ++k) {
            if (!active[static_cast<std::size_t>(k)] || k == bi || k == bj) continue;
            const double dki = link(k, bi), dkj = link(k, bj);
            double v = 0.0;
            switch (linkage) {
                case Linkage::single: v = std::min(dki, dkj); break;
                case Linkage::complete: v = std::max(dki, dkj); break;
                case Linkage::average: v = (ni * dki + nj * dkj) / (ni + nj); break;
                case Linkage::ward: {
                    const double nk = size[static_cast<std::size_t>(k)];
                    v = ((ni + nk) * dki + (nj + nk) * dkj - nk * best) / (ni + nj + nk);
                    break;
                }
            }
            link(k, bi) = link(bi, k) = v;
        }
        merges.push_back({members[static_cast<std::size_t>(bi)], members[static_cast<std::size_t>(bj)], height(best)});
        auto& into = members[static_cast<std::size_t>(bi)];
        const auto& from = members[static_cast<std::size_t>(bj)];
        into.insert(into.end(), from.begin(), from.end());
        std::sort(into.begin(), into.end());
        size[static_cast<std::size_t>(bi)] += size[static_cast<std::size_t>(bj)];
        active[static_cast<std::size_t>(bj)] = false;
    }

    std::vector<int> roots(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i)
        if (active[static_cast<std::size_t>(i)])
            for (int m : members[static_cast<std::size_t>(i)]) roots[static_cast<std::size_t>(m)] = i;
    auto result = relabel(roots);
    result.merges = std::move(merges);
    return result;
}

// Adjusted Rand index between two labelings of the same clients.
inline double cluster_quality(std::span<const int> a, std::span<const int> b) {
    require(a.size() == b.size(), "partitions cover different client sets");
    const std::size_t n = a.size();
    if (n < 2) return 1.0;
    const auto choose2 = [](double x) { return x * (x - 1.0) / 2.0; };
    const int ka = *std::max_element(a.begin(), a.end()) + 1;
    const int kb = *std::max_element(b.begin(), b.end()) + 1;
    Eigen::MatrixXd table = Eigen::MatrixXd::Zero(ka, kb);
    for (std::size_t i = 0; i < n; ++i) {
        require(a[i] >= 0 && b[i] >= 0, "cluster labels must be non-negative");
        table(a[i], b[i]) += 1.0;
    }
    double index = 0.0, rows = 0.0, cols = 0.0;
    for (Eigen::Index i = 0; i < table.rows(); ++i)
        for (Eigen::Index j = 0; j < table.cols(); ++j) index += choose2(table(i, j));
    for (Eigen::Index i = 0; i < table.rows(); ++i) rows += choose2(table.row(i).sum());
    for (Eigen::Index j = 0; j < table.cols(); ++j) cols += choose2(table.col(j).sum());
    const double expected = rows * cols / choose2(static_cast<double>(n));
    const double maximum = 0.5 * (rows + cols);
    if (maximum == expected) return index == maximum ? 1.0 : 0.0;
    return (index - expected) / (maximum - expected);
}

}  // namespace fedcast
