#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>

#include "clustering_oracle.hpp"
#include "fedcast/clustering.hpp"

using namespace fedcast;
using testing_support::oracle_agglomerate;

namespace {

ParameterVector vec(std::initializer_list<double> v) {
    ParameterVector p(static_cast<Eigen::Index>(v.size()));
    Eigen::Index i = 0;
    for (double x : v) p[i++] = x;
    return p;
}

bool same_partition(const std::vector<int>& a, const std::vector<int>& b) {
    return cluster_quality(a, b) == 1.0;
}

}  // namespace

TEST(PairwiseEuclidean, Basics) {
    const std::vector<ParameterVector> same{vec({1, 2}), vec({1, 2}), vec({1, 2})};
    EXPECT_TRUE(pairwise_euclidean(same).isZero(0.0));
    const std::vector<ParameterVector> pts{vec({0, 0}), vec({3, 4})};
    EXPECT_EQ(pairwise_euclidean(pts)(0, 1), 5.0);
    const std::vector<ParameterVector> bad{vec({0, 0}), vec({3})};
    EXPECT_THROW(pairwise_euclidean(bad), ContractError);
    const std::vector<ParameterVector> one{vec({0})};
    EXPECT_THROW(pairwise_euclidean(one), ContractError);
}

TEST(PairwiseEuclidean, MatchesPerPairRecomputation) {
    Rng rng(17);
    std::vector<ParameterVector> pts;
    for (int i = 0; i < 4; ++i) {
        ParameterVector p(10);
        for (int k = 0; k < 10; ++k) p[k] = rng.uniform(-1, 1);
        pts.push_back(p);
    }
    const auto d = pairwise_euclidean(pts);
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 4; ++j) {
            double s = 0.0;
            for (int k = 0; k < 10; ++k) s += (pts[i][k] - pts[j][k]) * (pts[i][k] - pts[j][k]);
            EXPECT_NEAR(d(i, j), std::sqrt(s), 1e-15);
            EXPECT_EQ(d(i, j), d(j, i));
        }
}

TEST(Agglomerate, IdenticalUpdatesFormOneCluster) {
    const std::vector<ParameterVector> pts(5, vec({0.3, -0.1}));
    for (Linkage l : kAllLinkages) EXPECT_EQ(agglomerate(pairwise_euclidean(pts), l, 1e-6).cluster_count, 1);
}

TEST(Agglomerate, ThresholdExtremes) {
    Rng rng(2);
    const auto pts = testing_support::random_points(rng, 8, 3);
    const auto d = pairwise_euclidean(pts);
    double min_off = INFINITY;
    for (int i = 0; i < 8; ++i)
        for (int j = i + 1; j < 8; ++j) min_off = std::min(min_off, d(i, j));
    for (Linkage l : kAllLinkages) {
        EXPECT_EQ(agglomerate(d, l, INFINITY).cluster_count, 1);
        const auto singles = agglomerate(d, l, 0.5 * min_off);
        EXPECT_EQ(singles.cluster_count, 8);
        for (int i = 0; i < 8; ++i) EXPECT_EQ(singles.labels[i], i);
    }
}

TEST(Agglomerate, TwoTightGroupsAllLinkages) {
    const std::vector<ParameterVector> pts{vec({0, 0}),   vec({0.1, 0}),   vec({5, 5}),
                                           vec({0, 0.1}), vec({5.1, 5}),   vec({5, 5.1})};
    const auto d = pairwise_euclidean(pts);
    const std::vector<int> groups{0, 0, 1, 0, 1, 1};
    for (Linkage l : kAllLinkages) {
        const auto a = agglomerate(d, l, 1.0);
        EXPECT_EQ(a.cluster_count, 2) << to_string(l);
        EXPECT_EQ(a.labels, groups) << to_string(l);
        EXPECT_EQ(a.labels, oracle_agglomerate(d, l, 1.0)) << to_string(l);
    }
}

TEST(Agglomerate, MatchesBruteForceOracleOnRandomInstances) {
    Rng rng(1234);
    for (int trial = 0; trial < 100; ++trial) {
        const int n = 2 + static_cast<int>(rng.below(11));
        const auto d = pairwise_euclidean(testing_support::random_points(rng, n, 4));
        const double threshold = rng.uniform(0.2, 3.0);
        for (Linkage l : kAllLinkages) {
            EXPECT_EQ(agglomerate(d, l, threshold).labels, oracle_agglomerate(d, l, threshold))
                << "trial " << trial << " linkage " << to_string(l);
        }
    }
}

TEST(Agglomerate, MergeHeightsNonDecreasingForReducibleLinkages) {
    Rng rng(77);
    for (int trial = 0; trial < 30; ++trial) {
        const auto d = pairwise_euclidean(testing_support::random_points(rng, 10, 3));
        for (Linkage l : kAllLinkages) {
            const auto a = agglomerate(d, l, INFINITY);
            ASSERT_EQ(a.merges.size(), 9u);
            for (std::size_t m = 1; m < a.merges.size(); ++m)
                EXPECT_GE(a.merges[m].distance, a.merges[m - 1].distance * (1 - 1e-12)) << to_string(l);
        }
    }
}

TEST(Agglomerate, PermutationInvariantUpToRelabeling) {
    Rng rng(5);
    for (int trial = 0; trial < 30; ++trial) {
        const int n = 9;
        const auto pts = testing_support::random_points(rng, n, 3);
        std::vector<std::size_t> perm(n);
        std::iota(perm.begin(), perm.end(), 0);
        rng.shuffle(std::span(perm));
        std::vector<ParameterVector> permuted;
        for (auto p : perm) permuted.push_back(pts[p]);
        for (Linkage l : kAllLinkages) {
            const auto a = agglomerate(pairwise_euclidean(pts), l, 1.5);
            const auto b = agglomerate(pairwise_euclidean(permuted), l, 1.5);
            std::vector<int> back(n);
            for (int i = 0; i < n; ++i) back[perm[i]] = b.labels[i];
            EXPECT_TRUE(same_partition(a.labels, back)) << to_string(l);
        }
    }
}

TEST(Agglomerate, SingleLinkageEqualsThresholdGraphComponents) {
    Rng rng(31);
    for (int trial = 0; trial < 40; ++trial) {
        const int n = 10;
        const auto d = pairwise_euclidean(testing_support::random_points(rng, n, 2));
        const double threshold = rng.uniform(0.3, 2.0);
        std::vector<int> comp(n);
        std::iota(comp.begin(), comp.end(), 0);
        // Label propagation to fixpoint.
        for (bool changed = true; changed;) {
            changed = false;
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < n; ++j)
                    if (d(i, j) <= threshold && comp[j] < comp[i]) {
                        comp[i] = comp[j];
                        changed = true;
                    }
        }
        EXPECT_TRUE(same_partition(agglomerate(d, Linkage::single, threshold).labels, comp));
    }
}

TEST(Agglomerate, RejectsBadInput) {
    Eigen::MatrixXd d = Eigen::MatrixXd::Zero(3, 3);
    d(0, 1) = d(1, 0) = NAN;
    EXPECT_THROW(agglomerate(d, Linkage::ward, 1.0), ContractError);
    EXPECT_THROW(agglomerate(Eigen::MatrixXd::Zero(3, 3), Linkage::ward, 0.0), ContractError);
    EXPECT_THROW(agglomerate(Eigen::MatrixXd::Zero(2, 3), Linkage::ward, 1.0), ContractError);
}

TEST(ClusterQuality, KnownValues) {
    const std::vector<int> a{0, 0, 1, 1, 2};
    EXPECT_EQ(cluster_quality(a, a), 1.0);
    EXPECT_EQ(cluster_quality(a, std::vector<int>{2, 2, 0, 0, 1}), 1.0);
    const std::vector<int> singles{0, 1, 2, 3, 4}, together{0, 0, 0, 0, 0};
    EXPECT_LE(cluster_quality(singles, together), 0.0);

    // 15 pairs: same in both 2, only first 4, only second 1, neither 8 -> 2*(16-4)/(72+27).
    const std::vector<int> x{0, 0, 0, 1, 1, 1}, y{0, 0, 1, 1, 2, 2};
    EXPECT_NEAR(cluster_quality(x, y), 8.0 / 33.0, 1e-15);
    EXPECT_NEAR(testing_support::pair_enumeration_ari(x, y), 8.0 / 33.0, 1e-15);
}

TEST(ClusterQuality, MatchesPairEnumerationAndStaysInRange) {
    Rng rng(8);
    for (int trial = 0; trial < 200; ++trial) {
        const int n = 3 + static_cast<int>(rng.below(10));
        std::vector<int> a(n), b(n);
        for (int i = 0; i < n; ++i) {
            a[i] = static_cast<int>(rng.below(3));
            b[i] = static_cast<int>(rng.below(4));
        }
        const auto ra = relabel(a).labels, rb = relabel(b).labels;
        const double q = cluster_quality(ra, rb);
        EXPECT_GE(q, -1.0);
        EXPECT_LE(q, 1.0);
        const double oracle = testing_support::pair_enumeration_ari(ra, rb);
        if (std::isfinite(oracle)) EXPECT_NEAR(q, oracle, 1e-12);
    }
}
