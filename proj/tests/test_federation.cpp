#include <gtest/gtest.h>

#include <algorithm>
#include <set>

#include "federation_fixtures.hpp"
#include "fedcast/federation.hpp"

using namespace fedcast;
using testing_support::make_client;
using testing_support::make_clients;

namespace {

ScenarioConfig small_config(ScenarioKind kind, int cap = 6) {
    ScenarioConfig c;
    c.kind = kind;
    c.variant = {4, false};
    c.seed = 11;
    c.training.patience = 3;
    c.training.caps = {cap, cap, cap, cap, cap};
    if (uses_clustering(kind)) c.hc = HcSettings{1.4, Linkage::ward, 2};
    return c;
}

std::vector<const HouseholdDataset*> ptrs(const std::vector<HouseholdDataset>& v) {
    std::vector<const HouseholdDataset*> out;
    for (const auto& h : v) out.push_back(&h);
    return out;
}

ParameterVector scalar(double x) { return ParameterVector::Constant(1, x); }

// Samples per record recomputed from participants' training-set sizes.
std::uint64_t recount(const RunReport& r, std::span<const HouseholdDataset> clients, int epochs_per_participant) {
    std::uint64_t total = 0;
    for (const auto& rec : r.log)
        if (rec.index > 0)
            for (const auto& id : rec.participants)
                for (const auto& c : clients)
                    if (c.household_id == id) total += static_cast<std::uint64_t>(epochs_per_participant) * c.train.size();
    return total;
}

}  // namespace

TEST(FedAvg, ScalarExample) {
    const std::vector<ParameterVector> p{scalar(0.0), scalar(4.0)};
    const std::vector<double> n{1.0, 3.0};
    EXPECT_EQ(fedavg_aggregate(p, n)[0], 3.0);
}

TEST(FedAvg, IdenticalAndSingleInputsAreReturnedExactly) {
    Rng rng(4);
    ParameterVector w(50);
    for (Eigen::Index i = 0; i < w.size(); ++i) w[i] = rng.uniform(-1, 1);
    const std::vector<ParameterVector> same{w, w, w};
    const std::vector<double> n{1.0, 7.0, 13.0};
    EXPECT_TRUE(fedavg_aggregate(same, n) == w);
    const std::vector<ParameterVector> one{w};
    const std::vector<double> n1{123.0};
    EXPECT_TRUE(fedavg_aggregate(one, n1) == w);
}

TEST(FedAvg, MatchesPerCoordinateWeightedMean) {
    Rng rng(9);
    for (int trial = 0; trial < 20; ++trial) {
        const int m = 2 + static_cast<int>(rng.below(6));
        std::vector<ParameterVector> p;
        std::vector<double> n;
        for (int k = 0; k < m; ++k) {
            ParameterVector v(30);
            for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = rng.uniform(-2, 2);
            p.push_back(v);
            n.push_back(static_cast<double>(1 + rng.below(500)));
        }
        const auto agg = fedavg_aggregate(p, n);
        for (Eigen::Index i = 0; i < 30; ++i) {
            double num = 0.0, den = 0.0;
            for (int k = 0; k < m; ++k) {
                num += n[k] * p[k][i];
                den += n[k];
            }
            EXPECT_NEAR(agg[i], num / den, 1e-12);
        }
    }
}

TEST(FedAvg, RejectsNonFiniteAndBadWeights) {
    const std::vector<ParameterVector> p{scalar(1.0), scalar(NAN)};
    const std::vector<double> n{1.0, 1.0};
    EXPECT_THROW(fedavg_aggregate(p, n), NumericalFailure);
    const std::vector<ParameterVector> ok{scalar(1.0), scalar(2.0)};
    const std::vector<double> zero{1.0, 0.0};
    EXPECT_THROW(fedavg_aggregate(ok, zero), ContractError);
    EXPECT_THROW(fedavg_aggregate(std::span<const ParameterVector>{}, std::span<const double>{}), ContractError);
}

TEST(FedAvg, ZeroLocalEpochsIsANoOp) {
    const auto clients = make_clients(3, 5);
    const auto global = flatten(initialize_model(5, 3));
    const auto r = fedavg_round(global, ptrs(clients), 0, TrainingSettings{}, 1, 1);
    EXPECT_TRUE(r.params == global);
    for (auto s : r.samples) EXPECT_EQ(s, 0u);
}

TEST(FedAvg, SingleParticipantEqualsItsLocalTraining) {
    const auto clients = make_clients(1, 5);
    const auto global = flatten(initialize_model(5, 3));
    const auto r = fedavg_round(global, ptrs(clients), 2, TrainingSettings{}, 7, 4);
    Trainer t(global, 5, TrainingSettings{}, shuffle_seed(7, clients[0].household_id, 4));
    t.run_epoch(clients[0].train);
    t.run_epoch(clients[0].train);
    EXPECT_TRUE(r.params == t.params());
}

TEST(FedAvg, ParticipantsSortedByIdRegardlessOfSelectionOrder) {
    const auto clients = make_clients(4, 5);
    const auto global = flatten(initialize_model(5, 3));
    std::vector<const HouseholdDataset*> fwd{&clients[0], &clients[2], &clients[3]};
    std::vector<const HouseholdDataset*> rev{&clients[3], &clients[2], &clients[0]};
    const auto a = fedavg_round(global, fwd, 1, TrainingSettings{}, 2, 1);
    const auto b = fedavg_round(global, rev, 1, TrainingSettings{}, 2, 1);
    EXPECT_TRUE(a.params == b.params);
    EXPECT_EQ(b.participants, (std::vector<std::string>{"C000", "C002", "C003"}));
}

TEST(Sampling, ParticipantCount) {
    EXPECT_EQ(participants_per_round(0.1, 100), 10);
    EXPECT_EQ(participants_per_round(0.1, 20), 2);
    EXPECT_EQ(participants_per_round(0.3, 20), 6);
    EXPECT_EQ(participants_per_round(0.1, 4), 1);
    EXPECT_EQ(participants_per_round(1.0, 7), 7);
}

TEST(Sampling, TenOfOneHundredEachRound) {
    const auto clients = make_clients(100, 21, 12);
    auto cfg = small_config(ScenarioKind::fl, 3);
    cfg.local_epochs = 1;
    cfg.training.patience = 100;
    const auto r = run_fl(clients, cfg).report;
    ASSERT_EQ(r.log.size(), 4u);
    for (std::size_t i = 1; i < r.log.size(); ++i) {
        const auto& p = r.log[i].participants;
        EXPECT_EQ(p.size(), 10u);
        EXPECT_EQ(std::set<std::string>(p.begin(), p.end()).size(), 10u);
        EXPECT_TRUE(std::is_sorted(p.begin(), p.end()));
    }
}

TEST(SampleCounting, Examples) {
    std::vector<RoundRecord> log(2);
    log[0].samples = 1000;
    EXPECT_EQ(count_samples(std::span(log).first(1)).raw, 1000u);

    const auto one = make_client("X", 1, 1004, 16, 16, 4);
    ASSERT_EQ(one.train.size(), 1000u);
    Trainer t(flatten(initialize_model(5, 1)), 5, TrainingSettings{}, 3);
    t.run_epoch(one.train);
    EXPECT_EQ(t.samples(), 1000u);

    std::vector<HouseholdDataset> ten;
    for (int i = 0; i < 10; ++i) ten.push_back(make_client("H" + std::to_string(i), 40 + i, 504, 16, 16, 4));
    const auto r = fedavg_round(flatten(initialize_model(5, 1)), ptrs(ten), 3, TrainingSettings{}, 1, 1);
    std::uint64_t total = 0;
    for (auto s : r.samples) total += s;
    EXPECT_EQ(total, 15000u);
    EXPECT_DOUBLE_EQ(SampleCount{5'600'000}.millions(), 5.6);
}

TEST(Centralised, OneHouseholdEqualsLocalised) {
    const std::vector<HouseholdDataset> one{make_client("H1", 3)};
    const auto c = train_centralised(one, small_config(ScenarioKind::centralised));
    const auto l = train_localised(one, small_config(ScenarioKind::localised));
    EXPECT_TRUE(c.models[0].params == l.models[0].params);
    EXPECT_EQ(c.report.total_samples, l.report.total_samples);
    EXPECT_EQ(c.report.mean_test_rmse, l.report.mean_test_rmse);
    ASSERT_TRUE(c.report.pooled_test_rmse);
    EXPECT_EQ(*c.report.pooled_test_rmse, c.report.clients[0].test_rmse);
}

TEST(Centralised, SamplesArePooledSizeTimesEpochs) {
    const auto clients = make_clients(3, 8);
    const auto r = train_centralised(clients, small_config(ScenarioKind::centralised, 4)).report;
    std::uint64_t pool = 0;
    for (const auto& c : clients) pool += c.train.size();
    const auto epochs = static_cast<std::uint64_t>(r.log.size() - 1);
    EXPECT_EQ(r.total_samples, epochs * pool);
    EXPECT_EQ(r.log.back().cumulative_samples, r.total_samples);
}

TEST(Centralised, DuplicateHouseholdMatchesSingleWithDoubledSamples) {
    // Full-batch steps make the pooled gradient independent of sample order.
    auto cfg = small_config(ScenarioKind::centralised, 5);
    cfg.training.batch_size = 100000;
    cfg.training.patience = 100;
    const auto h = make_client("A", 2);
    auto twin = h;
    twin.household_id = "B";
    const std::vector<HouseholdDataset> one{h}, two{h, twin};
    const auto a = train_centralised(one, cfg).report;
    const auto b = train_centralised(two, cfg).report;
    ASSERT_EQ(a.log.size(), b.log.size());
    for (std::size_t e = 1; e < a.log.size(); ++e) {
        EXPECT_NEAR(a.log[e].train_loss[0], b.log[e].train_loss[0], 1e-12);
        EXPECT_NEAR(a.log[e].validation_rmse, b.log[e].validation_rmse, 1e-12);
        EXPECT_EQ(b.log[e].samples, 2 * a.log[e].samples);
    }
}

TEST(Centralised, RejectsInconsistentVariants) {
    auto clients = make_clients(2, 1);
    clients[1].variant.k = 6;
    EXPECT_THROW(train_centralised(clients, small_config(ScenarioKind::centralised)), ContractError);
}

TEST(Localised, IsolationAndOrderIndependence) {
    const auto clients = make_clients(3, 4);
    const std::vector<HouseholdDataset> swapped{clients[2], clients[0], clients[1]};
    const auto a = train_localised(clients, small_config(ScenarioKind::localised));
    const auto b = train_localised(swapped, small_config(ScenarioKind::localised));
    const auto find = [](const ScenarioResult& r, const std::string& id) {
        for (const auto& m : r.models)
            if (m.name == id) return m.params;
        return ParameterVector();
    };
    for (const auto& c : clients) EXPECT_TRUE(find(a, c.household_id) == find(b, c.household_id));
    EXPECT_FALSE(a.models[0].params == a.models[1].params);
}

TEST(Localised, TotalSamplesFromEpochLog) {
    const auto clients = make_clients(3, 4);
    const auto r = train_localised(clients, small_config(ScenarioKind::localised, 8)).report;
    // Sum over clients of epochs actually run times training-set size.
    std::uint64_t expected = 0;
    for (const auto& c : clients) {
        int epochs = 0;
        for (const auto& rec : r.log)
            if (rec.index > 0 && rec.participants == std::vector<std::string>{c.household_id}) ++epochs;
        expected += static_cast<std::uint64_t>(epochs) * c.train.size();
    }
    EXPECT_EQ(r.total_samples, expected);
    EXPECT_EQ(recount(r, clients, 1), expected);
    std::uint64_t per_client = 0;
    for (const auto& c : r.clients) per_client += c.samples;
    EXPECT_EQ(per_client, expected);
}

TEST(Localised, EmptySplitIsExcludedAndReported) {
    auto clients = make_clients(2, 4);
    HouseholdDataset empty;
    empty.household_id = "EMPTY";
    empty.variant = clients[0].variant;
    clients.push_back(empty);
    const auto r = train_localised(clients, small_config(ScenarioKind::localised, 2)).report;
    EXPECT_EQ(r.clients.size(), 2u);
    ASSERT_EQ(r.notes.size(), 1u);
    EXPECT_NE(r.notes[0].find("EMPTY"), std::string::npos);
}

TEST(EarlyStopping, ReturnedModelHasTheMinimumTrackedMetric) {
    const auto clients = make_clients(4, 6);
    auto cfg = small_config(ScenarioKind::fl, 12);
    cfg.client_fraction = 0.5;
    cfg.local_epochs = 1;
    const auto res = run_fl(clients, cfg);
    double best = INFINITY;
    for (const auto& rec : res.report.log) best = std::min(best, rec.validation_rmse);
    EXPECT_EQ(res.report.mean_validation_rmse, best);

    const auto loc = train_localised(clients, small_config(ScenarioKind::localised, 12));
    for (const auto& c : loc.report.clients) {
        double b = INFINITY;
        for (const auto& rec : loc.report.log)
            if (rec.participants == std::vector<std::string>{c.household_id}) b = std::min(b, rec.validation_rmse);
        EXPECT_EQ(c.validation_rmse, b);
    }
}

TEST(EarlyStopping, StopperSemantics) {
    EarlyStopper s(2);
    EXPECT_TRUE(s.observe(3.0, scalar(0)));
    EXPECT_FALSE(s.observe(3.0, scalar(1)));  // ties do not count as improvement
    EXPECT_FALSE(s.exhausted());
    EXPECT_FALSE(s.observe(NAN, scalar(2)));
    EXPECT_TRUE(s.exhausted());
    EXPECT_EQ(s.best_params()[0], 0.0);
    EXPECT_EQ(s.best_observation(), 0);
}

TEST(FederatedLearning, IdenticalClientsMatchSingleClientTraining) {
    // Full-batch, full participation: every client computes the same update.
    const auto h = make_client("A", 12);
    std::vector<HouseholdDataset> clients;
    for (int i = 0; i < 3; ++i) {
        clients.push_back(h);
        clients.back().household_id = "A" + std::to_string(i);
    }
    TrainingSettings s;
    s.batch_size = 100000;
    const auto start = flatten(initialize_model(5, 8));
    const auto round = fedavg_round(start, ptrs(clients), 3, s, 1, 1);
    Trainer t(start, 5, s, 99);
    for (int e = 0; e < 3; ++e) t.run_epoch(h.train);
    EXPECT_LT((round.params - t.params()).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(FederatedLearning, AccountingMatchesRoundLog) {
    const auto clients = make_clients(6, 2);
    auto cfg = small_config(ScenarioKind::fl, 5);
    cfg.client_fraction = 0.3;
    cfg.local_epochs = 2;
    const auto r = run_fl(clients, cfg).report;
    EXPECT_EQ(r.total_samples, recount(r, clients, 2));
    EXPECT_EQ(r.total_samples, count_samples(r.log).raw);
    std::uint64_t prev = 0;
    for (const auto& rec : r.log) {
        EXPECT_GE(rec.cumulative_samples, prev);
        prev = rec.cumulative_samples;
        if (rec.index > 0) EXPECT_EQ(rec.participants.size(), 2u);
    }
    EXPECT_EQ(prev, r.total_samples);
}

TEST(FederatedLearning, NeedsTwoClients) {
    const auto one = make_clients(1, 2);
    EXPECT_THROW(run_fl(one, small_config(ScenarioKind::fl)), ContractError);
}

TEST(FederatedLearning, DeterministicAcrossJobCounts) {
    const auto clients = make_clients(5, 3);
    auto cfg = small_config(ScenarioKind::flhc_lft, 4);
    const auto a = run_scenario(clients, cfg);
    cfg.training.jobs = 3;
    const auto b = run_scenario(clients, cfg);
    ASSERT_EQ(a.models.size(), b.models.size());
    for (std::size_t i = 0; i < a.models.size(); ++i) EXPECT_TRUE(a.models[i].params == b.models[i].params);
    ASSERT_EQ(a.report.log.size(), b.report.log.size());
    for (std::size_t i = 0; i < a.report.log.size(); ++i) {
        const auto &x = a.report.log[i], &y = b.report.log[i];
        EXPECT_EQ(x.participants, y.participants);
        EXPECT_EQ(x.train_loss, y.train_loss);
        EXPECT_TRUE(x.validation_rmse == y.validation_rmse || (std::isnan(x.validation_rmse) && std::isnan(y.validation_rmse)));
    }
    EXPECT_EQ(a.report.mean_test_rmse, b.report.mean_test_rmse);
}

TEST(Clustered, InfiniteThresholdGivesOneClusterContinuingFl) {
    const auto clients = make_clients(5, 7);
    auto cfg = small_config(ScenarioKind::flhc, 4);
    cfg.hc->threshold = INFINITY;
    ClusteringOutcome details;
    const auto r = run_flhc(clients, cfg, &details);
    EXPECT_EQ(r.report.cluster_count, 1);
    EXPECT_EQ(r.report.cluster_labels, std::vector<int>(5, 0));

    FederatedOptions opt;
    opt.max_rounds = 4;
    opt.round_offset = 3;
    opt.cluster = 0;
    opt.phase = "cluster";
    auto tr = cfg.training;
    const auto cont = run_federated(ptrs(clients), details.pre_cluster, opt, tr, cfg.seed);
    EXPECT_TRUE(cont.best == r.models[0].params);
}

TEST(Clustered, TinyThresholdGivesSingletonsTrainedAlone) {
    const auto clients = make_clients(4, 7);
    auto cfg = small_config(ScenarioKind::flhc, 3);
    cfg.hc->threshold = 1e-12;
    const auto r = run_flhc(clients, cfg).report;
    EXPECT_EQ(r.cluster_labels, (std::vector<int>{0, 1, 2, 3}));
    EXPECT_EQ(r.notes.size(), 4u);
    for (const auto& rec : r.log)
        if (rec.phase == "cluster" && rec.index > 0)
            EXPECT_EQ(rec.participants, std::vector<std::string>{clients[static_cast<std::size_t>(rec.cluster)].household_id});
}

TEST(Clustered, PartitionCoversEveryClientOnceAndAccountingHolds) {
    const auto clients = make_clients(6, 9);
    const auto r = run_flhc(clients, small_config(ScenarioKind::flhc, 3)).report;
    ASSERT_EQ(r.cluster_labels.size(), 6u);
    std::vector<int> seen(static_cast<std::size_t>(r.cluster_count), 0);
    for (int l : r.cluster_labels) {
        ASSERT_GE(l, 0);
        ASSERT_LT(l, r.cluster_count);
        ++seen[static_cast<std::size_t>(l)];
    }
    for (int s : seen) EXPECT_GT(s, 0);
    EXPECT_EQ(r.total_samples, recount(r, clients, 3));
    bool has_update = false;
    for (const auto& rec : r.log)
        if (rec.phase == "update") {
            has_update = true;
            EXPECT_EQ(rec.participants.size(), 6u);
        }
    EXPECT_TRUE(has_update);
}

TEST(FineTune, NeverWorseThanBaseAndCapped) {
    const auto clients = make_clients(3, 10, 60);
    auto cfg = small_config(ScenarioKind::fl_lft, 25);
    cfg.training.caps.lft_epochs = 25;
    cfg.training.patience = 10;
    std::vector<ParameterVector> bases(3, flatten(initialize_model(5, 5)));
    const auto r = fine_tune(bases, clients, cfg).report;
    for (const auto& c : r.clients) {
        ASSERT_TRUE(c.base_validation_rmse);
        EXPECT_LE(c.validation_rmse, *c.base_validation_rmse);
    }
    for (const auto& c : clients) {
        std::vector<double> v;
        for (const auto& rec : r.log)
            if (rec.participants == std::vector<std::string>{c.household_id}) v.push_back(rec.validation_rmse);
        EXPECT_LE(v.size(), 26u);
        const bool always_improving = std::adjacent_find(v.begin(), v.end(), std::less_equal<>()) == v.end();
        if (always_improving) EXPECT_EQ(v.size(), 26u);
    }
}

TEST(FineTune, ImprovingEveryEpochRunsExactlyTheCap) {
    // Small full-batch steps validated on the training data itself descend
    // monotonically from a far-from-optimal base.
    auto h = make_client("L", 3, 200, 16, 16, 4);
    h.validation = h.train;
    const std::vector<HouseholdDataset> one{h};
    auto cfg = small_config(ScenarioKind::fl_lft, 25);
    cfg.training.caps.lft_epochs = 25;
    cfg.training.patience = 10;
    cfg.training.batch_size = 100000;
    cfg.training.learning_rate = 1e-4;
    const std::vector<ParameterVector> base{flatten(initialize_model(5, 1))};
    const auto r = fine_tune(base, one, cfg).report;
    std::vector<double> v;
    for (const auto& rec : r.log) v.push_back(rec.validation_rmse);
    ASSERT_TRUE(std::adjacent_find(v.begin(), v.end(), std::less_equal<>()) == v.end())
        << "fixture no longer improves every epoch";
    EXPECT_EQ(v.size(), 26u);
}

TEST(FineTune, OptimalBaseIsReturnedUnchanged) {
    const auto clients = make_clients(2, 10);
    auto cfg = small_config(ScenarioKind::fl_lft, 25);
    cfg.training.learning_rate = 1e-300;  // parameters cannot move
    std::vector<ParameterVector> bases{flatten(initialize_model(5, 5)), flatten(initialize_model(5, 6))};
    const auto res = fine_tune(bases, clients, cfg);
    for (std::size_t k = 0; k < 2; ++k) {
        EXPECT_TRUE(res.models[k].params == bases[k]);
        EXPECT_EQ(res.report.clients[k].validation_rmse, *res.report.clients[k].base_validation_rmse);
    }
}

TEST(Scenario, FineTuningReportsCombineBothStages) {
    const auto clients = make_clients(4, 13);
    const auto r = run_scenario(clients, small_config(ScenarioKind::fl_lft, 3), 2.5).report;
    EXPECT_EQ(r.energy_span, 2.5);
    EXPECT_DOUBLE_EQ(r.mean_test_rmse_kwh(), 2.5 * r.mean_test_rmse);
    bool fl = false, ft = false;
    for (const auto& rec : r.log) {
        fl |= rec.phase == "fl";
        ft |= rec.phase == "finetune";
    }
    EXPECT_TRUE(fl && ft);
    EXPECT_EQ(r.total_samples, count_samples(r.log).raw);
    std::uint64_t per_client = 0;
    for (const auto& c : r.clients) {
        per_client += c.samples;
        EXPECT_LE(c.validation_rmse, *c.base_validation_rmse);
    }
    EXPECT_EQ(per_client, r.total_samples);
}

TEST(Scenario, ConfigValidation) {
    auto c = small_config(ScenarioKind::flhc);
    c.client_fraction = 0.2;
    EXPECT_THROW(c.validate(), ContractError);
    c = small_config(ScenarioKind::flhc);
    c.hc.reset();
    EXPECT_THROW(c.validate(), ContractError);
    c = small_config(ScenarioKind::fl);
    c.hc = HcSettings{};
    EXPECT_THROW(c.validate(), ContractError);
    c = small_config(ScenarioKind::fl);
    c.client_fraction = 0.0;
    EXPECT_THROW(c.validate(), ContractError);
    EXPECT_NO_THROW(small_config(ScenarioKind::flhc_lft).validate());
    for (ScenarioKind k : kAllScenarios) EXPECT_EQ(parse_scenario(to_string(k)), k);
    EXPECT_FALSE(parse_scenario("fedprox"));
}
