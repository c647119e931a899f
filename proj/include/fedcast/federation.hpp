#pragma once

// The six training scenarios: centralised, localised, FedAvg, FedAvg with
// hierarchical clustering, and local fine-tuning on top of either federated
// model. Every run produces a RunReport whose round log is enough to
// recompute the sample totals offline.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "fedcast/clustering.hpp"
#include "fedcast/data_pipeline.hpp"
#include "fedcast/errors.hpp"
#include "fedcast/lstm.hpp"
#include "fedcast/parallel.hpp"
#include "fedcast/random.hpp"
#include "fedcast/training.hpp"

namespace fedcast {

enum class ScenarioKind { centralised, localised, fl, flhc, fl_lft, flhc_lft };

// Table row order.
inline constexpr ScenarioKind kAllScenarios[] = {ScenarioKind::centralised, ScenarioKind::localised,
                                                 ScenarioKind::fl,          ScenarioKind::flhc,
                                                 ScenarioKind::fl_lft,      ScenarioKind::flhc_lft};

inline std::string_view to_string(ScenarioKind k) {
    switch (k) {
        case ScenarioKind::centralised: return "centralised";
        case ScenarioKind::localised: return "localised";
        case ScenarioKind::fl: return "fl";
        case ScenarioKind::flhc: return "flhc";
        case ScenarioKind::fl_lft: return "fl_lft";
        case ScenarioKind::flhc_lft: return "flhc_lft";
    }
    return "unknown";
}

inline std::string_view display_name(ScenarioKind k) {
    switch (k) {
        case ScenarioKind::centralised: return "Centralised";
        case ScenarioKind::localised: return "Localised";
        case ScenarioKind::fl: return "FL";
        case ScenarioKind::flhc: return "FL+HC";
        case ScenarioKind::fl_lft: return "FL->LFT";
        case ScenarioKind::flhc_lft: return "FL+HC->LFT";
    }
    return "unknown";
}

inline std::optional<ScenarioKind> parse_scenario(std::string_view s) {
    for (ScenarioKind k : kAllScenarios)
        if (to_string(k) == s) return k;
    return std::nullopt;
}

inline bool uses_federation(ScenarioKind k) { return k != ScenarioKind::centralised && k != ScenarioKind::localised; }
inline bool uses_clustering(ScenarioKind k) { return k == ScenarioKind::flhc || k == ScenarioKind::flhc_lft; }
inline bool uses_fine_tuning(ScenarioKind k) { return k == ScenarioKind::fl_lft || k == ScenarioKind::flhc_lft; }

struct HcSettings {
    double threshold = 1.4;
    Linkage linkage = Linkage::ward;
    int rounds_before = 3;  // FedAvg rounds run before the clustering step

    bool operator==(const HcSettings&) const = default;
};

inline constexpr double kHcClientFraction = 0.1;
inline constexpr int kHcLocalEpochs = 3;

struct ScenarioConfig {
    ScenarioKind kind = ScenarioKind::fl;
    Variant variant;
    double client_fraction = 0.1;
    int local_epochs = 3;
    std::optional<HcSettings> hc;
    std::uint64_t seed = 1;
    TrainingSettings training;

    bool operator==(const ScenarioConfig&) const = default;

    void validate() const {
        require(training.batch_size >= 1, "batch size must be positive");
        require(training.learning_rate > 0.0, "learning rate must be positive");
        require(training.patience >= 1, "patience must be positive");
        const auto& c = training.caps;
        require(c.centralised_epochs >= 0 && c.localised_epochs >= 0 && c.fl_rounds >= 0 && c.flhc_rounds >= 0 &&
                    c.lft_epochs >= 0,
                "caps must be non-negative");
        require(hc.has_value() == uses_clustering(kind), "clustering settings are required exactly for FL+HC scenarios");
        if (uses_federation(kind)) {
            require(client_fraction > 0.0 && client_fraction <= 1.0, "client fraction must be in (0, 1]");
            require(local_epochs >= 0, "local epochs must be non-negative");
        }
        if (hc) {
            require(client_fraction == kHcClientFraction && local_epochs == kHcLocalEpochs,
                    "FL+HC fixes the client fraction at 0.1 and local epochs at 3");
            require(hc->threshold > 0.0, "clustering threshold must be positive");
            require(hc->rounds_before >= 0, "rounds before clustering must be non-negative");
        }
    }
};

// One evaluation point of a run: an epoch, a communication round, or the
// starting model (index 0, no samples).
struct RoundRecord {
    std::string phase;
    int index = 0;
    int cluster = -1;
    std::vector<std::string> participants;
    std::vector<double> train_loss;                   // per participant, last local epoch
    std::vector<std::uint64_t> participant_samples;  // per participant
    double validation_rmse = std::numeric_limits<double>::quiet_NaN();
    std::uint64_t samples = 0;
    std::uint64_t cumulative_samples = 0;
};

// Receives each record as it is produced, for post-mortem logs. Records
// from clients trained in parallel may arrive in any order and from any
// thread.
class RecordSink {
public:
    virtual ~RecordSink() = default;
    virtual void record(const RoundRecord& r) = 0;
};

inline void notify(const TrainingSettings& s, const RoundRecord& r) {
    if (s.sink) s.sink->record(r);
}

struct SampleCount {
    std::uint64_t raw = 0;
    double millions() const { return static_cast<double>(raw) / 1e6; }
};

inline SampleCount count_samples(std::span<const RoundRecord> log) {
    SampleCount c;
    for (const auto& r : log) c.raw += r.samples;
    return c;
}

struct ClientResult {
    std::string household_id;
    int cluster = -1;
    double validation_rmse = 0.0;
    double test_rmse = 0.0;
    std::optional<double> base_validation_rmse;  // fine-tuning scenarios only
    std::optional<double> base_test_rmse;
    std::uint64_t samples = 0;
};

struct RunReport {
    ScenarioConfig config;
    std::vector<ClientResult> clients;
    double mean_test_rmse = 0.0;        // uniform mean over clients
    double mean_validation_rmse = 0.0;  // uniform mean over clients
    std::optional<double> pooled_test_rmse;
    std::optional<double> pooled_validation_rmse;
    double energy_span = 1.0;  // kWh per normalised unit of consumption
    std::uint64_t total_samples = 0;
    std::vector<int> cluster_labels;
    int cluster_count = 0;
    std::vector<RoundRecord> log;
    std::vector<std::string> notes;

    double mean_test_rmse_kwh() const { return mean_test_rmse * energy_span; }
};

struct NamedModel {
    std::string name;
    ParameterVector params;
};

struct ScenarioResult {
    RunReport report;
    std::vector<NamedModel> models;
};

// Data-weighted average of client parameter vectors, summed in the given
// order. Bitwise-identical inputs return that vector unchanged.
inline ParameterVector fedavg_aggregate(std::span<const ParameterVector> params, std::span<const double> weights) {
    require(!params.empty(), "no client parameters to aggregate");
    require(params.size() == weights.size(), "one weight per client is required");
    const auto n = params.front().size();
    double total = 0.0;
    for (std::size_t k = 0; k < params.size(); ++k) {
        require(params[k].size() == n, "client parameter lengths differ");
        require(weights[k] > 0.0 && std::isfinite(weights[k]), "client weights must be positive");
        for (Eigen::Index i = 0; i < n; ++i)
            if (!std::isfinite(params[k][i]))
                throw NumericalFailure("client " + std::to_string(k) + " returned non-finite parameters",
                                       static_cast<std::size_t>(i));
        total += weights[k];
    }
    const bool identical = std::all_of(params.begin() + 1, params.end(),
                                       [&](const ParameterVector& p) { return p == params.front(); });
    if (identical) return params.front();
    ParameterVector out = ParameterVector::Zero(n);
    for (std::size_t k = 0; k < params.size(); ++k) out += (weights[k] / total) * params[k];
    return out;
}

inline std::uint64_t client_key(std::string_view household_id) { return fnv1a64(household_id); }

inline std::uint64_t shuffle_seed(std::uint64_t seed, std::string_view household_id, std::uint64_t round) {
    return derive_seed(seed, Stream::shuffle, client_key(household_id), round);
}

// Fine-tuning shuffles use a round key outside any communication round range.
inline constexpr std::uint64_t kFineTuneRound = 1'000'000'000ULL;

struct FedAvgResult {
    ParameterVector params;
    std::vector<std::string> participants;  // ascending household id
    std::vector<double> train_loss;
    std::vector<std::uint64_t> samples;
};

// Every selected client trains `local_epochs` from `global` with fresh Adam
// state; the results are averaged by training-set size.
inline FedAvgResult fedavg_round(const ParameterVector& global, std::span<const HouseholdDataset* const> selected,
                                 int local_epochs, const TrainingSettings& settings, std::uint64_t seed,
                                 std::uint64_t round) {
    require(!selected.empty(), "no clients selected");
    require(local_epochs >= 0, "local epochs must be non-negative");
    std::vector<const HouseholdDataset*> order(selected.begin(), selected.end());
    std::stable_sort(order.begin(), order.end(),
                     [](const auto* a, const auto* b) { return a->household_id < b->household_id; });
    const int d = order.front()->variant.feature_dim();

    std::vector<ParameterVector> results(order.size());
    FedAvgResult out;
    out.train_loss.assign(order.size(), std::numeric_limits<double>::quiet_NaN());
    out.samples.assign(order.size(), 0);
    parallel_for(order.size(), settings.jobs, [&](std::size_t k) {
        const auto& client = *order[k];
        require(!client.train.empty(), "client " + client.household_id + " has no training sequences");
        Trainer trainer(global, d, settings, shuffle_seed(seed, client.household_id, round));
        for (int e = 0; e < local_epochs; ++e) out.train_loss[k] = trainer.run_epoch(client.train);
        results[k] = trainer.params();
        out.samples[k] = trainer.samples();
    });
    std::vector<double> weights;
    for (const auto* c : order) {
        out.participants.push_back(c->household_id);
        weights.push_back(static_cast<double>(c->train.size()));
    }
    out.params = fedavg_aggregate(results, weights);
    return out;
}

inline int participants_per_round(double fraction, std::size_t clients) {
    return std::max(1, static_cast<int>(std::lround(fraction * static_cast<double>(clients))));
}

namespace detail {

inline std::uint64_t total(std::span<const std::uint64_t> v) {
    std::uint64_t s = 0;
    for (auto x : v) s += x;
    return s;
}

// Uniform mean of each member's validation RMSE under one model.
inline double mean_validation_rmse(const ParameterVector& params, std::span<const HouseholdDataset* const> members,
                                   int jobs) {
    const int d = members.front()->variant.feature_dim();
    const ForecastModel model = unflatten(params, d);
    std::vector<double> v(members.size());
    parallel_for(members.size(), jobs, [&](std::size_t k) { v[k] = evaluate_rmse(model, members[k]->validation); });
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
}

inline double pooled_rmse(const ParameterVector& params, std::span<const HouseholdDataset* const> members,
                          const SequenceSet HouseholdDataset::*split, int jobs) {
    const ForecastModel model = unflatten(params, members.front()->variant.feature_dim());
    std::vector<ErrorSum> parts(members.size());
    parallel_for(members.size(), jobs, [&](std::size_t k) { parts[k] = squared_error(model, members[k]->*split); });
    ErrorSum all;
    for (const auto& p : parts) all += p;
    return all.rmse();
}

struct EarlyStoppedRun {
    ParameterVector best;
    double best_metric = 0.0;
    int epochs = 0;
    std::vector<RoundRecord> log;
};

// Epoch loop with early stopping; the starting model is evaluation 0.
template <typename Validate>
EarlyStoppedRun train_early_stopped(const ParameterVector& start, std::span<const HouseholdDataset* const> members,
                                    Validate&& validate, int max_epochs, const TrainingSettings& settings,
                                    std::uint64_t shuffle, std::string_view phase) {
    const int d = members.front()->variant.feature_dim();
    std::vector<const SequenceSet*> sets;
    std::vector<std::string> ids;
    std::vector<std::uint64_t> sizes;
    for (const auto* m : members) {
        sets.push_back(&m->train);
        ids.push_back(m->household_id);
        sizes.push_back(m->train.size());
    }
    Trainer trainer(start, d, settings, shuffle);
    EarlyStopper stopper(settings.patience);
    EarlyStoppedRun out;
    const double v0 = validate(trainer.model());
    stopper.observe(v0, start);
    out.log.push_back({std::string(phase), 0, -1, ids, {}, {}, v0, 0, 0});
    notify(settings, out.log.back());
    for (int e = 1; e <= max_epochs && !stopper.exhausted(); ++e) {
        const double loss = trainer.run_epoch(sets);
        const double v = validate(trainer.model());
        stopper.observe(v, trainer.params());
        out.log.push_back({std::string(phase), e, -1, ids, {loss}, sizes, v, total(sizes), 0});
        notify(settings, out.log.back());
        out.epochs = e;
    }
    out.best = stopper.best_params();
    out.best_metric = stopper.best_metric();
    return out;
}

inline void accumulate(std::vector<RoundRecord>& log) {
    std::uint64_t running = 0;
    for (auto& r : log) {
        running += r.samples;
        r.cumulative_samples = running;
    }
}

inline std::vector<const HouseholdDataset*> pointers(std::span<const HouseholdDataset> clients) {
    std::vector<const HouseholdDataset*> out;
    for (const auto& c : clients) out.push_back(&c);
    return out;
}

inline void check_clients(std::span<const HouseholdDataset> clients, std::size_t minimum) {
    require(clients.size() >= minimum, "scenario needs at least " + std::to_string(minimum) + " clients");
    for (const auto& c : clients) {
        require(c.variant == clients.front().variant, "clients disagree on dataset variant");
        require(!c.train.empty() && !c.validation.empty() && !c.test.empty(),
                "client " + c.household_id + " has an empty split");
    }
}

}  // namespace detail

struct FederatedOptions {
    double client_fraction = 0.1;
    int local_epochs = 3;
    int max_rounds = 500;
    bool early_stopping = true;
    std::uint64_t round_offset = 0;  // global round number of this run's round 0
    int cluster = -1;
    std::string phase = "fl";
};

struct FederatedRun {
    ParameterVector final_params;
    ParameterVector best;  // early-stopping snapshot, or the final model when stopping is off
    double best_metric = 0.0;
    int rounds = 0;
    std::vector<RoundRecord> log;
};

// FedAvg over `members` starting from `start`. Participants are drawn
// uniformly without replacement each round from a seed tied to the round
// and cluster.
inline FederatedRun run_federated(std::span<const HouseholdDataset* const> members, const ParameterVector& start,
                                  const FederatedOptions& opt, const TrainingSettings& settings, std::uint64_t seed) {
    require(!members.empty(), "federation needs at least one client");
    const auto m = members.size();
    const auto count = static_cast<std::size_t>(participants_per_round(opt.client_fraction, m));
    FederatedRun out;
    out.final_params = start;
    EarlyStopper stopper(settings.patience);
    const double v0 = detail::mean_validation_rmse(start, members, settings.jobs);
    stopper.observe(v0, start);
    out.log.push_back({opt.phase, 0, opt.cluster, {}, {}, {}, v0, 0, 0});
    notify(settings, out.log.back());
    for (int r = 1; r <= opt.max_rounds; ++r) {
        if (opt.early_stopping && stopper.exhausted()) break;
        const std::uint64_t round = opt.round_offset + static_cast<std::uint64_t>(r);
        Rng sampler(derive_seed(seed, Stream::sampling, round, static_cast<std::uint64_t>(opt.cluster + 1)));
        std::vector<const HouseholdDataset*> chosen;
        for (auto i : sampler.sample_without_replacement(m, count)) chosen.push_back(members[i]);
        auto step = fedavg_round(out.final_params, chosen, opt.local_epochs, settings, seed, round);
        out.final_params = std::move(step.params);
        const double v = detail::mean_validation_rmse(out.final_params, members, settings.jobs);
        stopper.observe(v, out.final_params);
        out.log.push_back({opt.phase, r, opt.cluster, std::move(step.participants), std::move(step.train_loss),
                           step.samples, v, detail::total(step.samples), 0});
        notify(settings, out.log.back());
        out.rounds = r;
    }
    if (opt.early_stopping) {
        out.best = stopper.best_params();
        out.best_metric = stopper.best_metric();
    } else {
        out.best = out.final_params;
        out.best_metric = out.log.back().validation_rmse;
    }
    return out;
}

namespace detail {

// Fills per-client RMSEs, means, totals and cumulative counts. `model_of`
// maps a client index to the parameters it is evaluated with.
template <typename ModelOf>
void finish_report(RunReport& report, std::span<const HouseholdDataset* const> members, ModelOf&& model_of,
                   int jobs) {
    const int d = members.front()->variant.feature_dim();
    report.clients.resize(members.size());
    parallel_for(members.size(), jobs, [&](std::size_t k) {
        const ForecastModel model = unflatten(model_of(k), d);
        auto& c = report.clients[k];
        c.household_id = members[k]->household_id;
        c.validation_rmse = evaluate_rmse(model, members[k]->validation);
        c.test_rmse = evaluate_rmse(model, members[k]->test);
    });
    double vs = 0.0, ts = 0.0;
    for (const auto& c : report.clients) {
        vs += c.validation_rmse;
        ts += c.test_rmse;
    }
    report.mean_validation_rmse = vs / static_cast<double>(members.size());
    report.mean_test_rmse = ts / static_cast<double>(members.size());
    for (const auto& r : report.log)
        for (std::size_t p = 0; p < r.participants.size() && p < r.participant_samples.size(); ++p)
            for (auto& c : report.clients)
                if (c.household_id == r.participants[p]) c.samples += r.participant_samples[p];
    accumulate(report.log);
    report.total_samples = count_samples(report.log).raw;
    if (!report.cluster_labels.empty())
        for (std::size_t k = 0; k < members.size(); ++k) report.clients[k].cluster = report.cluster_labels[k];
}

inline ParameterVector initial_parameters(const ScenarioConfig& cfg) {
    return flatten(initialize_model(cfg.variant.feature_dim(), derive_seed(cfg.seed, Stream::init)));
}

inline std::string joined_ids(std::span<const HouseholdDataset* const> members) {
    std::string s;
    for (const auto* m : members) {
        if (!s.empty()) s += ',';
        s += m->household_id;
    }
    return s;
}

}  // namespace detail

inline ScenarioResult train_centralised(std::span<const HouseholdDataset> clients, const ScenarioConfig& cfg) {
    cfg.validate();
    detail::check_clients(clients, 1);
    const auto members = detail::pointers(clients);
    const auto validate = [&](const ForecastModel& model) {
        ErrorSum all;
        for (const auto* m : members) all += squared_error(model, m->validation);
        return all.rmse();
    };
    auto run = detail::train_early_stopped(detail::initial_parameters(cfg), members, validate,
                                           cfg.training.caps.centralised_epochs, cfg.training,
                                           shuffle_seed(cfg.seed, detail::joined_ids(members), 0), "centralised");
    ScenarioResult out;
    out.report.config = cfg;
    out.report.log = std::move(run.log);
    detail::finish_report(out.report, members, [&](std::size_t) -> const ParameterVector& { return run.best; },
                          cfg.training.jobs);
    out.report.pooled_validation_rmse =
        detail::pooled_rmse(run.best, members, &HouseholdDataset::validation, cfg.training.jobs);
    out.report.pooled_test_rmse = detail::pooled_rmse(run.best, members, &HouseholdDataset::test, cfg.training.jobs);
    out.models.push_back({"centralised", std::move(run.best)});
    return out;
}

namespace detail {

// Independent early-stopped training per client from per-client starting
// points; logs are concatenated in client order.
inline std::vector<EarlyStoppedRun> train_each(std::span<const HouseholdDataset* const> members,
                                               std::span<const ParameterVector> starts, int max_epochs,
                                               const TrainingSettings& settings, std::uint64_t seed,
                                               std::uint64_t round, std::string_view phase) {
    std::vector<EarlyStoppedRun> runs(members.size());
    // Clients run in parallel, so each trains single-threaded.
    TrainingSettings inner = settings;
    inner.jobs = 1;
    parallel_for(members.size(), settings.jobs, [&](std::size_t k) {
        const HouseholdDataset* one[] = {members[k]};
        const auto validate = [&](const ForecastModel& m) { return evaluate_rmse(m, members[k]->validation); };
        runs[k] = train_early_stopped(starts[k], one, validate, max_epochs, inner,
                                      shuffle_seed(seed, members[k]->household_id, round), phase);
    });
    return runs;
}

}  // namespace detail

inline ScenarioResult train_localised(std::span<const HouseholdDataset> clients, const ScenarioConfig& cfg) {
    cfg.validate();
    require(!clients.empty(), "scenario needs at least 1 client");
    ScenarioResult out;
    out.report.config = cfg;
    std::vector<const HouseholdDataset*> members;
    for (const auto& c : clients) {
        require(c.variant == clients.front().variant, "clients disagree on dataset variant");
        if (c.train.empty() || c.validation.empty() || c.test.empty())
            out.report.notes.push_back("excluded " + c.household_id + ": empty split");
        else
            members.push_back(&c);
    }
    require(!members.empty(), "no client has usable splits");
    const std::vector<ParameterVector> starts(members.size(), detail::initial_parameters(cfg));
    auto runs = detail::train_each(members, starts, cfg.training.caps.localised_epochs, cfg.training, cfg.seed, 0,
                                   "localised");
    for (auto& r : runs)
        for (auto& rec : r.log) out.report.log.push_back(std::move(rec));
    detail::finish_report(out.report, members, [&](std::size_t k) -> const ParameterVector& { return runs[k].best; },
                          cfg.training.jobs);
    for (std::size_t k = 0; k < members.size(); ++k)
        out.models.push_back({members[k]->household_id, std::move(runs[k].best)});
    return out;
}

inline ScenarioResult run_fl(std::span<const HouseholdDataset> clients, const ScenarioConfig& cfg) {
    cfg.validate();
    detail::check_clients(clients, 2);
    const auto members = detail::pointers(clients);
    FederatedOptions opt;
    opt.client_fraction = cfg.client_fraction;
    opt.local_epochs = cfg.local_epochs;
    opt.max_rounds = cfg.training.caps.fl_rounds;
    auto run = run_federated(members, detail::initial_parameters(cfg), opt, cfg.training, cfg.seed);
    ScenarioResult out;
    out.report.config = cfg;
    out.report.log = std::move(run.log);
    detail::finish_report(out.report, members, [&](std::size_t) -> const ParameterVector& { return run.best; },
                          cfg.training.jobs);
    out.models.push_back({"global", std::move(run.best)});
    return out;
}

struct ClusteringOutcome {
    ParameterVector pre_cluster;  // w_n
    std::vector<ParameterVector> updates;
    ClusterAssignment assignment;
};

inline ScenarioResult run_flhc(std::span<const HouseholdDataset> clients, const ScenarioConfig& cfg,
                               ClusteringOutcome* details = nullptr) {
    cfg.validate();
    detail::check_clients(clients, 2);
    const auto members = detail::pointers(clients);
    const HcSettings& hc = *cfg.hc;
    ScenarioResult out;
    out.report.config = cfg;

    FederatedOptions pre;
    pre.client_fraction = cfg.client_fraction;
    pre.local_epochs = cfg.local_epochs;
    pre.max_rounds = hc.rounds_before;
    pre.early_stopping = false;
    pre.phase = "precluster";
    auto phase1 = run_federated(members, detail::initial_parameters(cfg), pre, cfg.training, cfg.seed);
    const ParameterVector w_n = phase1.final_params;
    for (auto& r : phase1.log) out.report.log.push_back(std::move(r));

    // Every client trains from w_n; the updates are clustered.
    const auto update_round = static_cast<std::uint64_t>(hc.rounds_before) + 1;
    std::vector<ParameterVector> updates(members.size());
    RoundRecord burst{"update", static_cast<int>(update_round), -1, {}, {}, {}, std::numeric_limits<double>::quiet_NaN(), 0, 0};
    burst.train_loss.assign(members.size(), std::numeric_limits<double>::quiet_NaN());
    burst.participant_samples.assign(members.size(), 0);
    parallel_for(members.size(), cfg.training.jobs, [&](std::size_t k) {
        Trainer t(w_n, cfg.variant.feature_dim(), cfg.training,
                  shuffle_seed(cfg.seed, members[k]->household_id, update_round));
        for (int e = 0; e < cfg.local_epochs; ++e) burst.train_loss[k] = t.run_epoch(members[k]->train);
        updates[k] = t.params() - w_n;
        burst.participant_samples[k] = t.samples();
    });
    for (std::size_t k = 0; k < members.size(); ++k) {
        const auto& u = updates[k];
        for (Eigen::Index i = 0; i < u.size(); ++i)
            if (!std::isfinite(u[i]))
                throw NumericalFailure("client " + members[k]->household_id + " produced a non-finite update",
                                       static_cast<std::size_t>(i));
        burst.participants.push_back(members[k]->household_id);
    }
    burst.samples = detail::total(burst.participant_samples);
    notify(cfg.training, burst);
    out.report.log.push_back(std::move(burst));

    ClusterAssignment assignment = agglomerate(pairwise_euclidean(updates), hc.linkage, hc.threshold);
    out.report.cluster_labels = assignment.labels;
    out.report.cluster_count = assignment.cluster_count;

    std::vector<ParameterVector> cluster_models(static_cast<std::size_t>(assignment.cluster_count));
    for (int c = 0; c < assignment.cluster_count; ++c) {
        std::vector<const HouseholdDataset*> group;
        for (int i : assignment.members(c)) group.push_back(members[static_cast<std::size_t>(i)]);
        if (group.size() == 1)
            out.report.notes.push_back("cluster " + std::to_string(c) + " has a single client (" +
                                       group.front()->household_id + ")");
        FederatedOptions opt;
        opt.client_fraction = cfg.client_fraction;
        opt.local_epochs = cfg.local_epochs;
        opt.max_rounds = cfg.training.caps.flhc_rounds;
        opt.round_offset = update_round;
        opt.cluster = c;
        opt.phase = "cluster";
        auto run = run_federated(group, w_n, opt, cfg.training, cfg.seed);
        for (auto& r : run.log) out.report.log.push_back(std::move(r));
        cluster_models[static_cast<std::size_t>(c)] = std::move(run.best);
    }
    detail::finish_report(
        out.report, members,
        [&](std::size_t k) -> const ParameterVector& {
            return cluster_models[static_cast<std::size_t>(assignment.labels[k])];
        },
        cfg.training.jobs);
    for (int c = 0; c < assignment.cluster_count; ++c)
        out.models.push_back({"cluster_" + std::to_string(c), cluster_models[static_cast<std::size_t>(c)]});
    if (details) *details = {w_n, std::move(updates), std::move(assignment)};
    return out;
}

// Per-client training from `bases[k]` with fresh Adam state, at most the
// fine-tune cap of epochs, early-stopped on the client's own validation RMSE.
// Epoch 0 is the base itself, so no client ends worse than its base.
inline ScenarioResult fine_tune(std::span<const ParameterVector> bases, std::span<const HouseholdDataset> clients,
                                const ScenarioConfig& cfg) {
    detail::check_clients(clients, 1);
    require(bases.size() == clients.size(), "one base model per client is required");
    const auto members = detail::pointers(clients);
    auto runs = detail::train_each(members, bases, cfg.training.caps.lft_epochs, cfg.training, cfg.seed,
                                   kFineTuneRound, "finetune");
    ScenarioResult out;
    out.report.config = cfg;
    for (auto& r : runs)
        for (auto& rec : r.log) out.report.log.push_back(std::move(rec));
    detail::finish_report(out.report, members, [&](std::size_t k) -> const ParameterVector& { return runs[k].best; },
                          cfg.training.jobs);
    const int d = cfg.variant.feature_dim();
    parallel_for(members.size(), cfg.training.jobs, [&](std::size_t k) {
        const ForecastModel base = unflatten(bases[k], d);
        out.report.clients[k].base_validation_rmse = evaluate_rmse(base, members[k]->validation);
        out.report.clients[k].base_test_rmse = evaluate_rmse(base, members[k]->test);
    });
    for (std::size_t k = 0; k < members.size(); ++k)
        out.models.push_back({members[k]->household_id, std::move(runs[k].best)});
    return out;
}

// Appends the fine-tuning stage to a finished FL or FL+HC result: every
// client starts from the global model or its cluster's model.
inline ScenarioResult fine_tune_from(ScenarioResult base_run, std::span<const HouseholdDataset> clients,
                                       const ScenarioConfig& cfg) {
    std::vector<ParameterVector> bases;
    const auto& labels = base_run.report.cluster_labels;
    for (std::size_t k = 0; k < clients.size(); ++k)
        bases.push_back(labels.empty() ? base_run.models.front().params
                                       : base_run.models[static_cast<std::size_t>(labels[k])].params);
    ScenarioResult tuned = fine_tune(bases, clients, cfg);
    RunReport& r = tuned.report;
    r.energy_span = base_run.report.energy_span;
    auto log = std::move(base_run.report.log);
    for (auto& rec : r.log) log.push_back(std::move(rec));
    r.log = std::move(log);
    for (auto& c : r.clients) c.samples = 0;
    r.cluster_labels = labels;
    r.cluster_count = base_run.report.cluster_count;
    const auto members = detail::pointers(clients);
    detail::finish_report(r, members, [&](std::size_t k) -> const ParameterVector& { return tuned.models[k].params; },
                  cfg.training.jobs);
    r.notes.insert(r.notes.begin(), base_run.report.notes.begin(), base_run.report.notes.end());
    for (auto& m : base_run.models) tuned.models.push_back({"base_" + m.name, std::move(m.params)});
    return tuned;
}

inline ScenarioResult run_scenario(std::span<const HouseholdDataset> clients, const ScenarioConfig& cfg,
                                   double energy_span = 1.0) {
    cfg.validate();
    require(!clients.empty(), "scenario needs at least 1 client");
    require(clients.front().variant == cfg.variant, "dataset variant does not match the scenario config");
    ScenarioResult out;
    switch (cfg.kind) {
        case ScenarioKind::centralised: out = train_centralised(clients, cfg); break;
        case ScenarioKind::localised: out = train_localised(clients, cfg); break;
        case ScenarioKind::fl: out = run_fl(clients, cfg); break;
        case ScenarioKind::flhc: out = run_flhc(clients, cfg); break;
        case ScenarioKind::fl_lft: {
            ScenarioConfig base = cfg;
            base.kind = ScenarioKind::fl;
            auto r = run_fl(clients, base);
            out = fine_tune_from(std::move(r), clients, cfg);
            break;
        }
        case ScenarioKind::flhc_lft: {
            ScenarioConfig base = cfg;
            base.kind = ScenarioKind::flhc;
            auto r = run_flhc(clients, base);
            out = fine_tune_from(std::move(r), clients, cfg);
            break;
        }
    }
    out.report.config = cfg;
    out.report.energy_span = energy_span;
    return out;
}

inline ScenarioResult run_scenario(const PreparedVariant& data, const ScenarioConfig& cfg) {
    return run_scenario(data.households, cfg, data.normalizer.energy_span());
}

}  // namespace fedcast
