#pragma once

// Minibatch training, evaluation and early stopping shared by every scenario.

#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include "fedcast/adam.hpp"
#include "fedcast/data_pipeline.hpp"
#include "fedcast/errors.hpp"
#include "fedcast/lstm.hpp"
#include "fedcast/random.hpp"

namespace fedcast {

class RecordSink;

struct TrainingCaps {
    int centralised_epochs = 500;
    int localised_epochs = 500;
    int fl_rounds = 500;
    int flhc_rounds = 200;
    int lft_epochs = 25;

    bool operator==(const TrainingCaps&) const = default;
};

struct TrainingSettings {
    int batch_size = 256;
    double learning_rate = 1e-3;
    int patience = 10;  // evaluations without improvement before stopping
    TrainingCaps caps;
    int jobs = 1;       // worker threads; never changes results
    RecordSink* sink = nullptr;  // optional live copy of the run log

    bool operator==(const TrainingSettings&) const = default;
};

struct ErrorSum {
    double sse = 0.0;
    std::size_t count = 0;

    double rmse() const { return count ? std::sqrt(sse / static_cast<double>(count)) : std::numeric_limits<double>::quiet_NaN(); }
    ErrorSum& operator+=(const ErrorSum& o) {
        sse += o.sse;
        count += o.count;
        return *this;
    }
};

// Squared error of `model` over every sequence of `set`, in fixed-size chunks.
inline ErrorSum squared_error(const ForecastModel& model, const SequenceSet& set, std::size_t chunk = 2048) {
    ErrorSum out;
    std::vector<std::size_t> idx;
    for (std::size_t lo = 0; lo < set.size(); lo += chunk) {
        const std::size_t hi = std::min(set.size(), lo + chunk);
        idx.resize(hi - lo);
        for (std::size_t i = lo; i < hi; ++i) idx[i - lo] = i;
        const Batch b = set.batch(idx);
        out.sse += (predict(model, b) - b.targets).squaredNorm();
        out.count += idx.size();
    }
    return out;
}

inline double evaluate_rmse(const ForecastModel& model, const SequenceSet& set) { return squared_error(model, set).rmse(); }

struct SampleRef {
    std::uint32_t set = 0;
    std::uint32_t index = 0;
};

inline Batch gather_batch(std::span<const SequenceSet* const> sets, std::span<const SampleRef> refs) {
    require(!refs.empty(), "batch must be nonempty");
    const int k = sets.front()->k();
    const auto d = sets.front()->feature_dim();
    const auto n = static_cast<Eigen::Index>(refs.size());
    Batch b;
    b.steps.assign(static_cast<std::size_t>(k), Eigen::MatrixXd(d, n));
    b.targets.resize(n);
    for (Eigen::Index j = 0; j < n; ++j) {
        const auto& r = refs[static_cast<std::size_t>(j)];
        const SequenceSet& s = *sets[r.set];
        const auto start = static_cast<Eigen::Index>(r.index);
        for (int t = 0; t < k; ++t) b.steps[static_cast<std::size_t>(t)].col(j) = s.rows().col(start + t);
        b.targets[j] = s.label(r.index);
    }
    return b;
}

// A model plus its Adam state, trained epoch by epoch over one or more
// sequence sets. Construction always starts from fresh optimizer moments.
class Trainer {
public:
    Trainer(const ParameterVector& start, int feature_dim, const TrainingSettings& settings, std::uint64_t shuffle_seed)
        : params_(start),
          model_(unflatten(start, feature_dim)),
          adam_(static_cast<std::size_t>(start.size()), settings.learning_rate),
          batch_size_(settings.batch_size),
          rng_(shuffle_seed) {
        require(batch_size_ >= 1, "batch size must be positive");
    }

    // One pass over every sample in `sets` in a fresh random order.
    // Returns the mean of the batch losses.
    double run_epoch(std::span<const SequenceSet* const> sets) {
        require(!sets.empty(), "no training data");
        refs_.clear();
        for (std::uint32_t s = 0; s < sets.size(); ++s) {
            require(sets[s]->feature_dim() == model_.feature_dim(), "training data does not match model");
            for (std::uint32_t i = 0; i < sets[s]->size(); ++i) refs_.push_back({s, i});
        }
        require(!refs_.empty(), "no training sequences");
        rng_.shuffle(std::span(refs_));
        double loss_sum = 0.0;
        std::size_t batches = 0;
        for (std::size_t lo = 0; lo < refs_.size(); lo += static_cast<std::size_t>(batch_size_)) {
            const std::size_t hi = std::min(refs_.size(), lo + static_cast<std::size_t>(batch_size_));
            const Batch b = gather_batch(sets, std::span(refs_).subspan(lo, hi - lo));
            const auto g = compute_gradients(model_, b);
            adam_step(params_, g.gradient, adam_);
            unflatten_into(params_, model_);
            loss_sum += g.loss;
            ++batches;
        }
        samples_ += refs_.size();
        return loss_sum / static_cast<double>(batches);
    }

    double run_epoch(const SequenceSet& set) {
        const SequenceSet* sets[] = {&set};
        return run_epoch(sets);
    }

    const ForecastModel& model() const { return model_; }
    const ParameterVector& params() const { return params_; }
    std::uint64_t samples() const { return samples_; }
    const AdamState& optimizer() const { return adam_; }

private:
    ParameterVector params_;
    ForecastModel model_;
    AdamState adam_;
    int batch_size_;
    Rng rng_;
    std::vector<SampleRef> refs_;
    std::uint64_t samples_ = 0;
};

// Tracks the best validation metric and a bitwise snapshot of its parameters.
class EarlyStopper {
public:
    explicit EarlyStopper(int patience) : patience_(patience) { require(patience >= 1, "patience must be positive"); }

    // Returns true when `metric` improves strictly on the best so far.
    bool observe(double metric, const ParameterVector& params) {
        ++observations_;
        if (metric < best_) {
            best_ = metric;
            snapshot_ = params;
            best_at_ = observations_ - 1;
            since_ = 0;
            return true;
        }
        ++since_;
        return false;
    }

    bool exhausted() const { return since_ >= patience_; }
    bool has_snapshot() const { return snapshot_.size() > 0; }
    double best_metric() const { return best_; }
    const ParameterVector& best_params() const { return snapshot_; }
    int since_improvement() const { return since_; }
    // Zero-based index of the observation that produced the snapshot.
    int best_observation() const { return best_at_; }

private:
    int patience_;
    double best_ = std::numeric_limits<double>::infinity();
    ParameterVector snapshot_;
    int since_ = 0;
    int observations_ = 0;
    int best_at_ = -1;
};

}  // namespace fedcast
