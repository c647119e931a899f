#pragma once

// Two-layer stacked LSTM forecaster with a linear head.
//
// Gate blocks inside every stacked weight matrix are ordered
// forget, input, output, candidate (f, i, o, g). Each block has `hidden` rows.
//
// Flattening order (stable, platform independent):
//   layer1.input_weights      row-major, 4h x d
//   layer1.recurrent_weights  row-major, 4h x h
//   layer1.bias               4h
//   layer2.input_weights      row-major, 4h x h
//   layer2.recurrent_weights  row-major, 4h x h
//   layer2.bias               4h
//   head_weights              h
//   head_bias                 1

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "fedcast/errors.hpp"
#include "fedcast/random.hpp"

namespace fedcast {

inline constexpr int kHiddenUnits = 20;

using ParameterVector = Eigen::VectorXd;

enum class Gate : int { forget = 0, input = 1, output = 2, candidate = 3 };

struct LstmLayer {
    Eigen::MatrixXd input_weights;      // 4h x input_size
    Eigen::MatrixXd recurrent_weights;  // 4h x h
    Eigen::VectorXd bias;               // 4h

    LstmLayer() = default;
    LstmLayer(int input_size, int hidden_size)
        : input_weights(Eigen::MatrixXd::Zero(4 * hidden_size, input_size)),
          recurrent_weights(Eigen::MatrixXd::Zero(4 * hidden_size, hidden_size)),
          bias(Eigen::VectorXd::Zero(4 * hidden_size)) {
        require(input_size > 0 && hidden_size > 0, "LSTM layer sizes must be positive");
    }

    int input_size() const { return static_cast<int>(input_weights.cols()); }
    int hidden_size() const { return static_cast<int>(recurrent_weights.cols()); }

    // Per-gate views: W_{gate,x}, W_{gate,h}, b_gate.
    auto gate_input_weights(Gate g) { return input_weights.middleRows(block(g), hidden_size()); }
    auto gate_input_weights(Gate g) const { return input_weights.middleRows(block(g), hidden_size()); }
    auto gate_recurrent_weights(Gate g) { return recurrent_weights.middleRows(block(g), hidden_size()); }
    auto gate_recurrent_weights(Gate g) const {
        return recurrent_weights.middleRows(block(g), hidden_size());
    }
    auto gate_bias(Gate g) { return bias.segment(block(g), hidden_size()); }
    auto gate_bias(Gate g) const { return bias.segment(block(g), hidden_size()); }

    bool consistent() const {
        const auto h = recurrent_weights.cols();
        return h > 0 && recurrent_weights.rows() == 4 * h && input_weights.rows() == 4 * h &&
               input_weights.cols() > 0 && bias.size() == 4 * h;
    }

    std::size_t parameter_count() const {
        return static_cast<std::size_t>(input_weights.size() + recurrent_weights.size() + bias.size());
    }

    bool operator==(const LstmLayer&) const = default;

private:
    Eigen::Index block(Gate g) const { return static_cast<int>(g) * hidden_size(); }
};

struct LstmState {
    Eigen::VectorXd hidden;
    Eigen::VectorXd cell;

    static LstmState zeros(int hidden_size) {
        return {Eigen::VectorXd::Zero(hidden_size), Eigen::VectorXd::Zero(hidden_size)};
    }
};

namespace detail {

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

template <typename Derived>
bool all_finite(const Eigen::DenseBase<Derived>& m) {
    return m.derived().array().isFinite().all();
}

}  // namespace detail

// One step of a single LSTM layer for one input vector.
inline LstmState lstm_cell_forward(const Eigen::VectorXd& x, const LstmState& prev,
                                   const LstmLayer& layer) {
    require(layer.consistent(), "inconsistent LSTM layer dimensions");
    const int h = layer.hidden_size();
    require(x.size() == layer.input_size(), "input size does not match layer");
    require(prev.hidden.size() == h && prev.cell.size() == h, "state size does not match layer");
    require(detail::all_finite(x) && detail::all_finite(prev.hidden) && detail::all_finite(prev.cell),
            "non-finite LSTM input");

    const Eigen::VectorXd z = layer.input_weights * x + layer.recurrent_weights * prev.hidden + layer.bias;
    LstmState next{Eigen::VectorXd(h), Eigen::VectorXd(h)};
    for (int u = 0; u < h; ++u) {
        const double f = detail::sigmoid(z[u]);
        const double i = detail::sigmoid(z[h + u]);
        const double o = detail::sigmoid(z[2 * h + u]);
        const double g = std::tanh(z[3 * h + u]);
        next.cell[u] = prev.cell[u] * f + i * g;
        next.hidden[u] = std::tanh(next.cell[u]) * o;
    }
    return next;
}

struct ForecastModel {
    LstmLayer layer1;
    LstmLayer layer2;
    Eigen::VectorXd head_weights;
    double head_bias = 0.0;

    ForecastModel() = default;

    // All-zero model. `hidden` other than kHiddenUnits is for tests only.
    explicit ForecastModel(int feature_dim, int hidden = kHiddenUnits)
        : layer1(feature_dim, hidden),
          layer2(hidden, hidden),
          head_weights(Eigen::VectorXd::Zero(hidden)) {}

    int feature_dim() const { return layer1.input_size(); }
    int hidden_size() const { return layer1.hidden_size(); }

    std::size_t parameter_count() const {
        return layer1.parameter_count() + layer2.parameter_count() +
               static_cast<std::size_t>(head_weights.size()) + 1;
    }

    bool operator==(const ForecastModel&) const = default;
};

constexpr std::size_t parameter_count(int feature_dim, int hidden = kHiddenUnits) {
    const auto layer = [hidden](int in) {
        return static_cast<std::size_t>(4 * (hidden * in + hidden * hidden + hidden));
    };
    return layer(feature_dim) + layer(hidden) + static_cast<std::size_t>(hidden) + 1;
}

namespace detail {

template <typename Visit>
void visit_parameters(ForecastModel& m, Visit&& visit) {
    for (LstmLayer* layer : {&m.layer1, &m.layer2}) {
        for (Eigen::MatrixXd* w : {&layer->input_weights, &layer->recurrent_weights}) {
            for (Eigen::Index r = 0; r < w->rows(); ++r)
                for (Eigen::Index c = 0; c < w->cols(); ++c) visit((*w)(r, c));
        }
        for (Eigen::Index r = 0; r < layer->bias.size(); ++r) visit(layer->bias[r]);
    }
    for (Eigen::Index r = 0; r < m.head_weights.size(); ++r) visit(m.head_weights[r]);
    visit(m.head_bias);
}

}  // namespace detail

inline ParameterVector flatten(const ForecastModel& model) {
    ParameterVector out(static_cast<Eigen::Index>(model.parameter_count()));
    Eigen::Index k = 0;
    detail::visit_parameters(const_cast<ForecastModel&>(model), [&](double& v) { out[k++] = v; });
    return out;
}

inline void unflatten_into(const ParameterVector& values, ForecastModel& model) {
    require(static_cast<std::size_t>(values.size()) == model.parameter_count(),
            "parameter vector length does not match model");
    Eigen::Index k = 0;
    detail::visit_parameters(model, [&](double& v) { v = values[k++]; });
}

inline ForecastModel unflatten(const ParameterVector& values, int feature_dim, int hidden = kHiddenUnits) {
    ForecastModel model(feature_dim, hidden);
    unflatten_into(values, model);
    return model;
}

// Uniform in [-1/sqrt(hidden), 1/sqrt(hidden)], drawn in flattening order.
inline ForecastModel initialize_model(int feature_dim, std::uint64_t seed, int hidden = kHiddenUnits) {
    ForecastModel model(feature_dim, hidden);
    Rng rng(seed);
    const double bound = 1.0 / std::sqrt(static_cast<double>(hidden));
    detail::visit_parameters(model, [&](double& v) { v = rng.uniform(-bound, bound); });
    return model;
}

// A batch of B sequences laid out time-major: steps[t] is feature_dim x B.
struct Batch {
    std::vector<Eigen::MatrixXd> steps;
    Eigen::VectorXd targets;

    Eigen::Index size() const { return targets.size(); }
};

namespace detail {

struct LayerTrace {
    std::vector<Eigen::MatrixXd> gates;      // activated, 4h x B per step
    std::vector<Eigen::MatrixXd> cells;      // c_t, h x B (index t+1; index 0 is c_{-1} = 0)
    std::vector<Eigen::MatrixXd> tanh_cells; // tanh(c_t)
    std::vector<Eigen::MatrixXd> hiddens;    // h_t (index t+1; index 0 is zeros)
};

inline LayerTrace run_layer(const LstmLayer& layer, std::span<const Eigen::MatrixXd> inputs,
                            Eigen::Index batch) {
    const int h = layer.hidden_size();
    const auto steps = inputs.size();
    LayerTrace tr;
    tr.gates.reserve(steps);
    tr.cells.reserve(steps + 1);
    tr.tanh_cells.reserve(steps);
    tr.hiddens.reserve(steps + 1);
    tr.cells.push_back(Eigen::MatrixXd::Zero(h, batch));
    tr.hiddens.push_back(Eigen::MatrixXd::Zero(h, batch));
    for (std::size_t t = 0; t < steps; ++t) {
        Eigen::MatrixXd z = layer.input_weights * inputs[t];
        z.noalias() += layer.recurrent_weights * tr.hiddens.back();
        z.colwise() += layer.bias;
        z.topRows(3 * h) = (1.0 + (-z.topRows(3 * h)).array().exp()).inverse().matrix();
        z.bottomRows(h) = z.bottomRows(h).array().tanh().matrix();
        Eigen::MatrixXd c = z.middleRows(0, h).cwiseProduct(tr.cells.back()) +
                            z.middleRows(h, h).cwiseProduct(z.bottomRows(h));
        Eigen::MatrixXd tc = c.array().tanh().matrix();
        tr.hiddens.push_back(z.middleRows(2 * h, h).cwiseProduct(tc));
        tr.cells.push_back(std::move(c));
        tr.tanh_cells.push_back(std::move(tc));
        tr.gates.push_back(std::move(z));
    }
    return tr;
}

// Backpropagates through one layer. `d_hidden[t]` holds the external gradient
// arriving at h_t (may be empty for steps with none). Accumulates parameter
// gradients into `grad` and returns the gradients w.r.t. the layer inputs.
inline std::vector<Eigen::MatrixXd> backprop_layer(const LstmLayer& layer, const LayerTrace& tr,
                                                   std::span<const Eigen::MatrixXd> inputs,
                                                   const std::vector<Eigen::MatrixXd>& d_hidden,
                                                   LstmLayer& grad, bool want_input_grads) {
    const int h = layer.hidden_size();
    const auto steps = inputs.size();
    const Eigen::Index batch = tr.hiddens.front().cols();
    Eigen::MatrixXd dh_next = Eigen::MatrixXd::Zero(h, batch);
    Eigen::MatrixXd dc_next = Eigen::MatrixXd::Zero(h, batch);
    Eigen::MatrixXd dz(4 * h, batch);
    std::vector<Eigen::MatrixXd> d_inputs(want_input_grads ? steps : 0);

    for (std::size_t s = steps; s-- > 0;) {
        const Eigen::MatrixXd& g = tr.gates[s];
        const auto f = g.middleRows(0, h).array();
        const auto i = g.middleRows(h, h).array();
        const auto o = g.middleRows(2 * h, h).array();
        const auto cand = g.bottomRows(h).array();
        const auto tc = tr.tanh_cells[s].array();

        Eigen::ArrayXXd dh = dh_next.array();
        if (d_hidden[s].size() > 0) dh += d_hidden[s].array();
        const Eigen::ArrayXXd dc = dc_next.array() + dh * o * (1.0 - tc.square());

        dz.middleRows(0, h) = (dc * tr.cells[s].array() * f * (1.0 - f)).matrix();
        dz.middleRows(h, h) = (dc * cand * i * (1.0 - i)).matrix();
        dz.middleRows(2 * h, h) = (dh * tc * o * (1.0 - o)).matrix();
        dz.bottomRows(h) = (dc * i * (1.0 - cand.square())).matrix();

        grad.input_weights.noalias() += dz * inputs[s].transpose();
        grad.recurrent_weights.noalias() += dz * tr.hiddens[s].transpose();
        grad.bias += dz.rowwise().sum();

        if (want_input_grads) d_inputs[s].noalias() = layer.input_weights.transpose() * dz;
        dh_next.noalias() = layer.recurrent_weights.transpose() * dz;
        dc_next = (dc * f).matrix();
    }
    return d_inputs;
}

inline void check_batch(const ForecastModel& model, const Batch& batch) {
    require(!batch.steps.empty(), "sequence must contain at least one step");
    require(batch.size() > 0, "batch must be nonempty");
    for (const auto& x : batch.steps) {
        require(x.rows() == model.feature_dim(), "feature dimension does not match model");
        require(x.cols() == batch.size(), "batch step width does not match target count");
    }
}

}  // namespace detail

// Predictions for every sequence in the batch.
inline Eigen::VectorXd predict(const ForecastModel& model, const Batch& batch) {
    detail::check_batch(model, batch);
    const auto l1 = detail::run_layer(model.layer1, batch.steps, batch.size());
    const std::span<const Eigen::MatrixXd> h1(l1.hiddens.data() + 1, batch.steps.size());
    const auto l2 = detail::run_layer(model.layer2, h1, batch.size());
    Eigen::VectorXd out = l2.hiddens.back().transpose() * model.head_weights;
    out.array() += model.head_bias;
    return out;
}

// Single-sequence forward pass; `window` is feature_dim x K, chronological.
inline double model_forward(const Eigen::MatrixXd& window, const ForecastModel& model) {
    require(window.cols() >= 1, "sequence must contain at least one step");
    require(window.rows() == model.feature_dim(), "feature dimension does not match model");
    require(detail::all_finite(window), "non-finite sequence value");
    LstmState s1 = LstmState::zeros(model.hidden_size());
    LstmState s2 = LstmState::zeros(model.hidden_size());
    for (Eigen::Index t = 0; t < window.cols(); ++t) {
        s1 = lstm_cell_forward(window.col(t), s1, model.layer1);
        s2 = lstm_cell_forward(s1.hidden, s2, model.layer2);
    }
    return model.head_weights.dot(s2.hidden) + model.head_bias;
}

inline double mse_loss(const Eigen::VectorXd& predictions, const Eigen::VectorXd& targets) {
    require(predictions.size() == targets.size(), "prediction and target lengths differ");
    require(predictions.size() > 0, "mse of empty vectors");
    return (predictions - targets).squaredNorm() / static_cast<double>(predictions.size());
}

struct GradientResult {
    double loss = 0.0;
    ParameterVector gradient;
};

// Gradient of the batch mean squared error, in flattening order.
inline GradientResult compute_gradients(const ForecastModel& model, const Batch& batch) {
    detail::check_batch(model, batch);
    const Eigen::Index n = batch.size();
    const auto steps = batch.steps.size();

    const auto l1 = detail::run_layer(model.layer1, batch.steps, n);
    const std::span<const Eigen::MatrixXd> h1(l1.hiddens.data() + 1, steps);
    const auto l2 = detail::run_layer(model.layer2, h1, n);
    const Eigen::MatrixXd& top = l2.hiddens.back();

    Eigen::VectorXd pred = top.transpose() * model.head_weights;
    pred.array() += model.head_bias;
    const Eigen::VectorXd residual = pred - batch.targets;

    GradientResult result;
    result.loss = residual.squaredNorm() / static_cast<double>(n);
    const Eigen::VectorXd d_pred = residual * (2.0 / static_cast<double>(n));

    ForecastModel grad(model.feature_dim(), model.hidden_size());
    grad.head_weights = top * d_pred;
    grad.head_bias = d_pred.sum();

    std::vector<Eigen::MatrixXd> d_h2(steps);
    d_h2.back() = model.head_weights * d_pred.transpose();
    const auto d_h1 = detail::backprop_layer(model.layer2, l2, h1, d_h2, grad.layer2, true);
    detail::backprop_layer(model.layer1, l1, batch.steps, d_h1, grad.layer1, false);

    result.gradient = flatten(grad);
    for (Eigen::Index k = 0; k < result.gradient.size(); ++k) {
        if (!std::isfinite(result.gradient[k]))
            throw NumericalFailure("non-finite gradient", static_cast<std::size_t>(k));
    }
    return result;
}

// Builds a batch from standalone windows (feature_dim x K each).
inline Batch make_batch(std::span<const Eigen::MatrixXd> windows, std::span<const double> labels) {
    require(!windows.empty(), "batch must be nonempty");
    require(windows.size() == labels.size(), "window and label counts differ");
    const auto d = windows.front().rows();
    const auto k = windows.front().cols();
    require(k >= 1, "sequence must contain at least one step");
    Batch b;
    b.steps.assign(static_cast<std::size_t>(k), Eigen::MatrixXd(d, static_cast<Eigen::Index>(windows.size())));
    b.targets.resize(static_cast<Eigen::Index>(windows.size()));
    for (std::size_t j = 0; j < windows.size(); ++j) {
        require(windows[j].rows() == d && windows[j].cols() == k, "windows in a batch must share a shape");
        for (Eigen::Index t = 0; t < k; ++t) b.steps[static_cast<std::size_t>(t)].col(static_cast<Eigen::Index>(j)) = windows[j].col(t);
        b.targets[static_cast<Eigen::Index>(j)] = labels[j];
    }
    return b;
}

}  // namespace fedcast
