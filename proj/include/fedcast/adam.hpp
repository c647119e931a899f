#pragma once

#include <cmath>
#include <cstdint>

#include "fedcast/errors.hpp"
#include "fedcast/lstm.hpp"

namespace fedcast {

struct AdamState {
    Eigen::VectorXd first_moment;
    Eigen::VectorXd second_moment;
    std::int64_t step_count = 0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    double learning_rate = 1e-3;

    AdamState() = default;
    explicit AdamState(std::size_t n, double lr = 1e-3)
        : first_moment(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n))),
          second_moment(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n))),
          learning_rate(lr) {}

    // Fresh moments, same hyperparameters.
    void reset() {
        first_moment.setZero();
        second_moment.setZero();
        step_count = 0;
    }
};

// Bias-corrected Adam update applied in place.
inline void adam_step(ParameterVector& params, const ParameterVector& grad, AdamState& state) {
    require(grad.size() == params.size(), "gradient length does not match parameters");
    require(state.first_moment.size() == params.size() && state.second_moment.size() == params.size(),
            "optimizer state length does not match parameters");
    ++state.step_count;
    const double t = static_cast<double>(state.step_count);
    const double correction1 = 1.0 - std::pow(state.beta1, t);
    const double correction2 = 1.0 - std::pow(state.beta2, t);
    state.first_moment = state.beta1 * state.first_moment + (1.0 - state.beta1) * grad;
    state.second_moment =
        state.beta2 * state.second_moment + (1.0 - state.beta2) * grad.cwiseProduct(grad);
    const Eigen::ArrayXd m_hat = state.first_moment.array() / correction1;
    const Eigen::ArrayXd v_hat = state.second_moment.array() / correction2;
    params.array() -= state.learning_rate * m_hat / (v_hat.sqrt() + state.epsilon);
}

inline void adam_step(ForecastModel& model, const ParameterVector& grad, AdamState& state) {
    ParameterVector params = flatten(model);
    adam_step(params, grad, state);
    unflatten_into(params, model);
}

}  // namespace fedcast
