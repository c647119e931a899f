#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace fedcast {

// Caller broke a precondition (shape mismatch, empty input, bad argument).
class ContractError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// Input data failed validation (malformed files, gaps, missing coverage).
class InputError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// A non-finite value appeared during training or aggregation.
class NumericalFailure : public std::runtime_error {
public:
    NumericalFailure(const std::string& what, std::size_t index)
        : std::runtime_error(what + " (parameter index " + std::to_string(index) + ")"),
          index_(index) {}

    std::size_t index() const noexcept { return index_; }

private:
    std::size_t index_;
};

inline void require(bool ok, const char* message) {
    if (!ok) throw ContractError(message);
}

inline void require(bool ok, const std::string& message) {
    if (!ok) throw ContractError(message);
}

}  // namespace fedcast
