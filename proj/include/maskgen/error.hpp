#pragma once

#include <stdexcept>
#include <string>

namespace maskgen {

// Error taxonomy used across the project. Every failure mode maps to one of
// these so callers (CLI, tests) can distinguish bad configuration from bad
// runtime state.

struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error("config error: " + msg) {}
};

struct DomainError : std::runtime_error {
    explicit DomainError(const std::string& msg) : std::runtime_error("domain error: " + msg) {}
};

// Contract violations between modules (shape mismatches, unnormalized inputs).
struct ContractError : std::runtime_error {
    explicit ContractError(const std::string& msg) : std::runtime_error("contract error: " + msg) {}
};

struct QuantizationError : std::runtime_error {
    explicit QuantizationError(const std::string& msg) : std::runtime_error("quantization error: " + msg) {}
};

// A token grid still contains MASK where a fully decoded grid is required.
struct IncompleteStateError : std::runtime_error {
    explicit IncompleteStateError(const std::string& msg) : std::runtime_error("incomplete state: " + msg) {}
};

struct EvalUnavailableError : std::runtime_error {
    explicit EvalUnavailableError(const std::string& msg) : std::runtime_error("evaluation unavailable: " + msg) {}
};

struct TrainingDivergence : std::runtime_error {
    explicit TrainingDivergence(const std::string& msg) : std::runtime_error("training diverged: " + msg) {}
};

struct IoError : std::runtime_error {
    explicit IoError(const std::string& msg) : std::runtime_error("io error: " + msg) {}
};

} // namespace maskgen
