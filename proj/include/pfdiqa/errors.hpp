#pragma once

#include <stdexcept>
#include <string>

namespace pfd {

// Error taxonomy shared by every module. The C API maps these onto status
// codes; the CLI maps them onto exit codes.

struct ArgumentError : std::invalid_argument {
    explicit ArgumentError(const std::string& msg) : std::invalid_argument(msg) {}
};

struct IoError : std::runtime_error {
    explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

// Inputs that are syntactically valid but numerically unusable
// (e.g. a zero-norm embedding that cannot be cosine-normalized).
struct DegenerateInputError : std::runtime_error {
    explicit DegenerateInputError(const std::string& msg) : std::runtime_error(msg) {}
};

// Correlation of a constant vector is undefined.
struct UndefinedCorrelationError : std::runtime_error {
    explicit UndefinedCorrelationError(const std::string& msg) : std::runtime_error(msg) {}
};

// Non-finite loss during training; carries a pointer to the diagnostic snapshot.
struct TrainingDivergenceError : std::runtime_error {
    explicit TrainingDivergenceError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace pfd
