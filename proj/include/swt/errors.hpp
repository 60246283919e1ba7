#pragma once

#include <stdexcept>
#include <string>

namespace swt {

// Shape disagreement between operands.
struct DimensionError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Invalid configuration value or combination.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Malformed binary or text input.
struct FormatError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Caller broke a documented precondition.
struct ContractError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// A required input file or directory does not exist.
struct NotFoundError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// NaN/Inf where a finite value is required.
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace swt
