#pragma once

#include <stdexcept>
#include <string>

namespace weakts {

// Failure classes used across the library. Callers dispatch on the type,
// messages carry the offending shapes/values.

// Shape or extent mismatch between operands.
struct DimensionError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Invalid or inconsistent configuration values.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// A call that violates an operation's contract (bad argument state).
struct ContractError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Non-finite or otherwise unusable numeric input.
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Misuse of the gradient tape (detached loss, double sweep, stale node).
struct TapeError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Malformed input file; message names the line where parsing failed.
struct ParseError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace weakts
