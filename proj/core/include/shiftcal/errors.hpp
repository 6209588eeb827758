#pragma once

#include <stdexcept>
#include <string>

namespace shiftcal {

// Base for everything this library throws.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Invalid configuration value (bad hyperparameter, non-PD covariance, ...).
struct ConfigError : Error {
    using Error::Error;
};

// Malformed input file. line is 1-based, 0 when the error is not tied to a line.
struct ParseError : Error {
    ParseError(const std::string& msg, std::size_t line_no = 0)
        : Error(line_no ? msg + " (line " + std::to_string(line_no) + ")" : msg),
          line(line_no) {}
    std::size_t line;
};

// Incompatible shapes between operands.
struct ShapeError : Error {
    using Error::Error;
};

// Non-finite values or other numeric breakdown.
struct NumericError : Error {
    using Error::Error;
};

// Optimization failed; epoch is the step at which the loss became invalid.
struct OptimError : Error {
    OptimError(const std::string& msg, int epoch_no)
        : Error(msg + " (epoch " + std::to_string(epoch_no) + ")"), epoch(epoch_no) {}
    int epoch;
};

// Requested split produces an empty side.
struct SplitError : Error {
    using Error::Error;
};

// Weight vector sums to zero where a positive mass is required.
struct DegenerateWeightsError : Error {
    using Error::Error;
};

}  // namespace shiftcal
