#pragma once

#include <stdexcept>
#include <string>

namespace rackctl {

// Common error taxonomy. Everything user-facing derives from Error so the
// CLI can map exception type -> exit code in one place.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Bad or missing configuration (exit code 2).
class ConfigError : public Error {
public:
    using Error::Error;
};

// Malformed input data (trace rows, profile CSVs).
class ParseError : public Error {
public:
    using Error::Error;
};

// Vector/matrix dimensions do not line up.
class DimensionError : public Error {
public:
    using Error::Error;
};

// Numerical integration produced a non-finite state.
class IntegrationError : public Error {
public:
    using Error::Error;
};

// Optimization problem has no feasible point (exit code 4).
class InfeasibleError : public Error {
public:
    using Error::Error;
};

// Least-squares fit failed (rank deficiency, too few samples).
class FitError : public Error {
public:
    using Error::Error;
};

// Model training diverged or cannot run.
class TrainingError : public Error {
public:
    using Error::Error;
};

} // namespace rackctl
