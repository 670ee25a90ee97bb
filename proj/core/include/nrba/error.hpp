#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace nrba {

/// Warnings surfaced by an operation. Callers pass a pointer to collect them;
/// a null pointer discards them.
using Warnings = std::vector<std::string>;

inline void warn(Warnings* sink, std::string message) {
    if (sink != nullptr) sink->push_back(std::move(message));
}

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Invalid configuration, schema, or scenario.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Malformed or inconsistent input data.
class DataError : public Error {
public:
    using Error::Error;
};

/// A numerical procedure failed (non-convergence, separation, singularity).
class NumericalError : public Error {
public:
    using Error::Error;
};

class ConvergenceError : public NumericalError {
public:
    ConvergenceError(const std::string& what, std::vector<double> trace)
        : NumericalError(what), trace_(std::move(trace)) {}
    const std::vector<double>& trace() const noexcept { return trace_; }

private:
    std::vector<double> trace_;
};

class SeparationError : public NumericalError {
public:
    SeparationError(const std::string& what, std::vector<std::string> columns)
        : NumericalError(what), columns_(std::move(columns)) {}
    const std::vector<std::string>& columns() const noexcept { return columns_; }

private:
    std::vector<std::string> columns_;
};

class SingularError : public NumericalError {
public:
    SingularError(const std::string& what, std::vector<std::string> columns)
        : NumericalError(what), columns_(std::move(columns)) {}
    const std::vector<std::string>& columns() const noexcept { return columns_; }

private:
    std::vector<std::string> columns_;
};

}  // namespace nrba
