#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace gbpse {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed input text. `line()` is 1-based; 0 when no line applies.
class ParseError : public Error {
public:
    ParseError(const std::string& what, std::size_t line)
        : Error(line ? "line " + std::to_string(line) + ": " + what : what), line_(line) {}

    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

/// Inconsistent network topology (dangling endpoints, self loops, ...).
class TopologyError : public Error {
public:
    using Error::Error;
};

/// A caller broke a documented precondition.
class ContractError : public Error {
public:
    using Error::Error;
};

/// Non-finite arithmetic or a failed numerical procedure.
class NumericalError : public Error {
public:
    NumericalError(const std::string& what, int iteration = -1)
        : Error(iteration >= 0 ? what + " (iteration " + std::to_string(iteration) + ")" : what),
          iteration_(iteration) {}

    int iteration() const noexcept { return iteration_; }

private:
    int iteration_;
};

}  // namespace gbpse
