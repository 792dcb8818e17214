#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace kvn {

// Base class for all library failures. The CLI maps subclasses to exit codes.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Violated input precondition (bad sizes, empty samples, h = 0, ...).
class PreconditionError : public Error {
public:
    using Error::Error;
};

// Invalid or inconsistent configuration block.
class ConfigError : public Error {
public:
    using Error::Error;
};

// Malformed archive / gate file / CSV. Carries the byte offset where reading failed.
class ParseError : public Error {
public:
    ParseError(const std::string& what, std::uint64_t offset)
        : Error(what + " (at byte " + std::to_string(offset) + ")"), offset_(offset) {}
    std::uint64_t offset() const { return offset_; }

private:
    std::uint64_t offset_;
};

// detect_structure could not find the 2+4 block pattern.
class StructureNotFound : public Error {
public:
    using Error::Error;
};

// Numerical breakdown: rank zero, non-finite values, solver failure.
class NumericalError : public Error {
public:
    using Error::Error;
};

// A trajectory left the bounding box of its domain.
class EscapeError : public NumericalError {
public:
    EscapeError(const std::string& what, double time) : NumericalError(what), time_(time) {}
    double time() const { return time_; }

private:
    double time_;
};

class ConvergenceError : public NumericalError {
public:
    ConvergenceError(const std::string& what, int iterations)
        : NumericalError(what + " after " + std::to_string(iterations) + " iterations"),
          iterations_(iterations) {}
    int iterations() const { return iterations_; }

private:
    int iterations_;
};

class NonFiniteError : public NumericalError {
public:
    NonFiniteError(const std::string& what, std::size_t index)
        : NumericalError(what + " (sample " + std::to_string(index) + ")"), index_(index) {}
    std::size_t index() const { return index_; }

private:
    std::size_t index_;
};

}  // namespace kvn
