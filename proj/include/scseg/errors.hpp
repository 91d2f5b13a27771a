#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace scseg {

/// Base class for all errors raised by this library. Everything derived from
/// it indicates a violated precondition, a malformed input, or a bad config;
/// anything else escaping the library is a genuine internal bug.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

/// Operand dimensions do not line up (messages name both shapes).
class ShapeError : public Error {
public:
    using Error::Error;
};

/// A caller-facing precondition was violated (empty input, bad index, ...).
class ContractError : public Error {
public:
    using Error::Error;
};

/// A row could not be normalized because its norm is (near) zero.
class DegenerateRowError : public Error {
public:
    DegenerateRowError(const std::string& msg, std::size_t row)
        : Error(msg), row_(row) {}
    std::size_t row() const noexcept { return row_; }

private:
    std::size_t row_;
};

/// A serialized artifact is malformed; carries the byte offset of the fault.
class FormatError : public Error {
public:
    FormatError(const std::string& msg, std::size_t byte_offset)
        : Error(msg), offset_(byte_offset) {}
    std::size_t byte_offset() const noexcept { return offset_; }

private:
    std::size_t offset_;
};

/// A configuration value is missing, unparsable, or out of range.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// A numeric evaluation produced a non-finite value.
class EvalError : public Error {
public:
    using Error::Error;
};

/// Training diverged or was otherwise aborted; carries the failing step.
class TrainingError : public Error {
public:
    TrainingError(const std::string& msg, std::size_t step)
        : Error(msg), step_(step) {}
    std::size_t step() const noexcept { return step_; }

private:
    std::size_t step_;
};

} // namespace scseg
