#pragma once

#include <stdexcept>
#include <string>

namespace rvlm {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Inconsistent tensor shapes or dimension mismatches between operands.
class ShapeError : public Error {
public:
    using Error::Error;
};

/// Invalid configuration values (stride not dividing the grid, K == 0, ...).
class ConfigError : public Error {
public:
    using Error::Error;
};

/// NaN/Inf encountered during training or evaluation.
class NumericError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

enum class DecodeFailure {
    BadMagic,
    VersionMismatch,
    WrongKind,
    Truncated,
    ShapeMismatch,
    ChecksumMismatch,
    OutOfRange,
    Malformed,
};

inline const char* to_string(DecodeFailure f) {
    switch (f) {
        case DecodeFailure::BadMagic: return "bad magic";
        case DecodeFailure::VersionMismatch: return "version mismatch";
        case DecodeFailure::WrongKind: return "unexpected record kind";
        case DecodeFailure::Truncated: return "truncated payload";
        case DecodeFailure::ShapeMismatch: return "shape/length mismatch";
        case DecodeFailure::ChecksumMismatch: return "checksum mismatch";
        case DecodeFailure::OutOfRange: return "value out of range";
        case DecodeFailure::Malformed: return "malformed record";
    }
    return "unknown";
}

/// Structured decode failure; `failure()` distinguishes the cause.
class DecodeError : public Error {
public:
    DecodeError(DecodeFailure failure, const std::string& detail)
        : Error(std::string(to_string(failure)) + ": " + detail), failure_(failure), detail_(detail) {}

    DecodeFailure failure() const noexcept { return failure_; }
    const std::string& detail() const noexcept { return detail_; }

private:
    DecodeFailure failure_;
    std::string detail_;
};

}  // namespace rvlm
