#pragma once

#include <cstdarg>
#include <cstdio>
#include <stdexcept>
#include <string>

namespace handsoff {

namespace detail {

inline std::string strformat(const char* fmt, ...) {
    va_list args;
    va_start(args, fmt);
    va_list copy;
    va_copy(copy, args);
    int n = std::vsnprintf(nullptr, 0, fmt, copy);
    va_end(copy);
    std::string out(n > 0 ? static_cast<size_t>(n) : 0, '\0');
    if (n > 0) {
        std::vsnprintf(out.data(), out.size() + 1, fmt, args);
    }
    va_end(args);
    return out;
}

} // namespace detail

/// Base class for all errors raised by this library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Problems in the textual network configuration (syntax, validation).
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Problems in the binary weights stream (truncation, surplus, bad values).
class WeightsError : public Error {
public:
    using Error::Error;
};

/// Tensor shape disagreement between an operation and its operands.
class ShapeError : public Error {
public:
    ShapeError(int layer_index, std::string message)
        : Error(std::move(message)), layer_index_(layer_index) {}

    explicit ShapeError(std::string message) : Error(std::move(message)) {}

    /// Layer the mismatch was detected at, or -1 outside graph execution.
    int layer_index() const { return layer_index_; }

private:
    int layer_index_ = -1;
};

/// Malformed annotation files, detection streams, or image data.
class DataError : public Error {
public:
    using Error::Error;
};

/// An internal invariant broke; indicates a bug, not bad input.
class InternalError : public Error {
public:
    using Error::Error;
};

} // namespace handsoff
