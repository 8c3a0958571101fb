#pragma once

#include <stdexcept>
#include <string>

namespace sntf {

/// Bad flags or configuration values.
class UsageError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Malformed, missing or dimension-inconsistent data.
class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Non-finite loss, solver breakdown.
class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

namespace detail {

inline void require(bool cond, const std::string& what) {
    if (!cond) throw DataError(what);
}

} // namespace detail
} // namespace sntf
