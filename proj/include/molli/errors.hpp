// errors.hpp - exception types shared across the toolkit.

#pragma once

#include <stdexcept>
#include <string>

namespace molli {

// Bad configuration or usage (CLI exit code 1).
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Bad data or runtime failure (CLI exit code 2).
struct DataError : std::runtime_error {
    explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

} // namespace molli
