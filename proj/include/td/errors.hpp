#pragma once

#include <stdexcept>
#include <string>

namespace td {

// Error taxonomy used across the toolkit. Everything derives from
// std::runtime_error so callers that do not care can catch one type;
// the CLI maps each category to a machine-parsable one-liner.

struct ShapeError : std::runtime_error {
    explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};

struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

struct ParseError : std::runtime_error {
    ParseError(const std::string& msg, size_t byte_offset)
        : std::runtime_error(msg + " (byte " + std::to_string(byte_offset) + ")"),
          offset(byte_offset) {}
    size_t offset;
};

struct ValidationError : std::runtime_error {
    explicit ValidationError(const std::string& msg) : std::runtime_error(msg) {}
};

struct IoError : std::runtime_error {
    explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace td
