#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace opmodenet {

/// Base of every error thrown by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed input text. Line and column are 1-based; 0 means unknown.
class ParseError : public Error {
public:
    ParseError(const std::string& what, std::size_t line = 0, std::size_t column = 0)
        : Error(format(what, line, column)), line_(line), column_(column) {}

    std::size_t line() const noexcept { return line_; }
    std::size_t column() const noexcept { return column_; }

private:
    static std::string format(const std::string& what, std::size_t line, std::size_t column) {
        if (line == 0) return what;
        return what + " (line " + std::to_string(line) + ", column " + std::to_string(column) + ")";
    }

    std::size_t line_;
    std::size_t column_;
};

/// Well-formed input that violates a data invariant. `items` names the offenders.
class ValidationError : public Error {
public:
    ValidationError(const std::string& what, std::vector<std::string> items = {})
        : Error(format(what, items)), items_(std::move(items)) {}

    const std::vector<std::string>& items() const noexcept { return items_; }

private:
    static std::string format(const std::string& what, const std::vector<std::string>& items) {
        std::string out = what;
        if (!items.empty()) {
            out += ":";
            for (const auto& item : items) out += " " + item;
        }
        return out;
    }

    std::vector<std::string> items_;
};

/// Argument outside the mathematical domain of an operation.
class DomainError : public Error {
public:
    using Error::Error;
};

/// Invalid or inconsistent configuration.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Tensor or vector dimension mismatch.
class ShapeError : public Error {
public:
    using Error::Error;
};

}  // namespace opmodenet
