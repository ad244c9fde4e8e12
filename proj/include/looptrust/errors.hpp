#pragma once

#include <stdexcept>
#include <string>

namespace looptrust {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class InvalidArgument : public Error {
public:
    using Error::Error;
};

class InvalidSpec : public Error {
public:
    explicit InvalidSpec(const std::string& what) : Error("invalid spec: " + what) {}
};

/// Malformed input file. Row and column are 1-based; 0 means "not applicable".
class ParseError : public Error {
public:
    ParseError(const std::string& what, std::size_t row = 0, std::size_t column = 0)
        : Error(format(what, row, column)), row_(row), column_(column) {}

    std::size_t row() const noexcept { return row_; }
    std::size_t column() const noexcept { return column_; }

private:
    static std::string format(const std::string& what, std::size_t row, std::size_t column) {
        if (row == 0) return "parse error: " + what;
        std::string loc = "row " + std::to_string(row);
        if (column != 0) loc += ", column " + std::to_string(column);
        return "parse error at " + loc + ": " + what;
    }

    std::size_t row_;
    std::size_t column_;
};

class DegenerateSegmentation : public Error {
public:
    using Error::Error;
};

class UnsupportedNesting : public Error {
public:
    using Error::Error;
};

class InsufficientPixels : public Error {
public:
    using Error::Error;
};

/// Raised when a confidence region would have zero variance (noise-free input).
class DegenerateRegion : public Error {
public:
    using Error::Error;
};

class LookupError : public Error {
public:
    using Error::Error;
};

class RankDeficiency : public Error {
public:
    using Error::Error;
};

}  // namespace looptrust
