#pragma once

#include <stdexcept>
#include <string>

namespace fracal {

// Raised when an input file cannot be read or violates the documented schema.
class ParseError : public std::runtime_error {
public:
    ParseError(const std::string& where, const std::string& what)
        : std::runtime_error(where.empty() ? what : where + ": " + what), where_(where) {}

    const std::string& where() const noexcept { return where_; }

private:
    std::string where_;
};

class InvalidArgument : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// Too few box-count pairs to fit a slope; callers apply the fallback dimension.
class InsufficientData : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class UndefinedCorrelation : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

// Logits file mode is incompatible with the requested calibration method.
class ModeMismatch : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

}  // namespace fracal
