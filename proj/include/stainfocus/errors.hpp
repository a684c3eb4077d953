#pragma once

#include <stdexcept>
#include <string>

namespace stainfocus {

// Malformed input text (CSV rows, config lines, checkpoint headers).
class ParseError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Well-formed input that violates a domain constraint.
class ValidationError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Inconsistent or incomplete run configuration.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace stainfocus
