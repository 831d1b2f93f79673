#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace godiff {

/// Bad input: a config value, a file that violates a type invariant, a
/// precondition the caller could have checked. CLI exit code 1.
class ValidationError : public std::runtime_error {
public:
    explicit ValidationError(const std::string& what) : std::runtime_error(what) {}

    ValidationError(const std::string& context, std::vector<std::string> violations)
        : std::runtime_error(join(context, violations)), violations_(std::move(violations)) {}

    const std::vector<std::string>& violations() const noexcept { return violations_; }

private:
    static std::string join(const std::string& context, const std::vector<std::string>& v) {
        std::string out = context;
        for (const auto& s : v) {
            out += "\n  - ";
            out += s;
        }
        return out;
    }

    std::vector<std::string> violations_;
};

/// Malformed serialized input. The message names the offending field.
class ParseError : public ValidationError {
public:
    explicit ParseError(const std::string& what) : ValidationError(what) {}
};

/// Filesystem failure. CLI exit code 2.
class IoError : public std::runtime_error {
public:
    explicit IoError(const std::string& what) : std::runtime_error(what) {}
};

/// A pluggable component (generator, embedder) broke its contract. CLI exit code 3.
class ContractViolation : public std::logic_error {
public:
    explicit ContractViolation(const std::string& what) : std::logic_error(what) {}
};

}  // namespace godiff
