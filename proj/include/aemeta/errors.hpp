#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace aemeta {

/// Argument outside the mathematical domain of an operation (non-finite
/// rates, out-of-range latent counts, dimension mismatches).
class DomainError : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

/// Inconsistent model or analysis configuration.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Input text that could not be turned into a dataset or configuration.
/// Carries every problem found, each prefixed with its location.
class ParseError : public std::runtime_error {
public:
    explicit ParseError(std::vector<std::string> issues)
        : std::runtime_error(join(issues)), issues_(std::move(issues)) {}

    const std::vector<std::string>& issues() const noexcept { return issues_; }

private:
    static std::string join(const std::vector<std::string>& issues) {
        std::string out;
        for (const auto& s : issues) {
            if (!out.empty()) out += "; ";
            out += s;
        }
        return out;
    }

    std::vector<std::string> issues_;
};

/// A file could not be opened or written.
class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Sampler could not find a starting point with finite log density.
class InitializationError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Mixture fitting failed to converge on every restart.
class FitError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace aemeta
