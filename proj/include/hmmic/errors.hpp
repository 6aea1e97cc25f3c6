#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace hmmic {

/// Parameter outside the model's constraint set (or on its boundary where
/// the interior is required).
class ParameterDomainError : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

/// All particle weights vanished at time index `t`.
class DegenerateFilterError : public std::runtime_error {
public:
    DegenerateFilterError(std::size_t t, const std::string& what)
        : std::runtime_error(what + " (t=" + std::to_string(t) + ")"), t_(t) {}

    std::size_t time_index() const noexcept { return t_; }

private:
    std::size_t t_;
};

/// Observed-information estimate could not be made positive definite.
class EvidenceUnavailableError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Penalty function is not monotone on the classification grid.
class ClassificationError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Bad experiment / CLI configuration.
class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

}  // namespace hmmic
