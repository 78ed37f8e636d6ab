#pragma once

#include <stdexcept>
#include <string>

namespace pvsynth {

// Error taxonomy shared across the pipeline. Exit-code mapping lives in the
// CLI: config -> 2, dependency -> 3, training/numeric -> 4.
struct DomainError : std::invalid_argument {
    explicit DomainError(const std::string& m) : std::invalid_argument(m) {}
};

struct ResourceError : std::runtime_error {
    explicit ResourceError(const std::string& m) : std::runtime_error(m) {}
};

struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& m) : std::runtime_error(m) {}
};

struct TrainingError : std::runtime_error {
    explicit TrainingError(const std::string& m) : std::runtime_error(m) {}
};

struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& m) : std::runtime_error(m) {}
};

struct DependencyError : std::runtime_error {
    explicit DependencyError(const std::string& m) : std::runtime_error(m) {}
};

struct IntegrityError : std::runtime_error {
    explicit IntegrityError(const std::string& m) : std::runtime_error(m) {}
};

}  // namespace pvsynth
