#pragma once

#include <stdexcept>
#include <string>

namespace rhee {

/// Thrown when a caller violates a documented precondition.
class UsageError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// A rollout produced a non-finite state.
class IntegrationDiverged : public std::runtime_error {
public:
    IntegrationDiverged(double time, const std::string& what)
        : std::runtime_error(what), time_(time) {}
    double time() const { return time_; }

private:
    double time_;
};

/// Measurement is undefined at the queried geometry (e.g. sensor on top of target).
class ModelSingular : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace rhee
