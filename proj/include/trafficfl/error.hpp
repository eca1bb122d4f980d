#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace trafficfl {

/// Input outside an operation's mathematical domain (bad M, empty data, ...).
class DomainError : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

/// Non-finite intermediate values (logits, losses).
class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Burstiness requested for a user whose expected arrival rate is zero.
class UndefinedBurstinessError : public DomainError {
public:
    using DomainError::DomainError;
};

class TrainingDivergedError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ThresholdError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class PartitionError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class LocalDivergenceError : public std::runtime_error {
public:
    LocalDivergenceError(std::uint64_t user_id, const std::string& what)
        : std::runtime_error("client " + std::to_string(user_id) + ": " + what), user_id_(user_id) {}

    [[nodiscard]] std::uint64_t user_id() const noexcept { return user_id_; }

private:
    std::uint64_t user_id_;
};

/// Config parse or validation failure; `key()` names the offending entry.
class ConfigError : public std::runtime_error {
public:
    ConfigError(std::string key, const std::string& what)
        : std::runtime_error(key.empty() ? what : key + ": " + what), key_(std::move(key)) {}

    [[nodiscard]] const std::string& key() const noexcept { return key_; }

private:
    std::string key_;
};

class ComparisonError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Wraps a module error with the pipeline stage it came from.
class StageError : public std::runtime_error {
public:
    StageError(std::string stage, const std::string& what)
        : std::runtime_error("[" + stage + "] " + what), stage_(std::move(stage)) {}

    [[nodiscard]] const std::string& stage() const noexcept { return stage_; }

private:
    std::string stage_;
};

}  // namespace trafficfl
